"""Size-ordered search for minimal explaining coalitions, and intervention proposals."""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Optional

from .errors import (
    CoalexError,
    EmptyCandidateSet,
    NoImprovingAssignment,
    PositivityViolated,
    PreconditionNotFullExplanation,
)
from .inference import EstimatorConfig, noise_posterior, sample_noise_posterior
from .model import Coalition, Observation, Scm
from .score import (
    CollapsedSamples,
    expected_explanation_score,
    explanation_score_kl,
    format_score,
)


@dataclass(frozen=True)
class SearchConfig:
    alpha: float = 1.0
    k_max: Optional[int] = None
    candidates: Optional[tuple[int, ...]] = None
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise CoalexError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.k_max is not None and self.k_max < 1:
            raise CoalexError("k_max must be positive")


@dataclass
class SearchResult:
    minimal_size: Optional[int]
    coalitions: list[tuple[Coalition, float]]
    exhausted: bool
    evaluations: int

    def member_sets(self) -> list[frozenset[int]]:
        return [frozenset(c.members) for c, _ in self.coalitions]

    def to_json(self, names: Callable[[int], str], label: Callable[[int, int], str]) -> dict:
        return {
            "minimal_size": self.minimal_size,
            "exhausted": self.exhausted,
            "evaluations": self.evaluations,
            "coalitions": [
                {
                    "members": [names(m) for m in c.members],
                    "values": [label(m, v) for m, v in zip(c.members, c.values)],
                    "score": format_score(s),
                }
                for c, s in self.coalitions
            ],
        }


ScoreFn = Callable[[tuple[int, ...]], tuple[Coalition, float]]


def search_coalitions(
    candidates: Sequence[int],
    score_fn: ScoreFn,
    alpha: float,
    k_max: Optional[int] = None,
) -> SearchResult:
    """Score all size-k subsets of ``candidates`` for k = 1, 2, ...

    Stops at the first size where some coalition reaches ``alpha`` and returns
    every coalition of that size that does. Subsets are visited in
    lexicographic order of sorted member indices.
    """
    candidates = sorted(set(candidates))
    if not candidates:
        raise EmptyCandidateSet("no candidate variables to search")
    limit = len(candidates) if k_max is None else min(k_max, len(candidates))
    evaluations = 0
    for k in range(1, limit + 1):
        found = []
        for members in itertools.combinations(candidates, k):
            coal, s = score_fn(members)
            evaluations += 1
            if s >= alpha:
                found.append((coal, s))
        if found:
            return SearchResult(k, found, False, evaluations)
    return SearchResult(None, [], True, evaluations)


def _candidates(scm: Scm, cfg: SearchConfig, default: Iterable[int]) -> list[int]:
    cands = list(default) if cfg.candidates is None else [scm.index(c) for c in cfg.candidates]
    if scm.target in cands:
        raise CoalexError("the target cannot be a candidate")
    return cands


def minimal_coalitions(scm: Scm, observation: Observation, cfg: SearchConfig = SearchConfig()) -> SearchResult:
    """Minimum-size coalitions (pinned to the observation) scoring at least ``cfg.alpha``.

    By default every variable with an observed value, except the target, is a candidate.
    """
    obs = observation.as_dict()
    cands = _candidates(scm, cfg, (i for i in sorted(obs) if i != scm.target))

    def score(members):
        result = explanation_score_kl(scm, observation, members, cfg.estimator)
        return result.coalition, result.value

    return search_coalitions(cands, score, cfg.alpha, cfg.k_max)


def expected_minimal_coalitions(
    scm: Scm,
    observation: Observation,
    cfg: SearchConfig = SearchConfig(alpha=0.95),
    posterior_sample_count: int = 200,
) -> SearchResult:
    """Size-ordered search over noise coalitions scored by the expected score.

    One posterior sample list is drawn per search and shared by all
    coalitions. Returned coalitions carry the posterior mode as their values.
    """
    posterior = noise_posterior(scm, observation)
    samples = CollapsedSamples.of(sample_noise_posterior(posterior, posterior_sample_count, cfg.estimator.seed))
    cands = _candidates(scm, cfg, scm.noise_ids)
    noise = set(scm.noise_ids)
    if any(c not in noise for c in cands):
        raise CoalexError("expected-score search only takes noise variables as candidates")
    mode = posterior.mode()

    def score(members):
        s = expected_explanation_score(scm, observation, members, samples, cfg.estimator)
        return Coalition.of({m: mode[m] for m in members}), s.value

    return search_coalitions(cands, score, cfg.alpha, cfg.k_max)


# ---------------------------------------------------------------- interventions


@dataclass(frozen=True)
class InterventionProposal:
    coalition: Coalition
    desired_target: int
    score_for_desired: float

    def to_json(self, scm: Scm) -> dict:
        c = self.coalition
        return {
            "coalition": [scm.name(m) for m in c.members],
            "values": [scm.domain(m).label(v) for m, v in zip(c.members, c.values)],
            "desired": scm.target_domain.label(self.desired_target),
            "score": format_score(self.score_for_desired),
        }


def optimal_intervention(
    scm: Scm,
    observation: Observation,
    coalition: Iterable[int],
    desired: int,
    cfg: EstimatorConfig = EstimatorConfig(),
) -> InterventionProposal:
    """Assignment of a fully explaining coalition that best explains ``desired``.

    All value combinations of the members are scored for the desired target
    value; ties go to the lexicographically smallest code tuple. Combinations
    with zero observational probability are not admissible and are skipped.
    """
    members = tuple(sorted(scm.index(m) for m in coalition))
    y = observation[scm.target]
    if desired == y:
        raise CoalexError("the desired value equals the observed target value")
    current = explanation_score_kl(scm, observation, members, cfg)
    if current.value < 1.0:
        raise PreconditionNotFullExplanation(
            f"coalition {[scm.name(m) for m in members]} scores {current.value:.6g} < 1"
        )
    best: Optional[tuple[float, Coalition]] = None
    domains = [range(scm.domain(m).size) for m in members]
    for values in itertools.product(*domains):
        coal = Coalition(members, tuple(values))
        try:
            s = explanation_score_kl(scm, Observation.of({scm.target: y}), coal, cfg, target_value=desired).value
        except PositivityViolated:
            continue
        if best is None or s > best[0]:
            best = (s, coal)
    if best is None or best[0] <= 0.0:
        raise NoImprovingAssignment("no assignment of the coalition moves the target towards the desired value")
    return InterventionProposal(best[1], desired, best[0])

