"""Explanation scores.

``ES = 1 - D(P[Y|do(C)], delta_y) / D(P[Y], delta_y)`` for a distance ``D``
that is non-negative and zero only on equal arguments. With the KL distance
(taken as ``KL(delta_y || P)``) it reduces to
``1 - log P[Y=y|do(C)] / log P[Y=y]``. Scores live in ``[-inf, 1]``.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import (
    AllSamplesUndefined,
    CoalitionValueMismatch,
    EmptySampleList,
    InvalidDistance,
    UndefinedScore,
)
from .inference import (
    CategoricalDistribution,
    EstimatorConfig,
    interventional_distribution,
    observational_distribution,
)
from .model import Coalition, Observation, Scm

NEG_INF = float("-inf")
# share of rejected posterior samples above which the expected score is flagged
REJECTION_WARNING = 0.01


@dataclass(frozen=True)
class DistanceMeasure:
    identifier: str
    fn: Callable[[CategoricalDistribution, CategoricalDistribution], float]

    def __call__(self, p: CategoricalDistribution, q: CategoricalDistribution) -> float:
        d = self.fn(p, q)
        if d < 0 or math.isnan(d):
            raise InvalidDistance(f"{self.identifier} returned {d}")
        return d


def _kl_reversed(p: CategoricalDistribution, q: CategoricalDistribution) -> float:
    """KL(q || p): the reference ``q`` comes second in the call but first in the divergence."""
    total = 0.0
    for qi, pi in zip(q.probabilities, p.probabilities):
        if qi <= 0.0:
            continue
        if pi <= 0.0:
            return math.inf
        total += qi * (math.log(qi) - math.log(pi))
    return max(total, 0.0)


def _total_variation(p: CategoricalDistribution, q: CategoricalDistribution) -> float:
    return p.total_variation(q)


KL = DistanceMeasure("kl_to_point_mass", _kl_reversed)
TOTAL_VARIATION = DistanceMeasure("total_variation", _total_variation)
DISTANCES = {d.identifier: d for d in (KL, TOTAL_VARIATION)}


def explanation_score_generic(
    p_coalition: CategoricalDistribution,
    p_base: CategoricalDistribution,
    p_full: CategoricalDistribution,
    d: DistanceMeasure = KL,
) -> float:
    if not p_full.is_point_mass():
        raise UndefinedScore("the fully intervened distribution must be a point mass")
    denom = d(p_base, p_full)
    if denom <= 0.0 or math.isinf(denom):
        raise UndefinedScore(f"base distance is {denom}; the score is undefined")
    num = d(p_coalition, p_full)
    if math.isinf(num):
        return NEG_INF
    return 1.0 - num / denom


def score_from_probabilities(p_coalition: float, p_base: float, floor: float | None = None) -> float:
    """KL score from P[Y=y|do(C)] and P[Y=y]."""
    if not 0.0 < p_base < 1.0:
        raise UndefinedScore(f"P[Y=y] = {p_base}; the score needs 0 < P[Y=y] < 1")
    if floor is not None:
        p_coalition = max(p_coalition, floor)
    if p_coalition <= 0.0:
        return NEG_INF
    if p_coalition >= 1.0:
        return 1.0
    return 1.0 - math.log(p_coalition) / math.log(p_base)


@dataclass(frozen=True)
class ExplanationScore:
    value: float
    coalition: Coalition
    target_value: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def is_full(self) -> bool:
        return self.value >= 1.0

    def to_json(self, scm: Scm) -> dict:
        return {
            "coalition": [scm.name(m) for m in self.coalition.members],
            "values": [scm.domain(m).label(v) for m, v in zip(self.coalition.members, self.coalition.values)],
            "score": format_score(self.value),
            "meta": self.meta,
        }


def format_score(value: float) -> Union[float, str]:
    if value == NEG_INF:
        return "-inf"
    return float(value)


def _resolve_coalition(
    scm: Scm, observation: Observation, coalition: Union[Coalition, Iterable[Union[int, str]]]
) -> Coalition:
    if isinstance(coalition, Coalition):
        obs = observation.as_dict()
        for m, v in zip(coalition.members, coalition.values):
            if m in obs and obs[m] != v:
                raise CoalitionValueMismatch(
                    f"coalition pins {scm.name(m)!r}={scm.domain(m).label(v)} but the observation has "
                    f"{scm.domain(m).label(obs[m])}"
                )
        return coalition
    return Coalition.from_observation(sorted(scm.index(m) for m in coalition), observation)


def explanation_score_kl(
    scm: Scm,
    observation: Observation,
    coalition: Union[Coalition, Iterable[Union[int, str]]],
    cfg: EstimatorConfig = EstimatorConfig(),
    target_value: int | None = None,
) -> ExplanationScore:
    """Score of ``coalition`` (pinned to the observed values) for the observed target value.

    ``target_value`` overrides the observed target, which is how interventions
    towards a desired value are scored.
    """
    coal = _resolve_coalition(scm, observation, coalition)
    y = observation[scm.target] if target_value is None else target_value
    p_base = observational_distribution(scm, cfg).prob(y)
    p_coal = interventional_distribution(scm, coal, cfg).prob(y)
    value = score_from_probabilities(p_coal, p_base, cfg.min_prob_floor)
    meta = {"estimator": cfg.as_dict(), "p_target": p_base, "p_target_do": p_coal}
    return ExplanationScore(value, coal, y, meta)


# ---------------------------------------------------------------- expected score


@dataclass(frozen=True)
class ExpectedScore:
    value: float
    accepted: int
    rejected: int

    @property
    def warning(self) -> bool:
        total = self.accepted + self.rejected
        return total > 0 and self.rejected / total > REJECTION_WARNING

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class CollapsedSamples:
    """Distinct posterior rows with their multiplicities."""

    rows: np.ndarray
    counts: np.ndarray

    @classmethod
    def of(cls, samples) -> CollapsedSamples:
        if isinstance(samples, cls):
            return samples
        samples = np.asarray(samples)
        if samples.ndim != 2 or samples.shape[0] == 0:
            raise EmptySampleList("no posterior samples given")
        rows, counts = np.unique(samples, axis=0, return_counts=True)
        return cls(rows, counts)


def expected_explanation_score(
    scm: Scm,
    observation: Observation,
    members: Iterable[int],
    posterior_samples: Union[np.ndarray, CollapsedSamples],
    cfg: EstimatorConfig = EstimatorConfig(),
) -> ExpectedScore:
    """Mean over posterior noise draws of the score of the noise coalition ``members``.

    For a draw ``lam`` the coalition pins ``members`` to ``lam`` and the
    reference is the point mass at the target value that ``lam`` produces.
    Draws whose score is undefined are skipped and counted.
    """
    collapsed = CollapsedSamples.of(posterior_samples)
    noise_ids = scm.noise_ids
    members = tuple(sorted(members))
    cols = [noise_ids.index(m) for m in members]
    rows, counts = collapsed.rows, collapsed.counts
    base = observational_distribution(scm, cfg)
    total, accepted, rejected = 0.0, 0, 0
    for row, count in zip(rows, counts):
        y = _target_of(scm, noise_ids, row)
        coal = Coalition(members, tuple(int(row[c]) for c in cols))
        try:
            p_coal = interventional_distribution(scm, coal, cfg).prob(y)
            s = score_from_probabilities(p_coal, base.prob(y), cfg.min_prob_floor)
        except UndefinedScore:
            rejected += int(count)
            continue
        accepted += int(count)
        total += s * int(count)
    if accepted == 0:
        raise AllSamplesUndefined("every posterior sample gave an undefined score")
    return ExpectedScore(total / accepted, accepted, rejected)


def _target_of(scm: Scm, noise_ids: tuple[int, ...], row: np.ndarray) -> int:
    key = ("target_of", tuple(int(v) for v in row))
    if key not in scm._cache:
        cols = scm.forward({i: np.array([row[k]]) for k, i in enumerate(noise_ids)}, [scm.target])
        scm._cache[key] = int(cols[scm.target][0])
    return scm._cache[key]
