"""Root-cause analysis: baselines, Shapley attribution and the evaluation harness.

Every method maps (model, observation) to a list of predicted root-cause sets
over noise variables. Set-returning methods return a single set; coalition
search returns one set per minimal coalition.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections import deque
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng
from .errors import AllScoresZero, CoalexError, InvalidThreshold, TooManyPlayers
from .inference import EstimatorConfig, enumerate_states, noise_posterior
from .model import NOISE, Observation, Scm, ThresholdGate
from .search import SearchConfig, expected_minimal_coalitions

MAX_SHAPLEY_PLAYERS = 20


# ---------------------------------------------------------------- labelings and traversal


def anomaly_labeling(scm: Scm, observation: Observation) -> dict[int, bool]:
    """Anomalous flag for every observed variable and the target (binary error networks: value 1)."""
    obs = observation.as_dict()
    out = {}
    for i in range(len(scm)):
        if scm.variables[i].kind == NOISE:
            continue
        if i not in obs:
            raise CoalexError(f"observation lacks a value for {scm.name(i)!r}")
        out[i] = obs[i] == 1
    return out


def _observed_parents(scm: Scm, i: int) -> list[int]:
    return [p for p in scm.parents[i] if scm.variables[p].kind != NOISE]


def traversal_rca(scm: Scm, labeling: dict[int, bool]) -> set[int]:
    """Anomalous variables none of whose observed parents is anomalous."""
    return {
        i for i, bad in labeling.items()
        if bad and not any(labeling.get(p, False) for p in _observed_parents(scm, i))
    }


def backtracking_traversal_rca(scm: Scm, labeling: dict[int, bool], target: Optional[int] = None) -> set[int]:
    """Leaves of a breadth-first search from the target over anomalous parents."""
    target = scm.target if target is None else target
    if not labeling.get(target, False):
        return set()
    seen, leaves = {target}, set()
    queue = deque([target])
    while queue:
        node = queue.popleft()
        bad_parents = [p for p in _observed_parents(scm, node) if labeling.get(p, False)]
        if not bad_parents:
            leaves.add(node)
        for p in bad_parents:
            if p not in seen:
                seen.add(p)
                queue.append(p)
    return leaves


def node_noise(scm: Scm, nodes: Iterable[int]) -> frozenset[int]:
    """Noise variables owned by ``nodes``."""
    out = set()
    for i in nodes:
        mech = scm.mechanisms.get(i)
        if isinstance(mech, ThresholdGate):
            out.add(mech.noise_parent)
        else:
            out.update(p for p in scm.parents[i] if scm.variables[p].kind == NOISE)
    return frozenset(out)


# ---------------------------------------------------------------- Shapley


@dataclass(frozen=True)
class AttributionResult:
    scores: dict[int, float]
    normalized: bool = False

    def normalize(self) -> AttributionResult:
        """Clamp negatives to 0 and rescale to sum 1."""
        clamped = {k: max(v, 0.0) for k, v in self.scores.items()}
        total = math.fsum(clamped.values())
        if total <= 0.0:
            raise AllScoresZero("no player has a positive attribution")
        return AttributionResult({k: v / total for k, v in clamped.items()}, True)


def shapley_attribution(players: Sequence[int], value_fn: Callable[[frozenset], float]) -> AttributionResult:
    """Exact Shapley values over all 2^n coalitions."""
    players = list(players)
    n = len(players)
    if n > MAX_SHAPLEY_PLAYERS:
        raise TooManyPlayers(f"{n} players exceed the exact limit of {MAX_SHAPLEY_PLAYERS}")
    if n == 0:
        return AttributionResult({})
    values = np.empty(1 << n)
    for m in range(1 << n):
        values[m] = value_fn(frozenset(players[k] for k in range(n) if m >> k & 1))
    return _shapley_from_table(players, values)


def _shapley_from_table(players: Sequence[int], values: np.ndarray) -> AttributionResult:
    n = len(players)
    masks = np.arange(1 << n)
    sizes = np.array([bin(m).count("1") for m in range(1 << n)])
    weights = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])
    scores = {}
    for k, pl in enumerate(players):
        without = masks[(masks >> k & 1) == 0]
        scores[pl] = float(math.fsum(weights[sizes[without]] * (values[without | (1 << k)] - values[without])))
    return AttributionResult(scores)


@dataclass(frozen=True)
class MappingConfig:
    mode: str = "cumulative"
    theta_c: float = 0.95
    theta_i: float = 0.15

    def __post_init__(self):
        if self.mode not in ("cumulative", "individual"):
            raise InvalidThreshold(f"unknown mapping mode {self.mode!r}")
        for t in (self.theta_c, self.theta_i):
            if not 0.0 < t <= 1.0:
                raise InvalidThreshold(f"thresholds must lie in (0, 1], got {t}")


def map_scores_to_coalition(attr: AttributionResult, cfg: MappingConfig = MappingConfig()) -> set[int]:
    """Turn attribution scores into a root-cause set.

    Cumulative mode takes the shortest descending prefix whose normalized mass
    reaches ``theta_c``; individual mode takes every player at or above ``theta_i``.
    Ties keep player order (stable sort by variable index).
    """
    for v in attr.scores.values():
        if not math.isfinite(v):
            raise CoalexError("attribution scores must be finite")
    norm = attr if attr.normalized else attr.normalize()
    if cfg.mode == "individual":
        return {k for k, v in norm.scores.items() if v >= cfg.theta_i}
    ranked = sorted(sorted(norm.scores), key=lambda k: -norm.scores[k])
    chosen, mass = set(), 0.0
    for k in ranked:
        chosen.add(k)
        mass += norm.scores[k]
        # tolerance absorbs rounding when the threshold equals the full mass
        if mass >= cfg.theta_c - 1e-12:
            break
    return chosen


# ---------------------------------------------------------------- noise value functions


@dataclass
class NoiseValueFunctions:
    """Set functions over noise variables pinned at the posterior mode.

    ``it_score(S) = -log P[Y=y | do(L_S = mode_S)]`` and
    ``mean_deviation(S) = |E[Y | do(L_S = mode_S)] - E[Y]|``. Both are
    reconstructions of the information-theoretic and mean-deviation outlier
    scores used by attribution-based root-cause analysis; non-members are
    marginalised exactly over their priors.
    """

    players: tuple[int, ...]
    mode: dict[int, int]
    target_value: int
    _joint: np.ndarray
    _target: np.ndarray
    _mean: np.ndarray
    _base_mean: float

    def _mask(self, subset: Iterable[int]) -> int:
        m = 0
        for s in subset:
            m |= 1 << self.players.index(s)
        return m

    def it_table(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return -np.log(self._target / self._joint)

    def mean_table(self) -> np.ndarray:
        return np.abs(self._mean / self._joint - self._base_mean)

    def it_score(self, subset: Iterable[int]) -> float:
        return float(self.it_table()[self._mask(subset)])

    def mean_deviation(self, subset: Iterable[int]) -> float:
        return float(self.mean_table()[self._mask(subset)])


def _superset_sums(f: np.ndarray, n: int) -> np.ndarray:
    f = f.copy()
    for k in range(n):
        bit = 1 << k
        idx = np.arange(f.size)
        low = idx[(idx & bit) == 0]
        f[low] += f[low | bit]
    return f


def noise_outlier_value_functions(
    scm: Scm, observation: Observation, cfg: EstimatorConfig = EstimatorConfig()
) -> NoiseValueFunctions:
    """Both value functions, tabulated for every subset of noise variables at once.

    Each enumerated noise state contributes its weight to every subset of the
    variables on which it agrees with the mode, so one superset-sum pass over
    the agreement masks yields all interventional probabilities.
    """
    players = scm.noise_ids
    if len(players) > MAX_SHAPLEY_PLAYERS:
        raise TooManyPlayers(f"{len(players)} noise variables exceed the exact limit of {MAX_SHAPLEY_PLAYERS}")
    mode = noise_posterior(scm, observation).mode()
    y = observation[scm.target]
    enum = enumerate_states(scm, [scm.target], cfg.exact_state_limit)
    size = len(enum.weights)
    agree = np.zeros(size, dtype=np.int64)
    for k, j in enumerate(players):
        col = enum.columns.get(j)
        # noise outside the enumeration is constant at its only supported value
        ok = np.ones(size, dtype=bool) if col is None else col == mode[j]
        agree |= ok.astype(np.int64) << k
    n = len(players)
    tcol = enum.columns[scm.target]
    joint = _superset_sums(np.bincount(agree, weights=enum.weights, minlength=1 << n), n)
    target = _superset_sums(np.bincount(agree, weights=enum.weights * (tcol == y), minlength=1 << n), n)
    mean = _superset_sums(np.bincount(agree, weights=enum.weights * tcol, minlength=1 << n), n)
    base_mean = float(mean[0] / joint[0])
    return NoiseValueFunctions(players, mode, y, joint, target, mean, base_mean)


# ---------------------------------------------------------------- methods


@dataclass(frozen=True)
class RcaMethod:
    name: str
    fn: Callable[[Scm, Observation], list[frozenset[int]]]

    def __call__(self, scm: Scm, observation: Observation) -> list[frozenset[int]]:
        return self.fn(scm, observation)


def coca_method(
    alpha: float = 0.95, posterior_samples: int = 200, seed: int = 0, cfg: EstimatorConfig = EstimatorConfig()
) -> RcaMethod:
    def run(scm, observation):
        # seeding by the observation gives identical answers for identical rows
        obs_seed = _rng.derive_seed(seed, "coca", repr(observation.values))
        search = SearchConfig(alpha=alpha, estimator=EstimatorConfig(**{**cfg.as_dict(), "seed": obs_seed}))
        result = expected_minimal_coalitions(scm, observation, search, posterior_samples)
        return result.member_sets()

    return RcaMethod("coca", run)


def traversal_method() -> RcaMethod:
    return RcaMethod("traversal", lambda scm, obs: [node_noise(scm, traversal_rca(scm, anomaly_labeling(scm, obs)))])


def backtracking_method() -> RcaMethod:
    return RcaMethod(
        "backtracking",
        lambda scm, obs: [node_noise(scm, backtracking_traversal_rca(scm, anomaly_labeling(scm, obs)))],
    )


def shapley_method(kind: str, mapping: MappingConfig) -> RcaMethod:
    """Shapley attribution of ``it`` or ``mean`` outlier scores, mapped to a set."""
    if kind not in ("it", "mean"):
        raise CoalexError(f"unknown value function {kind!r}")

    def run(scm, observation):
        vf = noise_outlier_value_functions(scm, observation)
        if kind == "it":
            # gain in log-likelihood of y relative to no intervention
            table = vf.it_table()[0] - vf.it_table()
        else:
            table = vf.mean_table() - vf.mean_table()[0]
        attr = _shapley_from_table(vf.players, table)
        return [frozenset(map_scores_to_coalition(attr, mapping))]

    suffix = "c" if mapping.mode == "cumulative" else "i"
    return RcaMethod(f"{kind}-rca-{suffix}", run)


METHOD_NAMES = ("coca", "traversal", "backtracking", "it-rca-c", "it-rca-i", "mean-rca-c", "mean-rca-i")


def build_methods(
    names: Sequence[str],
    alpha: float = 0.95,
    posterior_samples: int = 200,
    theta_c: float = 0.95,
    theta_i: float = 0.15,
    seed: int = 0,
) -> list[RcaMethod]:
    unknown = [n for n in names if n not in METHOD_NAMES]
    if unknown:
        raise CoalexError(f"unknown methods {unknown}; valid methods: {', '.join(METHOD_NAMES)}")
    cum = MappingConfig("cumulative", theta_c, theta_i)
    ind = MappingConfig("individual", theta_c, theta_i)
    factories = {
        "coca": lambda: coca_method(alpha, posterior_samples, seed),
        "traversal": traversal_method,
        "backtracking": backtracking_method,
        "it-rca-c": lambda: shapley_method("it", cum),
        "it-rca-i": lambda: shapley_method("it", ind),
        "mean-rca-c": lambda: shapley_method("mean", cum),
        "mean-rca-i": lambda: shapley_method("mean", ind),
    }
    return [factories[n]() for n in names]


# ---------------------------------------------------------------- ground truth and evaluation


@dataclass(frozen=True)
class RcaSample:
    observation: Observation
    truth: frozenset[int]
    injected: int


def error_group(injected: int) -> str:
    return "5+" if injected >= 5 else str(injected)


@dataclass
class GroupStats:
    n: int = 0
    correct: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    failures: int = 0

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.n if self.n else None

    def add(self, other: GroupStats) -> None:
        for f in ("n", "correct", "tp", "fp", "fn", "failures"):
            setattr(self, f, getattr(self, f) + getattr(other, f))

    def to_json(self) -> dict:
        out = {"n": self.n, "accuracy": self.accuracy, "tp": self.tp, "fp": self.fp, "fn": self.fn}
        if self.failures:
            out["failures"] = self.failures
        return out


@dataclass
class SampleResult:
    predictions: list[frozenset[int]]
    correct: bool
    error: Optional[str] = None


@dataclass
class RcaOutcome:
    methods: tuple[str, ...]
    samples: list[RcaSample]
    results: dict[str, list[SampleResult]]
    groups: dict[str, dict[str, GroupStats]] = field(default_factory=dict)

    def group(self, method: str, key: str) -> GroupStats:
        return self.groups[method].get(key, GroupStats())

    def to_json(self) -> dict:
        return {m: {"by_error_count": {k: g.to_json() for k, g in self.groups[m].items()}} for m in self.methods}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "errors", "n", "accuracy", "tp", "fp", "fn"])
        for m in self.methods:
            for k, g in self.groups[m].items():
                acc = "" if g.accuracy is None else repr(g.accuracy)
                w.writerow([m, k, g.n, acc, g.tp, g.fp, g.fn])
        return buf.getvalue()


GROUP_ORDER = ("0", "1", "2", "3", "4", "5+")


def evaluate_rca(methods: Sequence[RcaMethod], samples: Sequence[RcaSample], scm: Scm) -> RcaOutcome:
    """Run every method on every sample and aggregate per injected-error count.

    A sample is correct iff the method returns at least one set and every
    returned set equals the ground truth. Failures count as empty predictions.
    Groups: the exact counts, ``5+``, ``3+`` and ``all``.
    """
    names = tuple(m.name for m in methods)
    results: dict[str, list[SampleResult]] = {n: [] for n in names}
    groups: dict[str, dict[str, GroupStats]] = {}
    for method in methods:
        per: dict[str, GroupStats] = {}
        for s in samples:
            error = None
            try:
                preds = [frozenset(p) for p in method(scm, s.observation)]
            except CoalexError as exc:
                preds, error = [], f"{exc.kind}: {exc}"
            correct = bool(preds) and all(p == s.truth for p in preds)
            results[method.name].append(SampleResult(preds, correct, error))
            union = frozenset().union(*preds) if preds else frozenset()
            g = per.setdefault(error_group(s.injected), GroupStats())
            g.add(GroupStats(1, int(correct), len(union & s.truth), len(union - s.truth),
                             len(s.truth - union), int(error is not None)))
        ordered = {k: per[k] for k in GROUP_ORDER if k in per}
        at_least_3 = GroupStats()
        total = GroupStats()
        for k, g in ordered.items():
            total.add(g)
            if k in ("3", "4", "5+"):
                at_least_3.add(g)
        ordered["3+"] = at_least_3
        ordered["all"] = total
        groups[method.name] = ordered
    return RcaOutcome(names, list(samples), results, groups)


def error_truth(scm: Scm, noise_row: Sequence[int]) -> frozenset[int]:
    """Noise variables that fired (non-zero code)."""
    return frozenset(j for j, v in zip(scm.noise_ids, noise_row) if v != 0)


def causal_truth(scm: Scm, noise_row: Sequence[int]) -> frozenset[int]:
    """Fired noise variables that belong to some minimal subset of the fired set producing the target value.

    A subset is producing if firing only it (all other noise at code 0) yields
    the observed target value.
    """
    fired = sorted(error_truth(scm, noise_row))
    y = _target_for(scm, fired)
    minimal: list[frozenset[int]] = []
    for k in range(len(fired) + 1):
        for sub in itertools.combinations(fired, k):
            s = frozenset(sub)
            if any(m <= s for m in minimal):
                continue
            if _target_for(scm, sub) == y:
                minimal.append(s)
    return frozenset().union(*minimal) if minimal else frozenset()


def _target_for(scm: Scm, fired: Iterable[int]) -> int:
    fired = set(fired)
    noise = {j: np.array([1 if j in fired else 0]) for j in scm.noise_ids}
    return int(scm.forward(noise, [scm.target])[scm.target][0])


GROUND_TRUTHS = {"errors": error_truth, "causal": causal_truth}


def samples_from_table(scm: Scm, table, ground_truth: str = "errors") -> list[RcaSample]:
    """RCA samples from a generated table with its hidden noise columns."""
    from .datasets import table_noise, table_observations

    if ground_truth not in GROUND_TRUTHS:
        raise CoalexError(f"unknown ground truth {ground_truth!r}; use one of {sorted(GROUND_TRUTHS)}")
    truth_fn = GROUND_TRUTHS[ground_truth]
    noise = table_noise(scm, table)
    ids, obs = table_observations(scm, table)
    out = []
    cache: dict = {}
    for nrow, orow in zip(noise.tolist(), obs.tolist()):
        key = tuple(nrow)
        if key not in cache:
            cache[key] = truth_fn(scm, nrow)
        out.append(RcaSample(Observation(tuple(zip(ids, orow))), cache[key], sum(1 for v in nrow if v != 0)))
    return out
