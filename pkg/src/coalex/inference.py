"""Target distributions under interventions, and noise posteriors for threshold-gate networks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng
from .errors import (
    InconsistentObservation,
    PositivityViolated,
    StateSpaceTooLarge,
    UnsupportedMechanism,
)
from .model import (
    NOISE,
    Coalition,
    Domain,
    Observation,
    Scm,
    ThresholdGate,
    apply_intervention,
    check_coalition,
)

EXACT, MONTE_CARLO = "exact", "monte_carlo"
DEFAULT_STATE_LIMIT = 2**20


@dataclass(frozen=True)
class EstimatorConfig:
    mode: str = EXACT
    sample_count: int = 100_000
    seed: int = 0
    exact_state_limit: int = DEFAULT_STATE_LIMIT
    # off by default: a zero estimate must stay a zero (score -inf)
    min_prob_floor: Optional[float] = None

    def __post_init__(self):
        if self.mode not in (EXACT, MONTE_CARLO):
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.exact_state_limit < 1:
            raise ValueError("exact_state_limit must be positive")

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "exact_state_limit": self.exact_state_limit,
            "min_prob_floor": self.min_prob_floor,
        }


@dataclass(frozen=True, eq=False)
class CategoricalDistribution:
    domain: Domain
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (self.domain.size,):
            raise ValueError("probability vector does not match the domain")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability vector: {p}")
        object.__setattr__(self, "probabilities", np.clip(p, 0.0, 1.0))

    @classmethod
    def point_mass(cls, domain: Domain, code: int) -> CategoricalDistribution:
        p = np.zeros(domain.size)
        p[code] = 1.0
        return cls(domain, p)

    def prob(self, code: int) -> float:
        return float(self.probabilities[code])

    def is_point_mass(self) -> bool:
        return bool(np.any(np.abs(self.probabilities - 1.0) <= 1e-12))

    def total_variation(self, other: CategoricalDistribution) -> float:
        return 0.5 * float(np.abs(self.probabilities - other.probabilities).sum())

    def mean(self) -> float:
        """Expectation of the ordinal code (the error rate for binary targets)."""
        return float(np.dot(self.probabilities, np.arange(self.domain.size)))

    def to_json(self) -> dict:
        return {"domain": list(self.domain.labels), "probs": [float(x) for x in self.probabilities]}

    def __eq__(self, other) -> bool:
        if not isinstance(other, CategoricalDistribution):
            return NotImplemented
        return self.domain == other.domain and np.allclose(self.probabilities, other.probabilities, atol=1e-12, rtol=0)

    def __repr__(self) -> str:
        probs = ", ".join(f"{lab}: {p:.6g}" for lab, p in zip(self.domain.labels, self.probabilities))
        return f"CategoricalDistribution({probs})"


# ---------------------------------------------------------------- enumeration


@dataclass
class Enumeration:
    """Every positive-probability noise state relevant to ``columns``, with its weight."""

    columns: dict[int, np.ndarray]
    weights: np.ndarray
    noise: tuple[int, ...] = field(default=())


def state_space_size(scm: Scm, needed) -> int:
    size = 1
    for i in sorted(scm.ancestors(needed)):
        if scm.variables[i].kind == NOISE:
            size *= int(np.count_nonzero(scm.noise_priors[i]))
    return size


def enumerate_states(scm: Scm, needed, limit: int = DEFAULT_STATE_LIMIT) -> Enumeration:
    """Enumerate the noise product space feeding ``needed`` and forward-evaluate it."""
    needed = tuple(sorted(set(needed)))
    key = ("enum", needed)
    if key in scm._cache:
        return scm._cache[key]
    anc = scm.ancestors(needed)
    noise = tuple(i for i in sorted(anc) if scm.variables[i].kind == NOISE)
    supports = [np.flatnonzero(scm.noise_priors[i] > 0) for i in noise]
    size = int(np.prod([len(s) for s in supports], dtype=object)) if supports else 1
    if size > limit:
        raise StateSpaceTooLarge(f"noise space of {size} states exceeds the exact limit of {limit}")
    if noise:
        grids = np.meshgrid(*supports, indexing="ij")
        codes = {i: g.reshape(-1) for i, g in zip(noise, grids)}
        weights = np.ones(size)
        for i in noise:
            weights = weights * scm.noise_priors[i][codes[i]]
    else:
        codes = {}
        weights = np.ones(1)
    cols = scm.forward(codes, needed)
    out = Enumeration(cols, weights, noise)
    scm._cache[key] = out
    return out


def _distribution_from(scm: Scm, target_codes: np.ndarray, weights: np.ndarray) -> CategoricalDistribution:
    dom = scm.target_domain
    mass = np.bincount(target_codes, weights=weights, minlength=dom.size)
    return CategoricalDistribution(dom, mass / mass.sum())


def sample_forward(scm: Scm, count: int, rng: np.random.Generator, needed=None) -> dict[int, np.ndarray]:
    """``count`` ancestral samples (noise drawn from the priors)."""
    wanted = scm.ancestors(needed) if needed is not None else set(range(len(scm)))
    noise = {}
    for i in scm.noise_ids:
        prior = scm.noise_priors[i]
        draws = rng.random(count)
        if i in wanted:
            noise[i] = np.searchsorted(np.cumsum(prior)[:-1], draws, side="right")
    return scm.forward(noise, needed)


# ---------------------------------------------------------------- distributions


def observational_distribution(scm: Scm, cfg: EstimatorConfig = EstimatorConfig()) -> CategoricalDistribution:
    key = ("obs", cfg)
    if key not in scm._cache:
        if cfg.mode == EXACT:
            enum = enumerate_states(scm, [scm.target], cfg.exact_state_limit)
            dist = _distribution_from(scm, enum.columns[scm.target], enum.weights)
        else:
            cols = sample_forward(scm, cfg.sample_count, _rng.stream(cfg.seed, "observational"), [scm.target])
            dist = _distribution_from(scm, cols[scm.target], np.ones(cfg.sample_count))
        scm._cache[key] = dist
    return scm._cache[key]


def coalition_probability(scm: Scm, coalition: Coalition, cfg: EstimatorConfig = EstimatorConfig()) -> float:
    """Observational probability P[V_C = v_C] (exact, or the sample frequency in MC mode)."""
    if not coalition.members:
        return 1.0
    key = ("joint", coalition, cfg)
    if key in scm._cache:
        return scm._cache[key]
    if all(scm.variables[m].kind == NOISE for m in coalition.members):
        prob = float(np.prod([scm.noise_priors[m][v] for m, v in zip(coalition.members, coalition.values)]))
        if cfg.mode != EXACT and prob > 0:
            prob = _mc_joint(scm, coalition, cfg)
    elif cfg.mode == EXACT:
        enum = enumerate_states(scm, coalition.members, cfg.exact_state_limit)
        match = np.ones(len(enum.weights), dtype=bool)
        for m, v in zip(coalition.members, coalition.values):
            match &= enum.columns[m] == v
        prob = float(enum.weights[match].sum())
    else:
        prob = _mc_joint(scm, coalition, cfg)
    scm._cache[key] = prob
    return prob


def _mc_joint(scm: Scm, coalition: Coalition, cfg: EstimatorConfig) -> float:
    cols = sample_forward(scm, cfg.sample_count, _rng.stream(cfg.seed, "observational"), None)
    match = np.ones(cfg.sample_count, dtype=bool)
    for m, v in zip(coalition.members, coalition.values):
        match &= cols[m] == v
    return float(match.mean())


def interventional_distribution(
    scm: Scm,
    coalition: Coalition,
    cfg: EstimatorConfig = EstimatorConfig(),
    check_positivity: bool = True,
) -> CategoricalDistribution:
    """P[Y | do(V_C = v_C)].

    Exact mode sums prior mass over the noise space of the mutilated model; MC
    mode returns the empirical target distribution of ``cfg.sample_count``
    forward passes on a stream keyed by the coalition.
    """
    if not coalition.members:
        return observational_distribution(scm, cfg)
    key = ("int", coalition, cfg)
    if key in scm._cache:
        return scm._cache[key]
    check_coalition(scm, coalition)
    if check_positivity and coalition_probability(scm, coalition, cfg) <= 0.0:
        names = scm.labels(coalition.as_dict())
        raise PositivityViolated(f"coalition {names} has zero observational probability")
    if cfg.mode == EXACT:
        if all(scm.variables[m].kind == NOISE for m in coalition.members):
            dist = _noise_conditional(scm, coalition, cfg)
        else:
            mutilated = apply_intervention(scm, coalition)
            enum = enumerate_states(mutilated, [scm.target], cfg.exact_state_limit)
            dist = _distribution_from(scm, enum.columns[scm.target], enum.weights)
    else:
        rng = _rng.stream(cfg.seed, "interventional", coalition.members, coalition.values)
        cols = sample_forward(apply_intervention(scm, coalition), cfg.sample_count, rng, [scm.target])
        dist = _distribution_from(scm, cols[scm.target], np.ones(cfg.sample_count))
    scm._cache[key] = dist
    return dist


def _noise_conditional(scm: Scm, coalition: Coalition, cfg: EstimatorConfig) -> CategoricalDistribution:
    # Noise has no parents, so do(noise) equals conditioning on it in the unmutilated model.
    enum = enumerate_states(scm, [scm.target], cfg.exact_state_limit)
    match = np.ones(len(enum.weights), dtype=bool)
    for m, v in zip(coalition.members, coalition.values):
        if m in enum.columns:
            match &= enum.columns[m] == v
    return _distribution_from(scm, enum.columns[scm.target][match], enum.weights[match])


# ---------------------------------------------------------------- noise posterior


@dataclass(frozen=True)
class PosteriorFactor:
    """Either a fixed code or an independent Bernoulli(p) over the binary codes {0, 1}."""

    fixed: Optional[int] = None
    p: Optional[float] = None

    @property
    def is_fixed(self) -> bool:
        return self.fixed is not None

    def mode(self) -> int:
        return self.fixed if self.fixed is not None else int(self.p > 0.5)


@dataclass(frozen=True)
class NoisePosterior:
    noise_ids: tuple[int, ...]
    factors: tuple[PosteriorFactor, ...]

    def factor(self, var: int) -> PosteriorFactor:
        return self.factors[self.noise_ids.index(var)]

    def mode(self) -> dict[int, int]:
        return {i: f.mode() for i, f in zip(self.noise_ids, self.factors)}


def noise_posterior(scm: Scm, observation: Observation) -> NoisePosterior:
    """P[noise | observed] for networks whose mechanisms are all threshold gates.

    Given all observed values, each gate input is known, so the posterior
    factorises per node: ``x=0`` forces its noise to 0; ``x=1`` with an open
    gate forces it to 1; ``x=1`` with a satisfied gate leaves the prior.
    """
    owner: dict[int, int] = {}
    for i, mech in scm.mechanisms.items():
        if not isinstance(mech, ThresholdGate):
            raise UnsupportedMechanism(f"{scm.name(i)!r} is not a threshold gate")
        if mech.noise_parent in owner:
            raise UnsupportedMechanism(f"noise {scm.name(mech.noise_parent)!r} feeds more than one gate")
        owner[mech.noise_parent] = i
    obs = observation.as_dict()
    missing = [scm.name(i) for i in scm.mechanisms if i not in obs]
    if missing:
        raise InconsistentObservation(f"observation lacks values for {missing}")
    cols = {i: np.array([v]) for i, v in obs.items()}
    factors = []
    for j in scm.noise_ids:
        p1 = float(scm.noise_priors[j][1])
        if j not in owner:
            factors.append(PosteriorFactor(p=p1))
            continue
        i = owner[j]
        gate = bool(scm.mechanisms[i].gate(cols, 1)[0])
        x = obs[i]
        if x == 0:
            if gate:
                raise InconsistentObservation(f"{scm.name(i)!r} is 0 although its gate is satisfied")
            if p1 >= 1.0:
                raise InconsistentObservation(f"{scm.name(i)!r} is 0 but its noise always fires")
            factors.append(PosteriorFactor(fixed=0))
        elif gate:
            factors.append(PosteriorFactor(p=p1))
        else:
            if p1 <= 0.0:
                raise InconsistentObservation(f"{scm.name(i)!r} is 1 but nothing can have caused it")
            factors.append(PosteriorFactor(fixed=1))
    return NoisePosterior(scm.noise_ids, tuple(factors))


def sample_noise_posterior(posterior: NoisePosterior, count: int, seed: int) -> np.ndarray:
    """``count`` independent draws; column k holds the code of ``posterior.noise_ids[k]``."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = _rng.stream(seed, "posterior")
    out = np.empty((count, len(posterior.factors)), dtype=np.int64)
    for k, f in enumerate(posterior.factors):
        draws = rng.random(count)
        out[:, k] = f.fixed if f.is_fixed else (draws < f.p).astype(np.int64)
    return out
