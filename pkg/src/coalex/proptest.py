"""Generative property checks for the explanation score on random small models.

Each case draws a model and an observation from that model's own joint, then
checks the score's structural guarantees exhaustively over the coalitions of
observed variables. Failures are collected as replayable counterexample
bundles instead of being raised.
"""

from __future__ import annotations

import itertools
import json
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng
from .inference import (
    MONTE_CARLO,
    CategoricalDistribution,
    EstimatorConfig,
    coalition_probability,
    interventional_distribution,
    observational_distribution,
)
from .model import (
    NOISE,
    OBSERVED,
    TARGET,
    Coalition,
    Domain,
    Observation,
    Scm,
    build_scm,
)
from .score import (
    KL,
    TOTAL_VARIATION,
    explanation_score_generic,
    score_from_probabilities,
)

ScoreFn = Callable[[float, float], float]
EXACT = EstimatorConfig()
TOL = 1e-9

PROPERTIES = (
    "sign_semantics",
    "irrelevance",
    "upper_set_closure",
    "non_member_impotence",
    "anti_causal_zero",
    "empty_is_zero",
    "full_is_one",
    "at_most_one",
    "mc_matches_exact",
)


# ---------------------------------------------------------------- model generator


@dataclass
class ModelGenerator:
    """Random models: 2-5 observed variables plus a target, each with its own noise.

    Domains are binary or ternary, noise probabilities lie in [0.05, 0.95] and
    mechanisms are uniformly random truth tables over a random DAG. Models
    whose target is a point mass are redrawn.
    """

    seed: int
    min_observed: int = 2
    max_observed: int = 5

    def model_spec(self, case: int) -> dict:
        rng = _rng.stream(self.seed, "model", case)
        for _attempt in range(1000):
            spec = self._draw(rng)
            scm = build_scm(spec)
            if not observational_distribution(scm).is_point_mass():
                return spec
        raise RuntimeError("could not draw a model with a non-degenerate target")

    def model(self, case: int) -> Scm:
        return build_scm(self.model_spec(case))

    def _draw(self, rng: np.random.Generator) -> dict:
        n = int(rng.integers(self.min_observed, self.max_observed + 1))
        names = [f"X{i}" for i in range(n)] + ["Y"]
        sizes = {v: int(rng.integers(2, 4)) for v in names}
        variables, edges, mechanisms, priors = [], [], {}, {}
        for k, v in enumerate(names):
            noise = f"N{v}"
            nsize = int(rng.integers(2, 4))
            variables.append({"name": noise, "kind": NOISE, "domain": [str(c) for c in range(nsize)]})
            priors[noise] = _prior(rng, nsize)
            if v == "Y":
                # at least one observed parent so that some coalition matters
                pool = names[:-1]
                chosen = [p for p in pool if rng.random() < 0.5] or [pool[int(rng.integers(len(pool)))]]
            else:
                chosen = [p for p in names[:k] if rng.random() < 0.5]
            parents = [noise] + chosen
            doms = [list(range(nsize))] + [list(range(sizes[p])) for p in chosen]
            rows = [[str(c) for c in combo] + [str(int(rng.integers(sizes[v])))] for combo in itertools.product(*doms)]
            variables.append({"name": v, "kind": TARGET if v == "Y" else OBSERVED,
                              "domain": [str(c) for c in range(sizes[v])]})
            edges.extend([p, v] for p in parents)
            mechanisms[v] = {"type": "truth_table", "parents": parents, "rows": rows}
        return {"variables": variables, "edges": edges, "mechanisms": mechanisms, "noise_priors": priors}


def _prior(rng: np.random.Generator, size: int) -> list[float]:
    while True:
        p = rng.dirichlet(np.ones(size))
        if np.all((p >= 0.05) & (p <= 0.95)):
            return [float(x) for x in p]


def with_disconnected_variable(spec: dict, rng: np.random.Generator) -> dict:
    """Copy of ``spec`` with an extra variable that has no path to the target."""
    spec = json.loads(json.dumps(spec))
    spec["variables"].insert(0, {"name": "Z", "kind": OBSERVED, "domain": ["0", "1", "2"]})
    spec["variables"].insert(0, {"name": "NZ", "kind": NOISE, "domain": ["0", "1"]})
    spec["edges"].append(["NZ", "Z"])
    spec["mechanisms"]["Z"] = {
        "type": "truth_table",
        "parents": ["NZ"],
        "rows": [["0", str(int(rng.integers(3)))], ["1", str(int(rng.integers(3)))]],
    }
    spec["noise_priors"]["NZ"] = _prior(rng, 2)
    return spec


def sample_observation(scm: Scm, rng: np.random.Generator) -> Observation:
    """One draw from the model's joint, noise included."""
    noise = {}
    for i in scm.noise_ids:
        noise[i] = np.array([rng.choice(len(scm.noise_priors[i]), p=scm.noise_priors[i])])
    cols = scm.forward(noise)
    return Observation.of({i: int(c[0]) for i, c in cols.items()})


# ---------------------------------------------------------------- report


@dataclass
class Counterexample:
    prop: str
    model: dict
    observation: dict
    details: dict

    def to_json(self) -> dict:
        return {"property": self.prop, "model": self.model, "observation": self.observation, "details": self.details}


@dataclass
class PropertyReport:
    seed: int
    cases: int
    checked: dict[str, int] = field(default_factory=lambda: {p: 0 for p in PROPERTIES})
    failed: dict[str, int] = field(default_factory=lambda: {p: 0 for p in PROPERTIES})
    counterexamples: list[Counterexample] = field(default_factory=list)
    max_counterexamples: int = 20

    @property
    def passed(self) -> bool:
        return not any(self.failed.values())

    def record(self, prop: str, ok: bool, make: Callable[[], Counterexample]) -> None:
        self.checked[prop] += 1
        if not ok:
            self.failed[prop] += 1
            if len(self.counterexamples) < self.max_counterexamples:
                self.counterexamples.append(make())

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "cases": self.cases,
            "passed": self.passed,
            "properties": {p: {"checked": self.checked[p], "failed": self.failed[p]} for p in PROPERTIES},
            "counterexamples": [c.to_json() for c in self.counterexamples],
        }


# ---------------------------------------------------------------- checks


def _kl_score(p_coal: float, p_base: float) -> float:
    return score_from_probabilities(p_coal, p_base)


class _Case:
    def __init__(self, spec: dict, obs: Observation, score_fn: ScoreFn, report: PropertyReport):
        self.spec = spec
        self.scm = build_scm(spec)
        self.obs = obs
        self.score_fn = score_fn
        self.report = report
        self.y = obs[self.scm.target]
        self.p_base = observational_distribution(self.scm).prob(self.y)
        self.candidates = [i for i in range(len(self.scm)) if self.scm.variables[i].kind == OBSERVED]
        self._memo: dict = {}

    def p_do(self, members: tuple[int, ...], extra: Optional[dict[int, int]] = None) -> float:
        values = {m: self.obs[m] for m in members}
        values.update(extra or {})
        coal = Coalition.of(values)
        key = (coal.members, coal.values)
        if key not in self._memo:
            self._memo[key] = interventional_distribution(self.scm, coal, EXACT).prob(self.y)
        return self._memo[key]

    def score(self, members: tuple[int, ...]) -> float:
        return self.score_fn(self.p_do(members), self.p_base)

    def fail(self, prop: str, **details) -> Callable[[], Counterexample]:
        def make():
            labels = self.scm.labels(self.obs.as_dict())
            names = {k: [self.scm.name(m) for m in v] if isinstance(v, tuple) else v for k, v in details.items()}
            return Counterexample(prop, self.spec, labels, names)

        return make

    def subsets(self):
        for k in range(len(self.candidates) + 1):
            yield from itertools.combinations(self.candidates, k)


def _check_case(case: _Case, rng: np.random.Generator, mc: bool) -> None:
    rep, scm = case.report, case.scm
    scores = {s: case.score(s) for s in case.subsets()}

    rep.record("empty_is_zero", abs(scores[()]) <= TOL, case.fail("empty_is_zero", score=scores[()]))
    everything = tuple(i for i in range(len(scm)) if i != scm.target)
    full = case.score_fn(case.p_do(everything), case.p_base)
    rep.record("full_is_one", abs(full - 1.0) <= TOL, case.fail("full_is_one", score=full))

    for s, v in scores.items():
        rep.record("at_most_one", v <= 1.0 + TOL, case.fail("at_most_one", coalition=s, score=v))
        pc = case.p_do(s)
        # KL distance to the point mass is -log p, so the score's sign follows p_do - p_base
        if pc >= 1.0 - 1e-12:
            expect = "one"
        elif abs(pc - case.p_base) <= 1e-12:
            expect = "zero"
        else:
            expect = "positive" if pc > case.p_base else "negative"
        got = (
            "one" if abs(v - 1.0) <= TOL else
            "zero" if abs(v) <= TOL else
            "positive" if 0.0 < v < 1.0 else
            "negative" if v < 0.0 else "invalid"
        )
        rep.record("sign_semantics", got == expect,
                   case.fail("sign_semantics", coalition=s, score=v, p_do=pc, p_base=case.p_base))

    full_sets = [set(s) for s, v in scores.items() if abs(v - 1.0) <= TOL]
    for s, v in scores.items():
        if any(f <= set(s) for f in full_sets):
            rep.record("upper_set_closure", abs(v - 1.0) <= TOL, case.fail("upper_set_closure", coalition=s, score=v))

    for f in full_sets:
        members = tuple(sorted(f))
        for i in case.candidates:
            if i in f:
                continue
            for alt in range(scm.domain(i).size):
                pinned = Coalition.of({**{m: case.obs[m] for m in members}, i: alt})
                if coalition_probability(scm, pinned, EXACT) <= 0.0:
                    continue
                p = case.p_do(members, {i: alt})
                rep.record("non_member_impotence", p >= 1.0 - 1e-12,
                           case.fail("non_member_impotence", coalition=members, changed=scm.name(i),
                                     value=scm.domain(i).label(alt), p_do=p))

    reach = scm.ancestors([scm.target])
    for s, v in scores.items():
        if s and not any(m in reach for m in s):
            rep.record("anti_causal_zero", abs(v) <= TOL, case.fail("anti_causal_zero", coalition=s, score=v))

    _check_irrelevance(case, rng)
    _check_generic_sign(case, rng)
    if mc:
        _check_mc(case)


def _check_irrelevance(case: _Case, rng: np.random.Generator) -> None:
    spec2 = with_disconnected_variable(case.spec, rng)
    scm2 = build_scm(spec2)
    z = scm2.index("Z")
    z_label = spec2["mechanisms"]["Z"]["rows"][0][1]
    obs2 = scm2.observation({**case.scm.labels(case.obs.as_dict()), "Z": z_label, "NZ": "0"})
    p_base2 = observational_distribution(scm2).prob(case.y)
    for s in case.subsets():
        names = [case.scm.name(m) for m in s]
        members = tuple(sorted([scm2.index(n) for n in names] + [z]))
        coal = Coalition.of({m: obs2[m] for m in members})
        if coalition_probability(scm2, coal, EXACT) <= 0.0:
            continue
        with_z = case.score_fn(interventional_distribution(scm2, coal, EXACT).prob(case.y), p_base2)
        without = case.score(s)
        same = (with_z == without) or abs(with_z - without) <= TOL
        case.report.record("irrelevance", same,
                           case.fail("irrelevance", coalition=s, score=without, with_irrelevant=with_z))


def _check_generic_sign(case: _Case, rng: np.random.Generator) -> None:
    """Sign semantics of the generic score on random distributions over a 3-point domain."""
    dom = Domain(("a", "b", "c"))
    y = int(rng.integers(3))
    ref = CategoricalDistribution.point_mass(dom, y)
    for d in (KL, TOTAL_VARIATION):
        base = CategoricalDistribution(dom, rng.dirichlet(np.ones(3)))
        pick = rng.random()
        if pick < 0.25:
            coal = ref
        elif pick < 0.5:
            coal = base
        else:
            coal = CategoricalDistribution(dom, rng.dirichlet(np.ones(3)))
        s = explanation_score_generic(coal, base, ref, d)
        dc, db = d(coal, ref), d(base, ref)
        if coal == ref:
            ok = s == 1.0
        elif math.isclose(dc, db, rel_tol=0, abs_tol=1e-12):
            ok = abs(s) <= TOL
        else:
            ok = (s > 0) == (dc < db) and s < 1.0
        case.report.record("sign_semantics", ok,
                           case.fail("sign_semantics", distance=d.identifier, score=s, d_coalition=dc, d_base=db))


def _check_mc(case: _Case) -> None:
    cfg = EstimatorConfig(mode=MONTE_CARLO, sample_count=100_000, seed=7)
    exact = observational_distribution(case.scm, EXACT)
    approx = observational_distribution(case.scm, cfg)
    tv = exact.total_variation(approx)
    members = tuple(case.candidates[:1])
    coal = Coalition.of({m: case.obs[m] for m in members})
    tv_do = interventional_distribution(case.scm, coal, EXACT).total_variation(
        interventional_distribution(case.scm, coal, cfg)
    )
    worst = max(tv, tv_do)
    case.report.record("mc_matches_exact", worst <= 0.01, case.fail("mc_matches_exact", total_variation=worst))


def run_property_suite(
    seed: int,
    cases: int,
    score_fn: Optional[ScoreFn] = None,
    mc_cases: int = 50,
) -> PropertyReport:
    """Check every property on ``cases`` random models; the first ``mc_cases`` also compare MC with exact."""
    report = PropertyReport(seed, cases)
    gen = ModelGenerator(seed)
    score_fn = score_fn or _kl_score
    for k in range(cases):
        spec = gen.model_spec(k)
        scm = build_scm(spec)
        rng = _rng.stream(seed, "case", k)
        obs = sample_observation(scm, rng)
        _check_case(_Case(spec, obs, score_fn, report), rng, mc=k < mc_cases)
    return report


def replay(bundle: dict, score_fn: Optional[ScoreFn] = None) -> PropertyReport:
    """Re-run all checks on a serialized counterexample's model and observation."""
    spec = bundle["model"]
    scm = build_scm(spec)
    obs = scm.observation(bundle["observation"])
    report = PropertyReport(seed=-1, cases=1)
    _check_case(_Case(spec, obs, score_fn or _kl_score, report), _rng.stream(0, "replay"), mc=False)
    return report
