"""Discrete structural causal models.

A model is a DAG over finite-domain variables of three kinds: exogenous
``noise`` variables (independent, with a prior), ``observed`` variables and a
single ``target``. Every non-noise variable has a deterministic mechanism, so
all randomness lives in the noise. Values are carried internally as integer
codes into the variable's :class:`Domain`; names and labels are the external
identity used by the JSON format.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any, Union

import numpy as np

from .errors import (
    CoalexError,
    CycleDetected,
    IncompleteTruthTable,
    MissingNoiseValue,
    ModelError,
    NoiseHasParents,
    ObservedWithoutNoiseParent,
    TargetInCoalition,
    TargetNotUnique,
    UnknownVariable,
    ValueOutOfDomain,
)

NOISE, OBSERVED, TARGET = "noise", "observed", "target"
KINDS = (NOISE, OBSERVED, TARGET)


@dataclass(frozen=True)
class Domain:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ModelError(f"domain needs at least 2 values, got {self.labels!r}")
        if len(set(self.labels)) != len(self.labels):
            raise ModelError(f"duplicate labels in domain {self.labels!r}")

    @classmethod
    def binary(cls) -> Domain:
        return cls(("0", "1"))

    @property
    def size(self) -> int:
        return len(self.labels)

    def code(self, value: Union[str, int]) -> int:
        """Ordinal code of ``value``; accepts a label or an in-range integer code."""
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            if 0 <= value < self.size:
                return int(value)
            raise ValueOutOfDomain(f"code {value} outside domain {self.labels!r}")
        try:
            return self.labels.index(str(value))
        except ValueError:
            raise ValueOutOfDomain(f"value {value!r} not in domain {self.labels!r}") from None

    def label(self, code: int) -> str:
        return self.labels[code]


@dataclass(frozen=True)
class VariableSpec:
    id: int
    name: str
    kind: str
    domain: Domain


# ---------------------------------------------------------------- mechanisms


@dataclass(frozen=True, eq=False)
class TruthTable:
    """Total lookup table; ``table`` has one axis per parent (in ``parents`` order)."""

    parents: tuple[int, ...]
    table: np.ndarray

    def evaluate(self, columns: Mapping[int, np.ndarray], size: int) -> np.ndarray:
        if not self.parents:
            return np.full(size, int(self.table), dtype=np.int64)
        return self.table[tuple(columns[p] for p in self.parents)]

    @property
    def inputs(self) -> tuple[int, ...]:
        return self.parents


@dataclass(frozen=True)
class ThresholdGate:
    """Binary OR of the node's own noise and a k-out-of-n gate over observed parents.

    A node without observed parents is driven by its noise alone.
    """

    noise_parent: int
    threshold: int
    observed_parents: tuple[int, ...]

    def gate(self, columns: Mapping[int, np.ndarray], size: int) -> np.ndarray:
        if not self.observed_parents:
            return np.zeros(size, dtype=bool)
        count = np.zeros(size, dtype=np.int64)
        for p in self.observed_parents:
            count += columns[p] == 1
        return count >= self.threshold

    def evaluate(self, columns: Mapping[int, np.ndarray], size: int) -> np.ndarray:
        return ((columns[self.noise_parent] == 1) | self.gate(columns, size)).astype(np.int64)

    @property
    def inputs(self) -> tuple[int, ...]:
        return (self.noise_parent, *self.observed_parents)


@dataclass(frozen=True)
class Constant:
    """Mechanism of an intervened variable."""

    value: int

    def evaluate(self, columns: Mapping[int, np.ndarray], size: int) -> np.ndarray:
        return np.full(size, self.value, dtype=np.int64)

    @property
    def inputs(self) -> tuple[int, ...]:
        return ()


Mechanism = Union[TruthTable, ThresholdGate, Constant]


# ---------------------------------------------------------------- values


@dataclass(frozen=True)
class Observation:
    """Assignment of codes to (a subset of) the variables of a model."""

    values: tuple[tuple[int, int], ...]

    @classmethod
    def of(cls, mapping: Mapping[int, int]) -> Observation:
        return cls(tuple(sorted((int(k), int(v)) for k, v in mapping.items())))

    def as_dict(self) -> dict[int, int]:
        return dict(self.values)

    def __getitem__(self, var: int) -> int:
        for k, v in self.values:
            if k == var:
                return v
        raise KeyError(var)

    def __contains__(self, var: int) -> bool:
        return any(k == var for k, _ in self.values)


@dataclass(frozen=True)
class Coalition:
    """Sorted set of variables with pinned values. The empty coalition means no intervention."""

    members: tuple[int, ...] = ()
    values: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.members) != len(self.values):
            raise CoalexError("coalition members and values differ in length")
        if any(a >= b for a, b in zip(self.members, self.members[1:])):
            raise CoalexError(f"coalition members must be strictly increasing: {self.members}")

    @classmethod
    def of(cls, mapping: Mapping[int, int]) -> Coalition:
        items = sorted((int(k), int(v)) for k, v in mapping.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    @classmethod
    def from_observation(cls, members: Iterable[int], observation: Observation) -> Coalition:
        obs = observation.as_dict()
        missing = [m for m in members if m not in obs]
        if missing:
            raise CoalexError(f"observation has no value for coalition members {missing}")
        return cls.of({m: obs[m] for m in members})

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.members, self.values))

    def __len__(self) -> int:
        return len(self.members)


# ---------------------------------------------------------------- the model


class Scm:
    """Validated, immutable structural causal model.

    Build instances with :func:`build_scm` (from the JSON-style description) or
    :meth:`Scm.from_parts`. Indices follow a topological order with the target
    last.
    """

    def __init__(self, variables, parents, mechanisms, noise_priors, *, intervened=()):
        self.variables: tuple[VariableSpec, ...] = tuple(variables)
        self.parents: tuple[tuple[int, ...], ...] = tuple(tuple(p) for p in parents)
        self.mechanisms: dict[int, Mechanism] = dict(mechanisms)
        self.noise_priors: dict[int, np.ndarray] = {
            k: np.asarray(v, dtype=float) for k, v in noise_priors.items()
        }
        self.intervened: frozenset[int] = frozenset(intervened)
        self._index = {v.name: v.id for v in self.variables}
        self._cache: dict[Any, Any] = {}
        self._validate()
        self.order = _topological_order(self)
        self.children = tuple(
            tuple(c for c in range(len(self.variables)) if i in self.parents[c])
            for i in range(len(self.variables))
        )

    # construction -------------------------------------------------------
    @classmethod
    def from_parts(cls, variables, mechanisms, noise_priors) -> Scm:
        """Build from ``VariableSpec`` list, mechanism map and prior map; parents are derived."""
        parents = [tuple(sorted(mechanisms[v.id].inputs)) if v.id in mechanisms else () for v in variables]
        return cls(variables, parents, mechanisms, noise_priors)

    def _validate(self):
        n = len(self.variables)
        if [v.id for v in self.variables] != list(range(n)):
            raise ModelError("variable ids must be dense 0..N-1 in order")
        targets = [v.id for v in self.variables if v.kind == TARGET]
        if len(targets) != 1:
            raise TargetNotUnique(f"expected exactly one target, found {len(targets)}")
        self.target = targets[0]
        if self.target != n - 1:
            raise ModelError("the target must carry the highest index")
        for v in self.variables:
            if v.kind not in KINDS:
                raise ModelError(f"unknown variable kind {v.kind!r}")
            if v.kind == NOISE:
                if self.parents[v.id]:
                    raise NoiseHasParents(f"noise variable {v.name!r} has parents")
                prior = self.noise_priors.get(v.id)
                if prior is None or prior.shape != (v.domain.size,):
                    raise ModelError(f"noise variable {v.name!r} needs a prior over its domain")
                if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
                    raise ModelError(f"prior of {v.name!r} is not a probability vector")
            else:
                if v.id not in self.mechanisms:
                    raise ModelError(f"variable {v.name!r} has no mechanism")
                mech = self.mechanisms[v.id]
                if set(mech.inputs) != set(self.parents[v.id]):
                    raise ModelError(f"mechanism inputs of {v.name!r} disagree with its edges")
                self._check_mechanism(v, mech)
                if (
                    v.kind == OBSERVED
                    and v.id not in self.intervened
                    and not any(self.variables[p].kind == NOISE for p in self.parents[v.id])
                ):
                    raise ObservedWithoutNoiseParent(f"observed variable {v.name!r} has no noise parent")
        for c in range(n):
            if self.target in self.parents[c]:
                raise ModelError("the target must not have children")

    def _check_mechanism(self, v: VariableSpec, mech: Mechanism):
        if isinstance(mech, Constant):
            if not 0 <= mech.value < v.domain.size:
                raise ValueOutOfDomain(f"constant {mech.value} outside domain of {v.name!r}")
        elif isinstance(mech, ThresholdGate):
            binaries = (v.id, mech.noise_parent, *mech.observed_parents)
            if any(self.variables[i].domain.size != 2 for i in binaries):
                raise ModelError(f"threshold gate {v.name!r} requires binary variables")
            if self.variables[mech.noise_parent].kind != NOISE:
                raise ModelError(f"threshold gate {v.name!r}: noise parent is not a noise variable")
            if any(self.variables[p].kind == NOISE for p in mech.observed_parents):
                raise ModelError(f"threshold gate {v.name!r}: observed parents must not be noise")
            if mech.threshold < 0 or (mech.observed_parents and mech.threshold > len(mech.observed_parents)):
                raise ModelError(f"threshold of {v.name!r} outside 0..{len(mech.observed_parents)}")
        else:
            shape = tuple(self.variables[p].domain.size for p in mech.parents)
            table = np.asarray(mech.table)
            if table.shape != shape:
                raise IncompleteTruthTable(f"truth table of {v.name!r} has shape {table.shape}, expected {shape}")
            if np.any(table < 0) or np.any(table >= v.domain.size):
                raise ValueOutOfDomain(f"truth table of {v.name!r} has outputs outside its domain")

    # lookup ---------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.variables)

    def index(self, name_or_id: Union[str, int]) -> int:
        if isinstance(name_or_id, (int, np.integer)):
            if 0 <= name_or_id < len(self.variables):
                return int(name_or_id)
            raise UnknownVariable(f"no variable with index {name_or_id}")
        try:
            return self._index[name_or_id]
        except KeyError:
            raise UnknownVariable(f"unknown variable {name_or_id!r}") from None

    def name(self, var: int) -> str:
        return self.variables[var].name

    def domain(self, var: int) -> Domain:
        return self.variables[var].domain

    @property
    def noise_ids(self) -> tuple[int, ...]:
        return tuple(v.id for v in self.variables if v.kind == NOISE)

    @property
    def observed_ids(self) -> tuple[int, ...]:
        return tuple(v.id for v in self.variables if v.kind == OBSERVED)

    @property
    def target_domain(self) -> Domain:
        return self.variables[self.target].domain

    def ancestors(self, nodes: Iterable[int]) -> set[int]:
        """``nodes`` together with all their ancestors."""
        seen = set()
        stack = list(nodes)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.parents[i])
        return seen

    def has_path(self, source: int, dest: int) -> bool:
        return source in self.ancestors([dest])

    def observation(self, values: Mapping[Union[str, int], Union[str, int]]) -> Observation:
        """Observation from names (or ids) to labels (or codes)."""
        out = {}
        for key, val in values.items():
            i = self.index(key)
            out[i] = self.domain(i).code(val)
        return Observation.of(out)

    def coalition(self, values: Mapping[Union[str, int], Union[str, int]]) -> Coalition:
        out = {}
        for key, val in values.items():
            i = self.index(key)
            out[i] = self.domain(i).code(val)
        return Coalition.of(out)

    def labels(self, assignment: Mapping[int, int]) -> dict[str, str]:
        return {self.name(i): self.domain(i).label(c) for i, c in sorted(assignment.items())}

    # evaluation -------------------------------------------------------------
    def forward(self, noise: Mapping[int, np.ndarray], needed: Iterable[int] | None = None) -> dict[int, np.ndarray]:
        """Vectorised forward pass.

        ``noise`` maps noise ids to equal-length code arrays. Only variables in
        ``needed`` (and their ancestors) are computed; by default all of them.
        """
        wanted = set(range(len(self.variables))) if needed is None else self.ancestors(needed)
        sizes = {len(np.asarray(a)) for a in noise.values()}
        size = sizes.pop() if sizes else 1
        columns: dict[int, np.ndarray] = {}
        for i in self.order:
            if i not in wanted:
                continue
            if self.variables[i].kind == NOISE:
                if i in noise:
                    columns[i] = np.asarray(noise[i], dtype=np.int64)
                elif i in self.intervened:
                    columns[i] = np.full(size, int(np.argmax(self.noise_priors[i])), dtype=np.int64)
                else:
                    raise MissingNoiseValue(f"no value for noise variable {self.name(i)!r}")
            else:
                columns[i] = self.mechanisms[i].evaluate(columns, size)
        return columns

    # serialisation -----------------------------------------------------------
    def to_dict(self) -> dict:
        """JSON-compatible description, accepted back by :func:`build_scm`."""
        variables = [
            {"name": v.name, "kind": v.kind, "domain": list(v.domain.labels)} for v in self.variables
        ]
        edges = [[self.name(p), self.name(c)] for c in range(len(self.variables)) for p in self.parents[c]]
        mechanisms = {}
        for i, mech in sorted(self.mechanisms.items()):
            if isinstance(mech, Constant):
                mechanisms[self.name(i)] = {"type": "constant", "value": self.domain(i).label(mech.value)}
            elif isinstance(mech, ThresholdGate):
                mechanisms[self.name(i)] = {
                    "type": "threshold_gate",
                    "noise": self.name(mech.noise_parent),
                    "threshold": mech.threshold,
                    "parents": [self.name(p) for p in mech.observed_parents],
                }
            else:
                rows = []
                for combo in itertools.product(*(range(self.domain(p).size) for p in mech.parents)):
                    out = int(mech.table[combo]) if combo else int(mech.table)
                    rows.append([self.domain(p).label(c) for p, c in zip(mech.parents, combo)] + [self.domain(i).label(out)])
                mechanisms[self.name(i)] = {
                    "type": "truth_table",
                    "parents": [self.name(p) for p in mech.parents],
                    "rows": rows,
                }
        priors = {self.name(i): [float(x) for x in p] for i, p in sorted(self.noise_priors.items())}
        out = {"variables": variables, "edges": edges, "mechanisms": mechanisms, "noise_priors": priors}
        if self.intervened:
            out["intervened"] = sorted(self.name(i) for i in self.intervened)
        return out

    def model_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scm):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return id(self)

    def __repr__(self) -> str:
        return f"Scm({len(self.variables)} variables, target={self.name(self.target)!r})"


def _topological_order(scm: Scm) -> tuple[int, ...]:
    n = len(scm.variables)
    indeg = [len(scm.parents[i]) for i in range(n)]
    children = [[] for _ in range(n)]
    for c in range(n):
        for p in scm.parents[c]:
            children[p].append(c)
    ready = sorted(i for i in range(n) if indeg[i] == 0)
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for c in children[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort()
    if len(order) != n:
        raise CycleDetected("the edge relation contains a cycle")
    return tuple(order)


# ---------------------------------------------------------------- JSON builder


def build_scm(spec: Mapping) -> Scm:
    """Validate a raw model description and return an :class:`Scm`.

    The description uses names throughout (see the README for the format).
    Variables are re-indexed in a stable topological order with the target
    last, so indices are dense and the target has the highest index.
    """
    raw_vars = spec.get("variables")
    if not raw_vars:
        raise ModelError("model description has no variables")
    names = [v["name"] for v in raw_vars]
    if len(set(names)) != len(names):
        raise ModelError("duplicate variable names")
    kinds = {v["name"]: v.get("kind", OBSERVED) for v in raw_vars}
    if sum(k == TARGET for k in kinds.values()) != 1:
        raise TargetNotUnique("expected exactly one target variable")
    domains = {v["name"]: Domain(tuple(str(x) for x in v.get("domain", ("0", "1")))) for v in raw_vars}

    parents_by_name: dict[str, list[str]] = {n: [] for n in names}
    for edge in spec.get("edges", []):
        p, c = edge
        if p not in parents_by_name or c not in parents_by_name:
            raise UnknownVariable(f"edge {edge!r} names an unknown variable")
        if p not in parents_by_name[c]:
            parents_by_name[c].append(p)
    for n in names:
        if kinds[n] == NOISE and parents_by_name[n]:
            raise NoiseHasParents(f"noise variable {n!r} has parents")

    order = _name_order(names, parents_by_name, target=next(n for n in names if kinds[n] == TARGET))
    idx = {n: i for i, n in enumerate(order)}
    variables = [VariableSpec(idx[n], n, kinds[n], domains[n]) for n in order]

    intervened = set(spec.get("intervened", []))
    mechanisms: dict[int, Mechanism] = {}
    raw_mechs = spec.get("mechanisms", {})
    for n in order:
        if kinds[n] == NOISE:
            continue
        if n not in raw_mechs:
            raise ModelError(f"variable {n!r} has no mechanism")
        mechanisms[idx[n]] = _parse_mechanism(n, raw_mechs[n], idx, domains, parents_by_name[n])

    priors = {}
    raw_priors = spec.get("noise_priors", {})
    for n in order:
        if kinds[n] != NOISE:
            continue
        if n not in raw_priors:
            raise ModelError(f"noise variable {n!r} has no prior")
        priors[idx[n]] = np.asarray(raw_priors[n], dtype=float)
    parents = [tuple(sorted(idx[p] for p in parents_by_name[n])) for n in order]
    return Scm(variables, parents, mechanisms, priors, intervened={idx[n] for n in intervened})


def _name_order(names, parents_by_name, target) -> list[str]:
    pos = {n: i for i, n in enumerate(names)}
    indeg = {n: len(parents_by_name[n]) for n in names}
    children = {n: [] for n in names}
    for c in names:
        for p in parents_by_name[c]:
            children[p].append(c)
    if children[target]:
        if _has_cycle(names, parents_by_name):
            raise CycleDetected("the edge relation contains a cycle")
        raise ModelError("the target must not have children")
    ready = sorted((n for n in names if indeg[n] == 0 and n != target), key=pos.get)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0 and c != target:
                ready.append(c)
        ready.sort(key=pos.get)
    if len(order) != len(names) - 1 or indeg[target] != 0:
        raise CycleDetected("the edge relation contains a cycle")
    return order + [target]


def _has_cycle(names, parents_by_name) -> bool:
    state = {n: 0 for n in names}

    def visit(n):
        state[n] = 1
        for p in parents_by_name[n]:
            if state[p] == 1 or (state[p] == 0 and visit(p)):
                return True
        state[n] = 2
        return False

    return any(state[n] == 0 and visit(n) for n in names)


def _parse_mechanism(name, raw, idx, domains, edge_parents) -> Mechanism:
    kind = raw.get("type")
    if kind == "constant":
        return Constant(domains[name].code(raw["value"]))
    if kind == "threshold_gate":
        noise = raw["noise"]
        observed = list(raw.get("parents", []))
        if set([noise, *observed]) != set(edge_parents):
            raise ModelError(f"threshold gate of {name!r} disagrees with its edges")
        threshold = int(raw["threshold"])
        if threshold < 0 or (observed and threshold > len(observed)):
            raise ModelError(f"threshold of {name!r} outside 0..{len(observed)}")
        return ThresholdGate(idx[noise], threshold, tuple(sorted(idx[p] for p in observed)))
    if kind == "truth_table":
        parents = list(raw.get("parents", edge_parents))
        if set(parents) != set(edge_parents) or len(parents) != len(edge_parents):
            raise ModelError(f"truth table of {name!r} disagrees with its edges")
        # store axes in index order so the mechanism is canonical
        perm = sorted(range(len(parents)), key=lambda k: idx[parents[k]])
        shape = tuple(domains[p].size for p in parents)
        table = np.full(shape, -1, dtype=np.int64)
        for row in raw.get("rows", []):
            if len(row) != len(parents) + 1:
                raise IncompleteTruthTable(f"row {row!r} of {name!r} has the wrong arity")
            key = tuple(domains[p].code(v) for p, v in zip(parents, row[:-1]))
            if table[key] != -1:
                raise IncompleteTruthTable(f"row {row!r} of {name!r} appears twice")
            table[key] = domains[name].code(row[-1])
        if np.any(table < 0):
            raise IncompleteTruthTable(f"truth table of {name!r} does not cover every parent combination")
        table = np.transpose(table, perm) if parents else table
        return TruthTable(tuple(idx[parents[k]] for k in perm), table)
    raise ModelError(f"unknown mechanism type {kind!r} for {name!r}")


def load_scm(path) -> Scm:
    with open(path) as fh:
        return build_scm(json.load(fh))


# ---------------------------------------------------------------- operations


def evaluate(scm: Scm, noise: Mapping[int, int]) -> Observation:
    """Forward-evaluate a single total noise assignment into a full observation."""
    missing = [scm.name(i) for i in scm.noise_ids if i not in noise and i not in scm.intervened]
    if missing:
        raise MissingNoiseValue(f"missing noise values for {missing}")
    arrays = {}
    for i in scm.noise_ids:
        if i in noise:
            arrays[i] = np.array([scm.domain(i).code(noise[i])])
    cols = scm.forward(arrays)
    return Observation.of({i: int(c[0]) for i, c in cols.items()})


def check_coalition(scm: Scm, coalition: Coalition) -> None:
    """Raise unless every member is a known non-target variable pinned inside its domain."""
    for var, val in zip(coalition.members, coalition.values):
        if not 0 <= var < len(scm.variables):
            raise UnknownVariable(f"no variable with index {var}")
        if var == scm.target:
            raise TargetInCoalition("the target cannot be part of a coalition")
        if not 0 <= val < scm.domain(var).size:
            raise ValueOutOfDomain(f"value {val} outside domain of {scm.name(var)!r}")


def apply_intervention(scm: Scm, coalition: Coalition) -> Scm:
    """Hard intervention: each member becomes a constant and loses its in-edges.

    Noise members keep their (empty) edge set and get a point-mass prior.
    """
    if not coalition.members:
        return scm
    check_coalition(scm, coalition)
    variables = scm.variables
    parents = list(scm.parents)
    mechanisms = dict(scm.mechanisms)
    priors = dict(scm.noise_priors)
    for var, val in zip(coalition.members, coalition.values):
        dom = scm.domain(var)
        if variables[var].kind == NOISE:
            point = np.zeros(dom.size)
            point[val] = 1.0
            priors[var] = point
        else:
            mechanisms[var] = Constant(val)
            parents[var] = ()
    return Scm(variables, parents, mechanisms, priors, intervened=scm.intervened | set(coalition.members))
