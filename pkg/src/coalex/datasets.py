"""Builders for the AND-gate, CorrAL and cloud-service systems, plus a seeded sampler."""

from __future__ import annotations

import csv
import json
import warnings
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _rng
from .errors import DegenerateParameter, InvalidThreshold, SchemaMismatch
from .model import NOISE, OBSERVED, TARGET, Domain, Scm, build_scm

CHUNK_ROWS = 1 << 16
ROLE_NOISE = "noise"


# ---------------------------------------------------------------- sample tables


@dataclass
class SampleTable:
    """Rows of integer codes with named, typed columns.

    Roles: ``observed``/``target``/``noise`` for model samples, ``feature`` and
    ``class`` for tabular data. ``tallies`` counts generated rows by number of
    injected errors and target value (before any filtering).
    """

    columns: tuple[str, ...]
    roles: tuple[str, ...]
    domains: tuple[Domain, ...]
    data: np.ndarray
    seed: Optional[int] = None
    model_hash: Optional[str] = None
    tallies: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def columns_with_role(self, role: str) -> list[str]:
        return [c for c, r in zip(self.columns, self.roles) if r == role]

    def row_labels(self, i: int) -> dict[str, str]:
        return {c: d.label(int(v)) for c, d, v in zip(self.columns, self.domains, self.data[i])}

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "model_hash": self.model_hash,
            "columns": [
                {"name": c, "role": r, "domain": list(d.labels)}
                for c, r, d in zip(self.columns, self.roles, self.domains)
            ],
            "tallies": self.tallies,
        }

    def write(self, path) -> Path:
        """Write ``path`` (CSV of labels) and ``path.json`` (sidecar); returns the sidecar path."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            labels = [np.asarray(d.labels) for d in self.domains]
            for row in self.data:
                w.writerow([lab[v] for lab, v in zip(labels, row)])
        side = sidecar_path(path)
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return side

    @classmethod
    def read(cls, path) -> SampleTable:
        path = Path(path)
        side = sidecar_path(path)
        meta = json.loads(side.read_text()) if side.exists() else None
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise SchemaMismatch(f"{path} is empty")
        header = tuple(rows[0])
        if meta is not None:
            cols = meta["columns"]
            if [c["name"] for c in cols] != list(header):
                raise SchemaMismatch(f"sidecar columns do not match the header of {path}")
            roles = tuple(c["role"] for c in cols)
            domains = tuple(Domain(tuple(c["domain"])) for c in cols)
        else:
            roles = ("feature",) * len(header)
            domains = tuple(_infer_domain(header[k], {r[k] for r in rows[1:]}) for k in range(len(header)))
        data = np.array([[d.code(v) for d, v in zip(domains, r)] for r in rows[1:]], dtype=np.int64)
        data = data.reshape(len(rows) - 1, len(header))
        return cls(
            header, roles, domains, data,
            seed=meta.get("seed") if meta else None,
            model_hash=meta.get("model_hash") if meta else None,
            tallies=meta.get("tallies", {}) if meta else {},
        )


def _infer_domain(name: str, seen: set[str]) -> Domain:
    labels = sorted(seen, key=_label_key)
    if len(labels) >= 2:
        return Domain(tuple(labels))
    # a constant column only has an unambiguous domain when it looks binary
    if set(labels) <= {"0", "1"}:
        return Domain.binary()
    raise SchemaMismatch(f"column {name!r} has a single value {labels}; give its domain in a sidecar file")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _label_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


# ---------------------------------------------------------------- AND gate


def and_gate_model(p1: float, p2: float) -> Scm:
    """Two independent Bernoulli inputs and ``Y = X1 AND X2``."""
    for p in (p1, p2):
        if not 0.0 < p < 1.0:
            raise DegenerateParameter(f"Bernoulli parameter must lie in (0, 1), got {p}")
    binary = ["0", "1"]
    identity = [["0", "0"], ["1", "1"]]
    return build_scm(
        {
            "variables": [
                {"name": "L1", "kind": NOISE, "domain": binary},
                {"name": "L2", "kind": NOISE, "domain": binary},
                {"name": "X1", "kind": OBSERVED, "domain": binary},
                {"name": "X2", "kind": OBSERVED, "domain": binary},
                {"name": "Y", "kind": TARGET, "domain": binary},
            ],
            "edges": [["L1", "X1"], ["L2", "X2"], ["X1", "Y"], ["X2", "Y"]],
            "mechanisms": {
                "X1": {"type": "truth_table", "parents": ["L1"], "rows": identity},
                "X2": {"type": "truth_table", "parents": ["L2"], "rows": identity},
                "Y": {
                    "type": "truth_table",
                    "parents": ["X1", "X2"],
                    "rows": [["0", "0", "0"], ["0", "1", "0"], ["1", "0", "0"], ["1", "1", "1"]],
                },
            },
            "noise_priors": {"L1": [1 - p1, p1], "L2": [1 - p2, p2]},
        }
    )


# ---------------------------------------------------------------- CorrAL

CORRAL_FEATURES = ("A0", "A1", "B0", "B1", "Irrelevant", "Correlated")
CORRAL_ROWS = 160
CORRAL_DEFAULT_SEED = 1994


def corral_class(features: np.ndarray) -> np.ndarray:
    """(A0 and A1) or (B0 and B1) on a 2-D code array with CorrAL column order."""
    f = np.asarray(features)
    return ((f[:, 0] & f[:, 1]) | (f[:, 2] & f[:, 3])).astype(np.int64)


def corral_table(seed: int = CORRAL_DEFAULT_SEED) -> SampleTable:
    """Synthesised CorrAL data.

    The first row is the all-false instance; the rest are drawn uniformly.
    ``Correlated`` agrees with the class with probability 0.75.
    """
    rng = _rng.stream(seed, "corral")
    base = rng.integers(0, 2, size=(CORRAL_ROWS, 5))
    base[0] = 0
    cls = corral_class(base)
    agree = rng.random(CORRAL_ROWS) < 0.75
    agree[0] = True
    correlated = np.where(agree, cls, 1 - cls)
    data = np.column_stack([base, correlated, cls]).astype(np.int64)
    binary = Domain.binary()
    return SampleTable(
        CORRAL_FEATURES + ("class",),
        ("feature",) * 6 + ("class",),
        (binary,) * 7,
        data,
        seed=seed,
    )


def corral_model(table: SampleTable):
    """Empirical one-layer model over the CorrAL features with the CorrAL formula as predictor."""
    from .explain import EmpiricalModel, corral_predictor

    missing = [c for c in CORRAL_FEATURES if c not in table.columns]
    if missing:
        raise SchemaMismatch(f"table lacks CorrAL columns {missing}")
    cols = [table.columns.index(c) for c in CORRAL_FEATURES]
    features = SampleTable(
        CORRAL_FEATURES,
        ("feature",) * 6,
        tuple(table.domains[c] for c in cols),
        table.data[:, cols],
        seed=table.seed,
    )
    return EmpiricalModel(features, corral_predictor, Domain.binary())


# ---------------------------------------------------------------- cloud network


@dataclass(frozen=True)
class CloudNode:
    name: str
    p: float
    threshold: int = 0


@dataclass(frozen=True)
class CloudNetworkConfig:
    """Services with intrinsic error rate ``p`` and propagation threshold per node.

    A node fails if its own noise fires or at least ``threshold`` of its parent
    services fail. Nodes without parents fail only through their noise.
    """

    nodes: tuple[CloudNode, ...]
    edges: tuple[tuple[str, str], ...]
    target: str

    @classmethod
    def from_dict(cls, raw: Mapping) -> CloudNetworkConfig:
        nodes = tuple(CloudNode(n["name"], float(n["p"]), int(n.get("threshold", 0))) for n in raw["nodes"])
        edges = tuple((str(a), str(b)) for a, b in raw["edges"])
        return cls(nodes, edges, str(raw["target"]))

    def to_dict(self) -> dict:
        return {
            "nodes": [{"name": n.name, "p": n.p, "threshold": n.threshold} for n in self.nodes],
            "edges": [list(e) for e in self.edges],
            "target": self.target,
        }

    def parents(self, name: str) -> list[str]:
        return [a for a, b in self.edges if b == name]


def noise_name(node: str) -> str:
    return f"L_{node}"


def cloud_model(cfg: CloudNetworkConfig) -> Scm:
    """Threshold-gate error-propagation network with one Bernoulli noise per node."""
    names = [n.name for n in cfg.nodes]
    if cfg.target not in names:
        raise InvalidThreshold(f"target {cfg.target!r} is not a node")
    for a, b in cfg.edges:
        if a not in names or b not in names:
            raise InvalidThreshold(f"edge ({a}, {b}) names an unknown node")
    variables, edges, mechanisms, priors = [], [], {}, {}
    for node in cfg.nodes:
        parents = cfg.parents(node.name)
        if not 0.0 <= node.p <= 1.0:
            raise InvalidThreshold(f"error rate of {node.name!r} must lie in [0, 1]")
        if node.threshold < 0 or node.threshold > len(parents):
            raise InvalidThreshold(
                f"threshold {node.threshold} of {node.name!r} outside 0..{len(parents)}"
            )
        if parents and node.threshold == 0:
            warnings.warn(f"node {node.name!r} has threshold 0 and is therefore always failing", stacklevel=2)
        kind = TARGET if node.name == cfg.target else OBSERVED
        lam = noise_name(node.name)
        variables.append({"name": lam, "kind": NOISE, "domain": ["0", "1"]})
        variables.append({"name": node.name, "kind": kind, "domain": ["0", "1"]})
        edges.append([lam, node.name])
        edges.extend([p, node.name] for p in parents)
        mechanisms[node.name] = {"type": "threshold_gate", "noise": lam, "threshold": node.threshold, "parents": parents}
        priors[lam] = [1.0 - node.p, node.p]
    return build_scm({"variables": variables, "edges": edges, "mechanisms": mechanisms, "noise_priors": priors})


# Nine services feeding the public endpoint ``www``. Every node except the
# target has a small intrinsic error rate; redundancy (threshold 2) at the
# gateway, the checkout path and ``www`` means no single fault reaches the
# target.
DEFAULT_CLOUD_CONFIG = CloudNetworkConfig(
    nodes=(
        CloudNode("database", 0.001, 0),
        CloudNode("cache", 0.002, 0),
        CloudNode("auth", 0.005, 0),
        CloudNode("storage", 0.01, 0),
        CloudNode("catalog", 0.005, 2),
        CloudNode("search", 0.01, 1),
        CloudNode("payment", 0.002, 1),
        CloudNode("checkout", 0.01, 2),
        CloudNode("api", 0.01, 2),
        CloudNode("www", 0.0, 2),
    ),
    edges=(
        ("database", "catalog"),
        ("cache", "catalog"),
        ("storage", "search"),
        ("auth", "payment"),
        ("catalog", "checkout"),
        ("payment", "checkout"),
        ("catalog", "api"),
        ("search", "api"),
        ("auth", "api"),
        ("checkout", "www"),
        ("api", "www"),
        ("search", "www"),
    ),
    target="www",
)


def default_cloud_model() -> Scm:
    return cloud_model(DEFAULT_CLOUD_CONFIG)


# ---------------------------------------------------------------- sampling


def generate_samples(
    scm: Scm,
    count: int,
    seed: int,
    filter_target: Optional[int] = None,
) -> SampleTable:
    """``count`` ancestral samples with hidden noise columns kept as ground truth.

    Rows are drawn in fixed chunks of ``CHUNK_ROWS`` with one stream per
    (seed, chunk), so the result does not depend on how chunks are scheduled.
    ``filter_target`` keeps only rows with that target code.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    order = list(scm.noise_ids) + [i for i in range(len(scm)) if scm.variables[i].kind != NOISE]
    chunks = []
    tallies: Counter = Counter()
    for c, start in enumerate(range(0, count, CHUNK_ROWS)):
        n = min(CHUNK_ROWS, count - start)
        rng = _rng.stream(seed, "samples", c)
        draws = rng.random((n, len(scm.noise_ids)))
        noise = {
            i: np.searchsorted(np.cumsum(scm.noise_priors[i])[:-1], draws[:, k], side="right")
            for k, i in enumerate(scm.noise_ids)
        }
        cols = scm.forward(noise)
        block = np.column_stack([cols[i] for i in order]).astype(np.int64)
        errors = (block[:, : len(scm.noise_ids)] != 0).sum(axis=1)
        y = cols[scm.target]
        for (e, t), k in Counter(zip(errors.tolist(), y.tolist())).items():
            tallies[(e, t)] += k
        if filter_target is not None:
            block = block[y == filter_target]
        chunks.append(block)
    data = np.concatenate(chunks) if chunks else np.empty((0, len(order)), dtype=np.int64)
    dom = scm.target_domain
    table_tallies: dict = {}
    for (e, t), k in sorted(tallies.items()):
        table_tallies.setdefault(str(e), {lab: 0 for lab in dom.labels})[dom.label(t)] = k
    return SampleTable(
        tuple(scm.name(i) for i in order),
        tuple(scm.variables[i].kind for i in order),
        tuple(scm.domain(i) for i in order),
        data,
        seed=seed,
        model_hash=scm.model_hash(),
        tallies=table_tallies,
    )


def table_noise(scm: Scm, table: SampleTable) -> np.ndarray:
    """Noise codes of every row, columns in ``scm.noise_ids`` order."""
    try:
        return np.column_stack([table.column(scm.name(i)) for i in scm.noise_ids])
    except ValueError as exc:
        raise SchemaMismatch(f"table lacks noise columns: {exc}") from None


def table_observations(scm: Scm, table: SampleTable, include: Sequence[str] = (OBSERVED, TARGET)):
    """Observations (non-noise values) of every row."""
    ids = [i for i in range(len(scm)) if scm.variables[i].kind in include]
    try:
        cols = [table.columns.index(scm.name(i)) for i in ids]
    except ValueError as exc:
        raise SchemaMismatch(f"table lacks model columns: {exc}") from None
    return ids, table.data[:, cols]
