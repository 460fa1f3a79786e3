"""Explanations of black-box predictors over tabular features.

The features are treated as jointly confounded inputs of a single predictor.
Intervening on a coalition pins its columns and resamples the remaining ones
from the empirical joint (whole rows, with the pinned columns overwritten).
"""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import _rng
from .datasets import SampleTable, corral_class
from .errors import (
    CoalexError,
    IncompleteTruthTable,
    OrderingIncomplete,
    ScoreFileMismatch,
    UnknownFeature,
)
from .inference import CategoricalDistribution
from .model import Coalition, Domain
from .score import ExplanationScore, score_from_probabilities
from .search import SearchResult, search_coalitions

Predictor = Callable[[np.ndarray], np.ndarray]


@dataclass
class EmpiricalModel:
    """Feature table, a deterministic predictor over code rows and the prediction domain.

    ``predictor`` maps an ``(n, F)`` array of feature codes to ``n`` target codes.
    """

    table: SampleTable
    predictor: Predictor
    target_domain: Domain

    def __post_init__(self):
        self._base: Optional[CategoricalDistribution] = None

    @property
    def features(self) -> tuple[str, ...]:
        return self.table.columns

    def index(self, feature: Union[str, int]) -> int:
        if isinstance(feature, (int, np.integer)):
            if not 0 <= feature < len(self.features):
                raise UnknownFeature(f"no feature with index {feature}")
            return int(feature)
        try:
            return self.features.index(feature)
        except ValueError:
            raise UnknownFeature(f"unknown feature {feature!r}; known: {', '.join(self.features)}") from None

    def name(self, i: int) -> str:
        return self.features[i]

    def domain(self, i: int) -> Domain:
        return self.table.domains[i]

    def row(self, values: Union[Mapping[str, str], Sequence[int], int]) -> np.ndarray:
        """A feature row as codes, from labels by name, a code sequence or a table row index."""
        if isinstance(values, (int, np.integer)):
            return self.table.data[int(values)].copy()
        if isinstance(values, Mapping):
            unknown = [k for k in values if k not in self.features]
            if unknown:
                raise UnknownFeature(f"unknown features {unknown}")
            missing = [f for f in self.features if f not in values]
            if missing:
                raise UnknownFeature(f"row lacks features {missing}")
            return np.array([self.domain(i).code(values[f]) for i, f in enumerate(self.features)], dtype=np.int64)
        row = np.asarray(values, dtype=np.int64)
        if row.shape != (len(self.features),):
            raise UnknownFeature(f"row needs {len(self.features)} values, got {row.shape}")
        return row

    def predict(self, rows: np.ndarray) -> np.ndarray:
        out = np.asarray(self.predictor(np.atleast_2d(rows)), dtype=np.int64)
        if out.min(initial=0) < 0 or out.max(initial=0) >= self.target_domain.size:
            raise CoalexError("predictor returned a code outside the target domain")
        return out

    def base_distribution(self) -> CategoricalDistribution:
        if self._base is None:
            self._base = _distribution(self.target_domain, self.predict(self.table.data))
        return self._base

    def coalition(self, members: Iterable[Union[str, int]], row: np.ndarray) -> Coalition:
        idx = sorted({self.index(m) for m in members})
        return Coalition(tuple(idx), tuple(int(row[i]) for i in idx))


def _distribution(domain: Domain, codes: np.ndarray) -> CategoricalDistribution:
    counts = np.bincount(codes, minlength=domain.size).astype(float)
    return CategoricalDistribution(domain, counts / counts.sum())


# ---------------------------------------------------------------- predictors


def corral_predictor(rows: np.ndarray) -> np.ndarray:
    return corral_class(rows[:, :4])


@dataclass
class TruthTablePredictor:
    """Lookup table over feature labels, loaded from JSON.

    Format: ``{"features": [...], "target_domain": [...], "rows": [[f1, ..., fF, out], ...]}``.
    """

    features: tuple[str, ...]
    target_domain: Domain
    table: dict[tuple[int, ...], int]

    @classmethod
    def load(cls, path, model_table: SampleTable) -> TruthTablePredictor:
        raw = json.loads(Path(path).read_text())
        feats = tuple(raw["features"])
        if feats != model_table.columns:
            raise UnknownFeature(f"truth table features {feats} differ from the table columns {model_table.columns}")
        dom = Domain(tuple(raw["target_domain"]))
        doms = model_table.domains
        table = {}
        for r in raw["rows"]:
            key = tuple(d.code(v) for d, v in zip(doms, r[:-1]))
            table[key] = dom.code(r[-1])
        size = math.prod(d.size for d in doms)
        if len(table) != size:
            raise IncompleteTruthTable(f"truth table covers {len(table)} of {size} feature combinations")
        return cls(feats, dom, table)

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        return np.array([self.table[tuple(int(v) for v in r)] for r in rows], dtype=np.int64)


class CommandPredictor:
    """External predictor speaking a line protocol: one CSV row of labels in, one label out.

    The command is started once and kept alive; each distinct row is sent once
    and the answer memoised, so the command must be stateless.
    """

    def __init__(self, argv: Sequence[str], domains: Sequence[Domain], target_domain: Domain):
        self.argv = list(argv)
        self.domains = list(domains)
        self.target_domain = target_domain
        self._memo: dict[tuple[int, ...], int] = {}
        self._proc: Optional[subprocess.Popen] = None

    def _ask(self, key: tuple[int, ...]) -> int:
        if self._proc is None:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(d.label(v) for d, v in zip(self.domains, key))
        self._proc.stdin.write(buf.getvalue())
        self._proc.stdin.flush()
        answer = self._proc.stdout.readline()
        if not answer:
            raise CoalexError(f"predictor command {self.argv[0]!r} closed its output")
        return self.target_domain.code(answer.strip())

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        out = np.empty(len(rows), dtype=np.int64)
        for k, r in enumerate(rows):
            key = tuple(int(v) for v in r)
            if key not in self._memo:
                self._memo[key] = self._ask(key)
            out[k] = self._memo[key]
        return out

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None


# ---------------------------------------------------------------- interventions and scores


def _pinned_rows(model: EmpiricalModel, coalition: Coalition, rows: np.ndarray) -> np.ndarray:
    rows = rows.copy()
    for m, v in zip(coalition.members, coalition.values):
        model.index(m)
        rows[:, m] = v
    return rows


def empirical_interventional_distribution(
    model: EmpiricalModel,
    coalition: Coalition,
    n: Optional[int] = None,
    seed: int = 0,
) -> CategoricalDistribution:
    """Prediction distribution with the coalition pinned and other features resampled.

    ``n=None`` averages over every table row (exact); otherwise ``n`` rows are
    drawn uniformly with replacement.
    """
    if n is None:
        rows = model.table.data
    else:
        if n < 1:
            raise CoalexError("n must be positive")
        rng = _rng.stream(seed, "empirical", coalition.members, coalition.values)
        rows = model.table.data[rng.integers(0, len(model.table), size=n)]
    return _distribution(model.target_domain, model.predict(_pinned_rows(model, coalition, rows)))


def model_explanation_score(
    model: EmpiricalModel,
    row: np.ndarray,
    members: Iterable[Union[str, int]],
    n: Optional[int] = None,
    seed: int = 0,
) -> ExplanationScore:
    """Score of the features ``members`` (pinned to ``row``) for the prediction on ``row``."""
    row = model.row(row)
    coal = model.coalition(members, row)
    y = int(model.predict(row)[0])
    if n is None:
        p_base = model.base_distribution().prob(y)
    else:
        p_base = empirical_interventional_distribution(model, Coalition(), n, seed).prob(y)
    p_coal = empirical_interventional_distribution(model, coal, n, seed).prob(y)
    meta = {"draws": n, "seed": seed, "p_target": p_base, "p_target_do": p_coal}
    return ExplanationScore(score_from_probabilities(p_coal, p_base), coal, y, meta)


def minimal_model_coalitions(
    model: EmpiricalModel,
    row: np.ndarray,
    alpha: float = 1.0,
    k_max: Optional[int] = None,
    candidates: Optional[Iterable[Union[str, int]]] = None,
    n: Optional[int] = None,
    seed: int = 0,
) -> SearchResult:
    row = model.row(row)
    cands = range(len(model.features)) if candidates is None else [model.index(c) for c in candidates]

    def score(members):
        s = model_explanation_score(model, row, members, n, seed)
        return s.coalition, s.value

    return search_coalitions(cands, score, alpha, k_max)


# ---------------------------------------------------------------- stability


@dataclass(frozen=True)
class StabilityCurve:
    """``values[k]``: share of draws whose prediction is unchanged with the first ``k`` features randomized."""

    values: tuple[float, ...]
    ordering: tuple[str, ...]
    draws: Optional[int]
    seed: int
    label: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "randomized", "stability"])
        for k, v in enumerate(self.values):
            w.writerow([k, self.ordering[k - 1] if k else "", repr(float(v))])
        return buf.getvalue()

    def monotonicity_violations(self) -> list[int]:
        """Values of ``k`` where the curve rises by more than the sampling tolerance 2/sqrt(draws)."""
        tol = 1e-12 if self.draws is None else 2.0 / math.sqrt(self.draws)
        return [k for k in range(1, len(self.values)) if self.values[k] > self.values[k - 1] + tol]


def stability_curve(
    model: EmpiricalModel,
    row: np.ndarray,
    ordering: Sequence[Union[str, int]],
    n_draws: Optional[int] = 1000,
    seed: int = 0,
    label: str = "",
) -> StabilityCurve:
    """Randomize features in ``ordering`` one by one, keeping the rest at ``row``.

    ``n_draws=None`` uses every table row once per step (exact mode).
    """
    row = model.row(row)
    perm = [model.index(f) for f in ordering]
    if sorted(perm) != list(range(len(model.features))):
        raise OrderingIncomplete(f"ordering must be a permutation of all {len(model.features)} features")
    y = int(model.predict(row)[0])
    values = []
    for k in range(len(perm) + 1):
        pinned = perm[k:]
        if n_draws is None:
            rows = model.table.data.copy()
        else:
            rng = _rng.stream(seed, "stability", k)
            rows = model.table.data[rng.integers(0, len(model.table), size=n_draws)]
        rows[:, pinned] = row[pinned]
        values.append(1.0 if k == 0 else float(np.mean(model.predict(rows) == y)))
    names = tuple(model.name(i) for i in perm)
    return StabilityCurve(tuple(values), names, n_draws, seed, label)


def load_score_file(path, features: Sequence[str]) -> dict[str, float]:
    """Attribution scores from a CSV with columns ``feature,score``, normalized to sum 1."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"feature", "score"} <= set(reader.fieldnames):
            raise ScoreFileMismatch(f"{path} needs the columns feature,score")
        raw = {r["feature"]: float(r["score"]) for r in reader}
    if set(raw) != set(features):
        missing = sorted(set(features) - set(raw))
        extra = sorted(set(raw) - set(features))
        raise ScoreFileMismatch(f"score file features differ: missing {missing}, unknown {extra}")
    total = math.fsum(raw.values())
    if total == 0.0 or not math.isfinite(total):
        raise ScoreFileMismatch("scores must have a finite non-zero sum")
    return {f: raw[f] / total for f in features}


def ascending_by_scores(scores: Mapping[str, float], features: Sequence[str]) -> list[str]:
    """Lowest score first; ties keep feature order."""
    return sorted(features, key=lambda f: scores[f])


def coalition_last(
    coalition: Iterable[str], features: Sequence[str], scores: Optional[Mapping[str, float]] = None
) -> list[str]:
    """Non-members first, members last; both blocks ascending by score when scores are given."""
    members = set(coalition)
    unknown = members - set(features)
    if unknown:
        raise UnknownFeature(f"unknown coalition features {sorted(unknown)}")
    order = list(features) if scores is None else ascending_by_scores(scores, features)
    return [f for f in order if f not in members] + [f for f in order if f in members]


def random_ordering(features: Sequence[str], seed: int) -> list[str]:
    perm = _rng.stream(seed, "ordering").permutation(len(features))
    return [features[i] for i in perm]
