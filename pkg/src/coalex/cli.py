"""Command-line front end.

Exit codes: 0 success, 1 bad input or configuration, 2 refusal (the method is
well defined but declines, e.g. an undefined score). Errors are printed to
stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
import time
import warnings
from pathlib import Path
from typing import Optional, Union

from . import __version__
from .datasets import (
    DEFAULT_CLOUD_CONFIG,
    CloudNetworkConfig,
    SampleTable,
    and_gate_model,
    cloud_model,
    corral_model,
    corral_table,
    generate_samples,
)
from .errors import CoalexError, StateSpaceTooLarge
from .explain import (
    CommandPredictor,
    EmpiricalModel,
    TruthTablePredictor,
    ascending_by_scores,
    coalition_last,
    load_score_file,
    minimal_model_coalitions,
    model_explanation_score,
    random_ordering,
    stability_curve,
)
from .inference import EXACT, MONTE_CARLO, EstimatorConfig
from .model import Scm, build_scm
from .rca import METHOD_NAMES, build_methods, evaluate_rca, samples_from_table
from .score import explanation_score_kl
from .search import (
    SearchConfig,
    expected_minimal_coalitions,
    minimal_coalitions,
    optimal_intervention,
)

log = logging.getLogger("coalex")

Model = Union[Scm, EmpiricalModel]


class UsageError(CoalexError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- model and observation specs


def _split_pairs(text: str) -> list[tuple[str, Optional[str]]]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, value = part.partition("=")
        out.append((name.strip(), value.strip() if sep else None))
    return out


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def _predictor_for(table: SampleTable, spec: Optional[str], target_domain: Optional[list[str]]):
    from .model import Domain

    if spec is None:
        raise UsageError("a table model needs --predictor")
    kind, _, arg = spec.partition(":")
    if kind == "truth-table":
        pred = TruthTablePredictor.load(arg, table)
        return pred, pred.target_domain
    if kind == "cmd":
        dom = Domain(tuple(target_domain or ("0", "1")))
        return CommandPredictor(shlex.split(arg), table.domains, dom), dom
    raise UsageError(f"unknown predictor {spec!r}; use truth-table:FILE or cmd:COMMAND")


def load_model(spec: str, args: argparse.Namespace) -> Model:
    """Resolve a model spec.

    ``builtin:and-gate[:p1,p2]``, ``builtin:cloud``, ``builtin:corral[:seed]``,
    ``cloud:CONFIG.json``, ``table:SAMPLES.csv`` (with ``--predictor``) or a
    model JSON file.
    """
    kind, _, arg = spec.partition(":")
    if kind == "builtin":
        name, _, params = arg.partition(":")
        if name == "and-gate":
            p = [float(x) for x in params.split(",")] if params else [0.1, 0.8]
            if len(p) != 2:
                raise UsageError("and-gate takes two parameters p1,p2")
            return and_gate_model(*p)
        if name == "cloud":
            return cloud_model(DEFAULT_CLOUD_CONFIG)
        if name == "corral":
            return corral_model(corral_table(int(params)) if params else corral_table())
        raise UsageError(f"unknown builtin model {name!r}; use and-gate, cloud or corral")
    if kind == "cloud":
        return cloud_model(CloudNetworkConfig.from_dict(_read_json(arg)))
    if kind == "table":
        table = SampleTable.read(arg)
        pred, dom = _predictor_for(table, getattr(args, "predictor", None), getattr(args, "target_domain", None))
        return EmpiricalModel(table, pred, dom)
    raw = _read_json(spec)
    if "nodes" in raw:
        return cloud_model(CloudNetworkConfig.from_dict(raw))
    return build_scm(raw)


def load_observation(model: Model, spec: str):
    """``row:N`` (table models), inline ``A=1,B=0`` or a JSON file mapping names to labels."""
    if spec.startswith("row:"):
        if not isinstance(model, EmpiricalModel):
            raise UsageError("row:N observations need a table model")
        i = int(spec[4:])
        if not 0 <= i < len(model.table):
            raise UsageError(f"row {i} outside the table of {len(model.table)} rows")
        return model.row(i)
    if "=" in spec and not Path(spec).exists():
        values = {k: v for k, v in _split_pairs(spec)}
    else:
        values = _read_json(spec)
    if isinstance(model, EmpiricalModel):
        return model.row(values)
    return model.observation(values)


def model_hash(model: Model) -> str:
    if isinstance(model, Scm):
        return model.model_hash()
    import hashlib

    h = hashlib.sha256(model.table.data.tobytes())
    h.update(json.dumps(model.table.columns).encode())
    return h.hexdigest()


# ---------------------------------------------------------------- output


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


class Run:
    """Collects the manifest of one command and writes outputs."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.start = time.perf_counter()
        self.model_hash: Optional[str] = None

    def manifest(self) -> dict:
        cfg = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "out")}
        return {
            "command": self.args.command,
            "config": cfg,
            "seeds": {"seed": getattr(self.args, "seed", None)},
            "model_hash": self.model_hash,
            "version": __version__,
        }

    def emit(self, text: str, out: Optional[str] = None, extra: Optional[dict[str, str]] = None) -> None:
        out = out if out is not None else getattr(self.args, "out", None)
        if out is None:
            sys.stdout.write(text)
            return
        path = Path(out)
        path.write_text(text)
        for suffix, body in (extra or {}).items():
            path.with_name(path.name + suffix).write_text(body)
        self.write_manifest(path)

    def write_manifest(self, path: Path) -> None:
        path.with_name(path.name + ".manifest.json").write_text(_dump(self.manifest()))
        timing = {"wall_clock_seconds": time.perf_counter() - self.start}
        path.with_name(path.name + ".timing.json").write_text(_dump(timing))


def estimator(args: argparse.Namespace) -> EstimatorConfig:
    return EstimatorConfig(
        mode=MONTE_CARLO if args.mode == "mc" else EXACT,
        sample_count=args.samples,
        seed=args.seed,
        exact_state_limit=args.state_limit,
    )


def _with_fallback(args, fn):
    """Run ``fn(cfg)``; exact runs that exceed the state limit retry in MC mode."""
    cfg = estimator(args)
    try:
        return fn(cfg)
    except StateSpaceTooLarge as exc:
        if cfg.mode != EXACT:
            raise
        log.warning("%s; falling back to Monte Carlo with %d samples", exc, cfg.sample_count)
        return fn(EstimatorConfig(MONTE_CARLO, cfg.sample_count, cfg.seed, cfg.exact_state_limit))


def _coalition_names(model: Model, text: Optional[str], observation) -> list[str]:
    """Coalition members from ``A,B`` or ``A=1,B=0``; given values must match the observation."""
    if not text:
        return []
    names = []
    for name, value in _split_pairs(text):
        if value is not None:
            if isinstance(model, EmpiricalModel):
                i = model.index(name)
                observed = model.domain(i).label(int(observation[i]))
            else:
                i = model.index(name)
                if i not in observation:
                    raise UsageError(f"observation has no value for {name!r}")
                observed = model.domain(i).label(observation[i])
            if observed != value:
                from .errors import CoalitionValueMismatch

                raise CoalitionValueMismatch(f"coalition pins {name}={value} but the observation has {name}={observed}")
        names.append(name)
    return names


# ---------------------------------------------------------------- commands


def cmd_score(args, run: Run) -> int:
    model = load_model(args.model, args)
    run.model_hash = model_hash(model)
    obs = load_observation(model, args.observation)
    names = _coalition_names(model, args.coalition, obs)
    if isinstance(model, EmpiricalModel):
        draws = None if args.mode == "exact" else args.samples
        result = model_explanation_score(model, obs, names, draws, args.seed)
    else:
        result = _with_fallback(args, lambda cfg: explanation_score_kl(model, obs, [model.index(n) for n in names], cfg))
    run.emit(_dump(result.to_json(model)))
    return 0


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise UsageError(f"alpha must exceed 0 and be at most 1, got {alpha}")


def cmd_search(args, run: Run) -> int:
    _check_alpha(args.alpha)
    model = load_model(args.model, args)
    run.model_hash = model_hash(model)
    obs = load_observation(model, args.observation)
    cands = [c.strip() for c in args.candidates.split(",") if c.strip()] if args.candidates else None
    if isinstance(model, EmpiricalModel):
        if args.expected:
            raise UsageError("--expected needs a structural model with noise variables")
        draws = None if args.mode == "exact" else args.samples
        result = minimal_model_coalitions(model, obs, args.alpha, args.k_max, cands, draws, args.seed)
    else:
        def run_search(cfg):
            ids = None if cands is None else tuple(model.index(c) for c in cands)
            search = SearchConfig(alpha=args.alpha, k_max=args.k_max, candidates=ids, estimator=cfg)
            if args.expected:
                return expected_minimal_coalitions(model, obs, search, args.posterior_samples)
            return minimal_coalitions(model, obs, search)

        result = _with_fallback(args, run_search)
    out = result.to_json(model.name, lambda i, v: model.domain(i).label(v))
    run.emit(_dump(out))
    return 0


def cmd_simulate(args, run: Run) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    model = load_model(args.config, args)
    if not isinstance(model, Scm):
        raise UsageError("simulate needs a structural model or cloud configuration")
    run.model_hash = model.model_hash()
    target = None if args.filter_target is None else model.target_domain.code(args.filter_target)
    table = generate_samples(model, args.count, args.seed, target)
    out = Path(args.out)
    table.write(out)
    run.write_manifest(out)
    sys.stdout.write(_dump({"rows": len(table), "file": str(out), "tallies": table.tallies}))
    return 0


def cmd_rca(args, run: Run) -> int:
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    methods = build_methods(names, args.alpha, args.posterior_samples, args.theta_c, args.theta_i, args.seed)
    _check_alpha(args.alpha)
    model = load_model(args.model, args)
    if not isinstance(model, Scm):
        raise UsageError("rca needs a structural model")
    run.model_hash = model.model_hash()
    table = SampleTable.read(args.samples_file)
    target = table.columns.index(model.name(model.target))
    error_code = model.target_domain.code(args.target_value)
    keep = table.data[:, target] == error_code
    table = SampleTable(table.columns, table.roles, table.domains, table.data[keep], table.seed, table.model_hash)
    if len(table) == 0:
        log.warning("no rows with %s=%s; the report is empty", model.name(model.target), args.target_value)
    samples = samples_from_table(model, table, args.ground_truth)
    outcome = evaluate_rca(methods, samples, model)
    report = {"ground_truth": args.ground_truth, "rows": len(samples), "methods": outcome.to_json()}
    if args.out:
        run.emit(_dump(report), extra={".csv": outcome.to_csv()})
    else:
        run.emit(_dump(report))
    return 0


def cmd_stability(args, run: Run) -> int:
    model = load_model(args.model, args)
    if not isinstance(model, EmpiricalModel):
        raise UsageError("stability needs a table model (builtin:corral or table:FILE)")
    run.model_hash = model_hash(model)
    row = load_observation(model, args.observation)
    feats = list(model.features)
    kind, _, arg = args.ordering.partition(":")
    draws = None if args.exact else args.draws
    if kind == "scores":
        if not arg:
            raise UsageError("scores ordering needs a score file: --ordering scores:FILE")
        ordering = ascending_by_scores(load_score_file(arg, feats), feats)
    elif kind == "coalition-last":
        scores = load_score_file(arg, feats) if arg else None
        if args.coalition:
            members = [n for n, _ in _split_pairs(args.coalition)]
        else:
            _check_alpha(args.alpha)
            found = minimal_model_coalitions(model, row, args.alpha, None, None, draws, args.seed)
            if not found.coalitions:
                raise UsageError("no coalition reaches alpha; pass --coalition")
            members = [model.name(i) for i in found.coalitions[0][0].members]
        ordering = coalition_last(members, feats, scores)
    elif kind == "random":
        ordering = random_ordering(feats, args.seed)
    else:
        raise UsageError(f"unknown ordering {args.ordering!r}; use scores:FILE, coalition-last[:FILE] or random")
    curve = stability_curve(model, row, ordering, draws, args.seed, kind)
    run.emit(curve.to_csv())
    return 0


def cmd_optimize(args, run: Run) -> int:
    model = load_model(args.model, args)
    if not isinstance(model, Scm):
        raise UsageError("optimize needs a structural model")
    run.model_hash = model.model_hash()
    obs = load_observation(model, args.observation)
    names = _coalition_names(model, args.coalition, obs)
    desired = model.target_domain.code(args.desired)
    proposal = _with_fallback(args, lambda cfg: optimal_intervention(model, obs, [model.index(n) for n in names], desired, cfg))
    run.emit(_dump(proposal.to_json(model)))
    return 0


def cmd_export(args, run: Run) -> int:
    if args.name == "cloud-config":
        text = _dump(DEFAULT_CLOUD_CONFIG.to_dict())
    elif args.name == "corral":
        corral_table(args.seed).write(args.out)
        run.write_manifest(Path(args.out))
        return 0
    else:
        model = and_gate_model(args.p1, args.p2) if args.name == "and-gate" else cloud_model(DEFAULT_CLOUD_CONFIG)
        run.model_hash = model.model_hash()
        text = _dump(model.to_dict())
    run.emit(text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--mode", choices=("exact", "mc"), default="exact", help="probability estimator")
    common.add_argument("--samples", type=int, default=100_000, help="Monte Carlo sample count")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--state-limit", type=int, default=2**20, help="largest noise space enumerated exactly")
    common.add_argument("-o", "--out", help="write the primary output here instead of stdout")
    common.add_argument("--predictor", help="for table models: truth-table:FILE or cmd:COMMAND")
    common.add_argument("--target-domain", nargs="+", help="labels of a command predictor's output")

    p = _Parser(prog="coalex", description="Coalition explanations for discrete causal models.")
    p.add_argument("--version", action="version", version=f"coalex {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("score", parents=[common], help="explanation score of one coalition")
    s.add_argument("model")
    s.add_argument("observation")
    s.add_argument("--coalition", default="", help="A,B or A=1,B=0")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("search", parents=[common], help="minimal coalitions reaching alpha")
    s.add_argument("model")
    s.add_argument("observation")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--k-max", type=int)
    s.add_argument("--candidates", help="comma-separated variable names")
    s.add_argument("--expected", action="store_true", help="score noise coalitions under the noise posterior")
    s.add_argument("--posterior-samples", type=int, default=200)
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("simulate", parents=[common], help="draw samples with hidden noise columns")
    s.add_argument("config", help="cloud configuration or model JSON, or builtin:NAME")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--filter-target", help="keep only rows with this target label")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rca", parents=[common], help="compare root-cause methods on generated samples")
    s.add_argument("model")
    s.add_argument("samples_file")
    s.add_argument("--methods", default=",".join(METHOD_NAMES))
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--posterior-samples", type=int, default=200)
    s.add_argument("--theta-c", type=float, default=0.95)
    s.add_argument("--theta-i", type=float, default=0.15)
    s.add_argument("--target-value", default="1", help="target label marking an error")
    s.add_argument("--ground-truth", choices=("errors", "causal"), default="errors")
    s.set_defaults(func=cmd_rca)

    s = sub.add_parser("stability", parents=[common], help="prediction stability under feature randomization")
    s.add_argument("model")
    s.add_argument("observation")
    s.add_argument("--ordering", required=True, help="scores:FILE, coalition-last[:FILE] or random")
    s.add_argument("--coalition", help="members kept last (default: first minimal coalition)")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--draws", type=int, default=1000)
    s.add_argument("--exact", action="store_true", help="use every table row instead of draws")
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("optimize", parents=[common], help="best assignment of a fully explaining coalition")
    s.add_argument("model")
    s.add_argument("observation")
    s.add_argument("--coalition", required=True)
    s.add_argument("--desired", required=True, help="desired target label")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("export", parents=[common], help="write a built-in model, configuration or table")
    s.add_argument("name", choices=("and-gate", "cloud", "cloud-config", "corral"))
    s.add_argument("--p1", type=float, default=0.1)
    s.add_argument("--p2", type=float, default=0.8)
    s.set_defaults(func=cmd_export)
    return p


def _fail(exc: CoalexError) -> int:
    sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc), "exit_code": exc.exit_code}) + "\n")
    return exc.exit_code


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        if args.command == "simulate" and not args.out:
            raise UsageError("simulate needs -o/--out for the CSV file")
        if args.command == "export" and args.name == "corral" and not args.out:
            raise UsageError("export corral needs -o/--out")
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: log.warning("%s", msg)
            return args.func(args, Run(args))
    except CoalexError as exc:
        return _fail(exc)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return _fail(UsageError(f"{type(exc).__name__}: {exc}"))


if __name__ == "__main__":
    sys.exit(main())
