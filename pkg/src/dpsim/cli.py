"""Command-line front end: ``dpsim build``, ``dpsim query`` and ``dpsim eval``.

Exit codes: 0 on success, 1 for I/O and file-format problems, 2 for bad
parameters or failed preconditions (including the KDE size gate).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from dpsim import sketchfile
from dpsim.classify import fit_classifier
from dpsim.core import DomainPromise, ParameterError, PrivacyBudget, RngStream
from dpsim.highdim import build_l1, build_l2
from dpsim.kde import build_kde
from dpsim.l2sq import build_l2sq
from dpsim.oracle import error_report, exact_distance_sums, exact_kdes
from dpsim.sketchfile import KDE_FUNCTIONS, SketchFile, SketchFormatError
from dpsim.smooth import build_smooth_kde

FUNCTIONS = tuple(sketchfile.FUNCTION_IDS)
DISTANCE_FUNCTIONS = ("l1", "l2", "l2sq", "lpp")
PROJECTION_KINDS = {"dense": "gaussian-jl", "fast": "fast-jl"}
NON_PRIVATE_WARNING = "WARNING: --no-noise set; this sketch is NON-PRIVATE and for testing only"


class InputError(Exception):
    """Unreadable or malformed input file (exit code 1)."""


def read_matrix(path, header: bool = False) -> np.ndarray:
    """Read a CSV of reals into an ``(n, d)`` array; an empty file gives ``(0, 0)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if header and rows:
        rows = rows[1:]
    if not rows:
        return np.empty((0, 0))
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError(f"{path}: rows have differing numbers of columns")
    try:
        return np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def split_labels(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if data.shape[1] < 2:
        raise ParameterError("labeled input needs at least one feature column and a label column")
    labels = data[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ParameterError("the last column must hold integer labels")
    return data[:, :-1], labels.astype(np.int64)


def _require_radius(radius):
    if radius is None:
        raise ParameterError("--radius is required for distance functions")
    return float(radius)


def build_sketch(fn: str, data: np.ndarray, *, epsilon: float = 1.0, delta: float = 0.0,
                 alpha: float = 0.1, p: float = 2.0, radius: float | None = None,
                 project: str = "none", project_dim: int | None = None,
                 features: int | None = None, clip: float | None = None, seed: int = 0,
                 noise_off: bool = False) -> tuple[SketchFile, dict]:
    """Build the structure for ``fn`` and return it with a build report.

    ``data`` holds one point per row; for ``classifier`` the last column is
    the integer label.
    """
    if fn not in FUNCTIONS:
        raise ParameterError(f"unknown function {fn!r}; expected one of {FUNCTIONS}")
    if data.ndim != 2 or data.shape[0] == 0:
        raise ParameterError("input has no points")
    if project not in ("none", *PROJECTION_KINDS):
        raise ParameterError(f"--project must be none, dense or fast, got {project!r}")
    rng = RngStream(seed)
    budget = PrivacyBudget(epsilon, delta)
    kind = PROJECTION_KINDS.get(project)
    report: dict = {"fn": fn, "epsilon": epsilon, "delta": delta, "alpha": alpha,
                    "seed": seed, "noise_off": noise_off}
    start = time.perf_counter()
    if fn in ("l1", "lpp"):
        d = data.shape[1]
        promise = DomainPromise("box", _require_radius(radius), d)
        s = build_l1(data, budget, alpha, promise, p if fn == "lpp" else 1.0, rng, noise_off)
        report.update(clip_count=s.clip_count, internal_dim=d, tree_depth=s.trees[0].depth,
                      per_tree_epsilon=s.per_tree_epsilon)
    elif fn == "l2":
        promise = DomainPromise("l2-ball", _require_radius(radius), data.shape[1])
        s = build_l2(data, budget, alpha, promise, rng, noise_off, out_dim=project_dim)
        report.update(clip_count=s.embedding.clip_count, internal_dim=s.embedding.spec.out_dim,
                      per_tree_epsilon=s.l1.per_tree_epsilon)
    elif fn == "l2sq":
        promise = DomainPromise("box", _require_radius(radius), data.shape[1])
        s = build_l2sq(data, budget.epsilon, promise, rng, noise_off)
        report.update(clip_count=s.clip_count, internal_dim=s.dim)
    elif fn in KDE_FUNCTIONS:
        s = build_kde(data, KDE_FUNCTIONS[fn], epsilon, alpha, kind is not None, rng,
                      noise_off=noise_off, n_features=features,
                      projection_kind=kind or "fast-jl", projection_dim=project_dim)
        report.update(clip_count=0, internal_dim=s.internal_dim, features=s.spec.n_features)
    elif fn.startswith("inv1p"):
        s = build_smooth_kde(data, fn, epsilon, alpha, rng, noise_off=noise_off,
                             n_features=features, use_projection=kind is not None,
                             projection_kind=kind or "gaussian-jl", projection_dim=project_dim)
        report.update(clip_count=0, internal_dim=s.sub_sketches[0].internal_dim,
                      features=s.sub_sketches[0].spec.n_features, terms=s.approx.n_terms)
    else:
        points, labels = split_labels(data)
        promise = None
        if clip is None:
            promise = DomainPromise("box", _require_radius(radius), points.shape[1])
        s = fit_classifier(points, labels, budget, promise, project_dim, clip, rng, noise_off,
                           kind or "gaussian-jl")
        report.update(clip_count=sum(m.clip_count for m in s.moments),
                      internal_dim=s.moments[0].dim, classes=len(s.labels), clip=s.clip)
    report["build_time_s"] = time.perf_counter() - start
    report["n"] = int(data.shape[0])
    report["d"] = int(data.shape[1] - (fn == "classifier"))
    return SketchFile(fn=fn, structure=s), report


def _add_build_flags(ap: argparse.ArgumentParser):
    ap.add_argument("--fn", required=True, choices=FUNCTIONS)
    ap.add_argument("--input", required=True, help="CSV, one point per row")
    ap.add_argument("--header", action="store_true", help="skip the first CSV row")
    ap.add_argument("--epsilon", type=float, default=1.0)
    ap.add_argument("--delta", type=float, default=0.0)
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--p", type=float, default=2.0, help="power for --fn lpp")
    ap.add_argument("--radius", type=float, help="public box side or l2-ball diameter")
    ap.add_argument("--project", default="none", choices=("none", "dense", "fast"))
    ap.add_argument("--project-dim", type=int)
    ap.add_argument("--features", type=int, help="random features per KDE sketch")
    ap.add_argument("--clip", type=float, help="classifier clip level")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-noise", action="store_true",
                    help="test only: release exact, NON-PRIVATE values")


def _build_kwargs(args) -> dict:
    return dict(epsilon=args.epsilon, delta=args.delta, alpha=args.alpha, p=args.p,
                radius=args.radius, project=args.project, project_dim=args.project_dim,
                features=args.features, clip=args.clip, seed=args.seed,
                noise_off=args.no_noise)


def _write(out, text: str):
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise InputError(f"cannot write {out}: {exc.strerror or exc}") from None
    else:
        sys.stdout.write(text)


def cmd_build(args) -> int:
    if args.no_noise:
        print(NON_PRIVATE_WARNING, file=sys.stderr)
    data = read_matrix(args.input, args.header)
    sketch, report = build_sketch(args.fn, data, **_build_kwargs(args))
    blob = sketchfile.dumps(sketch)
    try:
        Path(args.out).write_bytes(blob)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    report.update(out=str(args.out), bytes=len(blob))
    print(json.dumps(report, sort_keys=True))
    return 0


def _format_values(values, fmt: str, extra: dict | None = None) -> str:
    values = [v.item() if hasattr(v, "item") else v for v in values]
    if fmt == "json":
        return json.dumps({"estimates": values, **(extra or {})}) + "\n"
    return "".join(f"{v!r}\n" if isinstance(v, float) else f"{v}\n" for v in values)


def cmd_query(args) -> int:
    try:
        sketch = sketchfile.load(args.sketch)
    except OSError as exc:
        raise InputError(f"cannot read {args.sketch}: {exc.strerror or exc}") from None
    if sketch.noise_off:
        print(NON_PRIVATE_WARNING.replace("--no-noise set; this", "this"), file=sys.stderr)
    q = read_matrix(args.queries, args.header)
    labels = None
    if q.size and args.labeled:
        q, labels = split_labels(q)
    if q.size == 0:
        _write(args.out, _format_values([], args.format))
        return 0
    if q.shape[1] != sketchfile.input_dim(sketch):
        raise ParameterError(f"queries have dimension {q.shape[1]}, sketch expects "
                             f"{sketchfile.input_dim(sketch)}")
    est = np.atleast_1d(sketchfile.query(sketch, q))
    extra = None
    if labels is not None:
        acc = float(np.mean(est == labels))
        extra = {"accuracy": acc}
        if args.format == "csv":
            print(json.dumps(extra), file=sys.stderr)
    _write(args.out, _format_values(list(est), args.format, extra))
    return 0


def _threads() -> int:
    raw = os.environ.get("DPSIM_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ParameterError(f"DPSIM_THREADS must be an integer, got {raw!r}") from None


def _truths(fn: str, data: np.ndarray, queries: np.ndarray, p: float):
    if fn in DISTANCE_FUNCTIONS:
        return exact_distance_sums(data, queries, fn, p)
    if fn in KDE_FUNCTIONS:
        return exact_kdes(data, queries, KDE_FUNCTIONS[fn])
    return exact_kdes(data, queries, fn)


def _trial(fn, data, queries, kwargs, seed):
    sketch, report = build_sketch(fn, data, **{**kwargs, "seed": seed})
    t0 = time.perf_counter()
    est = np.atleast_1d(sketchfile.query(sketch, queries))
    return est, report["build_time_s"], time.perf_counter() - t0


def run_eval(fn: str, data: np.ndarray, queries: np.ndarray, epsilons, trials: int,
             reps: int = 5, seed: int = 0, **kwargs) -> list[dict]:
    """Error and timing table rows, one per epsilon plus a zero-baseline row.

    Trial ``t`` at epsilon index ``i`` uses seed stream ``(seed, i, t)``.
    Timing columns are medians over ``max(trials, reps)`` builds.
    """
    if trials < 1 or reps < 1:
        raise ParameterError("--trials and --reps must be positive")
    if queries.size == 0:
        raise ParameterError("eval needs at least one query")
    labels = None
    if fn == "classifier":
        queries, labels = split_labels(queries)
    else:
        truths = _truths(fn, data, queries, kwargs.get("p", 2.0))
    root = RngStream(seed)

    def seed_of(i, t):
        return root.child(i).child(t).derive_seed()

    jobs = [(i, t, eps) for i, eps in enumerate(epsilons) for t in range(max(trials, reps))]
    with ThreadPoolExecutor(max_workers=min(_threads(), len(jobs))) as pool:
        results = list(pool.map(
            lambda job: _trial(fn, data, queries, {**kwargs, "epsilon": job[2]},
                               seed_of(job[0], job[1])),
            jobs))
    rows = []
    for i, eps in enumerate(epsilons):
        mine = [r for (j, t, _), r in zip(jobs, results) if j == i]
        scored = mine[:trials]
        row = {"fn": fn, "method": "dpsim", "epsilon": eps, "trials": trials,
               "build_time_s": statistics.median(r[1] for r in mine),
               "query_time_s": statistics.median(r[2] for r in mine)}
        if labels is not None:
            accs = [float(np.mean(r[0] == labels)) for r in scored]
            row.update(accuracy=float(np.mean(accs)), mean_abs_error=None,
                       relative_error=None, M=None, A=None)
        else:
            reports = [error_report(r[0], truths) for r in scored]
            row.update(accuracy=None,
                       mean_abs_error=float(np.mean([r.mean_abs_error for r in reports])),
                       relative_error=float(np.mean([r.relative_error for r in reports])),
                       M=float(np.mean([r.M for r in reports])),
                       A=float(np.mean([r.A for r in reports])))
        rows.append(row)
    if labels is None:
        zero = error_report(np.zeros_like(truths), truths)
        rows.append({"fn": fn, "method": "zero-baseline", "epsilon": None, "trials": 1,
                     "build_time_s": 0.0, "query_time_s": 0.0, "accuracy": None,
                     **zero.to_dict()})
    return rows


EVAL_COLUMNS = ("fn", "method", "epsilon", "trials", "mean_abs_error", "relative_error", "M",
                "A", "accuracy", "build_time_s", "query_time_s")


def cmd_eval(args) -> int:
    if args.no_noise:
        print(NON_PRIVATE_WARNING, file=sys.stderr)
    data = read_matrix(args.input, args.header)
    queries = read_matrix(args.queries, args.header)
    try:
        epsilons = [float(e) for e in args.epsilons.split(",") if e.strip()]
    except ValueError:
        raise ParameterError(f"--epsilons must be a comma-separated list, got {args.epsilons!r}")
    if not epsilons:
        raise ParameterError("--epsilons is empty")
    kwargs = _build_kwargs(args)
    kwargs.pop("epsilon")
    kwargs.pop("seed")
    rows = run_eval(args.fn, data, queries, epsilons, args.trials, args.reps, args.seed,
                    **kwargs)
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, EVAL_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else r[k] for k in EVAL_COLUMNS})
        text = buf.getvalue()
    _write(args.out, text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a sketch file")
    _add_build_flags(b)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", help="answer a batch of queries")
    q.add_argument("--sketch", required=True)
    q.add_argument("--queries", required=True)
    q.add_argument("--header", action="store_true")
    q.add_argument("--format", default="csv", choices=("csv", "json"))
    q.add_argument("--labeled", action="store_true",
                   help="classifier: last query column is the true label; report accuracy")
    q.add_argument("--out")
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", help="error and timing table against the exact oracle")
    _add_build_flags(e)
    e.add_argument("--queries", required=True)
    e.add_argument("--epsilons", default="0.5,1,2,4,8,16")
    e.add_argument("--trials", type=int, default=20)
    e.add_argument("--reps", type=int, default=5, help="minimum builds per timing median")
    e.add_argument("--format", default="csv", choices=("csv", "json"))
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, SketchFormatError) as exc:
        print(f"dpsim: error: {exc}", file=sys.stderr)
        return 1
    except ParameterError as exc:
        print(f"dpsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
