"""Command-line front end: data files, synthetic data, experiments and CSV traces.

Subcommands
-----------
gen-data          write a synthetic dataset in LIBSVM format
solve             run one experiment (optionally along a decreasing lambda path)
bench             run a grid of solver settings and merge their traces
check-surrogates  run the surrogate checker over every family

Exit codes: 0 success, 2 bad input, 3 divergence abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

from .numlin import Dataset, normalize_rows, standardize
from .problems import (
    LogisticL2Problem,
    SparseLogPenaltyProblem,
    lambda_for_sparsity,
    sparse_init,
)
from .solvers import CSV_FIELDS, DivergenceError, SolverConfig, TraceRecord, run

__all__ = [
    "LibsvmFormatError",
    "read_libsvm",
    "write_libsvm",
    "gen_data",
    "ExperimentSpec",
    "load_spec",
    "run_experiment",
    "write_trace_csv",
    "read_trace_csv",
    "main",
]

EXIT_OK, EXIT_BAD_INPUT, EXIT_DIVERGED = 0, 2, 3
PROBLEMS = ("logistic_l2", "sparse_log")


# ---------------------------------------------------------------------------
# LIBSVM files
# ---------------------------------------------------------------------------

class LibsvmFormatError(ValueError):
    def __init__(self, msg, lineno=None):
        self.lineno = lineno
        super().__init__(msg if lineno is None else f"line {lineno}: {msg}")


def read_libsvm(path, p: Optional[int] = None) -> Dataset:
    """Read ``<label> <idx>:<val> ...`` lines (1-based, strictly increasing indices).

    Blank lines and ``#`` comments are skipped. The number of features is the
    largest index seen unless ``p`` is given (useful when trailing columns
    are all zero). Always returns a sparse :class:`Dataset`.
    """
    labels, indptr, indices, values = [], [0], [], []
    max_idx = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels.append(float(tokens[0]))
            except ValueError:
                raise LibsvmFormatError(f"bad label {tokens[0]!r}", lineno) from None
            last = 0
            for tok in tokens[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise LibsvmFormatError(f"malformed token {tok!r}", lineno)
                try:
                    idx, v = int(key), float(val)
                except ValueError:
                    raise LibsvmFormatError(f"malformed token {tok!r}", lineno) from None
                if idx < 1:
                    raise LibsvmFormatError(f"index {idx} < 1", lineno)
                if idx <= last:
                    raise LibsvmFormatError(f"indices not strictly increasing at {tok!r}", lineno)
                last = idx
                indices.append(idx - 1)
                values.append(v)
            max_idx = max(max_idx, last)
            indptr.append(len(indices))
    if not labels:
        raise LibsvmFormatError("no examples")
    if p is None:
        p = max(max_idx, 1)
    elif p < max_idx:
        raise LibsvmFormatError(f"p={p} is smaller than the largest index {max_idx}")
    X = sparse.csr_matrix((np.array(values, dtype=np.float64), np.array(indices, dtype=np.int64),
                           np.array(indptr, dtype=np.int64)), shape=(len(labels), p))
    return Dataset(X, np.array(labels))


def _fmt(v: float) -> str:
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def write_libsvm(dataset: Dataset, path) -> None:
    """Write ``dataset`` in LIBSVM format; floats use the shortest exact repr."""
    X = dataset.to_sparse().X
    with open(path, "w", encoding="utf-8") as fh:
        for t in range(dataset.T):
            lo, hi = X.indptr[t], X.indptr[t + 1]
            parts = [_fmt(dataset.y[t])]
            parts += [f"{j + 1}:{_fmt(v)}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi])]
            fh.write(" ".join(parts) + "\n")


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

GEN_KINDS = ("dense_gaussian", "sparse_bernoulli_gaussian")
LABEL_MODELS = ("logistic_planted", "linear_noise")


def gen_data(kind: str = "dense_gaussian", T: int = 1000, p: int = 20, density: float = 1.0,
             label_model: str = "logistic_planted", sigma: float = 0.1, seed: int = 0,
             support: Optional[int] = None, scale: float = 1.0, return_truth: bool = False):
    """Synthetic dataset with a planted parameter ``theta_true``.

    ``dense_gaussian`` draws i.i.d. standard normal entries, then keeps each
    with probability ``density``; ``sparse_bernoulli_gaussian`` is the same
    Bernoulli-Gaussian model built directly in sparse form. Storage is dense
    exactly when ``density == 1``.

    ``theta_true`` has ``support`` nonzero entries (default ``p``) drawn as
    ``scale * N(0, 1)``. Labels follow either ``y = +/-1`` with
    ``P(y = 1) = sigmoid(x @ theta_true)`` or ``y = x @ theta_true + sigma N(0, 1)``.
    """
    if kind not in GEN_KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {GEN_KINDS}")
    if label_model not in LABEL_MODELS:
        raise ValueError(f"unknown label model {label_model!r}")
    T, p = int(T), int(p)
    if T < 1 or p < 1:
        raise ValueError("T and p must be at least 1")
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    k = p if support is None else int(support)
    if not 0 <= k <= p:
        raise ValueError("support must be in [0, p]")
    rng = np.random.default_rng(seed)
    if kind == "dense_gaussian" or density == 1.0:
        X = rng.standard_normal((T, p))
        if density < 1.0:
            X *= rng.random((T, p)) < density
            X = sparse.csr_matrix(X)
    else:
        X = sparse.random(T, p, density=density, format="csr", random_state=rng,
                          data_rvs=rng.standard_normal)
    theta = np.zeros(p)
    idx = np.sort(rng.choice(p, size=k, replace=False))
    theta[idx] = scale * rng.standard_normal(k)
    margin = np.asarray(X @ theta).ravel()
    if label_model == "logistic_planted":
        y = np.where(rng.random(T) < expit(margin), 1.0, -1.0)
    else:
        y = margin + sigma * rng.standard_normal(T)
    d = Dataset(X, y)
    return (d, theta) if return_truth else d


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """One experiment.

    ``data`` is a LIBSVM path or a dict of :func:`gen_data` arguments.
    ``lam`` may be omitted for ``sparse_log`` when ``target_nnz`` is given
    (the weight is then chosen by bisection on the support size).
    """

    problem: str = "logistic_l2"
    data: Union[str, dict] = field(default_factory=dict)
    lam: Optional[float] = None
    lambda_path: Optional[List[float]] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: Optional[str] = None
    theta_out: Optional[str] = None
    epsilon: float = 0.01
    target_nnz: Optional[int] = None
    preprocess: bool = True
    p: Optional[int] = None

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.lambda_path is not None:
            path = [float(v) for v in self.lambda_path]
            if not path:
                raise ValueError("lambda_path is empty")
            if any(b >= a for a, b in zip(path, path[1:])):
                raise ValueError("lambda_path must be strictly decreasing")
            if any(not v > 0 for v in path):
                raise ValueError("lambda_path entries must be positive")
        elif self.lam is None and not (self.problem == "sparse_log" and self.target_nnz):
            raise ValueError("a lambda (or lambda_path) is required")
        elif self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")

    def lambdas(self) -> Optional[List[float]]:
        if self.lambda_path is not None:
            return [float(v) for v in self.lambda_path]
        return None if self.lam is None else [float(self.lam)]


def spec_from_dict(d: dict) -> ExperimentSpec:
    d = dict(d)
    if "lambda" in d:
        d["lam"] = d.pop("lambda")
    solver = d.pop("solver", {}) or {}
    known = {f.name for f in dataclasses.fields(ExperimentSpec)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown experiment field(s): {sorted(unknown)}")
    return ExperimentSpec(solver=SolverConfig.from_dict(solver), **d)


def load_spec(path) -> ExperimentSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def load_dataset(spec: ExperimentSpec) -> Dataset:
    if isinstance(spec.data, str):
        d = read_libsvm(spec.data, p=spec.p)
    elif isinstance(spec.data, dict):
        d = gen_data(**spec.data)
    else:
        raise ValueError("data must be a path or a generator dict")
    if not spec.preprocess:
        return d
    if d.is_sparse:
        return normalize_rows(d)
    return standardize(d)


def write_trace_csv(rows: Sequence[TraceRecord], fh, extra: Optional[dict] = None) -> None:
    """Write trace rows with header ``pass,seconds,objective,duality_gap,stationarity,nnz``.

    ``extra`` maps leading column names to constant values (used by ``bench``).
    """
    w = csv.writer(fh, lineterminator="\n")
    lead = list(extra) if extra else []
    w.writerow(lead + list(CSV_FIELDS))
    for r in rows:
        w.writerow([extra[k] for k in lead] + _csv_row(r))


def _csv_row(r: TraceRecord) -> list:
    gap = "" if r.duality_gap is None else repr(float(r.duality_gap))
    return [repr(float(r.pass_count)), f"{r.wall_seconds:.6f}", repr(float(r.objective)), gap,
            repr(float(r.stationarity)), str(int(r.nnz))]


def read_trace_csv(fh) -> List[TraceRecord]:
    """Parse a trace written by :func:`write_trace_csv` (extra leading columns are ignored)."""
    reader = csv.DictReader(fh)
    missing = set(CSV_FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"trace is missing column(s) {sorted(missing)}")
    out = []
    for row in reader:
        out.append(TraceRecord(
            pass_count=float(row["pass"]),
            wall_seconds=float(row["seconds"]),
            objective=float(row["objective"]),
            duality_gap=None if row["duality_gap"] == "" else float(row["duality_gap"]),
            stationarity=float(row["stationarity"]),
            nnz=int(row["nnz"]),
        ))
    return out


def _build_problem(spec: ExperimentSpec, data: Dataset, lam: float):
    if spec.problem == "logistic_l2":
        return LogisticL2Problem(data, lam)
    return SparseLogPenaltyProblem(data, lam, spec.epsilon)


def solve_experiment(spec: ExperimentSpec, data: Optional[Dataset] = None):
    """Run ``spec`` and return ``(theta, trace, lambdas)``; raises on errors."""
    spec.validate()
    data = load_dataset(spec) if data is None else data
    lams = spec.lambdas()
    if lams is None:
        lam, _ = lambda_for_sparsity(data, spec.target_nnz, spec.epsilon)
        lams = [lam]
    if spec.problem == "sparse_log":
        theta0 = sparse_init(data)
    else:
        theta0 = np.zeros(data.p)
    trace: List[TraceRecord] = []
    state, offset, theta = None, 0.0, theta0
    for lam in lams:
        prob = _build_problem(spec, data, lam)
        cfg = dataclasses.replace(spec.solver)
        res = run(cfg, prob, theta0, prior_state=state)
        for r in res.trace:
            trace.append(dataclasses.replace(r, pass_count=r.pass_count + offset))
        offset += res.passes
        state, theta = res.state, res.theta
    return theta, trace, lams


def run_experiment(spec: ExperimentSpec, stderr=None) -> int:
    """Run ``spec``, write its CSV trace (and theta dump) and return the exit code."""
    stderr = sys.stderr if stderr is None else stderr
    try:
        theta, trace, _ = solve_experiment(spec)
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_BAD_INPUT
    if spec.output:
        with open(spec.output, "w", encoding="utf-8", newline="") as fh:
            write_trace_csv(trace, fh)
    else:
        write_trace_csv(trace, sys.stdout)
    if spec.theta_out:
        np.savetxt(spec.theta_out, theta, fmt="%.17g")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

_SOLVER_FLAGS = {
    "scheme": str, "epochs": float, "L0": float, "mu": float, "minibatch": int, "seed": int,
    "eta": float, "init": str, "alpha": float, "tol": float, "record_every": float, "kmax": int,
}


def _add_solver_flags(ap: argparse.ArgumentParser) -> None:
    for name, typ in _SOLVER_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        ap.add_argument(flag, dest=f"solver_{name}", type=typ, default=None)
    ap.add_argument("--per-component-L", dest="solver_per_component_L", action="store_true", default=None)


def _spec_from_args(args) -> ExperimentSpec:
    spec = load_spec(args.config) if args.config else ExperimentSpec()
    if args.problem:
        spec.problem = args.problem
    if args.data:
        spec.data = args.data
    if args.p is not None:
        spec.p = args.p
    if args.lam is not None:
        spec.lam, spec.lambda_path = args.lam, None
    if args.lambda_path:
        spec.lambda_path = [float(v) for v in args.lambda_path.split(",")]
    if args.target_nnz is not None:
        spec.target_nnz = args.target_nnz
    if args.trace:
        spec.output = args.trace
    if args.theta_out:
        spec.theta_out = args.theta_out
    env_seed = os.environ.get("MISO_SEED")
    if env_seed is not None:
        try:
            spec.solver.seed = int(env_seed)
        except ValueError:
            raise ValueError(f"MISO_SEED must be an integer, got {env_seed!r}") from None
    for name in list(_SOLVER_FLAGS) + ["per_component_L"]:
        v = getattr(args, f"solver_{name}")
        if v is not None:
            setattr(spec.solver, name, v)
    return spec


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="miso", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic LIBSVM dataset")
    g.add_argument("--kind", choices=GEN_KINDS, default="dense_gaussian")
    g.add_argument("--T", type=int, default=1000)
    g.add_argument("--p", type=int, default=20)
    g.add_argument("--density", type=float, default=1.0)
    g.add_argument("--label-model", choices=LABEL_MODELS, default="logistic_planted")
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--support", type=int, default=None)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)

    for name, helptext in (("solve", "run one experiment"), ("bench", "run a solver grid")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="JSON experiment document; flags override its fields")
        s.add_argument("--problem", choices=PROBLEMS)
        s.add_argument("--data", help="LIBSVM file")
        s.add_argument("--p", type=int, default=None, help="number of features (LIBSVM input)")
        s.add_argument("--lambda", dest="lam", type=float, default=None)
        s.add_argument("--lambda-path", default=None, help="comma-separated decreasing weights")
        s.add_argument("--target-nnz", type=int, default=None)
        s.add_argument("--trace", help="CSV trace output (stdout if omitted)")
        s.add_argument("--theta-out", help="plain-text dump of the final parameters")
        _add_solver_flags(s)
        if name == "bench":
            s.add_argument("--schemes", default="miso0,miso1,miso2,miso_mu,sag,batch_mm")
            s.add_argument("--seeds", default="0")

    c = sub.add_parser("check-surrogates", help="certify every surrogate family on random problems")
    c.add_argument("--problems", type=int, default=10)
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    return ap


def _cmd_gen_data(args) -> int:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("MISO_SEED", 0))
    d = gen_data(args.kind, args.T, args.p, args.density, args.label_model, args.sigma, seed,
                 support=args.support, scale=args.scale)
    write_libsvm(d, args.out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    base = _spec_from_args(args)
    schemes = [s for s in args.schemes.split(",") if s]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    base.validate()
    data = load_dataset(base)
    buf = io.StringIO()
    header_done = False
    code = EXIT_OK
    for scheme in schemes:
        for seed in seeds:
            spec = dataclasses.replace(base, solver=dataclasses.replace(base.solver, scheme=scheme, seed=seed))
            try:
                _, trace, _ = solve_experiment(spec, data)
            except DivergenceError as exc:
                print(f"warning: {scheme} seed {seed} diverged: {exc}", file=sys.stderr)
                code = EXIT_DIVERGED
                continue
            part = io.StringIO()
            write_trace_csv(trace, part, extra={"scheme": scheme, "seed": seed})
            lines = part.getvalue().splitlines(keepends=True)
            buf.writelines(lines if not header_done else lines[1:])
            header_done = True
    if base.output:
        with open(base.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return code


def _cmd_check_surrogates(args) -> int:
    from .surrogates import certify_all

    results = certify_all(n_problems=args.problems, n_samples=args.samples, seed=args.seed)
    ok = True
    for family, reports in results.items():
        bad = sum(not r.ok for r in reports)
        ok &= bad == 0
        print(f"{family:24s} {len(reports) - bad}/{len(reports)} certified")
    return EXIT_OK if ok else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "check-surrogates":
            return _cmd_check_surrogates(args)
        if args.command == "bench":
            return _cmd_bench(args)
        spec = _spec_from_args(args)
    except (ValueError, OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return run_experiment(spec)


if __name__ == "__main__":
    sys.exit(main())
