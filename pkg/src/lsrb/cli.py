"""Command-line driver: ``lsrb offline|online|sweep|bench|scm|demo``.

Every CSV starts with ``#`` lines that record the command and the complete
run configuration. Floats are written with ``repr`` so they round-trip
exactly, and nothing time-dependent is written except in ``runtime.csv``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import certify, fem, rb, scm
from .problems import (
    ALPHA_POISSON_1D,
    ProblemDef,
    make_problem,
    parameter_family,
    poisson_1d,
    sample_parameters,
    sample_training_set,
)

log = logging.getLogger("lsrb")

DEFAULT_TRAIN_COUNT = {"thermal1": 50, "thermal3": 75}
TEST_SAMPLING = {"thermal1": "loguniform", "thermal3": "lhs"}


@dataclass
class RunConfig:
    """Everything that determines a run; written into every output file.

    ``None`` fields take per-problem defaults: ``z_depth`` from the problem
    factory, ``train_count`` 50 or 75, and ``ref_depth`` one level finer than
    the error space.
    """

    problem: str = "thermal1"
    n: int = 16
    z_depth: int | None = None
    train_count: int | None = None
    seed: int = 0
    delta_0: float = 0.1
    n_max: int = 30
    scm_eps: float = 0.1
    test_count: int = 100
    ref_depth: int | None = None
    bench_count: int = 10

    def __post_init__(self) -> None:
        parameter_family(self.problem)  # raises on unknown names
        if self.problem == "poisson1d":
            raise ValueError("poisson1d is only available through 'lsrb demo coercivity'")
        if self.n < 2 or self.n % 2:
            raise ValueError(f"n must be even and >= 2, got {self.n}")
        if not 0.0 < self.delta_0 < 1.0:
            raise ValueError("delta_0 must lie in (0, 1)")
        if not 0.0 < self.scm_eps < 1.0:
            raise ValueError("scm_eps must lie in (0, 1)")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for name in ("n_max", "test_count", "bench_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def train_seed(self) -> int:
        return self.seed

    @property
    def test_seed(self) -> int:
        # distinct stream from the training set
        return (self.seed + 1) % 2**64

    def resolved_train_count(self) -> int:
        return self.train_count or DEFAULT_TRAIN_COUNT[self.problem]

    def resolved_ref_depth(self, problem: ProblemDef) -> int:
        return self.ref_depth if self.ref_depth is not None else problem.z_depth + 1

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path: str | Path | None, **overrides) -> "RunConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        values: dict = {}
        if path is not None:
            for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
                key, value = (s.strip() for s in line.split("=", 1))
                values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**_coerce(values))


def _coerce(values: dict) -> dict:
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for key, value in values.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        if not isinstance(value, str):
            out[key] = value
            continue
        kind = types[key]
        if value.lower() == "none":
            out[key] = None
        elif "int" in kind:
            out[key] = int(value)
        elif "float" in kind:
            out[key] = float(value)
        else:
            out[key] = value
    return out


# ----------------------------------------------------------------- output helpers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple, np.ndarray)):
        return ";".join(_fmt(v) for v in x)
    return "" if x is None else str(x)


def provenance(command: str, config: RunConfig | None = None, **extra) -> str:
    lines = [f"# lsrb {command}"]
    if config is not None:
        lines.append("# config: " + " ".join(f"{k}={_fmt(v)}" for k, v in config.as_dict().items()))
    for k, v in extra.items():
        lines.append(f"# {k}: {_fmt(v)}")
    return "\n".join(lines) + "\n"


def write_csv(path: Path, header: str, columns: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _problem(config: RunConfig) -> ProblemDef:
    return make_problem(config.problem, config.n, config.z_depth)


def _test_set(config: RunConfig) -> list[np.ndarray]:
    box = parameter_family(config.problem).box
    return sample_parameters(box, config.test_count, config.test_seed, TEST_SAMPLING[config.problem])


# ----------------------------------------------------------------- commands


def cmd_offline(config: RunConfig, out: Path) -> rb.RbModel:
    """Train a model; writes ``model.npz`` and ``training_log.csv``."""
    problem = _problem(config)
    train = sample_training_set(problem, config.resolved_train_count(), config.train_seed)
    t0 = time.perf_counter()
    model = rb.greedy_offline(
        problem,
        train,
        delta_0=config.delta_0,
        n_max=config.n_max,
        scm_eps=config.scm_eps,
        config=config.as_dict(),
    )
    model.config["offline_seconds"] = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.npz")
    header = provenance(
        "offline",
        config,
        z_depth=problem.z_depth,
        N=model.N,
        n_error=model.n_error,
        delta_final=model.delta,
        converged=model.converged,
        scm_eigensolves=model.scm.n_eigensolves,
    )
    cols = ["iter", "N", "n_error", "chosen_mu", "max_estimator", "max_indicator",
            "delta", "snapshot_indicator", "delta_raised"]
    write_csv(
        out / "training_log.csv",
        header,
        cols,
        ([e.get(c) for c in cols[:3]] + [e.get("chosen")] + [e.get(c) for c in cols[4:]]
         for e in model.training_log),
    )
    return model


def _reference_solve(disc, mu) -> np.ndarray:
    A, b = fem.apply_essential_bc(disc.operator(mu), disc.rhs(mu), disc.space)
    return fem.solve_spd(A, b)


def cmd_sweep(config: RunConfig, model_path: Path, out: Path) -> list[dict]:
    """Compare certificates with errors against a finer reference solution."""
    model = rb.RbModel.load(model_path, bases=True)
    if not model.certified:
        raise rb.UncertifiedModelError(f"model tolerance {model.delta:.4f} is not below 1")
    problem = make_problem(model.problem, model.n, model.z_depth)
    depth = config.resolved_ref_depth(problem)
    ref, P = problem.refined(depth)
    rows = []
    for mu in _test_set(config):
        u_ref = _reference_solve(ref, mu)
        try:
            sol, cert = rb.online_solve(model, mu)
            available, a_lb = True, cert.alpha_lb
        except rb.CertificateUnavailableError as exc:
            sol, cert, available, a_lb = exc.solution, None, False, exc.alpha_lb
        u_n, _ = rb.reconstruct(model, sol)
        d = u_ref - P @ u_n
        true_err = math.sqrt(float(d @ (ref.gram @ d)))
        row = {"mu": mu, "true_err": true_err, "certificate": available}
        if cert is None:
            row.update(bound=math.nan, err_norm=math.nan, aux_res=math.nan,
                       alpha_lb=a_lb, effectivity=math.nan)
        else:
            row.update(bound=cert.bound, err_norm=cert.err_norm, aux_res=cert.aux_res,
                       alpha_lb=cert.alpha_lb, effectivity=cert.bound / true_err)
        rows.append(row)
    rows.sort(key=lambda r: r["true_err"])
    p = len(rows[0]["mu"])
    cols = [f"mu_{i + 1}" for i in range(p)] + [
        "true_err", "bound", "err_norm", "aux_res", "alpha_lb", "effectivity", "certificate"
    ]
    header = provenance(
        "sweep",
        config,
        model_problem=model.problem,
        model_n=model.n,
        z_depth=model.z_depth,
        ref_depth=depth,
        N=model.N,
        delta_final=model.delta,
        effectivity_ceiling=certify.effectivity_ceiling(model.delta),
    )
    write_csv(
        out / "results.csv",
        header,
        cols,
        ([*r["mu"], r["true_err"], r["bound"], r["err_norm"], r["aux_res"], r["alpha_lb"],
          r["effectivity"], r["certificate"]] for r in rows),
    )
    return rows


def cmd_bench(config: RunConfig, model_path: Path, out: Path) -> dict:
    """Per-query wall time of full-order certification against the reduced model."""
    model = rb.RbModel.load(model_path)
    problem = make_problem(model.problem, model.n, model.z_depth)
    queries = _test_set(config)[: config.bench_count]

    t0 = time.perf_counter()
    for mu in queries:
        u = rb.full_order_solve(problem, mu)
        e = rb.full_order_error_solve(problem, mu, u)
        a = scm.alpha_lb(model.scm, mu)
        rb.x_norm(problem.z.gram, e) + rb.aux_residual_norm(problem, mu, u, e) / math.sqrt(a)
    t_full = (time.perf_counter() - t0) / len(queries)

    repeats = max(1, 200 // len(queries))
    t0 = time.perf_counter()
    for _ in range(repeats):
        for mu in queries:
            rb.online_solve(model, mu)
    t_rb = (time.perf_counter() - t0) / (repeats * len(queries))

    offline = float(model.config.get("offline_seconds", math.nan))
    breakeven = math.ceil(offline / (t_full - t_rb)) if t_full > t_rb else math.inf
    result = {
        "full_per_query": t_full,
        "rb_per_query": t_rb,
        "speedup": t_full / t_rb,
        "offline_seconds": offline,
        "breakeven_queries": breakeven,
    }
    write_csv(
        out / "runtime.csv",
        provenance("bench", config, model_problem=model.problem, model_n=model.n, N=model.N),
        list(result),
        [list(result.values())],
    )
    return result


def cmd_scm(config: RunConfig, out: Path) -> tuple[scm.ScmModel, list[dict]]:
    """SCM on the training set, then ``alpha_LB`` against ``alpha^h`` on the test set."""
    problem = _problem(config)
    train = sample_training_set(problem, config.resolved_train_count(), config.train_seed)
    model = scm.scm_offline(problem, train, config.scm_eps)
    header = provenance(
        "scm", config, n_eigensolves=model.n_eigensolves, eps_achieved=model.eps_achieved,
        gap_history=model.gap_history,
    )
    p = problem.box.dim
    write_csv(
        out / "scm_anchors.csv",
        header,
        [f"mu_{i + 1}" for i in range(p)] + ["alpha_h"],
        ([*mu, a] for mu, a in zip(model.anchors, model.anchor_alpha)),
    )
    rows = []
    for mu in _test_set(config):
        lb = scm.alpha_lb(model, mu)
        rows.append({"mu": mu, "alpha_lb": lb, "alpha_ub": scm.alpha_ub(model, mu),
                     "alpha_h": scm.alpha_h(problem, mu)})
    write_csv(
        out / "scm_validation.csv",
        header,
        [f"mu_{i + 1}" for i in range(p)] + ["alpha_lb", "alpha_ub", "alpha_h"],
        ([*r["mu"], r["alpha_lb"], r["alpha_ub"], r["alpha_h"]] for r in rows),
    )
    return model, rows


def cmd_online(model_path: Path, mu: list[float], stream=None) -> tuple[rb.ReducedSolution, rb.Certificate]:
    stream = stream or sys.stdout
    model = rb.RbModel.load(model_path)
    sol, cert = rb.online_solve(model, mu)
    print(f"problem        {model.problem}", file=stream)
    print(f"mu             {_fmt(list(mu))}", file=stream)
    print(f"c_N            {_fmt(sol.c)}", file=stream)
    print(f"err_norm       {cert.err_norm!r}", file=stream)
    print(f"aux_res        {cert.aux_res!r}", file=stream)
    print(f"alpha_lb       {cert.alpha_lb!r}", file=stream)
    print(f"bound          {cert.bound!r}", file=stream)
    print(f"ceiling        {cert.effectivity_ceiling!r}", file=stream)
    return sol, cert


def cmd_demo_coercivity(levels: int, out: Path) -> list[dict]:
    """Discrete coercivity constant of the 1D first-order system on halved meshes."""
    if levels < 3:
        raise ValueError("need at least three levels")
    rows = []
    for k in range(levels):
        n = 2 ** (k + 2)
        problem = poisson_1d(n)
        a = scm.alpha_h(problem, [0.0])
        err = a - ALPHA_POISSON_1D
        order = math.log2(rows[-1]["error"] / err) if rows else math.nan
        rows.append({"h": 1.0 / n, "alpha_h": a, "error": err, "observed_order": order})
    write_csv(
        out / "coercivity.csv",
        provenance("demo coercivity", levels=levels, alpha_exact=ALPHA_POISSON_1D),
        list(rows[0]),
        ([r[c] for c in rows[0]] for r in rows),
    )
    return rows


def cmd_demo_tridiag(sizes: list[int], out: Path) -> list[certify.TridiagRecord]:
    records = [certify.tridiag_demo(n) for n in sizes]
    out.mkdir(parents=True, exist_ok=True)
    certify.write_tridiag_csv(records, out / "tridiag.csv", provenance("demo tridiag", sizes=sizes))
    return records


# ----------------------------------------------------------------- argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsrb", description="Certified least-squares reduced basis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", type=Path, help="key=value configuration file")
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--problem")
        sp.add_argument("--n", type=int)
        if model:
            sp.add_argument("--model", type=Path, required=True)

    common(sub.add_parser("offline", help="train a reduced model"))
    common(sub.add_parser("sweep", help="certificates against reference errors"), model=True)
    common(sub.add_parser("bench", help="online versus full-order timing"), model=True)
    common(sub.add_parser("scm", help="coercivity lower bounds"))
    on = sub.add_parser("online", help="single reduced query")
    on.add_argument("--model", type=Path, required=True)
    on.add_argument("mu", type=float, nargs="+")

    demo = sub.add_parser("demo", help="standalone demonstrations")
    dsub = demo.add_subparsers(dest="demo", required=True)
    co = dsub.add_parser("coercivity")
    co.add_argument("--levels", type=int, default=7)
    co.add_argument("--out", type=Path, default=Path("out"))
    tri = dsub.add_parser("tridiag")
    tri.add_argument("--sizes", default="4,10,100,1000")
    tri.add_argument("--out", type=Path, default=Path("out"))
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "online":
            cmd_online(args.model, args.mu)
            return 0
        if args.command == "demo":
            if args.demo == "coercivity":
                cmd_demo_coercivity(args.levels, args.out)
            else:
                cmd_demo_tridiag([int(s) for s in args.sizes.split(",")], args.out)
            return 0
        config = RunConfig.from_file(args.config, seed=args.seed, problem=args.problem, n=args.n)
        if args.command == "offline":
            model = cmd_offline(config, args.out)
            if not model.certified:
                print(
                    f"lsrb: model is uncertified (delta={model.delta:.4f} >= 1); "
                    "refine the error space (z_depth)",
                    file=sys.stderr,
                )
                return 3
        elif args.command == "sweep":
            cmd_sweep(config, args.model, args.out)
        elif args.command == "bench":
            cmd_bench(config, args.model, args.out)
        elif args.command == "scm":
            cmd_scm(config, args.out)
    except (ValueError, KeyError, OSError, rb.UncertifiedModelError) as exc:
        print(f"lsrb: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
