"""End-to-end acceptance checks, one test per numbered criterion.

Each test prints a single ``PASS``/``FAIL`` line (also collected into the
terminal summary) before asserting.
"""

import csv
import math
import shutil
import time
import zipfile

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lsrb import certify, cli, fem, mesh, problems, rb, scm


def report(k: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def read_rows(path):
    lines = [x for x in path.read_text().splitlines() if not x.startswith("#")]
    return list(csv.DictReader(lines))


def sweep_summary(rows, delta):
    ceiling = certify.effectivity_ceiling(delta)
    rigorous = sum(float(r["bound"]) >= float(r["true_err"]) for r in rows)
    eff = max(float(r["effectivity"]) for r in rows)
    return rigorous, eff, ceiling


@pytest.fixture(scope="module")
def run_1p(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_1p")
    config = cli.RunConfig(problem="thermal1", n=16, train_count=50, delta_0=0.1)
    t0 = time.perf_counter()
    model = cli.cmd_offline(config, out)
    return config, model, out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def run_3p(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_3p")
    config = cli.RunConfig(problem="thermal3", n=16, train_count=75, delta_0=0.1)
    t0 = time.perf_counter()
    model = cli.cmd_offline(config, out)
    return config, model, out, time.perf_counter() - t0


def test_criterion_01_thermal_1p_offline(run_1p):
    _, model, _, seconds = run_1p
    ok = model.N <= 6 and model.delta < 1 and seconds < 120
    report(1, ok, f"thermal1 N={model.N} (<= 6), delta={model.delta:.4f} (< 1), {seconds:.1f}s (< 120s)")


def test_criterion_02_thermal_1p_rigor(run_1p):
    config, model, out, _ = run_1p
    rows = cli.cmd_sweep(config, out / "model.npz", out)
    written = read_rows(out / "results.csv")
    assert len(written) == 100
    rigorous, eff, ceiling = sweep_summary(written, model.delta)
    depth = config.resolved_ref_depth(problems.make_problem("thermal1", 4))
    ok = rigorous == 100 and eff <= ceiling + 0.05 and all(r["certificate"] for r in rows)
    report(
        2,
        ok,
        f"thermal1 sweep bound >= error on {rigorous}/100 (ref depth {depth}), "
        f"max effectivity {eff:.3f} <= ceiling {ceiling:.3f} + 0.05",
    )


def test_criterion_03_thermal_3p(run_3p):
    config, model, out, offline_seconds = run_3p
    t0 = time.perf_counter()
    cli.cmd_sweep(config, out / "model.npz", out)
    seconds = offline_seconds + time.perf_counter() - t0
    written = read_rows(out / "results.csv")
    rigorous, eff, ceiling = (0, math.inf, math.inf)
    if model.delta < 1:
        rigorous, eff, ceiling = sweep_summary(written, model.delta)
    ok = (
        model.N <= 25
        and model.delta < 1
        and rigorous == 100
        and eff <= ceiling + 0.05
        and seconds < 1200
    )
    report(
        3,
        ok,
        f"thermal3 N={model.N} (<= 25), delta={model.delta:.4f}, bound >= error on "
        f"{rigorous}/100, max effectivity {eff:.3f} <= {ceiling:.3f} + 0.05, {seconds:.0f}s (< 1200s)",
    )


def test_criterion_04_tridiagonal():
    worst = 0.0
    ratio_ok = True
    for n in (4, 10, 100, 1000):
        r = certify.tridiag_demo(n)
        c = certify.tridiag_closed_form(n)
        worst = max(worst, abs(r.error - c.error), abs(r.residual - c.residual), abs(r.lambda1 - c.lambda1))
        ratio_ok &= r.ratio > c.lower_bound
    report(4, worst <= 1e-12 and ratio_ok, f"tridiag max deviation {worst:.1e} (<= 1e-12), ratio > 4 sqrt(n-1)/pi: {ratio_ok}")


def test_criterion_05_coercivity_convergence(tmp_path):
    rows = cli.cmd_demo_coercivity(7, tmp_path)
    finest = rows[-1]
    orders = [r["observed_order"] for r in rows[-2:]]
    ok = (
        finest["h"] == 1 / 256
        and all(abs(o - 2) <= 0.3 for o in orders)
        and abs(finest["error"]) <= 1e-3
    )
    report(5, ok, f"orders {orders[0]:.3f}, {orders[1]:.3f} (2 +- 0.3); |alpha_h - alpha| = {finest['error']:.2e} at h=1/256")


@pytest.mark.parametrize("name", ["thermal1", "thermal3"])
def test_criterion_06_scm_soundness(name):
    p = problems.make_problem(name, 16)
    train = problems.sample_training_set(p, cli.DEFAULT_TRAIN_COUNT[name], 0)
    model = scm.scm_offline(p, train, eps=0.3)
    gaps = [scm.relative_gap(scm.alpha_lb(model, mu), scm.alpha_ub(model, mu)) for mu in train]
    kind = cli.TEST_SAMPLING[name]
    worst = -math.inf
    for mu in problems.sample_parameters(p.box, 50, 1, kind):
        worst = max(worst, scm.alpha_lb(model, mu) - scm.alpha_h(p, mu))
    ok = worst <= 1e-10 and max(gaps) <= 0.3
    report(
        6,
        ok,
        f"{name} SCM max(alpha_LB - alpha_h) = {worst:.2e} over 50 (<= 1e-10), candidate gap "
        f"{max(gaps):.3f} (<= 0.3), {len(model.anchors)} anchors",
    )


@pytest.mark.parametrize("name", ["thermal1", "thermal3"])
def test_criterion_07_affine_decomposition(name):
    p = problems.make_problem(name, 16, 0)
    kind = cli.TEST_SAMPLING[name]
    worst = 0.0
    for mu in problems.sample_parameters(p.box, 5, 42, kind):
        A, b = problems.direct_assemble(p, mu)
        worst = max(
            worst,
            abs(p.x.operator(mu) - A).max() / abs(A).max(),
            np.abs(p.x.rhs(mu) - b).max() / np.abs(b).max(),
        )
    report(7, worst <= 1e-12, f"{name} affine vs direct assembly max relative difference {worst:.1e} (<= 1e-12)")


def test_criterion_08_residual_identity(run_1p):
    _, model, out, _ = run_1p
    full = rb.RbModel.load(out / "model.npz", bases=True)
    p = problems.make_problem(model.problem, model.n, model.z_depth)
    worst = 0.0
    for mu in problems.sample_parameters(p.box, 10, 8, "loguniform"):
        sol, aux_sq, _ = rb._reduced_solve(full, mu)
        u_n, e_n = rb.reconstruct(full, sol)
        direct = problems.residual_norm_sq_quadrature(p, mu, p.prolong @ u_n + e_n, p.z.space)
        worst = max(worst, abs(aux_sq - direct) / direct)
    report(8, worst <= 1e-10, f"reduced vs full-order squared auxiliary residual max relative difference {worst:.1e} (<= 1e-10)")


def _online_time(model, queries, repeats=5):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for mu in queries:
            rb.online_solve(model, mu)
        best = min(best, (time.perf_counter() - t0) / len(queries))
    return best


def test_criterion_09_online_independence(run_1p, tmp_path, monkeypatch, capsys):
    _, _, out16, _ = run_1p
    out32 = tmp_path / "n32"
    cli.cmd_offline(cli.RunConfig(problem="thermal1", n=32), out32)
    m16 = rb.RbModel.load(out16 / "model.npz")
    m32 = rb.RbModel.load(out32 / "model.npz")
    queries = problems.sample_parameters(m16.family.box, 100, 3, "loguniform")
    t16, t32 = _online_time(m16, queries), _online_time(m32, queries)
    ratio = max(t16, t32) / min(t16, t32)

    # strip the bases from a copy of the model file and block all mesh and assembly entry points
    stripped = tmp_path / "online_only.npz"
    with zipfile.ZipFile(out32 / "model.npz") as src, zipfile.ZipFile(stripped, "w") as dst:
        for item in src.namelist():
            if item not in ("xi.npy", "phi.npy"):
                dst.writestr(item, src.read(item))

    def blocked(*args, **kwargs):
        raise AssertionError("full-order object touched during an online query")

    for mod, names in (
        (mesh, ["unit_square_mesh", "refine_uniform", "interval_mesh"]),
        (fem, ["assemble_form", "assemble_rhs", "x_norm_gram", "solve_spd", "product_space"]),
        (problems, ["make_problem", "thermal_block_1p", "thermal_block_3p"]),
        (cli, ["make_problem"]),
    ):
        for name in names:
            monkeypatch.setattr(mod, name, blocked)
    capsys.readouterr()
    code = cli.main(["online", "--model", str(stripped), "0.37"])
    printed = capsys.readouterr().out
    online_ok = code == 0 and "bound" in printed
    ok = ratio < 2.0 and online_ok
    report(
        9,
        ok,
        f"online time n=16 {t16 * 1e3:.3f} ms, n=32 {t32 * 1e3:.3f} ms, ratio {ratio:.2f} (< 2); "
        f"online from a basis-free file with assembly blocked: {'ok' if online_ok else 'failed'}",
    )


def test_criterion_10_effectivity_bound():
    rng = np.random.default_rng(20240601)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 31))
        B = rng.standard_normal((n, n))
        L = B + (abs(np.linalg.eigvals(B)).max() + 0.1) * np.eye(n)  # invertible operator
        alpha = np.linalg.eigvalsh(L.T @ L).min()
        e = rng.standard_normal(n)
        delta = rng.uniform(0.0, 0.95)
        d = rng.standard_normal(n)
        d /= np.linalg.norm(L @ d)
        # ||L(e - e_hat)|| = t stays below delta sqrt(alpha) ||e_hat|| by construction
        t = rng.uniform(0.0, 1.0) * delta * math.sqrt(alpha) * np.linalg.norm(e) / (1 + delta)
        e_hat = e + t * d
        rho = np.linalg.norm(L @ (e - e_hat))
        ratio = rho / (math.sqrt(alpha) * np.linalg.norm(e_hat))
        if ratio > delta + 1e-12:
            violations += 1
            continue
        M = certify.tight_bound(certify.BoundInputs(np.linalg.norm(e_hat), rho, alpha))
        eff = M / np.linalg.norm(e)
        if eff > certify.effectivity_ceiling(delta) * (1 + 1e-12) or eff < 1 - 1e-12:
            violations += 1
    exact = 0
    for _ in range(20):
        e = rng.standard_normal(10)
        M = certify.tight_bound(certify.BoundInputs(float(np.linalg.norm(e)), 0.0, rng.uniform(0.01, 1)))
        exact += M == float(np.linalg.norm(e))
    report(10, violations == 0 and exact == 20, f"{violations} violations in 1000 trials; delta=0 exact in {exact}/20")


def test_criterion_11_reproducibility(tmp_path):
    def run(out):
        cfg = cli.RunConfig(problem="thermal1", n=16, test_count=5, seed=7)
        cli.cmd_offline(cfg, out)
        cli.cmd_sweep(cfg, out / "model.npz", out)
        cli.cmd_scm(cli.RunConfig(problem="thermal3", n=8, train_count=10, test_count=5, scm_eps=0.3, seed=7), out)
        cli.cmd_demo_tridiag([4, 10, 100], out)
        cli.cmd_demo_coercivity(4, out)

    a, b = tmp_path / "a", tmp_path / "b"
    run(a)
    run(b)
    names = sorted(p.name for p in a.glob("*.csv") if p.name != "runtime.csv")
    same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
    ok = len(names) == 6 and same == names
    report(11, ok, f"{len(same)}/{len(names)} CSV outputs byte-identical across two runs ({', '.join(names)})")
    shutil.rmtree(tmp_path, ignore_errors=True)
