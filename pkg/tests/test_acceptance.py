"""End-to-end acceptance criteria, one test (or test group) per criterion.

Each criterion records a single PASS/FAIL line, printed immediately and again
in the terminal summary. Tolerances are the stated ones; nothing is loosened.
"""

import csv
import json
import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from scipy.special import ndtr

from ccpmo.cli import main
from ccpmo.nlp import SolverConfig
from ccpmo.problem import PointMass, UncertaintyModel, builtin, objective_value, true_probability
from ccpmo.quadrotor import QuadrotorParams
from ccpmo.smoothing import SampleSet, SmoothingParams, smooth_prob, smooth_prob_and_grad
from ccpmo.solver import TwoPointPolicy, solve_deterministic, solve_two_point
from ccpmo.validate import (
    convergence_study,
    feasibility_bound_study,
    fig2_study,
    grid_deterministic_oracle,
    grid_two_point_oracle,
    monte_carlo_validate,
)

pytestmark = pytest.mark.slow

ORACLE_OBJECTIVE = -1.612


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def read_rows(path):
    with open(path, newline="") as fh:
        return {r["method"]: r for r in csv.DictReader(fh)}


# ---------------------------------------------------------------------------
# 1. Example arithmetic
# ---------------------------------------------------------------------------


def test_c1_example_arithmetic(ex1):
    t0 = time.perf_counter()
    j1, j2 = objective_value(ex1, [-1.0]), objective_value(ex1, [2.0])
    v1, v2 = 1 - true_probability(ex1, [-1.0]), 1 - true_probability(ex1, [2.0])
    analytic = 0.67 * j1 + 0.33 * j2
    rep = monte_carlo_validate(ex1, TwoPointPolicy(0.67, [-1.0], [2.0]), 1_000_000, 0)
    elapsed = time.perf_counter() - t0
    checks = [
        j1 == pytest.approx(1.84, abs=1e-12),
        j2 == pytest.approx(-4.76, abs=1e-12),
        abs(v1 - 0.008) <= 0.004 and abs(v2 - 0.729) <= 0.004,
        abs(analytic - (-0.338)) <= 0.001,
        abs(rep.expected_cost - (-0.338)) <= 0.01,
        abs(rep.violation_probability - 0.2450) <= 0.003,
        elapsed < 10,
    ]
    record("1", all(checks), f"J={j1:.4f},{j2:.4f} viol={v1:.4f},{v2:.4f} "
                             f"mix={analytic:.4f} mc={rep.expected_cost:.4f}/{rep.violation_probability:.4f} "
                             f"{elapsed:.1f}s")
    assert all(checks)


# ---------------------------------------------------------------------------
# 2. Smoothing fidelity
# ---------------------------------------------------------------------------


def test_c2_smoothing_fidelity(ex1):
    t0 = time.perf_counter()
    D = SampleSet.draw(ex1, 10_000, 0)
    sp = SmoothingParams(epsilon=0.01, gamma=0.0)
    xs = np.linspace(-2, 2, 41)
    err = max(abs(smooth_prob(ex1, [x], D, sp) - ndtr(1.4 - x)) for x in xs)
    elapsed = time.perf_counter() - t0
    ok = err <= 0.02 and elapsed < 5
    record("2", ok, f"max error {err:.4f}, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. Gradient correctness
# ---------------------------------------------------------------------------


def _fd_grad(problem, x, D, sp, h):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (smooth_prob(problem, x + e, D, sp) - smooth_prob(problem, x - e, D, sp)) / (2 * h)
    return g


def test_c3_gradient_correctness(ex1, quad):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, active = 0.0, 0
    # a wide band puts many samples on the smooth part, so the probes test something
    cases = [(ex1, SmoothingParams(0.2, 0.01), 2000, 1e-6)] * 10 + [(quad, SmoothingParams(0.5, 0.01), 200, 1e-6)] * 10
    for k, (problem, sp, n, h) in enumerate(cases):
        D = SampleSet.draw(problem, n, 100 + k)
        lo, hi = problem.domain.lower, problem.domain.upper
        if problem is quad:
            from ccpmo.quadrotor import nominal_plan

            x = np.clip(nominal_plan(QuadrotorParams()) + rng.normal(0, 0.3, quad.dim), lo, hi)
        else:
            x = rng.uniform(lo, hi)
        _, g = smooth_prob_and_grad(problem, x, D, sp)
        fd = _fd_grad(problem, x, D, sp, h)
        scale = max(np.linalg.norm(fd), 1e-12)
        active += np.linalg.norm(fd) > 1e-8
        worst = max(worst, float(np.linalg.norm(g - fd) / scale) if np.linalg.norm(fd) > 1e-8
                    else float(np.linalg.norm(g)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30 and active >= 15
    record("3", ok, f"worst relative error {worst:.2e} over 20 probes ({active} with nonzero gradient), "
                    f"{elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. Two-point never worse than deterministic; example1 value vs oracle
# ---------------------------------------------------------------------------


def test_c4_improvement(ex1, lin):
    gaps = []
    for problem in (ex1, lin):
        for seed in (0, 1, 2):
            D = SampleSet.draw(problem, 10_000, seed)
            rep = solve_two_point(problem, 0.25, D, SmoothingParams(), SolverConfig(seed=seed))
            gaps.append((problem.name, seed, rep.objective - rep.deterministic.objective_value, rep.objective))
    quadp = builtin("quadrotor")
    Dq = SampleSet.draw(quadp, 500, 1)
    qcfg = SolverConfig(seed=1).with_overrides(**quadp.metadata.get("solver_defaults", {}))
    qrep = solve_two_point(quadp, 0.95, Dq, SmoothingParams(), qcfg)
    gaps.append(("quadrotor", 1, qrep.objective - qrep.deterministic.objective_value, qrep.objective))

    t0 = time.perf_counter()
    oracle = grid_two_point_oracle(ex1, 0.25, x_step=0.01, mu_step=0.001)
    oracle_time = time.perf_counter() - t0
    ex1_vals = [v for name, _, _, v in gaps if name == "example1"]
    ordering = all(g <= 1e-6 for _, _, g, _ in gaps)
    ok = (ordering and all(abs(v - ORACLE_OBJECTIVE) <= 0.05 for v in ex1_vals)
          and abs(oracle.objective - ORACLE_OBJECTIVE) <= 0.05 and oracle_time < 60)
    record("4", ok, f"max two-point minus deterministic {max(g for _, _, g, _ in gaps):.2e} over {len(gaps)} runs; "
                    f"example1 {min(ex1_vals):.4f}..{max(ex1_vals):.4f}, oracle {oracle.objective:.4f} "
                    f"in {oracle_time:.1f}s; quadrotor {qrep.objective:.3f} vs "
                    f"{qrep.deterministic.objective_value:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 5. Flatness in the number of support points
# ---------------------------------------------------------------------------


def test_c5_support_size_flatness(ex1, D_ex1):
    t0 = time.perf_counter()
    rows = fig2_study(ex1, 0.25, [1, 2, 5, 10, 20, 30, 50], D_ex1, SmoothingParams(), SolverConfig())
    elapsed = time.perf_counter() - t0
    obj = {r.S: r.objective for r in rows}
    spread = max(abs(obj[s] - obj[2]) for s in (5, 10, 20, 30, 50))
    ok = spread <= 0.05 and obj[1] - obj[2] >= 1.0 and elapsed < 300
    record("5", ok, f"S=1 {obj[1]:.4f}, S=2 {obj[2]:.4f}, max |S - 2| {spread:.4f}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 6. Support points sit on the frontier; no gain for linear objectives
# ---------------------------------------------------------------------------


def test_c6_structure(ex1, lin, D_ex1):
    rep = solve_two_point(ex1, 0.25, D_ex1, SmoothingParams(), SolverConfig())
    dev = []
    for x in (rep.policy.x1, rep.policy.x2):
        level = 1.0 - true_probability(ex1, x)
        dev.append(abs(objective_value(ex1, x) - grid_deterministic_oracle(ex1, level).objective))
    lrep = solve_two_point(lin, 0.25, SampleSet.draw(lin, 10_000, 0), SmoothingParams(), SolverConfig())
    lin_gap = abs(lrep.objective - lrep.deterministic.objective_value)
    pm = builtin("linear1d", uncertainty=UncertaintyModel((PointMass(0.0),)))
    prep = solve_two_point(pm, 0.0, SampleSet.draw(pm, 100, 0), SmoothingParams(), SolverConfig())
    pm_gap = abs(prep.objective - prep.deterministic.objective_value)
    ok = max(dev) <= 0.02 and lin_gap <= 0.02 and pm_gap <= 1e-6
    record("6", ok, f"support deviation {max(dev):.2e}, linear gap {lin_gap:.2e}, point-mass gap {pm_gap:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 7. Convergence in N
# ---------------------------------------------------------------------------


def test_c7_convergence(ex1):
    t0 = time.perf_counter()
    rep = convergence_study(ex1, 0.25, [100, 1000, 10_000], [0.1, 0.01], 10, ORACLE_OBJECTIVE, seed=0,
                            cfg=SolverConfig())
    elapsed = time.perf_counter() - t0
    parts, ok = [], elapsed < 600
    for eps in (0.1, 0.01):
        errs = rep.errors(eps)
        ok &= all(b <= a for a, b in zip(errs, errs[1:])) and errs[-1] <= 0.05
        parts.append(f"eps={eps}: " + ", ".join(f"{e:.4f}" for e in errs))
    record("7", ok, "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 8. Feasibility bound
# ---------------------------------------------------------------------------


def test_c8_feasibility_bound(ex1):
    t0 = time.perf_counter()
    rep = feasibility_bound_study(ex1, 0.25, 0.20, 500, 200, SmoothingParams(), SolverConfig(), seed=0)
    elapsed = time.perf_counter() - t0
    ok = rep.holds and elapsed < 600
    record("8", ok, f"empirical {rep.empirical_infeasible_fraction:.4f} <= bound {rep.bound:.4f} "
                    f"+ slack {rep.binomial_slack:.4f} (R estimate {rep.R_estimate:.4f}), {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 9 and 10. Quadrotor through the CLI; reproducibility
# ---------------------------------------------------------------------------

QUAD_SOLVE = ["solve", "--builtin", "quadrotor", "--alpha", "0.15", "--n-samples", "500", "--seed", "1"]


@pytest.fixture(scope="module")
def quad_runs(tmp_path_factory):
    runs = []
    t0 = time.perf_counter()
    for k in range(2):
        out = tmp_path_factory.mktemp(f"quad{k}")
        code = main([*QUAD_SOLVE, "--out", str(out)])
        vcode = main(["validate", "--policy", str(out / "solution.json"), "--trials", "2000", "--seed", "3",
                      "--out", str(out)])
        runs.append((code, vcode, out))
        if k == 0:
            first_time = time.perf_counter() - t0
    return runs, first_time


def test_c9_goal_velocity_caps_success():
    # velocity noise enters at the last step, so each axis lands within the
    # tolerance with probability at most 2 Phi(tol / sd) - 1 whatever the input
    p = QuadrotorParams()
    sd = np.sqrt(np.asarray(p.noise_cov_diag)[[1, 3]])
    cap = float(np.prod(2 * ndtr(p.velocity_tolerance / sd) - 1))
    assert cap == pytest.approx(0.5652, abs=1e-3)
    assert 1 - cap > 0.17


def test_c9b_quadrotor_cost_ordering(quad_runs):
    (runs, elapsed) = quad_runs
    code, vcode, out = runs[0]
    rows = read_rows(out / "validation.csv")
    tp, det = float(rows["two_point"]["expected_cost"]), float(rows["deterministic"]["expected_cost"])
    ok = vcode == 0 and tp <= det and elapsed < 900
    record("9b", ok, f"two-point MC cost {tp:.3f} <= deterministic {det:.3f}; solve exit {code}, {elapsed:.0f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="unattainable with the default model: goal-velocity noise caps success at "
                                       "0.565 for any policy; see decisions ledger, quadrotor criterion 9")
def test_c9ac_quadrotor_violation(quad_runs):
    runs, _ = quad_runs
    rows = read_rows(runs[0][2] / "validation.csv")
    tp, sc = float(rows["two_point"]["violation_probability"]), float(rows["scenario"]["violation_probability"])
    ok_a, ok_c = tp <= 0.17, sc <= 0.02
    record("9a", ok_a, f"two-point MC violation {tp:.4f}, needs <= 0.17")
    record("9c", ok_c, f"scenario MC violation {sc:.4f}, needs <= 0.02")
    assert ok_a and ok_c


def test_c10_reproducible(quad_runs, tmp_path):
    runs, _ = quad_runs
    same = []
    for name in ("summary.csv", "validation.csv"):
        same.append((runs[0][2] / name).read_bytes() == (runs[1][2] / name).read_bytes())
    # studies and the one-dimensional solve
    for cmd, files in [
        (["solve", "--builtin", "example1", "--alpha", "0.25", "--seed", "5"], ["summary.csv"]),
        (["study", "fig2", "--builtin", "example1", "--alpha", "0.25", "--s-list", "1,2,5", "--seed", "5"],
         ["fig2.csv"]),
        (["study", "frontier", "--builtin", "linear1d", "--alpha", "0.25", "--frontier-points", "10"],
         ["frontier.csv"]),
    ]:
        outs = []
        for k in range(2):
            out = tmp_path / f"{cmd[1]}{k}"
            main([*cmd, "--out", str(out)])
            outs.append(out)
        same += [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    sol = [json.loads((r[2] / "solution.json").read_text())["methods"]["two_point"]["objective"] for r in runs]
    ok = all(same) and sol[0] == sol[1] and not math.isnan(sol[0])
    record("10", ok, f"{sum(same)}/{len(same)} CSV files bit-identical across reruns")
    assert ok
