"""Box- and inequality-constrained smooth NLP solver.

Augmented Lagrangian (Powell-Hestenes-Rockafellar form for inequalities)
outer loop, spectral projected gradient inner solver with a nonmonotone
line search, and multistart from a seeded scrambled Halton sequence.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

logger = logging.getLogger(__name__)

ValueGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


class NonFiniteError(FloatingPointError):
    """Objective or constraint produced NaN/inf; ``point`` holds the offending input."""

    def __init__(self, message: str, point: np.ndarray):
        super().__init__(f"{message} at v={np.asarray(point).tolist()}")
        self.point = np.asarray(point, dtype=float).copy()


@dataclass(frozen=True)
class NlpProblem:
    """``min f(v)`` s.t. ``g_k(v) <= 0`` and ``lower <= v <= upper``.

    ``objective`` and each inequality return ``(value, gradient)``.
    """

    dim: int
    objective: ValueGrad
    lower: np.ndarray
    upper: np.ndarray
    inequalities: Sequence[ValueGrad] = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.dim < 1 or lo.size != self.dim or hi.size != self.dim:
            raise ValueError("box bounds must match dim >= 1")
        if np.any(lo > hi):
            raise ValueError("empty box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "inequalities", tuple(self.inequalities))


@dataclass(frozen=True)
class SolverConfig:
    multistarts: int = 16
    max_iterations: int = 500
    outer_iterations: int = 30
    kkt_tolerance: float = 1e-6
    feasibility_tolerance: float = 1e-8
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    seed: int = 0
    max_evaluations: int | None = None  # per start; None = unlimited

    def __post_init__(self):
        if self.multistarts < 0:
            raise ValueError("multistarts must be >= 0")
        if self.kkt_tolerance <= 0 or self.feasibility_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise ValueError("max_evaluations must be >= 1")

    def with_overrides(self, **kw) -> "SolverConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass
class SolveResult:
    point: np.ndarray
    objective_value: float
    max_constraint_violation: float
    converged: bool
    iterations: int
    starts_used: int
    start_index: int = 0
    diagnostic: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(self.extra.get("feasible", False))


def worker_count() -> int:
    """Worker cap from ``CCPMO_THREADS`` (default 1, i.e. serial)."""
    try:
        return max(1, int(os.environ.get("CCPMO_THREADS", "1")))
    except ValueError:
        return 1


def ordered_map(fn, items) -> list:
    """``[fn(i) for i in items]``, threaded when ``CCPMO_THREADS > 1``; order preserved."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def start_points(lower, upper, count: int, seed: int) -> np.ndarray:
    """``count`` seeded scrambled-Halton points in the box (prefix-stable in ``count``)."""
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    if count <= 0:
        return np.empty((0, lower.size))
    sampler = qmc.Halton(d=lower.size, scramble=True, seed=np.random.default_rng(seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        unit = sampler.random(count)
    return lower + unit * (upper - lower)


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


class _Evaluator:
    def __init__(self, problem: NlpProblem):
        self.p = problem
        self.count = 0

    def objective(self, v):
        f, g = self.p.objective(v)
        f = float(f)
        g = np.asarray(g, dtype=float).reshape(-1)
        self.count += 1
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite objective or gradient", v)
        return f, g

    def constraints(self, v):
        k = len(self.p.inequalities)
        vals = np.empty(k)
        jac = np.empty((k, self.p.dim))
        for i, c in enumerate(self.p.inequalities):
            val, grad = c(v)
            vals[i] = float(val)
            jac[i] = np.asarray(grad, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(jac))):
            raise NonFiniteError("non-finite constraint or gradient", v)
        return vals, jac


def _proj_grad_norm(v, grad, lower, upper) -> float:
    return float(np.max(np.abs(np.clip(v - grad, lower, upper) - v))) if v.size else 0.0


def _spg(fun, v0, lower, upper, tol, max_iter, memory=10, exhausted=lambda: False):
    """Nonmonotone spectral projected gradient (Birgin-Martinez-Raydan SPG2)."""
    v = np.clip(v0, lower, upper)
    f, g = fun(v)
    history = [f]
    step = 1.0 / max(1.0, float(np.max(np.abs(g))))
    it = 0
    pg = _proj_grad_norm(v, g, lower, upper)
    while it < max_iter and pg > tol and not exhausted():
        it += 1
        d = np.clip(v - step * g, lower, upper) - v
        gd = float(g @ d)
        if gd >= 0:
            break
        f_ref = max(history[-memory:])
        t = 1.0
        accepted = False
        for _ in range(40):
            if exhausted():
                break
            v_new = v + t * d
            f_new, g_new = fun(v_new)
            if f_new <= f_ref + 1e-4 * t * gd:
                accepted = True
                break
            # safeguarded quadratic interpolation
            denom = 2.0 * (f_new - f - t * gd)
            t_q = -gd * t * t / denom if denom > 0 else 0.5 * t
            t = t_q if 0.1 * t <= t_q <= 0.9 * t else 0.5 * t
        if not accepted:
            break
        s = v_new - v
        y = g_new - g
        v, f, g = v_new, f_new, g_new
        history.append(f)
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 1e10
        step = min(1e10, max(1e-10, step))
        pg = _proj_grad_norm(v, g, lower, upper)
    return v, f, g, it, pg


def _run_start(ev: _Evaluator, v0: np.ndarray, cfg: SolverConfig):
    p = ev.p
    lo, hi = p.lower, p.upper
    k = len(p.inequalities)
    lam = np.zeros(k)
    rho = cfg.penalty_init
    v = np.clip(np.asarray(v0, dtype=float), lo, hi)
    total_it = 0
    prev_viol = math.inf
    converged = False
    pg_lag = math.inf

    # best iterate seen, ranked like starts: (rank key, point, f, violation)
    best: list = [None, None, math.inf, math.inf]

    def exhausted():
        return cfg.max_evaluations is not None and ev.count >= cfg.max_evaluations

    def auglag(x):
        f, gf = ev.objective(x)
        if k == 0:
            return f, gf
        c, jc = ev.constraints(x)
        viol = max(0.0, float(c.max()))
        key = (0, f) if viol <= cfg.feasibility_tolerance else (1, viol)
        if best[0] is None or key < best[0]:
            best[:] = [key, x.copy(), f, viol]
        shifted = np.maximum(0.0, lam + rho * c)
        val = f + float(np.sum(shifted**2 - lam**2)) / (2.0 * rho)
        return val, gf + shifted @ jc

    outer = cfg.outer_iterations if k else 1
    for j in range(outer):
        inner_tol = max(cfg.kkt_tolerance, 10.0 ** (-j - 1)) if k else cfg.kkt_tolerance
        v, _, _, it, _ = _spg(auglag, v, lo, hi, inner_tol, cfg.max_iterations, exhausted=exhausted)
        total_it += it
        f, gf = ev.objective(v)
        if k:
            c, jc = ev.constraints(v)
            viol = float(max(0.0, c.max()))
            lam = np.maximum(0.0, lam + rho * c)
            pg_lag = _proj_grad_norm(v, gf + lam @ jc, lo, hi)
            # a multiplier left on a slack constraint means the penalty, not the optimum, stopped the search
            comp = float(np.max(np.abs(np.minimum(lam, -c))))
        else:
            viol = 0.0
            pg_lag = _proj_grad_norm(v, gf, lo, hi)
            comp = 0.0
        if pg_lag <= cfg.kkt_tolerance and viol <= cfg.feasibility_tolerance and comp <= cfg.kkt_tolerance:
            converged = True
            break
        if exhausted():
            break
        if k and viol > 0.25 * prev_viol:
            rho = min(rho * cfg.penalty_growth, 1e12)
        prev_viol = viol
    f, _ = ev.objective(v)
    viol = float(max(0.0, ev.constraints(v)[0].max())) if k else 0.0
    if viol > cfg.feasibility_tolerance and best[0] is not None and best[0] < (1, viol):
        # flat constraint landscapes can strand the iterate outside the
        # feasible set; fall back to the best point visited
        v, f, viol, converged = best[1], best[2], best[3], False
    return v, f, viol, converged, total_it, pg_lag


def _rank(res: SolveResult, feas_tol: float):
    feasible = res.max_constraint_violation <= feas_tol
    return (0, res.objective_value) if feasible else (1, res.max_constraint_violation)


def minimize(
    problem: NlpProblem,
    config: SolverConfig = SolverConfig(),
    initial_points: Sequence[np.ndarray] = (),
    keep_initial: bool = False,
) -> SolveResult:
    """Best result over the given initial points followed by ``config.multistarts`` Halton starts.

    Starts are ranked feasible-first (violation <= feasibility tolerance) by
    objective, then infeasible ones by violation; ties go to the lower start
    index. With ``keep_initial`` the unmodified initial points also compete as
    candidates, so the result is never worse than any of them.
    """
    starts = [np.clip(np.asarray(s, float).reshape(-1), problem.lower, problem.upper) for s in initial_points]
    starts.extend(start_points(problem.lower, problem.upper, config.multistarts, config.seed))
    if not starts:
        raise ValueError("no start points")

    def run(item):
        idx, s = item
        ev = _Evaluator(problem)
        v, f, viol, conv, its, pg = _run_start(ev, s, config)
        return SolveResult(
            point=v,
            objective_value=f,
            max_constraint_violation=viol,
            converged=conv,
            iterations=its,
            starts_used=len(starts),
            start_index=idx,
            extra={"kkt_residual": pg, "evaluations": ev.count},
        )

    results = ordered_map(run, list(enumerate(starts)))
    if keep_initial:
        for idx, s in enumerate(starts[: len(initial_points)]):
            ev = _Evaluator(problem)
            f, _ = ev.objective(s)
            viol = float(max(0.0, ev.constraints(s)[0].max())) if problem.inequalities else 0.0
            results.append(
                SolveResult(s.copy(), f, viol, False, 0, len(starts), idx, "initial point kept")
            )
    best = min(results, key=lambda r: _rank(r, config.feasibility_tolerance))
    best.iterations = sum(r.iterations for r in results)
    best.extra = dict(best.extra)
    best.extra["feasible"] = best.max_constraint_violation <= config.feasibility_tolerance
    best.extra["start_objectives"] = [r.objective_value for r in results]
    if not best.extra["feasible"]:
        best.converged = False
        best.diagnostic = (
            f"no feasible start; least violation {best.max_constraint_violation:.3e}"
        )
    logger.debug("minimize: best start %d of %d, f=%.6g", best.start_index, len(starts), best.objective_value)
    return best
