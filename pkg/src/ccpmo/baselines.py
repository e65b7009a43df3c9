"""Deterministic-decision baselines: scenario approach and grid sample-average approximation."""

from __future__ import annotations

import itertools
import logging

import numpy as np
from scipy.special import logsumexp

from .nlp import NlpProblem, SolveResult, SolverConfig, minimize, ordered_map
from .problem import (
    ProblemInstance,
    constraint_jacobian,
    constraint_values,
    hbar_batch,
    objective_gradient,
    objective_value,
)
from .smoothing import SampleSet
from .solver import InfeasibleError, warm_starts

logger = logging.getLogger(__name__)


class UnsupportedProblemError(NotImplementedError):
    """The baseline cannot handle this problem (e.g. grid SAA beyond two dimensions)."""


def _xi(D) -> np.ndarray:
    return D.samples if isinstance(D, SampleSet) else np.atleast_2d(np.asarray(D, dtype=float))


def scenario_solve(
    problem: ProblemInstance,
    D,
    cfg: SolverConfig = SolverConfig(),
    temperature: float = 1e-2,
    tightening: float = 0.1,
    min_temperature: float = 1e-6,
) -> SolveResult:
    """Minimize ``J`` subject to every sampled constraint holding.

    The maximum over all samples and components is replaced by the smooth
    overestimate ``tau * log(sum exp(h / tau))`` (never below the true max, at
    most ``tau * log(count)`` above it). ``tau`` starts at ``temperature`` and is
    multiplied by ``tightening`` each stage, warm-starting from the previous
    stage, down to ``min_temperature``.

    ``converged`` means every sample constraint holds within the feasibility
    tolerance. An infeasible result reports the most violated sample in
    ``extra["most_violated_sample"]``.
    """
    if not 0 < tightening < 1 or not 0 < min_temperature <= temperature:
        raise ValueError("need 0 < tightening < 1 and 0 < min_temperature <= temperature")
    xi = _xi(D)
    if xi.shape[0] < 1:
        raise ValueError("empty sample set")

    def J(x):
        return objective_value(problem, x, xi), objective_gradient(problem, x, xi)

    def lse_constraint(tau):
        def con(x):
            vals = constraint_values(problem, x, xi).ravel()
            jac = constraint_jacobian(problem, x, xi).reshape(vals.size, -1)
            value = logsumexp(vals / tau) * tau
            weights = np.exp(vals / tau - value / tau)
            return value, weights @ jac

        return con

    taus = []
    tau = temperature
    while tau >= min_temperature * (1 - 1e-12):
        taus.append(tau)
        tau *= tightening
    starts = list(warm_starts(problem))
    res = None
    total_iterations = 0
    for stage, tau in enumerate(taus):
        nlp = NlpProblem(problem.dim, J, problem.domain.lower, problem.domain.upper, [lse_constraint(tau)])
        stage_cfg = cfg if stage == 0 else cfg.with_overrides(multistarts=0)
        init = starts if stage == 0 else [res.point]
        res = minimize(nlp, stage_cfg, init, keep_initial=stage > 0)
        total_iterations += res.iterations
    hb = hbar_batch(problem, res.point, xi)
    worst = int(np.argmax(hb))
    violation = float(max(0.0, hb[worst]))
    feasible = violation <= cfg.feasibility_tolerance
    out = SolveResult(
        point=res.point,
        objective_value=objective_value(problem, res.point, xi),
        max_constraint_violation=violation,
        # at the final temperature the smoothed max has curvature ~1/tau, so
        # the verdict is hard per-sample feasibility rather than the KKT test
        converged=feasible,
        iterations=total_iterations,
        starts_used=res.starts_used,
        start_index=res.start_index,
        diagnostic="" if feasible else f"scenario constraints infeasible; sample {worst} violated by {violation:.3e}",
        extra={"feasible": feasible, "most_violated_sample": worst, "min_slack": float(-hb.max()),
               "temperatures": taus, "nlp_converged": res.converged},
    )
    if not feasible:
        logger.warning("%s: %s", problem.name, out.diagnostic)
    return out


def saa_grid_solve(problem: ProblemInstance, alpha: float, D, resolution: int) -> SolveResult:
    """Exhaustive grid search of ``min J`` s.t. empirical satisfaction ``>= 1 - alpha`` (``n <= 2``).

    Ties go to the lowest lexicographic grid index.

    Raises
    ------
    UnsupportedProblemError
        If the decision dimension exceeds two.
    InfeasibleError
        If no grid point meets the empirical constraint.
    """
    if problem.dim > 2:
        raise UnsupportedProblemError(f"grid SAA supports n <= 2, {problem.name} has n = {problem.dim}")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha outside [0, 1]")
    xi = _xi(D)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(problem.domain.lower, problem.domain.upper)]
    grid = np.array(list(itertools.product(*axes)))
    need = 1.0 - alpha

    def chunk(idx):
        pts = grid[idx]
        probs = np.array([np.count_nonzero(hbar_batch(problem, x, xi) <= 0.0) / xi.shape[0] for x in pts])
        costs = np.array([objective_value(problem, x, xi) for x in pts])
        return probs, costs

    chunks = np.array_split(np.arange(grid.shape[0]), max(1, grid.shape[0] // 512))
    parts = ordered_map(chunk, chunks)
    probs = np.concatenate([p for p, _ in parts])
    costs = np.concatenate([c for _, c in parts])
    ok = probs >= need - 1e-12
    if not np.any(ok):
        raise InfeasibleError(f"{problem.name}: no grid point reaches empirical probability {need:g}")
    masked = np.where(ok, costs, np.inf)
    best = int(np.argmin(masked))
    return SolveResult(
        point=grid[best].copy(),
        objective_value=float(costs[best]),
        max_constraint_violation=0.0,
        converged=True,
        iterations=grid.shape[0],
        starts_used=1,
        diagnostic="",
        extra={"feasible": True, "empirical_prob": float(probs[best]), "grid_index": best},
    )
