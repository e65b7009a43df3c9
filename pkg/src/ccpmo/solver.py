"""Chance-constrained solvers for deterministic and mixed (probabilistic) decisions.

All solvers replace the satisfaction probability by the smoothed sample
estimate from :mod:`ccpmo.smoothing` and hand the resulting smooth NLP to
:func:`ccpmo.nlp.minimize`.

* :func:`solve_deterministic` - one decision ``x`` with ``P~(x) >= 1 - alpha'``.
* :func:`solve_two_point` - a two-point mixture ``(mu1, x1, x2)`` whose
  weighted satisfaction probability is at least ``1 - alpha'``.
* :func:`solve_s_point` - the same with ``S`` support points.
* :func:`build_frontier` / :func:`mix_from_frontier` - the risk-cost frontier
  route: solve the deterministic problem on a grid of thresholds and take the
  best chord of the frontier that straddles ``alpha``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nlp import NlpProblem, SolveResult, SolverConfig, minimize, ordered_map, worker_count
from .problem import ProblemInstance, objective_gradient, objective_value
from .smoothing import SampleSet, SmoothingParams, smooth_prob_and_grad

logger = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    """No candidate satisfies the requested threshold."""


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoPointPolicy:
    """Play ``x1`` with probability ``mu1`` and ``x2`` with probability ``1 - mu1``."""

    mu1: float
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        mu1 = float(self.mu1)
        if not 0.0 <= mu1 <= 1.0:
            raise ValueError(f"mu1={mu1} outside [0, 1]")
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "x1", np.asarray(self.x1, dtype=float).reshape(-1).copy())
        object.__setattr__(self, "x2", np.asarray(self.x2, dtype=float).reshape(-1).copy())

    @property
    def mu2(self) -> float:
        return 1.0 - self.mu1

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.mu1, 1.0 - self.mu1])

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.x1, self.x2])

    @classmethod
    def deterministic(cls, x) -> "TwoPointPolicy":
        return cls(1.0, x, x)

    def to_dict(self) -> dict:
        return {"kind": "two_point", "mu1": self.mu1, "x1": self.x1.tolist(), "x2": self.x2.tolist()}


@dataclass(frozen=True)
class SPointPolicy:
    weights: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1).copy()
        pts = np.atleast_2d(np.asarray(self.points, dtype=float)).copy()
        if pts.shape[0] != w.size:
            raise ValueError("one weight per support point required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.weights.size

    def to_dict(self) -> dict:
        return {"kind": "s_point", "weights": self.weights.tolist(), "points": self.points.tolist()}


def policy_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "two_point":
        return TwoPointPolicy(d["mu1"], d["x1"], d["x2"])
    if kind == "s_point":
        return SPointPolicy(d["weights"], d["points"])
    if kind == "deterministic":
        return TwoPointPolicy.deterministic(d["x"])
    raise ValueError(f"unknown policy kind {kind!r}")


def sample_policy(policy, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` decisions i.i.d. from the policy's support, shape ``(count, n)``."""
    idx = sample_policy_indices(policy, count, seed)
    return np.asarray(policy.points)[idx]


def sample_policy_indices(policy, count: int, seed: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    w = np.asarray(policy.weights, dtype=float)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = np.random.default_rng(seed).random(count)
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class PolicyReport:
    """A mixture policy plus its surrogate objective and constraint slack."""

    policy: TwoPointPolicy | SPointPolicy
    objective: float
    slack: float
    result: SolveResult
    deterministic: SolveResult | None = None
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.result.converged

    @property
    def feasible(self) -> bool:
        return self.result.feasible


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _samples(D) -> SampleSet:
    return D if isinstance(D, SampleSet) else SampleSet(D)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"threshold {alpha} outside [0, 1]")
    return alpha


class _PointModel:
    """Objective and smoothed probability of single decisions over a fixed sample set."""

    def __init__(self, problem: ProblemInstance, D: SampleSet, sp: SmoothingParams):
        self.problem = problem
        self.xi = D.samples
        self.sp = sp

    def J(self, x):
        return objective_value(self.problem, x, self.xi), objective_gradient(self.problem, x, self.xi)

    def P(self, x):
        return smooth_prob_and_grad(self.problem, x, self.xi, self.sp)


def warm_starts(problem: ProblemInstance) -> list[np.ndarray]:
    """Problem-supplied start points (``metadata["warm_start"]``, a point or a zero-argument callable)."""
    ws = problem.metadata.get("warm_start")
    if ws is None:
        return []
    point = ws() if callable(ws) else ws
    return [np.asarray(point, dtype=float).reshape(-1)]


def solve_deterministic(
    problem: ProblemInstance,
    alpha_prime: float,
    D,
    sp: SmoothingParams = SmoothingParams(),
    cfg: SolverConfig = SolverConfig(),
    initial_points: Sequence[np.ndarray] = (),
) -> SolveResult:
    """Single decision minimizing ``J`` s.t. ``P~(x) >= 1 - alpha_prime``."""
    alpha_prime = _check_alpha(alpha_prime)
    D = _samples(D)
    model = _PointModel(problem, D, sp)
    target = 1.0 - alpha_prime

    def con(x):
        p, g = model.P(x)
        return target - p, -g

    nlp = NlpProblem(problem.dim, model.J, problem.domain.lower, problem.domain.upper, [con])
    starts = list(initial_points) + warm_starts(problem)
    if not starts and cfg.multistarts == 0:
        starts = [0.5 * (problem.domain.lower + problem.domain.upper)]
    res = minimize(nlp, cfg, starts)
    p = model.P(res.point)[0]
    res.extra.update(smooth_prob=p, slack=p - target, alpha_prime=alpha_prime)
    if not res.feasible:
        logger.warning("%s: deterministic solve infeasible at alpha'=%g", problem.name, alpha_prime)
    return res


def _chord_start(problem, model: "_PointModel", xd, target: float, cfg: SolverConfig):
    """Feasible start mixing ``xd`` with the cheapest decision in the box.

    ``(1, xd, xd)`` is stationary (the second point carries no weight), so a
    local search from it alone never splits the mass. Returns ``None`` when
    ``xd`` is not strictly feasible or no cheaper decision exists.
    """
    pd = model.P(xd)[0]
    if pd <= target:
        return None
    nlp = NlpProblem(problem.dim, model.J, problem.domain.lower, problem.domain.upper)
    starts = [xd] + warm_starts(problem)
    cheap = minimize(nlp, cfg.with_overrides(multistarts=max(2, min(cfg.multistarts, 4))), starts).point
    if model.J(cheap)[0] >= model.J(xd)[0]:
        return None
    pc = model.P(cheap)[0]
    mu = 0.0 if pc >= target else (target - pc) / (pd - pc)
    return np.concatenate([[mu], xd, cheap])


def solve_two_point(
    problem: ProblemInstance,
    alpha_prime: float,
    D,
    sp: SmoothingParams = SmoothingParams(),
    cfg: SolverConfig = SolverConfig(),
    deterministic: SolveResult | None = None,
) -> PolicyReport:
    """Best two-point mixture for the smoothed sample problem.

    Decision vector ``v = (mu1, x1, x2)``; ``mu2 = 1 - mu1`` is eliminated.
    The deterministic optimum, embedded as ``(1, x*, x*)``, is one of the
    starts and also competes unmodified, so the mixture's surrogate objective
    never exceeds the deterministic one.
    """
    alpha_prime = _check_alpha(alpha_prime)
    D = _samples(D)
    if deterministic is None:
        deterministic = solve_deterministic(problem, alpha_prime, D, sp, cfg)
    n = problem.dim
    model = _PointModel(problem, D, sp)
    target = 1.0 - alpha_prime
    cache: dict = {}

    def terms(v):
        key = v.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = (model.J(v[1 : 1 + n]), model.J(v[1 + n :]), model.P(v[1 : 1 + n]), model.P(v[1 + n :]))
        return cache[key]

    def obj(v):
        (j1, g1), (j2, g2), _, _ = terms(v)
        mu = v[0]
        return mu * j1 + (1.0 - mu) * j2, np.concatenate([[j1 - j2], mu * g1, (1.0 - mu) * g2])

    def con(v):
        _, _, (p1, q1), (p2, q2) = terms(v)
        mu = v[0]
        val = target - (mu * p1 + (1.0 - mu) * p2)
        return val, -np.concatenate([[p1 - p2], mu * q1, (1.0 - mu) * q2])

    lo = np.concatenate([[0.0], problem.domain.lower, problem.domain.lower])
    hi = np.concatenate([[1.0], problem.domain.upper, problem.domain.upper])
    xd = deterministic.point
    start = np.concatenate([[1.0], xd, xd])
    starts = [start]
    chord = _chord_start(problem, model, xd, target, cfg)
    if chord is not None:
        starts.append(chord)
    res = minimize(NlpProblem(2 * n + 1, obj, lo, hi, [con]), cfg, starts, keep_initial=True)
    if not res.feasible:
        # the mixture's satisfaction probability never exceeds its best support
        # point's, so an infeasible mixture problem means an infeasible point
        # problem too; report the embedded deterministic solution unchanged
        res = SolveResult(
            start, deterministic.objective_value, deterministic.max_constraint_violation,
            False, res.iterations, res.starts_used, 0,
            "no feasible mixture; deterministic solution kept", dict(res.extra, feasible=False),
        )
    v = res.point
    policy = TwoPointPolicy(v[0], v[1 : 1 + n], v[1 + n :])
    _, _, (p1, _), (p2, _) = terms(v)
    slack = policy.mu1 * p1 + policy.mu2 * p2 - target
    return PolicyReport(
        policy, res.objective_value, slack, res, deterministic,
        extra={"smooth_probs": [p1, p2], "alpha_prime": alpha_prime},
    )


def stick_breaking(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``w_i = t_i prod_{k<i} (1 - t_k)``, ``w_S = prod (1 - t_k)``, and ``dw/dt``."""
    t = np.asarray(t, dtype=float)
    S = t.size + 1
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - t)])
    w = np.empty(S)
    w[:-1] = t * remaining[:-1]
    w[-1] = remaining[-1]
    jac = np.zeros((S, S - 1))
    for k in range(S - 1):
        jac[k, k] = remaining[k]
        # products of (1 - t_l) over k < l < i, for i = k+1 .. S-1
        tail = remaining[k] * np.concatenate([[1.0], np.cumprod(1.0 - t[k + 1 :])])
        jac[k + 1 : S - 1, k] = -t[k + 1 :] * tail[: S - 2 - k]
        jac[S - 1, k] = -tail[S - 2 - k]
    return w, jac


def solve_s_point(
    problem: ProblemInstance,
    S: int,
    alpha_prime: float,
    D,
    sp: SmoothingParams = SmoothingParams(),
    cfg: SolverConfig = SolverConfig(),
    deterministic: SolveResult | None = None,
) -> PolicyReport:
    """Best ``S``-point mixture; weights parameterized by stick-breaking fractions."""
    if S < 1:
        raise ValueError("S must be >= 1")
    alpha_prime = _check_alpha(alpha_prime)
    D = _samples(D)
    if deterministic is None:
        deterministic = solve_deterministic(problem, alpha_prime, D, sp, cfg)
    target = 1.0 - alpha_prime
    if S == 1:
        p = deterministic.extra["smooth_prob"]
        policy = SPointPolicy([1.0], deterministic.point[None, :])
        return PolicyReport(policy, deterministic.objective_value, p - target, deterministic, deterministic)

    n = problem.dim
    model = _PointModel(problem, D, sp)
    cache: dict = {}

    def terms(v):
        key = v.tobytes()
        if key not in cache:
            cache.clear()
            w, dw = stick_breaking(v[: S - 1])
            pts = v[S - 1 :].reshape(S, n)
            Js = [model.J(x) for x in pts]
            Ps = [model.P(x) for x in pts]
            cache[key] = (w, dw, Js, Ps)
        return cache[key]

    def combine(w, dw, vals):
        f = np.array([a for a, _ in vals])
        g = np.array([b for _, b in vals])
        return float(w @ f), np.concatenate([f @ dw, (w[:, None] * g).ravel()])

    def obj(v):
        w, dw, Js, _ = terms(v)
        return combine(w, dw, Js)

    def con(v):
        w, dw, _, Ps = terms(v)
        val, grad = combine(w, dw, Ps)
        return target - val, -grad

    lo = np.concatenate([np.zeros(S - 1), np.tile(problem.domain.lower, S)])
    hi = np.concatenate([np.ones(S - 1), np.tile(problem.domain.upper, S)])
    start = np.concatenate([[1.0], np.zeros(S - 2), np.tile(deterministic.point, S)])
    res = minimize(NlpProblem(lo.size, obj, lo, hi, [con]), cfg, [start], keep_initial=True)
    w, _, _, Ps = terms(res.point)
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    policy = SPointPolicy(w, res.point[S - 1 :].reshape(S, n))
    slack = float(w @ np.array([p for p, _ in Ps])) - target
    return PolicyReport(policy, res.objective_value, slack, res, deterministic, extra={"S": S})


# ---------------------------------------------------------------------------
# Frontier route
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrontierEntry:
    """Deterministic optimum at threshold ``alpha_tilde``.

    ``risk`` is the smoothed violation ``1 - P~(xstar)`` actually attained,
    never above ``alpha_tilde`` up to solver tolerance.
    """

    alpha_tilde: float
    jstar: float
    xstar: np.ndarray
    risk: float

    @property
    def level(self) -> float:
        return min(self.alpha_tilde, self.risk)


@dataclass(frozen=True)
class Frontier:
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        a = [e.alpha_tilde for e in entries]
        if any(b <= c for c, b in zip(a, a[1:])):
            raise ValueError("frontier thresholds must be strictly increasing")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([e.alpha_tilde for e in self.entries])

    @property
    def jstars(self) -> np.ndarray:
        return np.array([e.jstar for e in self.entries])

    @classmethod
    def from_points(cls, alphas, jstars, xstars=None, risks=None) -> "Frontier":
        k = len(alphas)
        xstars = xstars if xstars is not None else [np.zeros(1)] * k
        risks = risks if risks is not None else alphas
        return cls(tuple(
            FrontierEntry(float(a), float(j), np.asarray(x, float).reshape(-1), float(r))
            for a, j, x, r in zip(alphas, jstars, xstars, risks)
        ))


def default_alpha_grid(alpha: float, count: int = 50) -> np.ndarray:
    """``count`` geometric thresholds on ``[max(1e-4, alpha/100), min(0.999, 3 alpha)]`` plus ``alpha``."""
    alpha = _check_alpha(alpha)
    lo = max(1e-4, alpha / 100.0)
    hi = min(0.999, max(3.0 * alpha, lo * 10.0))
    grid = np.geomspace(lo, hi, count)
    return np.unique(np.concatenate([grid, [alpha]]))


def monotone_repair(entries: Sequence[FrontierEntry]) -> list[FrontierEntry]:
    """Clamp the optimal values to be non-increasing in the threshold.

    An entry worse than its predecessor is replaced by the predecessor's
    solution (which is feasible at the larger threshold too).
    """
    out: list[FrontierEntry] = []
    for e in entries:
        if out and e.jstar > out[-1].jstar:
            prev = out[-1]
            e = FrontierEntry(e.alpha_tilde, prev.jstar, prev.xstar, prev.risk)
        out.append(e)
    return out


def build_frontier(
    problem: ProblemInstance,
    alpha_grid,
    D,
    sp: SmoothingParams = SmoothingParams(),
    cfg: SolverConfig = SolverConfig(),
    stop_at_infeasible: bool = False,
) -> Frontier:
    """Solve the deterministic problem at every threshold of ``alpha_grid``.

    Infeasible thresholds are dropped with a ``RuntimeWarning``. With
    ``stop_at_infeasible`` the grid is swept from the largest threshold down
    and every threshold below the first infeasible one is dropped unsolved;
    the feasible sets shrink with the threshold, so this mainly saves the
    cost of solver runs that cannot succeed. The kept entries do not depend
    on the worker count.
    """
    grid = np.asarray(alpha_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
        raise ValueError("alpha_grid must be strictly increasing within [0, 1]")
    D = _samples(D)

    def solve(a):
        return solve_deterministic(problem, a, D, sp, cfg)

    if stop_at_infeasible:
        order = grid[::-1]
        results: list = []
        batch = worker_count()
        for k in range(0, order.size, batch):
            results.extend(ordered_map(solve, order[k : k + batch]))
            if not all(r.feasible for r in results):
                break
        cut = next((i for i, r in enumerate(results) if not r.feasible), len(results))
        if cut < order.size:
            warnings.warn(
                f"frontier infeasible at alpha={order[cut]:g}; {order.size - cut} smaller thresholds dropped",
                RuntimeWarning, stacklevel=2,
            )
        pairs = list(zip(order[:cut], results[:cut]))[::-1]
    else:
        pairs = list(zip(grid, ordered_map(solve, grid)))
    entries = []
    for a, res in pairs:
        if not res.feasible:
            warnings.warn(f"frontier entry at alpha={a:g} infeasible; dropped", RuntimeWarning, stacklevel=2)
            continue
        risk = max(0.0, 1.0 - res.extra["smooth_prob"])
        entries.append(FrontierEntry(float(a), res.objective_value, res.point.copy(), risk))
    return Frontier(tuple(monotone_repair(entries)))


def mix_from_frontier(frontier: Frontier, alpha: float) -> PolicyReport:
    """Cheapest mixture of at most two frontier entries with mean threshold ``<= alpha``.

    Each entry enters at ``level = min(alpha_tilde, risk)``. Pairs
    ``level_i <= alpha <= level_j`` get weight ``nu = (alpha - level_i) /
    (level_j - level_i)`` on ``j``; single entries with ``level <= alpha`` are
    also candidates.
    """
    alpha = _check_alpha(alpha)
    entries = frontier.entries
    levels = [e.level for e in entries]
    best = None
    for i, e in enumerate(entries):
        if levels[i] <= alpha and (best is None or e.jstar < best[0]):
            best = (e.jstar, i, i, 0.0)
    for i, ei in enumerate(entries):
        if levels[i] > alpha:
            continue
        for j, ej in enumerate(entries):
            if levels[j] < alpha or levels[j] <= levels[i]:
                continue
            nu = (alpha - levels[i]) / (levels[j] - levels[i])
            val = (1.0 - nu) * ei.jstar + nu * ej.jstar
            if val < best[0]:
                best = (val, i, j, nu)
    if best is None:
        raise InfeasibleError(f"no frontier entry with threshold <= {alpha}")
    val, i, j, nu = best
    policy = TwoPointPolicy(1.0 - nu, entries[i].xstar, entries[j].xstar)
    mean_level = (1.0 - nu) * levels[i] + nu * levels[j]
    result = SolveResult(
        np.concatenate([[policy.mu1], policy.x1, policy.x2]), val, 0.0, True, 0, len(entries),
        extra={"feasible": True},
    )
    return PolicyReport(
        policy, val, alpha - mean_level, result,
        extra={"pair": (i, j), "nu": nu, "mean_threshold": mean_level},
    )
