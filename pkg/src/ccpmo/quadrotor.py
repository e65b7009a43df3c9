"""Planar quadrotor with uncertain mass and quadratic drag, planned open loop.

State ``s = (p_x, v_x, p_y, v_y)``; input ``u_t = (u_x, u_y)``. One step is

    s_{t+1} = A s_t + B(m) u_t + d(s_t, phi) + w_t

with a double-integrator ``A``, ``B(m) = B(1) / m``, drag
``d = -phi (dt^2 |v_x| v_x / 2, dt |v_x| v_x, dt^2 |v_y| v_y / 2, dt |v_y| v_y)``
and Gaussian ``w_t``. The uncertainty vector is ``xi = (m, phi, w_1, ..., w_N)``
with ``m`` and ``phi`` held fixed over the horizon.

The decision is the stacked input ``u = (u_0x, u_0y, u_1x, ..., u_{N-1}y)``.
The trajectory succeeds when ``s_1 .. s_{N-1}`` avoid every obstacle and
``s_N`` lies in the goal disc with both speeds within the velocity tolerance.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .problem import (
    ConstraintFamily,
    DecisionDomain,
    Normal,
    ProblemError,
    ProblemInstance,
    ScaledBeta,
    UncertaintyModel,
)

# explicit-Euler drag blows up for |v| > 2 / (phi dt). Past this speed the next
# step diverges for any admissible input, so the sample is frozen there: the
# batch stays finite and the sample fails the goal test
DIVERGENCE_SPEED = 50.0

DEFAULT_OBSTACLES = (
    ((3.0, 2.0), (5.0, 2.0), (5.0, 6.0), (3.0, 6.0)),
    ((6.0, 6.5), (8.5, 6.5), (8.5, 10.0), (6.0, 10.0)),
)


def _polygon(vertices) -> tuple[tuple[float, float], ...]:
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
        raise ProblemError("obstacle polygons need at least three (x, y) vertices")
    edges = np.roll(verts, -1, axis=0) - verts
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    if np.any(cross <= 0):
        raise ProblemError("obstacle polygons must be convex, non-degenerate and counterclockwise")
    return tuple((float(a), float(b)) for a, b in verts)


def _beta_from_dict(d) -> ScaledBeta:
    if isinstance(d, ScaledBeta):
        return d
    return ScaledBeta(float(d["a"]), float(d["b"]), float(d.get("offset", 0.0)), float(d.get("scale", 1.0)))


@dataclass(frozen=True)
class QuadrotorParams:
    dt: float = 1.0
    horizon: int = 10
    mass_dist: ScaledBeta = ScaledBeta(2.0, 2.0, 0.75, 0.5)
    drag_dist: ScaledBeta = ScaledBeta(2.0, 5.0, 0.4, 0.2)
    noise_cov_diag: tuple[float, ...] = (0.01, 0.75, 0.01, 0.75)
    start: tuple[float, ...] = (-0.5, 0.0, -0.5, 0.0)
    goal_center: tuple[float, float] = (10.0, 10.0)
    goal_radius: float = 2.0
    obstacles: tuple = DEFAULT_OBSTACLES
    input_box: tuple = ((-20.0, 20.0), (-20.0, 20.0))
    velocity_tolerance: float = 1.0

    def __post_init__(self):
        if self.horizon < 2:
            raise ProblemError("horizon must be >= 2")
        if not self.dt > 0:
            raise ProblemError("dt must be positive")
        if self.mass_dist.offset <= 0:
            raise ProblemError("mass support must be positive")
        if len(self.noise_cov_diag) != 4 or min(self.noise_cov_diag) < 0:
            raise ProblemError("noise_cov_diag needs four non-negative entries")
        if len(self.start) != 4:
            raise ProblemError("start state needs four entries")
        if not self.goal_radius > 0 or self.velocity_tolerance < 0:
            raise ProblemError("goal radius must be > 0 and velocity tolerance >= 0")
        box = np.asarray(self.input_box, dtype=float)
        if box.shape == (2,):
            box = np.vstack([box, box])
        if box.shape != (2, 2) or np.any(box[:, 0] > box[:, 1]):
            raise ProblemError("input_box must be [lo, hi] or [[lo_x, hi_x], [lo_y, hi_y]]")
        object.__setattr__(self, "input_box", tuple(map(tuple, box.tolist())))
        object.__setattr__(self, "obstacles", tuple(_polygon(p) for p in self.obstacles))
        object.__setattr__(self, "noise_cov_diag", tuple(float(v) for v in self.noise_cov_diag))
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "goal_center", tuple(float(v) for v in self.goal_center))

    @property
    def xi_dim(self) -> int:
        return 2 + 4 * self.horizon

    @property
    def n_inputs(self) -> int:
        return 2 * self.horizon

    @classmethod
    def from_dict(cls, d: dict) -> "QuadrotorParams":
        """Parse the JSON config layout documented in ``docs/config.md``; missing keys take defaults."""
        kw: dict = {}
        for key in ("dt", "horizon", "input_box", "noise_cov_diag", "start", "obstacles"):
            if key in d:
                kw[key] = d[key]
        if "horizon" in kw:
            kw["horizon"] = int(kw["horizon"])
        goal = d.get("goal", {})
        if "center" in goal:
            kw["goal_center"] = tuple(goal["center"])
        if "radius" in goal:
            kw["goal_radius"] = float(goal["radius"])
        if "v_tol" in goal:
            kw["velocity_tolerance"] = float(goal["v_tol"])
        if "mass" in d:
            kw["mass_dist"] = _beta_from_dict(d["mass"])
        if "drag" in d:
            kw["drag_dist"] = _beta_from_dict(d["drag"])
        return cls(**kw)

    def to_dict(self) -> dict:
        beta = lambda b: {"a": b.a, "b": b.b, "offset": b.offset, "scale": b.scale}  # noqa: E731
        return {
            "dt": self.dt,
            "horizon": self.horizon,
            "obstacles": [[list(v) for v in poly] for poly in self.obstacles],
            "goal": {"center": list(self.goal_center), "radius": self.goal_radius, "v_tol": self.velocity_tolerance},
            "input_box": [list(b) for b in self.input_box],
            "noise_cov_diag": list(self.noise_cov_diag),
            "start": list(self.start),
            "mass": beta(self.mass_dist),
            "drag": beta(self.drag_dist),
        }


def uncertainty_model(params: QuadrotorParams) -> UncertaintyModel:
    noise = tuple(Normal(0.0, v) for v in params.noise_cov_diag) * params.horizon
    return UncertaintyModel((params.mass_dist, params.drag_dist) + noise)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def _split_xi(params: QuadrotorParams, xi: np.ndarray):
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != params.xi_dim:
        raise ProblemError(f"xi must have {params.xi_dim} entries, got {xi.shape[1]}")
    return xi[:, 0], xi[:, 1], xi[:, 2:].reshape(xi.shape[0], params.horizon, 4)


def _check_u(params: QuadrotorParams, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != params.n_inputs:
        raise ProblemError(f"u must have {params.n_inputs} entries, got {u.size}")
    return u


def rollout(params: QuadrotorParams, u, xi) -> np.ndarray:
    """States ``s_1 .. s_N`` for one realization, shape ``(N, 4)``.

    Raises :class:`ProblemError` if the drag recursion diverges to a non-finite state.
    """
    u = _check_u(params, u).reshape(params.horizon, 2)
    m, phi, w = _split_xi(params, np.asarray(xi, dtype=float).reshape(1, -1))
    m, phi, w = float(m[0]), float(phi[0]), w[0]
    if not m > 0:
        raise ProblemError("mass must be positive")
    dt = params.dt
    s = np.array(params.start, dtype=float)
    out = np.empty((params.horizon, 4))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(params.horizon):
            px, vx, py, vy = s
            ax, ay = u[t] / m
            dx, dy = -phi * abs(vx) * vx, -phi * abs(vy) * vy
            s = np.array([
                px + dt * vx + 0.5 * dt * dt * (ax + dx),
                vx + dt * (ax + dx),
                py + dt * vy + 0.5 * dt * dt * (ay + dy),
                vy + dt * (ay + dy),
            ]) + w[t]
            if not np.all(np.isfinite(s)):
                raise ProblemError(f"state diverged at step {t + 1} (drag recursion unstable)")
            out[t] = s
    return out


@dataclass
class BatchRollout:
    """States ``(M, N+1, 4)`` including ``s_0``, and their input sensitivities ``(M, N+1, 4, 2N)``."""

    states: np.ndarray
    sens: np.ndarray | None
    diverged: np.ndarray


def batch_rollout(params: QuadrotorParams, u, xi, sensitivities: bool = True) -> BatchRollout:
    """Vectorized rollout over uncertainty rows, with forward sensitivities ``ds_t / du``."""
    u = _check_u(params, u).reshape(params.horizon, 2)
    m, phi, w = _split_xi(params, xi)
    if np.any(m <= 0):
        raise ProblemError("mass must be positive")
    M, N, dt = m.size, params.horizon, params.dt
    states = np.empty((M, N + 1, 4))
    states[:, 0] = params.start
    sens = np.zeros((M, N + 1, 4, 2 * N)) if sensitivities else None
    diverged = np.zeros(M, dtype=bool)
    inv_m = 1.0 / m
    half = 0.5 * dt * dt
    for t in range(N):
        s = states[:, t]
        vx, vy = s[:, 1], s[:, 3]
        ax = u[t, 0] * inv_m - phi * np.abs(vx) * vx
        ay = u[t, 1] * inv_m - phi * np.abs(vy) * vy
        nxt = np.column_stack([
            s[:, 0] + dt * vx + half * ax,
            vx + dt * ax,
            s[:, 2] + dt * vy + half * ay,
            vy + dt * ay,
        ]) + w[:, t]
        nxt[diverged] = s[diverged]
        states[:, t + 1] = nxt
        if sensitivities:
            G = sens[:, t]
            Gn = np.empty_like(G)
            # d(next)/d(state): double integrator plus drag slope -2 phi |v|
            kx = (-2.0 * phi * np.abs(vx))[:, None]
            ky = (-2.0 * phi * np.abs(vy))[:, None]
            Gn[:, 0] = G[:, 0] + (dt + half * kx) * G[:, 1]
            Gn[:, 1] = (1.0 + dt * kx) * G[:, 1]
            Gn[:, 2] = G[:, 2] + (dt + half * ky) * G[:, 3]
            Gn[:, 3] = (1.0 + dt * ky) * G[:, 3]
            Gn[:, 0, 2 * t] += half * inv_m
            Gn[:, 1, 2 * t] += dt * inv_m
            Gn[:, 2, 2 * t + 1] += half * inv_m
            Gn[:, 3, 2 * t + 1] += dt * inv_m
            Gn[diverged] = G[diverged]
            sens[:, t + 1] = Gn
        diverged |= (np.abs(nxt[:, 1]) > DIVERGENCE_SPEED) | (np.abs(nxt[:, 3]) > DIVERGENCE_SPEED)
    return BatchRollout(states, sens, diverged)


# ---------------------------------------------------------------------------
# Geometry and margins
# ---------------------------------------------------------------------------


def polygon_signed_depth(poly, points) -> tuple[np.ndarray, np.ndarray]:
    """Signed penetration depth of ``points`` (shape ``(K, 2)``) into a convex polygon.

    Positive inside (distance to the nearest edge), negative outside (minus the
    Euclidean distance to the polygon), zero on the boundary. Also returns the
    gradient with respect to the point, shape ``(K, 2)``.
    """
    V = np.asarray(poly, dtype=float)
    P = np.atleast_2d(np.asarray(points, dtype=float))
    E = np.roll(V, -1, axis=0) - V
    len2 = E[:, 0] ** 2 + E[:, 1] ** 2
    normals = np.column_stack([E[:, 1], -E[:, 0]]) / np.sqrt(len2)[:, None]  # outward for CCW
    rx = P[:, 0, None] - V[None, :, 0]  # (K, E)
    ry = P[:, 1, None] - V[None, :, 1]
    signed = rx * normals[:, 0] + ry * normals[:, 1]  # > 0 outside that edge
    inside = np.all(signed <= 0, axis=1)
    # outside: distance to each edge segment
    t = np.clip((rx * E[:, 0] + ry * E[:, 1]) / len2, 0.0, 1.0)
    dx = rx - t * E[:, 0]
    dy = ry - t * E[:, 1]
    dist = np.sqrt(dx * dx + dy * dy)
    rows = np.arange(P.shape[0])
    k_out = np.argmin(dist, axis=1)
    k_in = np.argmax(signed, axis=1)  # nearest edge from inside
    d_out = dist[rows, k_out]
    depth = np.where(inside, -signed[rows, k_in], -d_out)
    safe = np.where(d_out > 0, d_out, 1.0)
    grad_out = -np.column_stack([dx[rows, k_out], dy[rows, k_out]]) / safe[:, None]
    grad_out[d_out == 0] = -normals[k_out[d_out == 0]]
    grad = np.where(inside[:, None], -normals[k_in], grad_out)
    return depth, grad


def n_components(params: QuadrotorParams) -> int:
    return (params.horizon - 1) * len(params.obstacles) + 3


def _components(params: QuadrotorParams, br: BatchRollout, with_grad: bool):
    """Constraint components ``(M, m)`` and optionally their Jacobians ``(M, m, 2N)``."""
    S = br.states
    M, N = S.shape[0], params.horizon
    m = n_components(params)
    vals = np.empty((M, m))
    jac = np.zeros((M, m, 2 * N)) if with_grad else None
    col = 0
    mid = S[:, 1:N][:, :, [0, 2]].reshape(-1, 2)  # positions s_1 .. s_{N-1}
    for poly in params.obstacles:
        depth, g = polygon_signed_depth(poly, mid)
        vals[:, col : col + N - 1] = depth.reshape(M, N - 1)
        if with_grad:
            g = g.reshape(M, N - 1, 2)
            dp = br.sens[:, 1:N][:, :, [0, 2], :]  # (M, N-1, 2, 2N)
            jac[:, col : col + N - 1] = np.einsum("mtd,mtdk->mtk", g, dp)
        col += N - 1
    final = S[:, N]
    off = final[:, [0, 2]] - np.asarray(params.goal_center)
    r = np.linalg.norm(off, axis=1)
    vtol = params.velocity_tolerance
    vals[:, col] = r - params.goal_radius
    vals[:, col + 1] = np.abs(final[:, 1]) - vtol
    vals[:, col + 2] = np.abs(final[:, 3]) - vtol
    if with_grad:
        G = br.sens[:, N]
        unit = off / np.where(r > 0, r, 1.0)[:, None]
        jac[:, col] = unit[:, 0, None] * G[:, 0] + unit[:, 1, None] * G[:, 2]
        jac[:, col + 1] = np.sign(final[:, 1])[:, None] * G[:, 1]
        jac[:, col + 2] = np.sign(final[:, 3])[:, None] * G[:, 3]
    return vals, jac


def margin(params: QuadrotorParams, trajectory) -> float:
    """Signed success margin of ``s_1 .. s_N`` (shape ``(N, 4)``); ``<= 0`` iff the trajectory succeeds."""
    traj = np.asarray(trajectory, dtype=float)
    if traj.shape != (params.horizon, 4):
        raise ProblemError(f"trajectory must have shape {(params.horizon, 4)}")
    states = np.vstack([np.asarray(params.start)[None, :], traj])[None]
    vals, _ = _components(params, BatchRollout(states, None, np.zeros(1, bool)), False)
    return float(vals.max())


def succeeded(params: QuadrotorParams, trajectory) -> bool:
    """Direct event check: no obstacle hit on ``s_1 .. s_{N-1}`` and ``s_N`` in the goal set."""
    traj = np.asarray(trajectory, dtype=float)
    for p in traj[:-1, [0, 2]]:
        for poly in params.obstacles:
            V = np.asarray(poly)
            E = np.roll(V, -1, axis=0) - V
            cross = E[:, 0] * (p[1] - V[:, 1]) - E[:, 1] * (p[0] - V[:, 0])
            if np.all(cross >= 0):
                return False
    px, vx, py, vy = traj[-1]
    in_disc = np.hypot(px - params.goal_center[0], py - params.goal_center[1]) <= params.goal_radius
    tol = params.velocity_tolerance
    return bool(in_disc and abs(vx) <= tol and abs(vy) <= tol)


def stage_cost(params: QuadrotorParams, u, br: BatchRollout, with_grad: bool):
    """Realized ``l^s + l^u`` per row, and optionally its gradient ``(M, 2N)``."""
    u = np.asarray(u, dtype=float)
    N = params.horizon
    pos = br.states[:, :, [0, 2]]
    step = np.diff(pos, axis=1)  # (M, N, 2)
    cost = np.sum(step**2, axis=(1, 2)) / N + 0.1 / N * float(u @ u)
    if not with_grad:
        return cost, None
    dpos = br.sens[:, :, [0, 2], :]
    dstep = np.diff(dpos, axis=1)  # (M, N, 2, 2N)
    grad = 2.0 / N * np.einsum("mtd,mtdk->mk", step, dstep) + 0.2 / N * u[None, :]
    return cost, grad


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------


class _RolloutCache(threading.local):
    """Last few rollouts per thread, keyed by sample-array identity and input."""

    size = 4

    def __init__(self):
        self.entries: list = []


def _cached(params: QuadrotorParams, cache: _RolloutCache, u, xi) -> BatchRollout:
    for xi_ref, u_ref, br in cache.entries:
        if xi_ref is xi and np.array_equal(u_ref, u):
            return br
    br = batch_rollout(params, u, xi)
    # the entry keeps xi alive, so its identity cannot be reused by another array
    cache.entries = [(xi, np.array(u, dtype=float), br)] + cache.entries[: cache.size - 1]
    return br


def mean_realization(params: QuadrotorParams) -> np.ndarray:
    """``xi`` with mean mass and drag and zero process noise."""
    mean_beta = lambda b: b.offset + b.scale * b.a / (b.a + b.b)  # noqa: E731
    return np.concatenate([[mean_beta(params.mass_dist), mean_beta(params.drag_dist)], np.zeros(4 * params.horizon)])


@lru_cache(maxsize=8)
def nominal_plan(params: QuadrotorParams, clearance: float = 1.5, goal_slack: float = 0.05) -> np.ndarray:
    """Cheapest noise-free input (mean mass and drag) that stays ``clearance`` away from
    every obstacle and stops within ``goal_slack`` of the goal centre.

    Used as a warm start: random inputs in the box almost never produce a
    trajectory that ends near the goal, where the smoothed probability has
    no gradient to follow.
    """
    from .nlp import NlpProblem, SolverConfig, minimize

    xi = mean_realization(params)[None, :]
    lo = np.tile([b[0] for b in params.input_box], params.horizon)
    hi = np.tile([b[1] for b in params.input_box], params.horizon)
    cache = _RolloutCache()
    memo: dict = {}

    def parts(u):
        key = u.tobytes()
        if key not in memo:
            memo.clear()
            br = _cached(params, cache, u, xi)
            memo[key] = (br, _components(params, br, True))
        return memo[key]

    def obj(u):
        br, _ = parts(u)
        c, g = stage_cost(params, u, br, True)
        return float(c[0]), g[0]

    m = n_components(params)
    shift = np.full(m, clearance)
    shift[m - 3] = params.goal_radius - goal_slack
    shift[m - 2 :] = params.velocity_tolerance

    def con(k):
        def f(u):
            _, (vals, jac) = parts(u)
            return float(vals[0, k]) + shift[k], jac[0, k]

        return f

    # straight-line start that undershoots the goal: zero input stalls at s_0
    cfg = SolverConfig(multistarts=0, max_iterations=500, outer_iterations=8, kkt_tolerance=1e-3, feasibility_tolerance=1e-4)
    nlp = NlpProblem(lo.size, obj, lo, hi, [con(k) for k in range(n_components(params))])
    start = np.zeros(lo.size)
    start[0:2] = 1.0
    start[-2:] = -1.0
    res = minimize(nlp, cfg, [start])
    out = res.point
    out.setflags(write=False)
    return out


def make_problem(params: QuadrotorParams = QuadrotorParams()) -> ProblemInstance:
    """Chance-constrained open-loop planning problem over ``u`` in the input box."""
    cache = _RolloutCache()

    def evaluate(u, xi):
        return _components(params, _cached(params, cache, u, xi), False)[0]

    def gradient(u, xi):
        return _components(params, _cached(params, cache, u, xi), True)[1]

    def cost(u, xi):
        return stage_cost(params, u, _cached(params, cache, u, xi), False)[0]

    def cost_grad(u, xi):
        return stage_cost(params, u, _cached(params, cache, u, xi), True)[1]

    lo = np.tile([b[0] for b in params.input_box], params.horizon)
    hi = np.tile([b[1] for b in params.input_box], params.horizon)
    return ProblemInstance(
        name="quadrotor",
        domain=DecisionDomain(lo, hi),
        constraints=ConstraintFamily(evaluate, n_components(params), gradient),
        uncertainty=uncertainty_model(params),
        stage_cost=cost,
        stage_cost_grad=cost_grad,
        metadata={
            "params": params,
            "warm_start": lambda: nominal_plan(params),
            # Halton starts in the input box essentially never end near the
            # goal, so the warm start alone seeds the search, on a budget
            "solver_defaults": {
                "multistarts": 0,
                "outer_iterations": 10,
                "max_iterations": 200,
                "max_evaluations": 1500,
            },
        },
    )
