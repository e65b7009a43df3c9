"""Decision domains, uncertainty models and chance-constrained problem instances.

A problem bundles a box-shaped decision domain, an objective, a vector
constraint family ``h(x, xi)`` whose components must all be non-positive,
and an independent-component uncertainty model for ``xi``.

Constraint callables are vectorized over samples: ``evaluate(x, xi)`` takes
``x`` of shape ``(n,)`` and ``xi`` of shape ``(N, s)`` and returns ``(N, m)``.

The continuity of the satisfaction probability requires that, for every
``x``, the set of ``xi`` with ``max_i h_i(x, xi) == 0`` has probability zero.
This cannot be checked for black-box constraints; it is the caller's
responsibility when registering a problem.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.special import ndtr

FD_RELATIVE_STEP = 1e-6


class ProblemError(ValueError):
    """Invalid problem data or evaluation failure."""


# ---------------------------------------------------------------------------
# Domain and uncertainty
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecisionDomain:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ProblemError("domain bounds must be 1-d vectors of equal length >= 1")
        if not np.all(lo < hi):
            raise ProblemError("domain requires lower < upper in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class Normal:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ProblemError("Normal variance must be positive")

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(count)


@dataclass(frozen=True)
class ScaledBeta:
    """``offset + scale * Beta(a, b)``."""

    a: float
    b: float
    offset: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.scale > 0):
            raise ProblemError("ScaledBeta requires a, b, scale > 0")

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.offset + self.scale * rng.beta(self.a, self.b, count)


@dataclass(frozen=True)
class PointMass:
    value: float

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return np.full(count, float(self.value))


Component = Normal | ScaledBeta | PointMass


@dataclass(frozen=True)
class UncertaintyModel:
    """Mutually independent scalar components; ``xi[k]`` follows ``components[k]``."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ProblemError("uncertainty model needs at least one component")
        for c in comps:
            if not isinstance(c, (Normal, ScaledBeta, PointMass)):
                raise ProblemError(f"unsupported component {c!r}")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return len(self.components)


def sample_uncertainty(model: UncertaintyModel, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` independent samples of ``xi`` as an array of shape ``(count, s)``.

    The generator is numpy's PCG64 (``np.random.default_rng(seed)``); components
    are drawn column by column in model order, so a given
    ``(model, count, seed)`` triple always yields the same array.
    """
    if int(count) < 1:
        raise ProblemError("count must be >= 1")
    count = int(count)
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    out = np.empty((count, model.dim))
    for k, comp in enumerate(model.components):
        out[:, k] = comp.draw(rng, count)
    return out


# ---------------------------------------------------------------------------
# Constraints and problem instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintFamily:
    """Vector constraint ``h(x, xi) <= 0`` (componentwise).

    ``evaluate(x, xi)`` maps ``(n,)`` and ``(N, s)`` to ``(N, m)``.
    ``gradient_x(x, xi)`` optionally returns the Jacobians, shape ``(N, m, n)``;
    without it, central finite differences are used.
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    m: int
    gradient_x: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ProblemError("constraint family needs m >= 1")


@dataclass(frozen=True)
class ProblemInstance:
    """A chance-constrained problem ``min J(x) s.t. Pr{max_i h_i(x, xi) <= 0} >= 1 - alpha``.

    Either ``objective`` (deterministic ``J(x)``) or ``stage_cost`` (realized
    cost ``c(x, xi)`` per sample, with ``J(x) = E c(x, xi)``) must be given.
    Problems with a stage cost are optimized against the sample average over
    the same sample set used for the constraints.
    """

    name: str
    domain: DecisionDomain
    constraints: ConstraintFamily
    uncertainty: UncertaintyModel
    objective: Callable[[np.ndarray], float] | None = None
    objective_grad: Callable[[np.ndarray], np.ndarray] | None = None
    stage_cost: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    stage_cost_grad: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    oracle_P: Callable[[np.ndarray], float] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective is None and self.stage_cost is None:
            raise ProblemError("problem needs an objective or a stage cost")

    @property
    def dim(self) -> int:
        return self.domain.dim


def _fd_step(x: np.ndarray) -> np.ndarray:
    return FD_RELATIVE_STEP * (1.0 + np.abs(x))


def _check_x(problem: ProblemInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.dim:
        raise ProblemError(f"x has dimension {x.size}, problem expects {problem.dim}")
    return x


def _check_xi(problem: ProblemInstance, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi[None, :]
    if xi.ndim != 2 or xi.shape[1] != problem.uncertainty.dim:
        raise ProblemError(
            f"xi must have {problem.uncertainty.dim} columns, got shape {xi.shape}"
        )
    return xi


def constraint_values(problem: ProblemInstance, x, xi) -> np.ndarray:
    """All constraint components, shape ``(N, m)``."""
    x = _check_x(problem, x)
    xi = _check_xi(problem, xi)
    vals = np.asarray(problem.constraints.evaluate(x, xi), dtype=float)
    if vals.shape != (xi.shape[0], problem.constraints.m):
        raise ProblemError(
            f"constraint returned shape {vals.shape}, expected {(xi.shape[0], problem.constraints.m)}"
        )
    if not np.all(np.isfinite(vals)):
        raise ProblemError(f"non-finite constraint value at x={x.tolist()}")
    return vals


def hbar_batch(problem: ProblemInstance, x, xi) -> np.ndarray:
    """Max-aggregated constraint for each sample row, shape ``(N,)``."""
    return constraint_values(problem, x, xi).max(axis=1)


def eval_hbar(problem: ProblemInstance, x, xi) -> float:
    """``max_i h_i(x, xi)`` for a single uncertainty realization."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1:
        raise ProblemError("eval_hbar takes a single xi vector")
    return float(hbar_batch(problem, x, xi)[0])


def constraint_jacobian(problem: ProblemInstance, x, xi) -> np.ndarray:
    """Jacobians of all components w.r.t. ``x``, shape ``(N, m, n)``."""
    x = _check_x(problem, x)
    xi = _check_xi(problem, xi)
    if problem.constraints.gradient_x is not None:
        return np.asarray(problem.constraints.gradient_x(x, xi), dtype=float)
    h = _fd_step(x)
    jac = np.empty((xi.shape[0], problem.constraints.m, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        jac[:, :, i] = (
            constraint_values(problem, x + e, xi) - constraint_values(problem, x - e, xi)
        ) / (2 * h[i])
    return jac


def hbar_and_grad(problem: ProblemInstance, x, xi) -> tuple[np.ndarray, np.ndarray]:
    """``hbar`` per sample and the gradient of the active (argmax) component.

    Ties are broken by the lowest component index.
    """
    vals = constraint_values(problem, x, xi)
    jac = constraint_jacobian(problem, x, xi)
    if vals.shape[1] == 1:
        return vals[:, 0], jac[:, 0, :]
    active = np.argmax(vals, axis=1)
    rows = np.arange(vals.shape[0])
    return vals[rows, active], jac[rows, active, :]


def objective_value(problem: ProblemInstance, x, samples=None) -> float:
    """``J(x)``; stage-cost problems average over ``samples``."""
    x = _check_x(problem, x)
    if problem.stage_cost is not None:
        if samples is None:
            raise ProblemError(f"{problem.name}: stage-cost objective needs samples")
        val = float(np.mean(problem.stage_cost(x, _check_xi(problem, samples))))
    else:
        val = float(problem.objective(x))
    if not math.isfinite(val):
        raise ProblemError(f"non-finite objective at x={x.tolist()}")
    return val


def objective_gradient(problem: ProblemInstance, x, samples=None) -> np.ndarray:
    x = _check_x(problem, x)
    if problem.stage_cost is not None and problem.stage_cost_grad is not None:
        xi = _check_xi(problem, samples)
        return np.mean(np.asarray(problem.stage_cost_grad(x, xi)), axis=0)
    if problem.stage_cost is None and problem.objective_grad is not None:
        return np.asarray(problem.objective_grad(x), dtype=float).reshape(-1)
    h = _fd_step(x)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (
            objective_value(problem, x + e, samples) - objective_value(problem, x - e, samples)
        ) / (2 * h[i])
    return g


def realized_costs(problem: ProblemInstance, x, xi) -> np.ndarray:
    """Cost actually incurred for each uncertainty row (``J(x)`` if deterministic)."""
    x = _check_x(problem, x)
    xi = _check_xi(problem, xi)
    if problem.stage_cost is not None:
        return np.asarray(problem.stage_cost(x, xi), dtype=float)
    return np.full(xi.shape[0], float(problem.objective(x)))


# ---------------------------------------------------------------------------
# Closed-form probability
# ---------------------------------------------------------------------------


def std_normal_cdf(z):
    """Standard normal CDF (Cephes ``ndtr``; absolute error well below 1e-15)."""
    return ndtr(z)


def true_probability(problem: ProblemInstance, x) -> float | None:
    """Closed-form ``Pr{hbar(x, xi) <= 0}``, or ``None`` when no oracle is registered."""
    if problem.oracle_P is None:
        return None
    p = float(problem.oracle_P(_check_x(problem, x)))
    return min(1.0, max(0.0, p))


# ---------------------------------------------------------------------------
# Built-in instances
# ---------------------------------------------------------------------------

EXAMPLE1_OFFSET = 1.4


def _linear_h(x, xi):
    return (x[0] - EXAMPLE1_OFFSET + xi[:, 0])[:, None]


def _linear_h_grad(x, xi):
    return np.ones((xi.shape[0], 1, 1))


def _linear_oracle(model: UncertaintyModel):
    comp = model.components[0]
    if isinstance(comp, Normal):
        sd = math.sqrt(comp.variance)
        return lambda x: float(std_normal_cdf((EXAMPLE1_OFFSET - x[0] - comp.mean) / sd))
    if isinstance(comp, PointMass):
        return lambda x: 1.0 if x[0] - EXAMPLE1_OFFSET + comp.value <= 0 else 0.0
    return None


def _linear_instance(name, objective, objective_grad, domain=None, uncertainty=None):
    domain = domain or DecisionDomain(np.array([-2.0]), np.array([2.0]))
    uncertainty = uncertainty or UncertaintyModel((Normal(0.0, 1.0),))
    if domain.dim != 1 or uncertainty.dim != 1:
        raise ProblemError(f"{name} is one-dimensional in both x and xi")
    return ProblemInstance(
        name=name,
        domain=domain,
        constraints=ConstraintFamily(_linear_h, 1, _linear_h_grad),
        uncertainty=uncertainty,
        objective=objective,
        objective_grad=objective_grad,
        oracle_P=_linear_oracle(uncertainty),
    )


def example1(domain=None, uncertainty=None) -> ProblemInstance:
    """``J(x) = -(x + 0.6)^2 + 2``, ``h = x - 1.4 + xi``, ``xi ~ N(0, 1)`` on ``[-2, 2]``."""
    return _linear_instance(
        "example1",
        lambda x: float(-((x[0] + 0.6) ** 2) + 2.0),
        lambda x: np.array([-2.0 * (x[0] + 0.6)]),
        domain,
        uncertainty,
    )


def linear1d(domain=None, uncertainty=None) -> ProblemInstance:
    """Same constraint as :func:`example1` with ``J(x) = -x``."""
    return _linear_instance(
        "linear1d", lambda x: float(-x[0]), lambda x: np.array([-1.0]), domain, uncertainty
    )


def _quadrotor(domain=None, uncertainty=None, **kwargs):
    from .quadrotor import QuadrotorParams, make_problem

    params = QuadrotorParams.from_dict(kwargs.get("quadrotor", {}))
    return make_problem(params)


REGISTRY: dict[str, Callable[..., ProblemInstance]] = {
    "example1": example1,
    "linear1d": linear1d,
    "quadrotor": _quadrotor,
}


def register_problem(name: str, factory: Callable[..., ProblemInstance]) -> None:
    """Make a custom problem factory available to config files and the CLI."""
    REGISTRY[name] = factory


def builtin(name: str, **kwargs) -> ProblemInstance:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ProblemError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**kwargs)


_COMPONENT_KINDS = {"normal": Normal, "scaled_beta": ScaledBeta, "beta": ScaledBeta, "point_mass": PointMass}


def component_from_dict(d: dict):
    kind = str(d.get("kind", "")).lower()
    try:
        cls = _COMPONENT_KINDS[kind]
    except KeyError:
        raise ProblemError(f"unknown uncertainty kind {d.get('kind')!r}") from None
    params = d.get("params", {})
    return cls(**params) if isinstance(params, dict) else cls(*params)


def problem_from_config(cfg: dict) -> ProblemInstance:
    """Build a problem from a parsed JSON config (see ``docs/config.md``)."""
    name = cfg.get("builtin") or cfg.get("problem")
    if not name:
        raise ProblemError("config needs 'builtin' or 'problem'")
    kwargs: dict[str, Any] = {}
    if "domain" in cfg:
        kwargs["domain"] = DecisionDomain(
            np.asarray(cfg["domain"]["lower"], float), np.asarray(cfg["domain"]["upper"], float)
        )
    if "uncertainty" in cfg:
        kwargs["uncertainty"] = UncertaintyModel(
            tuple(component_from_dict(c) for c in cfg["uncertainty"])
        )
    if "quadrotor" in cfg:
        kwargs["quadrotor"] = cfg["quadrotor"]
    return builtin(name, **kwargs)


def load_problem(path: str | Path) -> ProblemInstance:
    return problem_from_config(json.loads(Path(path).read_text()))
