"""Smoothed indicator and sample-based estimates of the satisfaction probability.

The smoothed indicator is

    Lambda_eps(y) = 1                          for y <= -eps
                  = 1/2 - 3u/4 + u^3/4         for |y| < eps, u = y / eps
                  = 0                          for y >= eps

which is C^1, symmetric (``Lambda(y) + Lambda(-y) = 1``) and strictly
decreasing on the band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ProblemInstance, hbar_and_grad, hbar_batch, sample_uncertainty

SMOOTHING_ID = "cubic-c1:1/2-3u/4+u^3/4"


@dataclass(frozen=True)
class SmoothingParams:
    epsilon: float = 0.01
    gamma: float = 0.01

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")


@dataclass(frozen=True)
class SampleSet:
    """Drawn uncertainty samples, shape ``(N, s)``, and the seed that produced them."""

    samples: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.samples, dtype=float)).copy()
        if arr.shape[0] < 1:
            raise ValueError("sample set must not be empty")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def draw(cls, problem: ProblemInstance, count: int, seed: int) -> "SampleSet":
        return cls(sample_uncertainty(problem.uncertainty, count, seed), seed)


def _check_eps(epsilon: float) -> None:
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")


def smooth_step(y, epsilon: float):
    """``Lambda_eps(y)``; works elementwise on arrays."""
    _check_eps(epsilon)
    u = np.clip(np.asarray(y, dtype=float) / epsilon, -1.0, 1.0)
    out = 0.5 - 0.75 * u + 0.25 * u**3
    return float(out) if np.ndim(out) == 0 else out


def smooth_step_derivative(y, epsilon: float):
    """``Lambda'_eps(y) = -(3 / (4 eps)) (1 - u^2)`` inside the band, 0 outside."""
    _check_eps(epsilon)
    u = np.asarray(y, dtype=float) / epsilon
    out = np.where(np.abs(u) < 1.0, -0.75 / epsilon * (1.0 - u * u), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _samples(D) -> np.ndarray:
    arr = D.samples if isinstance(D, SampleSet) else np.atleast_2d(np.asarray(D, dtype=float))
    if arr.shape[0] < 1:
        raise ValueError("empty sample set")
    return arr


def empirical_prob(problem: ProblemInstance, x, D) -> float:
    """Fraction of samples with ``hbar(x, xi) <= 0``."""
    hb = hbar_batch(problem, x, _samples(D))
    return float(np.count_nonzero(hb <= 0.0)) / hb.size


def _smoothed_mean(y: np.ndarray, epsilon: float) -> tuple[float, np.ndarray]:
    """Mean of ``Lambda_eps(y)`` plus the in-band mask; only band samples hit the cubic."""
    band = np.abs(y) < epsilon
    u = y[band] / epsilon
    total = np.count_nonzero(y <= -epsilon) + np.sum(0.5 - 0.75 * u + 0.25 * u**3)
    return float(total) / y.size, band


def smooth_prob(problem: ProblemInstance, x, D, params: SmoothingParams) -> float:
    """``(1/N) sum_j Lambda_eps(hbar(x, xi_j) + gamma)``."""
    hb = hbar_batch(problem, x, _samples(D))
    return _smoothed_mean(hb + params.gamma, params.epsilon)[0]


def smooth_prob_and_grad(
    problem: ProblemInstance, x, D, params: SmoothingParams
) -> tuple[float, np.ndarray]:
    xi = _samples(D)
    y = hbar_batch(problem, x, xi) + params.gamma
    value, band = _smoothed_mean(y, params.epsilon)
    if not np.any(band):
        return value, np.zeros(problem.dim)
    # only in-band samples have a nonzero weight, so only their gradients are formed
    hb_band, grads = hbar_and_grad(problem, x, xi[band])
    u = (hb_band + params.gamma) / params.epsilon
    weights = -0.75 / params.epsilon * (1.0 - u * u)
    return value, np.asarray(weights @ grads / y.size, dtype=float)


def smooth_prob_grad(problem: ProblemInstance, x, D, params: SmoothingParams) -> np.ndarray:
    """Gradient of :func:`smooth_prob` with respect to ``x``."""
    return smooth_prob_and_grad(problem, x, D, params)[1]


def band_fractions(problem: ProblemInstance, x, D, params: SmoothingParams) -> tuple[float, float]:
    """Fractions of samples that can make the smoothed and empirical estimates differ.

    Returns ``(in_band, shifted)``: samples with ``|hbar + gamma| < eps`` and
    samples with ``hbar`` in ``(-gamma, 0]``. Their sum bounds
    ``|smooth_prob - empirical_prob|``.
    """
    hb = hbar_batch(problem, x, _samples(D))
    in_band = np.count_nonzero(np.abs(hb + params.gamma) < params.epsilon) / hb.size
    shifted = np.count_nonzero((hb > -params.gamma) & (hb <= 0.0)) / hb.size
    return float(in_band), float(shifted)
