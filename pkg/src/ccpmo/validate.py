"""Monte Carlo validation of policies, convergence and feasibility studies, grid oracles."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .nlp import SolverConfig, ordered_map, start_points
from .problem import (
    ProblemError,
    ProblemInstance,
    hbar_batch,
    objective_value,
    realized_costs,
    sample_uncertainty,
    true_probability,
)
from .smoothing import SampleSet, SmoothingParams, smooth_prob
from .solver import (
    SPointPolicy,
    TwoPointPolicy,
    solve_deterministic,
    solve_s_point,
    solve_two_point,
)

Z95 = 1.959963984540054


def derived_seeds(seed: int, count: int) -> list[int]:
    """``count`` independent 64-bit seeds spawned from ``seed``."""
    state = np.random.SeedSequence(int(seed)).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]


# ---------------------------------------------------------------------------
# Monte Carlo validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    expected_cost: float
    cost_ci_halfwidth: float
    violation_probability: float
    violation_ci_halfwidth: float
    trials: int
    seed: int
    violation_ci: tuple[float, float] = (0.0, 1.0)
    ci_method: str = "normal"
    support_counts: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violation_ci"] = list(self.violation_ci)
        return d


def as_policy(policy, problem: ProblemInstance):
    """Wrap a bare decision vector as the degenerate two-point policy ``(1, x, x)``."""
    if isinstance(policy, (TwoPointPolicy, SPointPolicy)):
        return policy
    x = np.asarray(policy, dtype=float).reshape(-1)
    if x.size != problem.dim:
        raise ProblemError(f"decision has dimension {x.size}, problem expects {problem.dim}")
    return TwoPointPolicy.deterministic(x)


def violation_interval(violations: int, trials: int) -> tuple[float, float, str]:
    """95% interval for a violation rate: normal approximation, exact binomial below 10 events."""
    p = violations / trials
    if violations < 10:
        ci = binomtest(violations, trials).proportion_ci(confidence_level=0.95, method="exact")
        return float(ci.low), float(ci.high), "exact-binomial"
    hw = Z95 * math.sqrt(p * (1.0 - p) / trials)
    return max(0.0, p - hw), min(1.0, p + hw), "normal"


@dataclass
class MonteCarloDraws:
    """Raw per-trial outcomes behind a :class:`ValidationReport`."""

    support_index: np.ndarray
    xi: np.ndarray
    costs: np.ndarray
    violated: np.ndarray


def monte_carlo_draws(problem: ProblemInstance, policy, M: int, seed: int) -> MonteCarloDraws:
    """Per trial: draw a support point from the policy and an independent ``xi``; record cost and violation.

    Policy choices and uncertainty use separate streams spawned from ``seed``,
    so the ``xi`` draws are shared by every policy validated under the same seed.
    """
    from .solver import sample_policy_indices

    if M < 100:
        raise ValueError("M must be >= 100")
    policy = as_policy(policy, problem)
    policy_seed, xi_seed = derived_seeds(seed, 2)
    idx = sample_policy_indices(policy, M, policy_seed)
    xi = sample_uncertainty(problem.uncertainty, M, xi_seed)
    costs = np.empty(M)
    violated = np.empty(M, dtype=bool)
    points = np.asarray(policy.points)
    for k in range(points.shape[0]):
        rows = np.flatnonzero(idx == k)
        if rows.size == 0:
            continue
        costs[rows] = realized_costs(problem, points[k], xi[rows])
        violated[rows] = hbar_batch(problem, points[k], xi[rows]) > 0.0
    return MonteCarloDraws(idx, xi, costs, violated)


def monte_carlo_validate(problem: ProblemInstance, policy, M: int, seed: int) -> ValidationReport:
    """Expected cost and violation probability of a policy with 95% confidence halfwidths.

    ``policy`` may be a :class:`TwoPointPolicy`, an :class:`SPointPolicy` or a
    plain decision vector. The violation interval is exact binomial
    (Clopper-Pearson) when fewer than 10 violations occur; the reported
    halfwidth is then the larger side of that interval.
    """
    draws = monte_carlo_draws(problem, policy, M, seed)
    p = float(np.mean(draws.violated))
    k = int(np.count_nonzero(draws.violated))
    lo, hi, method = violation_interval(k, M)
    counts = np.bincount(draws.support_index, minlength=np.asarray(as_policy(policy, problem).points).shape[0])
    return ValidationReport(
        expected_cost=float(np.mean(draws.costs)),
        cost_ci_halfwidth=float(Z95 * np.std(draws.costs, ddof=1) / math.sqrt(M)),
        violation_probability=p,
        violation_ci_halfwidth=float(max(p - lo, hi - p)),
        trials=M,
        seed=int(seed),
        violation_ci=(lo, hi),
        ci_method=method,
        support_counts=[int(c) for c in counts],
    )


# ---------------------------------------------------------------------------
# Grid oracles (closed-form probability required)
# ---------------------------------------------------------------------------


def _oracle_P(problem: ProblemInstance, xs: np.ndarray) -> np.ndarray:
    if problem.oracle_P is None:
        raise ProblemError(f"{problem.name} has no closed-form probability")
    return np.array([true_probability(problem, x) for x in xs])


def _grid_1d(problem: ProblemInstance, step: float) -> np.ndarray:
    if problem.dim != 1:
        raise ProblemError("grid oracles are implemented for one-dimensional decisions")
    lo, hi = float(problem.domain.lower[0]), float(problem.domain.upper[0])
    count = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, count)


@dataclass(frozen=True)
class DeterministicOracle:
    x: float
    objective: float
    probability: float


def grid_deterministic_oracle(problem: ProblemInstance, alpha: float, step: float = 1e-3) -> DeterministicOracle:
    """Best grid decision with true satisfaction probability ``>= 1 - alpha``."""
    xs = _grid_1d(problem, step)
    P = _oracle_P(problem, xs[:, None])
    J = np.array([objective_value(problem, [x]) for x in xs])
    ok = P >= 1.0 - alpha - 1e-12
    if not np.any(ok):
        raise ProblemError(f"no grid point reaches probability {1 - alpha:g}")
    k = int(np.argmin(np.where(ok, J, np.inf)))
    return DeterministicOracle(float(xs[k]), float(J[k]), float(P[k]))


@dataclass(frozen=True)
class TwoPointOracle:
    policy: TwoPointPolicy
    objective: float


def grid_two_point_oracle(
    problem: ProblemInstance, alpha: float, x_step: float = 0.01, mu_step: float = 0.001
) -> TwoPointOracle:
    """Brute-force best two-point mixture over an ``x_step`` grid per point and a ``mu_step`` weight grid.

    For a fixed pair the objective and constraint are affine in ``mu1``, so
    the feasible weights form an interval and the best grid weight sits at
    one of its grid-snapped ends; this gives the same answer as scanning every
    grid weight.
    """
    xs = _grid_1d(problem, x_step)
    P = _oracle_P(problem, xs[:, None])
    J = np.array([objective_value(problem, [x]) for x in xs])
    need = 1.0 - alpha
    P1, P2 = P[:, None], P[None, :]
    J1, J2 = J[:, None], J[None, :]
    levels = int(round(1.0 / mu_step))
    dP = P1 - P2
    rhs = need - P2
    tol = 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = rhs / dP
    # feasible mu: mu * dP >= rhs
    lo = np.where(dP > 0, bound, np.where(rhs <= tol, 0.0, np.inf))
    hi = np.where(dP < 0, bound, np.where((dP > 0) | (rhs <= tol), 1.0, -np.inf))
    lo = np.clip(np.ceil(np.clip(lo, -1, 2) * levels - 1e-9) / levels, 0.0, None)
    hi = np.clip(np.floor(np.clip(hi, -1, 2) * levels + 1e-9) / levels, None, 1.0)
    feasible = lo <= hi
    # affine objective: best at whichever end is cheaper
    mu = np.where(J1 < J2, hi, lo)
    obj = np.where(feasible, mu * J1 + (1.0 - mu) * J2, np.inf)
    k = int(np.argmin(obj))
    if not np.isfinite(obj.flat[k]):
        raise ProblemError(f"no feasible mixture at alpha={alpha:g}")
    i, j = np.unravel_index(k, obj.shape)
    policy = TwoPointPolicy(float(mu[i, j]), np.array([xs[i]]), np.array([xs[j]]))
    return TwoPointOracle(policy, float(obj[i, j]))


def policy_distance(a: TwoPointPolicy, b: TwoPointPolicy) -> float:
    """Support-point distance plus weight distance, minimized over the two orderings of ``b``."""
    direct = np.linalg.norm(a.x1 - b.x1) + np.linalg.norm(a.x2 - b.x2) + abs(a.mu1 - b.mu1)
    swapped = np.linalg.norm(a.x1 - b.x2) + np.linalg.norm(a.x2 - b.x1) + abs(a.mu1 - b.mu2)
    return float(min(direct, swapped))


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    epsilon: float
    median_objective_error: float
    median_solution_distance: float
    repetitions: int


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]

    def errors(self, epsilon: float) -> list[float]:
        return [r.median_objective_error for r in self.rows if r.epsilon == epsilon]


def convergence_study(
    problem: ProblemInstance,
    alpha: float,
    N_list: Sequence[int],
    epsilon_list: Sequence[float],
    repetitions: int,
    oracle_objective: float,
    oracle_policy: TwoPointPolicy | None = None,
    seed: int = 0,
    cfg: SolverConfig = SolverConfig(),
) -> ConvergenceReport:
    """Median surrogate-objective error of the two-point solve (with ``gamma = 0``) over repeated sample sets.

    Repetition ``r`` uses the same sample seed for every ``N`` and ``epsilon``,
    so differences between rows come from ``N`` and ``epsilon`` alone.
    """
    Ns = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("N_list must be strictly increasing")
    rep_seeds = derived_seeds(seed, repetitions)
    rows = []
    for eps in epsilon_list:
        sp = SmoothingParams(epsilon=float(eps), gamma=0.0)
        for N in Ns:
            def run(s):
                D = SampleSet.draw(problem, N, s)
                rep = solve_two_point(problem, alpha, D, sp, cfg)
                dist = policy_distance(rep.policy, oracle_policy) if oracle_policy is not None else math.nan
                return abs(rep.objective - oracle_objective), dist

            out = ordered_map(run, rep_seeds)
            rows.append(ConvergenceRow(
                N, float(eps),
                float(np.median([e for e, _ in out])),
                float(np.median([d for _, d in out])),
                repetitions,
            ))
    return ConvergenceReport(rows)


# ---------------------------------------------------------------------------
# Feasibility bound
# ---------------------------------------------------------------------------


def hoeffding_feasibility_bound(N: int, R: float) -> float:
    """``exp(-2 N R^2)`` clamped to ``(0, 1]``; vacuous (1) when ``R <= 0``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not math.isfinite(R):
        raise ValueError("R must be finite")
    if R <= 0:
        return 1.0
    return float(min(1.0, max(math.exp(-2.0 * N * R * R), np.finfo(float).tiny)))


def estimate_R(
    problem: ProblemInstance,
    alpha: float,
    alpha_prime: float,
    sp: SmoothingParams,
    reference_set: SampleSet,
    probe_count: int,
    seed: int,
) -> float:
    """Probe estimate of ``min_x [P(x) - P_hat(x)] + (alpha - alpha_prime)``.

    ``P`` is the closed-form probability when available, else the empirical
    probability on ``reference_set``; ``P_hat`` averages the smoothed indicator
    over ``reference_set``. The minimum over mixtures is attained at a single
    point, so probing single decisions suffices. A finite probe set can only
    overestimate the true minimum, hence the bound built from it is optimistic.
    """
    if not alpha_prime < alpha:
        raise ValueError("alpha_prime must be < alpha")
    if probe_count < 100:
        raise ValueError("probe_count must be >= 100")
    probes = start_points(problem.domain.lower, problem.domain.upper, probe_count, seed)
    xi = reference_set.samples
    gaps = []
    for x in probes:
        P = true_probability(problem, x)
        if P is None:
            P = float(np.count_nonzero(hbar_batch(problem, x, xi) <= 0.0)) / xi.shape[0]
        gaps.append(P - smooth_prob(problem, x, xi, sp))
    return float(min(gaps) + (alpha - alpha_prime))


@dataclass
class FeasibilityBoundReport:
    N: int
    alpha: float
    alpha_prime: float
    R_estimate: float
    bound: float
    empirical_infeasible_fraction: float
    trials: int
    binomial_slack: float = 0.0

    @property
    def holds(self) -> bool:
        return self.empirical_infeasible_fraction <= self.bound + self.binomial_slack


def feasibility_bound_study(
    problem: ProblemInstance,
    alpha: float,
    alpha_prime: float,
    N: int,
    trials: int,
    sp: SmoothingParams = SmoothingParams(),
    cfg: SolverConfig = SolverConfig(),
    seed: int = 0,
    probe_count: int = 1000,
    reference_size: int = 1_000_000,
) -> FeasibilityBoundReport:
    """Fraction of two-point solves (threshold ``alpha_prime``) infeasible at ``alpha`` under the true measure."""
    if problem.oracle_P is None:
        raise ProblemError("feasibility study needs a closed-form probability")
    ref_seed, probe_seed, *trial_seeds = derived_seeds(seed, trials + 2)
    reference = SampleSet.draw(problem, reference_size, ref_seed)
    R = estimate_R(problem, alpha, alpha_prime, sp, reference, probe_count, probe_seed)

    def run(s):
        rep = solve_two_point(problem, alpha_prime, SampleSet.draw(problem, N, s), sp, cfg)
        pol = rep.policy
        mass = pol.mu1 * true_probability(problem, pol.x1) + pol.mu2 * true_probability(problem, pol.x2)
        return mass < 1.0 - alpha

    bad = ordered_map(run, trial_seeds)
    p_hat = float(np.mean(bad))
    return FeasibilityBoundReport(
        N, alpha, alpha_prime, R, hoeffding_feasibility_bound(N, R), p_hat, trials,
        binomial_slack=2.0 * math.sqrt(p_hat * (1.0 - p_hat) / trials),
    )


# ---------------------------------------------------------------------------
# Mixture size study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Fig2Row:
    S: int
    objective: float
    slack: float


def fig2_study(
    problem: ProblemInstance,
    alpha: float,
    S_list: Sequence[int],
    D,
    sp: SmoothingParams = SmoothingParams(),
    cfg: SolverConfig = SolverConfig(),
) -> list[Fig2Row]:
    """Surrogate optimum of the ``S``-point mixture problem for each ``S``; the deterministic solve is shared."""
    if not S_list:
        raise ValueError("S_list must not be empty")
    det = solve_deterministic(problem, alpha, D, sp, cfg)
    rows = []
    for S in S_list:
        rep = solve_s_point(problem, int(S), alpha, D, sp, cfg, deterministic=det)
        rows.append(Fig2Row(int(S), float(rep.objective), float(rep.slack)))
    return rows
