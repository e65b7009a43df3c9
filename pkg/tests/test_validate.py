import math

import numpy as np
import pytest

from ccpmo.nlp import SolverConfig
from ccpmo.problem import ProblemError, true_probability
from ccpmo.smoothing import SampleSet, SmoothingParams
from ccpmo.solver import SPointPolicy, TwoPointPolicy
from ccpmo.validate import (
    Z95,
    FeasibilityBoundReport,
    as_policy,
    convergence_study,
    derived_seeds,
    estimate_R,
    feasibility_bound_study,
    fig2_study,
    grid_deterministic_oracle,
    grid_two_point_oracle,
    hoeffding_feasibility_bound,
    monte_carlo_draws,
    monte_carlo_validate,
    policy_distance,
    violation_interval,
)

MIXTURE = TwoPointPolicy(0.67, [-1.0], [2.0])


class TestMonteCarlo:
    def test_mixture_values(self, ex1):
        rep = monte_carlo_validate(ex1, MIXTURE, 100_000, 0)
        assert rep.expected_cost == pytest.approx(-0.338, abs=0.03)
        assert rep.violation_probability == pytest.approx(0.2450, abs=0.01)
        assert rep.ci_method == "normal"
        assert sum(rep.support_counts) == 100_000

    def test_unit_weight_matches_deterministic(self, ex1):
        a = monte_carlo_validate(ex1, TwoPointPolicy(1.0, [-1.0], [2.0]), 5000, 4)
        b = monte_carlo_validate(ex1, np.array([-1.0]), 5000, 4)
        assert a.expected_cost == b.expected_cost
        assert a.violation_probability == b.violation_probability
        assert a.violation_ci == b.violation_ci

    def test_shared_uncertainty_draws(self, ex1):
        a = monte_carlo_draws(ex1, MIXTURE, 1000, 9)
        b = monte_carlo_draws(ex1, [0.5], 1000, 9)
        np.testing.assert_array_equal(a.xi, b.xi)

    def test_s_point_policy(self, ex1):
        pol = SPointPolicy([0.5, 0.5], [[-2.0], [-2.0]])
        rep = monte_carlo_validate(ex1, pol, 1000, 1)
        assert rep.expected_cost == pytest.approx(0.04)

    def test_exact_interval_for_rare_events(self, ex1):
        rep = monte_carlo_validate(ex1, [-2.0], 1000, 0)
        assert rep.ci_method == "exact-binomial"
        lo, hi = rep.violation_ci
        assert lo <= rep.violation_probability <= hi
        assert hi > 0

    def test_minimum_trials(self, ex1):
        with pytest.raises(ValueError):
            monte_carlo_validate(ex1, MIXTURE, 50, 0)

    def test_dimension_check(self, ex1):
        with pytest.raises(ProblemError):
            as_policy([0.0, 1.0], ex1)

    def test_report_dict(self, ex1):
        d = monte_carlo_validate(ex1, MIXTURE, 200, 0).to_dict()
        assert isinstance(d["violation_ci"], list) and d["trials"] == 200


class TestIntervals:
    def test_normal_halfwidth(self):
        lo, hi, method = violation_interval(250, 1000)
        assert method == "normal"
        assert (hi - lo) / 2 == pytest.approx(Z95 * math.sqrt(0.25 * 0.75 / 1000))

    def test_zero_events(self):
        lo, hi, method = violation_interval(0, 1000)
        assert method == "exact-binomial" and lo == 0.0
        # rule of three
        assert hi == pytest.approx(3.0 / 1000, rel=0.25)

    @pytest.mark.parametrize("p,trials", [(0.25, 1000), (0.003, 2000)])
    def test_coverage(self, p, trials):
        rng = np.random.default_rng(7)
        hits = 0
        reps = 400
        for k in rng.binomial(trials, p, reps):
            lo, hi, _ = violation_interval(int(k), trials)
            hits += lo <= p <= hi
        assert hits / reps >= 0.92


class TestOracles:
    def test_deterministic_example1(self, ex1):
        o = grid_deterministic_oracle(ex1, 0.25)
        assert o.x == pytest.approx(-2.0) and o.objective == pytest.approx(0.04)

    def test_deterministic_linear1d(self, lin):
        o = grid_deterministic_oracle(lin, 0.25)
        assert o.x == pytest.approx(0.725, abs=1e-9)
        assert o.probability >= 0.75

    def test_two_point_example1(self, ex1):
        o = grid_two_point_oracle(ex1, 0.25)
        assert o.objective == pytest.approx(-1.6112, abs=1e-3)
        assert sorted([o.policy.x1[0], o.policy.x2[0]]) == pytest.approx([-2.0, 2.0])
        mass = o.policy.mu1 * true_probability(ex1, o.policy.x1) + o.policy.mu2 * true_probability(ex1, o.policy.x2)
        assert mass >= 0.75 - 1e-12

    def test_two_point_matches_brute_force_weights(self, lin):
        fast = grid_two_point_oracle(lin, 0.3, x_step=0.1, mu_step=0.01)
        xs = np.linspace(-2, 2, 41)
        P = np.array([true_probability(lin, [x]) for x in xs])
        best = math.inf
        for mu in np.linspace(0, 1, 101):
            val = mu * -xs[:, None] + (1 - mu) * -xs[None, :]
            ok = mu * P[:, None] + (1 - mu) * P[None, :] >= 0.7 - 1e-12
            best = min(best, float(np.min(np.where(ok, val, np.inf))))
        assert fast.objective == pytest.approx(best, abs=1e-9)

    def test_requires_closed_form(self, quad):
        with pytest.raises(ProblemError):
            grid_deterministic_oracle(quad, 0.2)

    def test_policy_distance_order_free(self):
        a = TwoPointPolicy(0.3, [1.0], [2.0])
        b = TwoPointPolicy(0.7, [2.0], [1.0])
        assert policy_distance(a, b) == pytest.approx(0.0)
        assert policy_distance(a, TwoPointPolicy(0.3, [1.5], [2.0])) == pytest.approx(0.5)


class TestBounds:
    def test_hoeffding_value(self):
        assert hoeffding_feasibility_bound(1000, 0.05) == pytest.approx(0.0067379, rel=1e-5)

    def test_hoeffding_vacuous(self):
        assert hoeffding_feasibility_bound(10, -0.1) == 1.0
        with pytest.raises(ValueError):
            hoeffding_feasibility_bound(0, 0.1)

    def test_report_holds(self):
        rep = FeasibilityBoundReport(500, 0.25, 0.2, 0.05, 0.08, 0.1, 200, binomial_slack=0.03)
        assert rep.holds

    def test_estimate_R(self, ex1):
        ref = SampleSet.draw(ex1, 200_000, 3)
        R = estimate_R(ex1, 0.25, 0.2, SmoothingParams(), ref, 200, 0)
        # smoothing with gamma > 0 is conservative, so the gap is about alpha - alpha'
        assert 0.03 < R <= 0.05 + 0.01

    def test_estimate_R_checks(self, ex1):
        ref = SampleSet.draw(ex1, 100, 3)
        with pytest.raises(ValueError):
            estimate_R(ex1, 0.2, 0.25, SmoothingParams(), ref, 200, 0)

    def test_small_study(self, ex1):
        rep = feasibility_bound_study(ex1, 0.25, 0.2, 300, 10, SmoothingParams(), SolverConfig(multistarts=4),
                                      seed=2, probe_count=200, reference_size=50_000)
        assert rep.trials == 10 and 0.0 <= rep.empirical_infeasible_fraction <= 1.0
        assert rep.bound == hoeffding_feasibility_bound(300, rep.R_estimate)


class TestStudies:
    def test_convergence_rows(self, ex1):
        rep = convergence_study(ex1, 0.25, [200, 2000], [0.1], 2, -1.6112, seed=1,
                                cfg=SolverConfig(multistarts=4))
        assert [(r.N, r.epsilon) for r in rep.rows] == [(200, 0.1), (2000, 0.1)]
        assert all(math.isnan(r.median_solution_distance) for r in rep.rows)
        assert len(rep.errors(0.1)) == 2

    def test_convergence_needs_increasing_N(self, ex1):
        with pytest.raises(ValueError):
            convergence_study(ex1, 0.25, [1000, 100], [0.1], 1, 0.0)

    def test_fig2(self, ex1):
        D = SampleSet.draw(ex1, 2000, 0)
        rows = fig2_study(ex1, 0.25, [1, 2, 3], D, SmoothingParams(), SolverConfig(multistarts=4))
        assert [r.S for r in rows] == [1, 2, 3]
        assert rows[0].objective - rows[1].objective > 1.0
        assert abs(rows[2].objective - rows[1].objective) < 0.05


def test_derived_seeds_stable():
    assert derived_seeds(5, 3) == derived_seeds(5, 3)
    assert derived_seeds(5, 3)[:2] == derived_seeds(5, 2)
    assert len(set(derived_seeds(5, 10))) == 10
