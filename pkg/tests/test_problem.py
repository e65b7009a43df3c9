import math

import numpy as np
import pytest

from ccpmo.problem import (
    REGISTRY,
    ConstraintFamily,
    DecisionDomain,
    Normal,
    PointMass,
    ProblemError,
    ProblemInstance,
    ScaledBeta,
    UncertaintyModel,
    builtin,
    constraint_jacobian,
    eval_hbar,
    hbar_and_grad,
    hbar_batch,
    objective_gradient,
    objective_value,
    problem_from_config,
    realized_costs,
    register_problem,
    sample_uncertainty,
    std_normal_cdf,
    true_probability,
)


class TestDomain:
    def test_rejects_inverted_bounds(self):
        with pytest.raises(ProblemError):
            DecisionDomain(np.array([1.0]), np.array([0.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ProblemError):
            DecisionDomain(np.zeros(2), np.ones(3))

    def test_contains_and_clip(self):
        d = DecisionDomain(np.array([-1.0, 0.0]), np.array([1.0, 2.0]))
        assert d.dim == 2
        assert d.contains([0.0, 1.0])
        assert not d.contains([1.5, 1.0])
        np.testing.assert_array_equal(d.clip([3.0, -1.0]), [1.0, 0.0])

    def test_bounds_are_read_only(self):
        d = DecisionDomain(np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            d.lower[0] = 5.0


class TestUncertainty:
    def test_normal_needs_positive_variance(self):
        with pytest.raises(ProblemError):
            Normal(0.0, 0.0)

    def test_scaled_beta_support(self, rng):
        draws = ScaledBeta(2, 5, 0.4, 0.2).draw(rng, 5000)
        assert draws.min() >= 0.4 and draws.max() <= 0.6
        # mean of offset + scale * Beta(2, 5) is 0.4 + 0.2 * 2/7
        assert abs(draws.mean() - (0.4 + 0.2 * 2 / 7)) < 0.003

    def test_point_mass(self, rng):
        np.testing.assert_array_equal(PointMass(1.5).draw(rng, 3), [1.5, 1.5, 1.5])

    def test_sampling_reproducible(self):
        model = UncertaintyModel((Normal(0.0, 1.0), ScaledBeta(2, 2)))
        a = sample_uncertainty(model, 100, 7)
        b = sample_uncertainty(model, 100, 7)
        c = sample_uncertainty(model, 100, 8)
        assert a.shape == (100, 2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_large_seed_accepted(self):
        model = UncertaintyModel((Normal(0.0, 1.0),))
        assert sample_uncertainty(model, 4, 2**63 + 5).shape == (4, 1)

    def test_empty_model_rejected(self):
        with pytest.raises(ProblemError):
            UncertaintyModel(())


class TestExample1:
    def test_objective_values(self, ex1):
        assert objective_value(ex1, [-1.0]) == pytest.approx(1.84, abs=1e-12)
        assert objective_value(ex1, [2.0]) == pytest.approx(-4.76, abs=1e-12)

    def test_oracle_probability(self, ex1):
        assert true_probability(ex1, [-1.0]) == pytest.approx(std_normal_cdf(2.4), abs=1e-15)
        assert 1 - true_probability(ex1, [2.0]) == pytest.approx(0.7257, abs=1e-4)

    def test_constraint(self, ex1):
        xi = np.array([[-1.0], [0.0], [1.0]])
        np.testing.assert_allclose(hbar_batch(ex1, [0.4], xi), [-2.0, -1.0, 0.0], atol=1e-15)
        assert eval_hbar(ex1, [0.4], np.array([1.0])) == pytest.approx(0.0, abs=1e-15)

    def test_analytic_gradient(self, ex1):
        np.testing.assert_allclose(objective_gradient(ex1, [0.5]), [-2.2])

    def test_realized_costs_constant(self, ex1):
        np.testing.assert_allclose(realized_costs(ex1, [-1.0], np.zeros((4, 1))), 1.84)

    def test_dimension_checks(self, ex1):
        with pytest.raises(ProblemError):
            objective_value(ex1, [0.0, 1.0])
        with pytest.raises(ProblemError):
            hbar_batch(ex1, [0.0], np.zeros((3, 2)))

    def test_point_mass_oracle(self):
        p = builtin("example1", uncertainty=UncertaintyModel((PointMass(0.0),)))
        assert true_probability(p, [1.0]) == 1.0
        assert true_probability(p, [1.5]) == 0.0


class TestFiniteDifferenceFallback:
    @pytest.fixture
    def problem(self):
        return ProblemInstance(
            name="fd",
            domain=DecisionDomain(np.array([-2.0, -2.0]), np.array([2.0, 2.0])),
            constraints=ConstraintFamily(
                lambda x, xi: np.column_stack([x[0] ** 2 + xi[:, 0], x[1] * xi[:, 0] - 1.0]), 2
            ),
            uncertainty=UncertaintyModel((Normal(0.0, 1.0),)),
            objective=lambda x: float(np.sum(np.sin(x))),
        )

    def test_jacobian(self, problem):
        xi = np.array([[0.5], [-2.0]])
        jac = constraint_jacobian(problem, [0.3, -0.7], xi)
        expected = np.array([[[0.6, 0.0], [0.0, 0.5]], [[0.6, 0.0], [0.0, -2.0]]])
        np.testing.assert_allclose(jac, expected, atol=1e-7)

    def test_active_component_gradient(self, problem):
        xi = np.array([[0.5], [-2.0]])
        h, g = hbar_and_grad(problem, [0.3, -0.7], xi)
        np.testing.assert_allclose(h, [0.59, 0.4])
        np.testing.assert_allclose(g, [[0.6, 0.0], [0.0, -2.0]], atol=1e-7)

    def test_objective_gradient(self, problem):
        np.testing.assert_allclose(objective_gradient(problem, [0.1, 0.2]), np.cos([0.1, 0.2]), atol=1e-8)

    def test_non_finite_constraint(self):
        p = ProblemInstance(
            "nan", DecisionDomain(np.array([0.0]), np.array([1.0])),
            ConstraintFamily(lambda x, xi: np.full((xi.shape[0], 1), np.nan), 1),
            UncertaintyModel((Normal(0.0, 1.0),)), objective=lambda x: 0.0,
        )
        with pytest.raises(ProblemError):
            hbar_batch(p, [0.5], np.zeros((1, 1)))

    def test_needs_an_objective(self):
        with pytest.raises(ProblemError):
            ProblemInstance(
                "none", DecisionDomain(np.array([0.0]), np.array([1.0])),
                ConstraintFamily(lambda x, xi: xi, 1), UncertaintyModel((Normal(0.0, 1.0),)),
            )


class TestConfig:
    def test_builtin_by_name(self):
        assert problem_from_config({"builtin": "linear1d"}).name == "linear1d"

    def test_overrides(self):
        p = problem_from_config({
            "builtin": "example1",
            "domain": {"lower": [-1.0], "upper": [1.0]},
            "uncertainty": [{"kind": "normal", "params": {"mean": 0.5, "variance": 4.0}}],
        })
        assert p.domain.upper[0] == 1.0
        assert true_probability(p, [0.0]) == pytest.approx(std_normal_cdf((1.4 - 0.5) / 2.0))

    def test_positional_params(self):
        p = problem_from_config({"builtin": "example1", "uncertainty": [{"kind": "point_mass", "params": [0.2]}]})
        assert isinstance(p.uncertainty.components[0], PointMass)

    @pytest.mark.parametrize("cfg", [{}, {"builtin": "nope"}, {"builtin": "example1", "uncertainty": [{"kind": "cauchy"}]}])
    def test_errors(self, cfg):
        with pytest.raises(ProblemError):
            problem_from_config(cfg)

    def test_register(self, ex1):
        register_problem("custom-test", lambda **kw: ex1)
        try:
            assert builtin("custom-test") is ex1
        finally:
            REGISTRY.pop("custom-test")

    def test_quadrotor_has_no_oracle(self, quad):
        assert true_probability(quad, np.zeros(quad.dim)) is None


def test_normal_cdf_matches_erf():
    z = np.linspace(-6, 6, 13)
    np.testing.assert_allclose(std_normal_cdf(z), 0.5 * (1 + np.array([math.erf(v / math.sqrt(2)) for v in z])),
                               atol=1e-15)
