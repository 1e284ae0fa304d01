import numpy as np
import pytest
from scipy.linalg import expm

from nudich.core import (
    ConstantMatrix,
    GridSpec,
    MatrixFamily,
    OdeFamily,
    check_asymptotics,
    check_axioms,
    check_compatibility,
    compatibility_margin,
    constant_projection,
    evaluate,
    evaluate_UQ_inverse,
    opnorm,
    projection_residual,
)
from nudich import examples as E
from nudich.errors import CommutationViolation, NonOrderedTimes, SingularRestriction


class TestEvaluate:
    def test_identity_at_coincident_times(self, ex25):
        assert np.array_equal(evaluate(ex25.family, 7.3, 7.3), np.eye(2))

    def test_isotropic_contraction(self):
        U = evaluate(E.build("Ex2_8").family, 2.0, 1.0)
        np.testing.assert_allclose(U, np.exp(-1.0) * np.eye(2), rtol=1e-14)

    def test_closed_form_at_pi(self, ex25):
        U = evaluate(ex25.family, np.pi, 0.0)
        np.testing.assert_allclose(np.diag(U), [np.exp(-4 * np.pi), np.exp(4 * np.pi)], rtol=1e-12)

    def test_rejects_reversed_times(self, ex25):
        with pytest.raises(NonOrderedTimes):
            evaluate(ex25.family, 1.0, 2.0)
        with pytest.raises(NonOrderedTimes):
            evaluate(ex25.family, 1.0, -0.5)

    def test_evaluate_many_matches_single(self, ex25):
        ts = np.array([1.0, 2.5, 4.0])
        stack = ex25.family.evaluate_many(ts, 1.0)
        for t, U in zip(ts, stack):
            np.testing.assert_allclose(U, evaluate(ex25.family, t, 1.0), rtol=1e-14)


class TestUQInverse:
    def test_coincident_times_gives_Q(self, ex25):
        np.testing.assert_allclose(evaluate_UQ_inverse(ex25.family, ex25.projection, 3.0, 3.0),
                                   ex25.projection.Q(3.0), atol=1e-15)

    def test_ex25_value(self, ex25):
        y = evaluate_UQ_inverse(ex25.family, ex25.projection, 0.0, np.pi) @ np.array([0.0, 1.0])
        np.testing.assert_allclose(y, [0.0, np.exp(-4 * np.pi)], rtol=1e-12, atol=1e-300)

    @pytest.mark.parametrize("n", [0, 1, 3])
    def test_ex32_resonant_times(self, ex32, n):
        t = 2 * n * np.pi + np.pi / 2
        y = evaluate_UQ_inverse(ex32.family, ex32.projection, 0.0, t) @ np.array([0.0, 1.0])
        np.testing.assert_allclose(y, [0.0, 1.0], atol=1e-12)

    def test_singular_restriction(self):
        fam = MatrixFamily(lambda t, s: np.diag([1.0, np.exp(-50 * (t - s))]), 2)
        proj = constant_projection(np.diag([1.0, 0.0]))
        with pytest.raises(SingularRestriction):
            evaluate_UQ_inverse(fam, proj, 0.0, 1.0)

    def test_inverse_composition(self, ex25, small_grid):
        for t, s in small_grid.pairs()[::7]:
            UQ = evaluate_UQ_inverse(ex25.family, ex25.projection, s, t)
            Qs = ex25.projection.Q(s)
            assert opnorm(UQ @ evaluate(ex25.family, t, s) @ Qs - Qs) < 1e-10


class TestAxioms:
    def test_closed_form_passes(self, ex25, small_grid):
        rep = check_axioms(ex25.family, small_grid)
        assert rep.passed
        assert rep.cocycle_residual < 1e-12

    def test_corrupted_family_fails(self, ex25):
        off = np.array([[0.0, 0.1], [0.1, 0.0]])

        def corrupted(t, s):
            return ex25.family._evaluate(t, s) + off

        grid = GridSpec(t_max=1.0, time_points=3, geometric_points=0)
        rep = check_axioms(MatrixFamily(corrupted, 2), grid)
        assert not rep.passed
        assert rep.cocycle_residual >= 0.09

    def test_ode_constant_matrix_against_expm(self):
        A = np.array([[-1.0, 0.5], [0.0, 1.0]])
        fam = OdeFamily(ConstantMatrix(A), 2)
        for t, s in [(1.0, 0.0), (3.0, 0.5), (5.0, 2.0)]:
            np.testing.assert_allclose(evaluate(fam, t, s), expm(A * (t - s)), rtol=1e-8, atol=1e-8)

    def test_ode_axioms(self):
        fam = OdeFamily(ConstantMatrix(np.diag([-1.0, 1.0])), 2)
        rep = check_axioms(fam, GridSpec(t_max=3.0, time_points=4, geometric_points=0))
        assert rep.passed


class TestProjections:
    def test_idempotent(self):
        ex = E.build("Ex2_6")
        assert projection_residual(ex.projection, np.linspace(0, 50, 11)) < 1e-10


class TestCompatibility:
    def test_ex32_quoted_constants_valid(self, ex32, small_grid):
        assert compatibility_margin(ex32.family, ex32.projection, small_grid, 1.0, 1.0, 1.0) <= 1e-12

    def test_ex32_fit(self, ex32):
        est = check_compatibility(ex32.family, ex32.projection, ex32.grid(t_max=20, time_points=41))
        assert est.passed
        assert est.commutation_residual == 0.0
        assert est.M == pytest.approx(1.0, abs=1e-6)
        assert est.epsilon == pytest.approx(1.0, abs=1e-3)

    def test_ex26_passes(self):
        ex = E.build("Ex2_6", {"a": 1.0})
        assert check_compatibility(ex.family, ex.projection, ex.grid(t_max=10, time_points=21)).passed

    def test_commutation_violation(self, ex25, small_grid):
        rot = constant_projection(np.array([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(CommutationViolation):
            check_compatibility(ex25.family, rot, small_grid)


class TestAsymptotics:
    def test_ex25_trends(self, ex25):
        rep = check_asymptotics(ex25.family, ex25.projection, 0.0, [1.0, 1.0], 10.0)
        assert rep.p_decays and rep.q_grows and rep.consistent_with_dichotomy

    def test_ex28_q_decays(self):
        ex = E.build("Ex2_8")
        rep = check_asymptotics(ex.family, ex.projection, 0.0, [1.0, 1.0], 10.0)
        assert rep.all_decay and not rep.q_grows and not rep.consistent_with_dichotomy

    def test_zero_vector(self, ex25):
        rep = check_asymptotics(ex25.family, ex25.projection, 0.0, [0.0, 0.0], 5.0)
        assert not np.any(rep.p_norms) and not np.any(rep.q_norms)
