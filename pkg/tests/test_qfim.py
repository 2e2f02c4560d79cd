import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from pmprobe import (
    OMEGA,
    CovarianceMatrix,
    EnvParams,
    ProbeParams,
    PurityFallbackWarning,
    QfimMatrix,
    SingularMatrixError,
    ValidationError,
    closed_form_report,
    compatibility_trace,
    covariance,
    d_covariance,
    finite_diff_covariance,
    kron2,
    m_matrix,
    performance_ratio,
    qfim_closed_form,
    qfim_determinant,
    qfim_element_general,
    qfim_general,
    qfim_inverse,
    tilde_bounds,
    vec2,
)
from pmprobe.qfim import KAPPA, m_inverse, m_quadratic_form, middle_closed_form, unvec2

# 50-digit mpmath: explicit M = sigma (x) sigma - Omega (x) Omega solved by LU,
# derivatives by mpmath.diff. Keys are (gamma, lambda, t); values
# (F_gg, F_gL, F_LL) in SI.
MP_ORACLE = {
    (0.0, 3e22, 4e-5): (2.8732932315934757e-7, 1.1519557403080455e-26, 1.0954755318811161e-45),
    (-0.5, 3e22, 2.2e-6): (0.0036314633063211173, -1.4069197699613884e-25, 8.8786386244016312e-46),
    (0.5, 3e20, 1e-6): (0.46874289354114971, -2.2990116087326533e-23, 3.8019282400537803e-43),
    (1.5, 3e15, 1e-7): (0.48812106370580732, -9.8185415292626314e-25, 4.5628789185902152e-45),
    (-3.0, 3e20, 1e-4): (0.12812661113877049, -1.30369900144123e-22, 5.6881903195746979e-42),
    (3.0, 3e15, 1e-8): (0.48812108345279645, -8.8271604928406691e-27, 3.2370113808941096e-47),
    (3.0, 3e15, 5.623413251903491e-05): (0.38899711139222866, -1.5431724243879967e-18, 1.6317305496945169e-32),
}
ILL_CONDITIONED = (3.0, 3e15, 5.623413251903491e-05)

gammas = st.floats(-3, 3, allow_nan=False)
log_lambdas = st.floats(12, 23)
log_times = st.floats(-8, -4)


def _point(g, log_lam, log_t):
    return ProbeParams(gamma=g), EnvParams(10.0**log_lam), 10.0**log_t


def _random_cov(rng):
    """Mixed covariance nu S S^T with moderate squeezing."""
    nu = 1.0 + rng.uniform(0.05, 3.0)
    r, th = rng.uniform(-1, 1), rng.uniform(0, np.pi)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    s = rot @ np.diag([np.exp(r), np.exp(-r)])
    return CovarianceMatrix.from_array(nu * s @ s.T)


class TestVecKron:
    def test_vec_column_stacking(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(vec2(m), [1.0, 3.0, 2.0, 4.0])
        np.testing.assert_array_equal(unvec2(vec2(m)), m)

    def test_kron_matches_numpy(self, rng):
        a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        np.testing.assert_allclose(kron2(a, b), np.kron(a, b), rtol=1e-15)

    @given(st.lists(st.floats(-10, 10), min_size=12, max_size=12))
    def test_vec_identity(self, xs):
        a, x, b = (np.array(xs[i : i + 4]).reshape(2, 2) for i in (0, 4, 8))
        lhs = vec2(a @ x @ b.T)
        rhs = kron2(b, a) @ vec2(x)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.max(np.abs(lhs))))

    def test_vec_rejects_shape(self):
        with pytest.raises(ValidationError):
            vec2(np.eye(3))


class TestMInverse:
    def test_normal_mode_inverts(self, rng):
        for _ in range(20):
            cov = _random_cov(rng)
            prod = m_inverse(cov) @ m_matrix(cov)
            np.testing.assert_allclose(prod, np.eye(4), atol=1e-10)

    def test_matches_lu_when_well_conditioned(self, probe):
        cov = covariance(probe.with_gamma(0.5), EnvParams(3e20), 1e-6)
        np.testing.assert_allclose(m_inverse(cov), m_inverse(cov, method="lu"), rtol=1e-11, atol=1e-12)

    def test_unknown_method(self):
        cov = CovarianceMatrix(2.0, 0.0, 2.0)
        with pytest.raises(ValidationError):
            m_inverse(cov, method="qr")
        with pytest.raises(ValidationError):
            m_quadratic_form(cov, np.ones(4), np.ones(4), method="qr")

    def test_batched(self, probe):
        cov = covariance(probe, EnvParams(np.array([3e15, 3e20, 3e22])), 1e-6)
        assert m_inverse(cov).shape == (3, 4, 4)


class TestKnownStates:
    @pytest.mark.parametrize("nu", [1.01, 1.5, 3.0, 40.0])
    def test_thermal_temperature_information(self, nu):
        # sigma = nu I: F_nu = 1 / (nu^2 - 1), i.e. 1 / (n (n + 1)) in occupation number
        cov = CovarianceMatrix(nu, 0.0, nu, det_excess=nu * nu - 1.0)
        eye = CovarianceMatrix(1.0, 0.0, 1.0)
        assert qfim_element_general(cov, eye, eye) == pytest.approx(1.0 / (nu * nu - 1.0), rel=1e-13)

    @pytest.mark.parametrize("r", [0.0, 0.3, 1.2])
    def test_squeezing_information_pure_limit(self, r):
        cov = CovarianceMatrix(math.exp(2 * r), 0.0, math.exp(-2 * r), det_excess=0.0)
        d = CovarianceMatrix(2 * math.exp(2 * r), 0.0, -2 * math.exp(-2 * r))
        with pytest.warns(PurityFallbackWarning):
            f = qfim_element_general(cov, d, d)
        assert f == pytest.approx(2.0, rel=1e-6)

    def test_pure_state_raises_without_fallback(self):
        cov = CovarianceMatrix(1.0, 0.0, 1.0, det_excess=0.0)
        with pytest.raises(SingularMatrixError) as info:
            qfim_element_general(cov, cov, cov, pure_fallback=False)
        assert info.value.det == 1.0

    def test_displacement_term(self):
        cov = CovarianceMatrix(2.0, 0.0, 2.0)
        zero = CovarianceMatrix(0.0, 0.0, 0.0)
        f = qfim_element_general(cov, zero, zero, [1.0, 0.0], [1.0, 0.0])
        assert f == pytest.approx(2.0 * 1.0 / 2.0)


class TestGeneralQfim:
    @pytest.mark.parametrize("key", sorted(MP_ORACLE))
    def test_against_high_precision(self, probe, key):
        g, lam, t = key
        f = qfim_general(probe.with_gamma(g), EnvParams(lam), t)
        gg, gl, ll = MP_ORACLE[key]
        assert f.f_gg == pytest.approx(gg, rel=1e-11)
        # the off-diagonal element cancels; measure it on the scale sqrt(F_gg F_LL)
        assert abs(f.f_gl - gl) <= 1e-10 * math.sqrt(gg * ll)
        assert f.f_ll == pytest.approx(ll, rel=1e-11)
        assert f.approximate is False

    def test_lu_loses_digits_on_ill_conditioned_points(self, probe):
        # elimination on M keeps only a few digits where det sigma - 1 << sxx spp
        g, lam, t = ILL_CONDITIONED
        ref = MP_ORACLE[ILL_CONDITIONED]
        lu = qfim_general(probe.with_gamma(g), EnvParams(lam), t, method="lu")
        assert abs(lu.f_ll - ref[2]) / ref[2] > 1e-6

    def test_element_function_matches(self, probe):
        pr, env, t = probe.with_gamma(0.5), EnvParams(3e20), 1e-6
        cov, dg, dl = covariance(pr, env, t), d_covariance(pr, env, t, "gamma"), d_covariance(pr, env, t, "lambda")
        f = qfim_general(pr, env, t)
        assert qfim_element_general(cov, dg, dl) == pytest.approx(f.f_gl, rel=1e-14)
        assert qfim_element_general(cov.matrix(), dg.matrix(), dg.matrix()) == pytest.approx(f.f_gg, rel=1e-14)

    @given(gammas, log_lambdas, log_times)
    def test_symmetric_and_positive(self, g, log_lam, log_t):
        pr, env, t = _point(g, log_lam, log_t)
        cov, dg, dl = covariance(pr, env, t), d_covariance(pr, env, t, "gamma"), d_covariance(pr, env, t, "lambda")
        a, b = qfim_element_general(cov, dg, dl), qfim_element_general(cov, dl, dg)
        assert a == pytest.approx(b, rel=1e-12, abs=0.0)
        f = qfim_general(pr, env, t)
        assert f.f_gg > 0 and f.f_ll > 0
        assert qfim_determinant(f) >= -1e-12 * f.f_gg * f.f_ll

    @given(gammas, log_lambdas, log_times, st.floats(0.1, 10.0))
    def test_quadratic_in_derivative(self, g, log_lam, log_t, scale):
        pr, env, t = _point(g, log_lam, log_t)
        cov, dg = covariance(pr, env, t), d_covariance(pr, env, t, "gamma")
        scaled = CovarianceMatrix(scale * dg.sxx, scale * dg.sxp, scale * dg.spp)
        # rounding the scaled entries is amplified by the cancelling trace part
        assert qfim_element_general(cov, scaled, scaled) == pytest.approx(
            scale**2 * qfim_element_general(cov, dg, dg), rel=1e-9
        )

    @given(gammas, log_lambdas, log_times)
    def test_reparametrization_of_lambda(self, g, log_lam, log_t):
        # Lambda -> Lambda relative to itself: F_LL Lambda^2 is dimensionless
        pr, env, t = _point(g, log_lam, log_t)
        f = qfim_general(pr, env, t)
        rel = f.relative(env.lam)
        assert rel.f_ll == pytest.approx(f.f_ll * env.lam**2, rel=1e-15)
        assert rel.f_gg == f.f_gg

    @pytest.mark.parametrize("g,lam,t", [(0.5, 3e20, 1e-6), (-1.0, 3e22, 1e-5), (2.0, 3e15, 3e-5)])
    def test_finite_difference_derivatives(self, probe, g, lam, t):
        pr, env = probe.with_gamma(g), EnvParams(lam)
        cov = covariance(pr, env, t)
        fd_g = finite_diff_covariance(pr, env, t, "gamma", 1e-3)
        fd_l = finite_diff_covariance(pr, env, t, "lambda", 0.5 * lam)
        f = qfim_general(pr, env, t)
        assert qfim_element_general(cov, fd_g, fd_g) == pytest.approx(f.f_gg, rel=1e-6)
        assert qfim_element_general(cov, fd_g, fd_l) == pytest.approx(f.f_gl, rel=1e-6)
        assert qfim_element_general(cov, fd_l, fd_l) == pytest.approx(f.f_ll, rel=1e-6)

    def test_pure_probe_flags_approximate(self):
        pr = ProbeParams(ell0=math.inf)
        with pytest.warns(PurityFallbackWarning):
            f = qfim_general(pr, EnvParams(0.0), np.array([1e-7, 1e-6]))
        assert np.all(f.approximate)


class TestClosedForm:
    def test_requires_finite_coherence(self):
        with pytest.raises(ValidationError):
            qfim_closed_form(ProbeParams(ell0=math.inf), EnvParams(), 1e-6)

    def test_rejects_negative_time(self, probe):
        with pytest.raises(ValidationError):
            qfim_closed_form(probe, EnvParams(), -1.0)

    def test_report_structure(self, probe):
        rep = closed_form_report(probe, lambdas=(3e20,), gammas=(0.5,), times=(1e-6, 1e-5))
        assert rep["authoritative"] == "general"
        assert len(rep["points"]) == 2
        assert set(rep["summary"]) == {"f_gg", "f_gl", "f_ll"}
        for name in ("f_gg", "f_gl", "f_ll"):
            assert set(rep["unit_audit"][name]) == {"si", "rescaled_units_in_si", "consistent"}
            assert rep["points"][0][name]["rel_err"] >= 0

    def test_printed_forms_disagree_with_general(self, probe):
        # regression for the transcription finding, not a correctness claim
        rep = closed_form_report(probe, lambdas=(3e20,), gammas=(0.5,), times=(1e-6,))
        assert rep["agrees"] is False
        assert rep["unit_audit"]["f_gg"]["consistent"] is False

    def test_vectorized(self, probe):
        f = qfim_closed_form(probe.with_gamma(np.array([0.0, 0.5])), EnvParams(3e20), 1e-6)
        assert np.shape(f.f_gg) == (2,)


class TestDerivedQuantities:
    @given(gammas, log_lambdas, log_times)
    def test_tilde_bounded_by_diagonal(self, g, log_lam, log_t):
        f = qfim_general(*_point(g, log_lam, log_t))
        tg, tl = tilde_bounds(f)
        assert tg <= f.f_gg and tl <= f.f_ll
        assert tg >= -1e-12 * f.f_gg

    @given(gammas, log_lambdas, log_times)
    def test_ratio_range_and_identity(self, g, log_lam, log_t):
        f = qfim_general(*_point(g, log_lam, log_t))
        assume(qfim_determinant(f) > 1e-6 * f.f_gg * f.f_ll)
        rep = performance_ratio(f)
        assert 0 < rep.ratio <= KAPPA
        assert rep.ratio == pytest.approx(rep.delta_i / rep.delta_s, rel=1e-8)

    def test_ratio_two_when_uncorrelated(self):
        rep = performance_ratio(QfimMatrix(3.0, 0.0, 5.0))
        assert rep.ratio == 2.0
        assert rep.tilde_gg == 3.0 and rep.tilde_ll == 5.0

    def test_ratio_hand_example(self):
        rep = performance_ratio(QfimMatrix(1.0, 0.5, 1.0))
        assert rep.delta_i == 2.0
        assert rep.delta_s == pytest.approx(4.0 / 3.0)
        assert rep.ratio == pytest.approx(1.5)

    def test_ratio_strict_and_lenient(self):
        singular = QfimMatrix(np.array([1.0, 1.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        with pytest.raises(SingularMatrixError):
            performance_ratio(singular)
        rep = performance_ratio(singular, strict=False)
        np.testing.assert_array_equal(rep.valid, [True, False])
        assert np.isnan(rep.ratio[1]) and rep.ratio[0] == 2.0
        with pytest.raises(ValidationError):
            performance_ratio(QfimMatrix(-1.0, 0.0, 1.0))

    def test_inverse(self, probe):
        f = qfim_general(probe.with_gamma(0.5), EnvParams(3e20), 1e-6).relative(3e20)
        np.testing.assert_allclose(qfim_inverse(f) @ f.matrix(), np.eye(2), atol=1e-9)
        with pytest.raises(SingularMatrixError):
            qfim_inverse(QfimMatrix(1.0, 1.0, 1.0))

    def test_tilde_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            tilde_bounds(QfimMatrix(0.0, 0.0, 1.0))


class TestCompatibility:
    @given(gammas, log_lambdas, log_times)
    def test_weak_commutativity(self, g, log_lam, log_t):
        pr, env, t = _point(g, log_lam, log_t)
        res = compatibility_trace(
            covariance(pr, env, t), d_covariance(pr, env, t, "gamma"), d_covariance(pr, env, t, "lambda")
        )
        assert res.normalized < 1e-9
        assert res.discrepancy < 1e-12

    def test_middle_matrix_closed_form(self, rng):
        # Q / excess^2 against the textbook product for generic mixed states
        for _ in range(10):
            cov = _random_cov(rng)
            s = cov.matrix()
            minv = np.linalg.inv(m_matrix(cov))
            direct = minv @ (kron2(s, OMEGA) - kron2(OMEGA, s)) @ minv
            np.testing.assert_allclose(middle_closed_form(cov), direct, atol=1e-9 * np.max(np.abs(direct)))

    def test_vanishes_for_any_symmetric_pair(self, rng):
        # the middle matrix annihilates vec of symmetric matrices, so the
        # trace is zero for every pair of covariance derivatives
        for _ in range(10):
            cov = _random_cov(rng)
            a = CovarianceMatrix(*rng.normal(size=3))
            b = CovarianceMatrix(*rng.normal(size=3))
            assert compatibility_trace(cov, a, b).normalized < 1e-13

    def test_detects_nonsymmetric_directions(self, rng):
        cov = _random_cov(rng)
        p = middle_closed_form(cov)
        u, v = vec2(np.array([[0.0, 1.0], [0.0, 0.0]])), vec2(np.eye(2))
        assert abs(u @ p @ v) > 1e-3 * np.max(np.abs(p))

    def test_lu_route_available(self, probe):
        pr, env, t = probe.with_gamma(0.5), EnvParams(3e20), 1e-6
        res = compatibility_trace(
            covariance(pr, env, t), d_covariance(pr, env, t, "gamma"), d_covariance(pr, env, t, "lambda"), method="lu"
        )
        assert res.discrepancy < 1e-9

    def test_needs_mixed_state(self):
        cov = CovarianceMatrix(1.0, 0.0, 1.0, det_excess=0.0)
        with pytest.raises(SingularMatrixError):
            compatibility_trace(cov, cov, cov)
