"""Quantum Fisher information matrix over (gamma, Lambda) and the quantities
derived from it.

The general single-mode Gaussian formula is

    F_ij = 1/2 vec(d_i sigma)^T M^-1 vec(d_j sigma) + 2 d_i d^T sigma^-1 d_j d,
    M    = sigma (x) sigma - Omega (x) Omega,

with column-stacking ``vec`` and the standard Kronecker product. M is badly
conditioned for the probe (cond(M) reaches ~1e19 on the default grid because
det(sigma) - 1 ~ 1e-8 while sigma_xx ~ 1e4), so plain elimination loses most
significant digits. The default method factors sigma = nu S S^T with S
symplectic; then

    M = (S (x) S) (nu^2 I - Omega (x) Omega) (S (x) S)^T

and Omega (x) Omega has eigenvalues +-1 on the trace+antisymmetric and the
symmetric-traceless subspaces, so M^-1 is applied exactly with the cached
det(sigma) - 1 = nu^2 - 1. Gaussian elimination (``method="lu"``) is kept as
a cross-check.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import constants
from .errors import PurityFallbackWarning, SingularMatrixError, ValidationError
from .phase_space import (
    DET_TOL,
    OMEGA,
    CovarianceMatrix,
    EnvParams,
    ProbeParams,
    covariance,
    d_covariance,
)

logger = logging.getLogger(__name__)

PURE_TOL = 1e-9
PURE_INFLATION = 1e-7
COND_LOG_THRESHOLD = 1e12
KAPPA = 2.0  # number of parameters, the ceiling of the performance ratio


# --------------------------------------------------------------------------
# vectorization helpers


def vec2(matrix) -> np.ndarray:
    """Column-stacking vectorization, (m11, m21, m12, m22). Batched over
    leading axes."""
    m = np.asarray(matrix)
    if m.shape[-2:] != (2, 2):
        raise ValidationError(f"vec2 expects (..., 2, 2), got {m.shape}")
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (4,))


def unvec2(v) -> np.ndarray:
    """Inverse of :func:`vec2`."""
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (2, 2)), -1, -2)


def kron2(a, b) -> np.ndarray:
    """Kronecker product of 2x2 matrices, batched over leading axes.

    Satisfies vec(A X B^T) = (B (x) A) vec(X) together with :func:`vec2`.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.einsum("...ij,...kl->...ikjl", a, b)
    return out.reshape(out.shape[:-4] + (4, 4))


def _as_cov(cov) -> CovarianceMatrix:
    if isinstance(cov, CovarianceMatrix):
        return cov
    return CovarianceMatrix.from_array(cov)


def _entries(cov: CovarianceMatrix):
    return (np.asarray(cov.sxx, float), np.asarray(cov.sxp, float), np.asarray(cov.spp, float))


def m_matrix(cov) -> np.ndarray:
    """sigma (x) sigma - Omega (x) Omega, shape (..., 4, 4)."""
    s = _as_cov(cov).matrix()
    return kron2(s, s) - kron2(OMEGA, OMEGA)


# --------------------------------------------------------------------------
# M^-1 via the normal-mode factorization


def _normal_mode(cov: CovarianceMatrix):
    """Return (S^-1, det(sigma) - 1) with sigma = nu S S^T, det S = 1."""
    sxx, sxp, _ = _entries(cov)
    ex = np.asarray(cov.excess, float)
    nu = np.sqrt(1.0 + ex)
    root = np.sqrt(sxx)
    zero = np.zeros(np.broadcast(sxx, sxp, ex).shape)
    s_inv = np.stack(
        [
            np.stack([np.sqrt(nu) / root + zero, zero], -1),
            np.stack([-sxp / (np.sqrt(nu) * root) + zero, root / np.sqrt(nu) + zero], -1),
        ],
        -2,
    )
    return s_inv, ex


def _split_inner(y1, y2):
    """Inner products of the (+1) and (-1) eigen-components of Omega (x) Omega
    acting on vec(Y1), vec(Y2)."""
    t1 = y1[..., 0, 0] + y1[..., 1, 1]
    t2 = y2[..., 0, 0] + y2[..., 1, 1]
    a1 = 0.5 * (y1[..., 0, 1] - y1[..., 1, 0])
    a2 = 0.5 * (y2[..., 0, 1] - y2[..., 1, 0])
    plus = 0.5 * t1 * t2 + 2.0 * a1 * a2
    # symmetric traceless part, formed directly to avoid cancellation
    d1 = 0.5 * (y1[..., 0, 0] - y1[..., 1, 1])
    d2 = 0.5 * (y2[..., 0, 0] - y2[..., 1, 1])
    o1 = 0.5 * (y1[..., 0, 1] + y1[..., 1, 0])
    o2 = 0.5 * (y2[..., 0, 1] + y2[..., 1, 0])
    minus = 2.0 * (d1 * d2 + o1 * o2)
    return plus, minus


def _congruence(s_inv, x):
    return s_inv @ x @ np.swapaxes(s_inv, -1, -2)


def _quad_normal(cov, u, v):
    s_inv, ex = _normal_mode(cov)
    y1 = _congruence(s_inv, unvec2(u))
    y2 = _congruence(s_inv, unvec2(v))
    plus, minus = _split_inner(y1, y2)
    return plus / ex + minus / (2.0 + ex)


def m_inverse(cov, method: str = "normal") -> np.ndarray:
    """Explicit M^-1, shape (..., 4, 4).

    ``method="normal"`` uses the normal-mode factorization with the cached
    determinant excess; ``method="lu"`` inverts M by Gaussian elimination with
    partial pivoting.
    """
    cov = _as_cov(cov)
    if method == "lu":
        m = m_matrix(cov)
        _log_condition(m)
        return np.linalg.inv(m)
    if method != "normal":
        raise ValidationError(f"unknown method {method!r}")
    s_inv, ex = _normal_mode(cov)
    oo = kron2(OMEGA, OMEGA)
    eye = np.eye(4)
    ex = ex[..., None, None]
    core = 0.5 * (eye + oo) / ex + 0.5 * (eye - oo) / (2.0 + ex)
    t = kron2(s_inv, s_inv)
    return np.swapaxes(t, -1, -2) @ core @ t


def _log_condition(m):
    if not logger.isEnabledFor(logging.INFO):
        return
    cond = np.linalg.cond(m)
    bad = cond > COND_LOG_THRESHOLD
    if np.any(bad):
        logger.info(
            "M ill-conditioned at %d point(s), max cond %.3e", int(np.sum(bad)), float(np.max(cond))
        )


def m_quadratic_form(cov, u, v, method: str = "normal"):
    """u^T M^-1 v for 4-vectors ``u``, ``v`` (batched)."""
    cov = _as_cov(cov)
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    if method == "normal":
        return _quad_normal(cov, u, v)
    if method == "lu":
        m = m_matrix(cov)
        _log_condition(m)
        shape = np.broadcast_shapes(m.shape[:-2], u.shape[:-1], v.shape[:-1])
        m = np.broadcast_to(m, shape + (4, 4))
        x = np.linalg.solve(m, np.broadcast_to(v, shape + (4,))[..., None])[..., 0]
        return np.sum(np.broadcast_to(u, shape + (4,)) * x, axis=-1)
    raise ValidationError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# QFIM


@dataclass(frozen=True)
class QfimMatrix:
    """Symmetric 2x2 QFIM over (gamma, Lambda).

    Attributes:
        f_gg: gamma-gamma element, dimensionless.
        f_gl: gamma-Lambda element, m^2 s.
        f_ll: Lambda-Lambda element, m^4 s^2.
        approximate: True (or a boolean mask) where the pure-state fallback
            was used.
    """

    f_gg: float | np.ndarray
    f_gl: float | np.ndarray
    f_ll: float | np.ndarray
    approximate: bool | np.ndarray = field(default=False, compare=False)

    def matrix(self) -> np.ndarray:
        gg, gl, ll = np.broadcast_arrays(
            np.asarray(self.f_gg, float), np.asarray(self.f_gl, float), np.asarray(self.f_ll, float)
        )
        return np.stack([np.stack([gg, gl], -1), np.stack([gl, ll], -1)], -2)

    @property
    def det(self):
        return qfim_determinant(self)

    def relative(self, lam) -> "QfimMatrix":
        """Rescale to the dimensionless form with Lambda's unit removed,
        (f_gg, f_gl Lambda, f_ll Lambda^2)."""
        lam = np.asarray(lam, float)
        return QfimMatrix(self.f_gg, self.f_gl * lam, self.f_ll * lam * lam, self.approximate)


def _prepare(cov, pure_fallback):
    """Apply the pure-state guard. Returns (cov, flagged mask)."""
    ex = np.asarray(cov.excess, float)
    near_pure = np.abs(ex) < PURE_TOL
    if not np.any(near_pure):
        return cov, near_pure
    if not pure_fallback:
        raise SingularMatrixError(
            f"M is singular: det(sigma) = {float(1.0 + ex[near_pure].flat[0])!r} is within "
            f"{PURE_TOL} of 1 (pure state); pass pure_fallback=True to inflate sigma",
            det=float(1.0 + ex[near_pure].flat[0]),
        )
    warnings.warn(
        f"near-pure state at {int(np.sum(near_pure))} point(s): sigma inflated by "
        f"(1 + {PURE_INFLATION}), result is approximate",
        PurityFallbackWarning,
        stacklevel=3,
    )
    factor = np.where(near_pure, 1.0 + PURE_INFLATION, 1.0)
    return cov.scaled(factor), near_pure


def _displacement_term(cov, dd_i, dd_j):
    if dd_i is None or dd_j is None:
        return 0.0
    dd_i = np.asarray(dd_i, float)
    dd_j = np.asarray(dd_j, float)
    sxx, sxp, spp = _entries(cov)
    det = np.asarray(cov.det, float)
    quad = (
        dd_i[..., 0] * (spp * dd_j[..., 0] - sxp * dd_j[..., 1])
        + dd_i[..., 1] * (-sxp * dd_j[..., 0] + sxx * dd_j[..., 1])
    ) / det
    return 2.0 * quad


def qfim_element_general(
    cov,
    dcov_i,
    dcov_j,
    dd_i=None,
    dd_j=None,
    *,
    pure_fallback: bool = True,
    method: str = "normal",
):
    """One QFIM element from the Gaussian moment formula.

    Args:
        cov: covariance of the state.
        dcov_i, dcov_j: derivatives of the covariance with respect to the two
            parameters (CovarianceMatrix or (..., 2, 2) arrays).
        dd_i, dd_j: derivatives of the displacement; ``None`` means zero.
        pure_fallback: inflate sigma by (1 + 1e-7) when |det sigma - 1| < 1e-9
            instead of raising :class:`SingularMatrixError`.
        method: ``"normal"`` (default) or ``"lu"``.

    Returns:
        float or ndarray.
    """
    cov = _as_cov(cov)
    cov, _ = _prepare(cov, pure_fallback)
    u = vec2(_as_cov(dcov_i).matrix())
    v = vec2(_as_cov(dcov_j).matrix())
    value = 0.5 * m_quadratic_form(cov, u, v, method=method) + _displacement_term(cov, dd_i, dd_j)
    return _squeeze(value)


def qfim_general(
    probe: ProbeParams, env: EnvParams, t, *, method: str = "normal", pure_fallback: bool = True
) -> QfimMatrix:
    """QFIM over (gamma, Lambda) at time ``t`` from the general formula."""
    cov = covariance(probe, env, t)
    cov, flagged = _prepare(cov, pure_fallback)
    u = vec2(d_covariance(probe, env, t, "gamma").matrix())
    v = vec2(d_covariance(probe, env, t, "lambda").matrix())
    f_gg = 0.5 * m_quadratic_form(cov, u, u, method=method)
    f_gl = 0.5 * m_quadratic_form(cov, u, v, method=method)
    f_ll = 0.5 * m_quadratic_form(cov, v, v, method=method)
    approx = bool(flagged) if np.ndim(flagged) == 0 else flagged
    return QfimMatrix(_squeeze(f_gg), _squeeze(f_gl), _squeeze(f_ll), approx)


# --------------------------------------------------------------------------
# closed forms transcribed from the literature


def _closed_form_raw(mass, hbar, s, l, g, lam, t):
    """Verbatim closed-form elements; any consistent unit system."""
    b = 1.0 + g * g
    alpha = (
        2 * s**2 * l**2 * t**4 * hbar**2 * lam**2
        + (6 * mass * s**2 * l**2 * hbar * g * t**2 + 2 * t**3 * hbar**2 * (2 * s**2 + b * l**2)
           + 6 * mass**2 * s**4 * l**2 * t) * lam
        + 3 * mass * s**4
    ) * (1 + l**2 / s**2)
    f_gg = l**2 / (2 * alpha) * (
        (12 * mass**2 * s**4 * l**2 * hbar**2 * t**4 + 16 * l**2 * hbar**4 * g**2 * t**6
         + 48 * mass * s**2 * l**2 * hbar**3 * g * t**5) * lam**2
        + (6 * mass**2 * s**2 * hbar**2 * t**3 * (2 * s**2 + b * l**2) + 18 * mass**4 * s**6 * l**2 * t
           + 18 * mass**3 * s**4 * l**2 * hbar * g * t**2) * lam
        + 9 * mass**4 * s**6
    )
    f_gl = (
        l**2 * s**2 * hbar * t
        * (2 * l**2 * hbar**2 * t**4 * (3 * mass * s**2 + 2 * g * t * hbar) * lam**2
           - 3 * mass**2 * s**2 * (3 * mass * s**2 + 2 * g * t * hbar))
    ) / alpha
    f_ll = (
        2 * t**2 * (
            2 * s**4 * l**4 * t**2 * lam**2
            + 2 * s**2 * l**2 * (2 * s**2 * t**5 * hbar**4 + l**2 * b * t**5 * hbar**4
                                 + 3 * mass * s**2 * l**2 * g * t**4 * hbar**3
                                 + 3 * mass**2 * s**4 * l**2 * t**3 * hbar**2) * lam
        )
        + (6 * mass * s**2 * l**2 * g * t**3 * hbar**3 * (2 * s**2 + l**2 * b)
           + hbar**4 * t**4 * b * (l**4 * b + 4 * s**2 * l**2)
           + 9 * mass**4 * s**8 * l**4 + 18 * mass**3 * s**6 * l**4 * g * t * hbar)
    ) / alpha
    return f_gg, f_gl, f_ll, alpha


def qfim_closed_form(probe: ProbeParams, env: EnvParams, t) -> QfimMatrix:
    """Evaluate the published closed-form QFIM elements exactly as printed.

    These expressions do not agree with the general formula (see
    :func:`closed_form_report`); they are kept for comparison only.
    """
    if math.isinf(probe.ell0):
        raise ValidationError("the closed forms need a finite coherence length")
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValidationError("t must be >= 0")
    f_gg, f_gl, f_ll, alpha = _closed_form_raw(
        probe.mass, constants.HBAR, probe.sigma0, probe.ell0,
        np.asarray(probe.gamma, float), np.asarray(env.lam, float), t,
    )
    if np.any(alpha == 0):
        raise ValidationError("closed-form denominator alpha vanishes")
    return QfimMatrix(_squeeze(f_gg), _squeeze(f_gl), _squeeze(f_ll))


def closed_form_report(
    probe: ProbeParams,
    lambdas=constants.DEFAULT_LAMBDAS,
    gammas=(-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0),
    times=tuple(np.logspace(-8, -4, 9)),
    agree_rtol: float = 1e-6,
) -> dict:
    """Sweep the printed closed forms against the general formula.

    Returns a JSON-serializable dict with per-point relative errors, per-element
    summaries, and a unit-consistency audit: each element is evaluated in SI
    and again in a rescaled unit system (nm, us, 1e-27 kg) and converted back;
    a dimensionally consistent expression gives the same SI value.
    """
    elements = ("f_gg", "f_gl", "f_ll")
    points = []
    worst = dict.fromkeys(elements, 0.0)
    for lam in lambdas:
        env = EnvParams(lam=float(lam))
        for g in gammas:
            pr = probe.with_gamma(float(g))
            for t in times:
                gen = qfim_general(pr, env, float(t))
                closed = qfim_closed_form(pr, env, float(t))
                row = {"lambda": float(lam), "gamma": float(g), "t": float(t)}
                for name in elements:
                    a = float(getattr(gen, name))
                    b = float(getattr(closed, name))
                    rel = abs(b - a) / abs(a) if a != 0 else math.inf
                    row[name] = {"general": a, "closed": b, "rel_err": rel}
                    worst[name] = max(worst[name], rel)
                points.append(row)

    # unit audit: length in nm, time in us, mass in 1e-27 kg
    lu, tu, mu = 1e-9, 1e-6, 1e-27
    hbar_u = constants.HBAR / (mu * lu**2 / tu)
    si_units = {"f_gg": 1.0, "f_gl": lu**2 * tu, "f_ll": (lu**2 * tu) ** 2}
    g0, lam0, t0 = 0.5, constants.INTERMEDIATE_LAMBDA, 4e-5
    si = _closed_form_raw(probe.mass, constants.HBAR, probe.sigma0, probe.ell0, g0, lam0, t0)
    sc = _closed_form_raw(
        probe.mass / mu, hbar_u, probe.sigma0 / lu, probe.ell0 / lu, g0, lam0 * lu**2 * tu, t0 / tu
    )
    audit = {}
    for k, name in enumerate(elements):
        back = sc[k] * si_units[name]
        audit[name] = {
            "si": float(si[k]),
            "rescaled_units_in_si": float(back),
            "consistent": bool(abs(back - si[k]) <= 1e-9 * abs(si[k])),
        }

    summary = {
        name: {"max_rel_err": worst[name], "agrees": bool(worst[name] <= agree_rtol)}
        for name in elements
    }
    return {
        "kind": "closed_form_vs_general",
        "agree_rtol": agree_rtol,
        "agrees": all(s["agrees"] for s in summary.values()),
        "authoritative": "general",
        "summary": summary,
        "unit_audit": audit,
        "points": points,
    }


# --------------------------------------------------------------------------
# derived quantities


def tilde_bounds(f: QfimMatrix):
    """Effective diagonal information with the other parameter unknown:
    (F_gg - F_gl^2 / F_ll, F_ll - F_gl^2 / F_gg)."""
    gg, gl, ll = (np.asarray(x, float) for x in (f.f_gg, f.f_gl, f.f_ll))
    if np.any(gg <= 0) or np.any(ll <= 0):
        raise ValidationError("tilde bounds need strictly positive diagonal QFIM elements")
    return _squeeze(gg - gl * gl / ll), _squeeze(ll - gl * gl / gg)


def qfim_determinant(f: QfimMatrix):
    return _squeeze(
        np.asarray(f.f_gg, float) * np.asarray(f.f_ll, float) - np.asarray(f.f_gl, float) ** 2
    )


def qfim_inverse(f: QfimMatrix, rtol: float = 1e-12) -> np.ndarray:
    """Inverse of the 2x2 QFIM, shape (..., 2, 2).

    Raises SingularMatrixError when |det F| <= rtol * F_gg * F_ll, i.e. the
    two parameters are not independently estimable.
    """
    gg, gl, ll = (np.asarray(x, float) for x in (f.f_gg, f.f_gl, f.f_ll))
    det = gg * ll - gl * gl
    bad = np.abs(det) <= rtol * np.abs(gg * ll)
    if np.any(bad):
        worst = float(np.asarray(det)[bad].flat[0])
        raise SingularMatrixError(
            f"QFIM is singular (det = {worst!r}); the parameters are not independent", det=worst
        )
    adj = np.stack([np.stack([ll, -gl], -1), np.stack([-gl, gg], -1)], -2)
    return adj / det[..., None, None]


@dataclass(frozen=True)
class PrecisionReport:
    """Individual vs simultaneous estimation figures of merit.

    ``valid`` marks points where det F > 0 and both diagonals are positive;
    elsewhere the simultaneous quantities are NaN.
    """

    tilde_gg: float | np.ndarray
    tilde_ll: float | np.ndarray
    delta_i: float | np.ndarray
    delta_s: float | np.ndarray
    ratio: float | np.ndarray
    det_f: float | np.ndarray
    compat_trace: float | np.ndarray | None = None
    valid: bool | np.ndarray = True


def performance_ratio(f: QfimMatrix, *, strict: bool = True, compat_trace=None) -> PrecisionReport:
    """Total-variance ratio of individual to simultaneous estimation.

    The ratio is evaluated as 2 (1 - r^2) with r^2 = F_gl^2 / (F_gg F_ll),
    which equals delta_i / delta_s identically and keeps ratio <= 2 exact in
    floating point.

    Args:
        f: the QFIM.
        strict: raise on invalid points; otherwise mark them invalid and
            return NaN for the simultaneous quantities.
        compat_trace: optional compatibility value to carry along.
    """
    gg, gl, ll = (np.asarray(x, float) for x in (f.f_gg, f.f_gl, f.f_ll))
    det = gg * ll - gl * gl
    valid = (gg > 0) & (ll > 0) & (det > 0)
    if strict and not np.all(valid):
        if np.any(gg <= 0) or np.any(ll <= 0):
            raise ValidationError("performance ratio needs positive diagonal QFIM elements")
        raise SingularMatrixError(
            "det F <= 0: simultaneous variance undefined", det=float(np.min(det))
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = gl * gl / (gg * ll)
        tg = np.where(valid, gg - gl * gl / ll, np.nan)
        tl = np.where(valid, ll - gl * gl / gg, np.nan)
        delta_i = np.where((gg > 0) & (ll > 0), 1.0 / gg + 1.0 / ll, np.nan)
        delta_s = np.where(valid, 0.5 * (1.0 / tg + 1.0 / tl), np.nan)
        ratio = np.where(valid, KAPPA * (1.0 - r2), np.nan)
    return PrecisionReport(
        tilde_gg=_squeeze(tg),
        tilde_ll=_squeeze(tl),
        delta_i=_squeeze(delta_i),
        delta_s=_squeeze(delta_s),
        ratio=_squeeze(ratio),
        det_f=_squeeze(det),
        compat_trace=compat_trace,
        valid=bool(valid) if valid.ndim == 0 else valid,
    )


# --------------------------------------------------------------------------
# weak commutativity of the SLDs


@dataclass(frozen=True)
class CompatibilityResult:
    """Both evaluations of vec(a)^T M^-1 (sigma(x)Omega - Omega(x)sigma) M^-1 vec(b).

    Attributes:
        trace: value from explicit matrix products.
        normalized: |trace| / (|vec a| |P|_F |vec b|), P the middle matrix.
        trace_closed: value using the closed-form middle matrix.
        discrepancy: max entrywise |P_direct - P_closed| / max |P_closed|.
        middle_direct, middle_closed: the two (..., 4, 4) middle matrices.
    """

    trace: float | np.ndarray
    normalized: float | np.ndarray
    trace_closed: float | np.ndarray
    discrepancy: float | np.ndarray
    middle_direct: np.ndarray
    middle_closed: np.ndarray


def middle_closed_form(cov) -> np.ndarray:
    """M^-1 (sigma(x)Omega - Omega(x)sigma) M^-1 = Q / (1 - det sigma)^2."""
    cov = _as_cov(cov)
    sxx, sxp, spp = np.broadcast_arrays(*_entries(cov))
    z = np.zeros_like(sxx)
    q = np.stack(
        [
            np.stack([z, spp, -spp, z], -1),
            np.stack([-spp, z, 2 * sxp, -sxx], -1),
            np.stack([spp, -2 * sxp, z, sxx], -1),
            np.stack([z, sxx, -sxx, z], -1),
        ],
        -2,
    )
    ex = np.asarray(cov.excess, float)
    return q / (ex * ex)[..., None, None]


def _middle_normal_mode(cov):
    """M^-1 (sigma(x)Omega - Omega(x)sigma) M^-1 by explicit products in the
    normal-mode frame.

    With T = S^-1 (x) S^-1, M^-1 = T^T D T and the middle factor becomes
    nu (I(x)Omega - Omega(x)I) there (S is symplectic), so the product is
    nu T^T D (I(x)Omega - Omega(x)I) D T.
    """
    s_inv, ex = _normal_mode(cov)
    oo = kron2(OMEGA, OMEGA)
    eye = np.eye(4)
    exm = ex[..., None, None]
    core = 0.5 * (eye + oo) / exm + 0.5 * (eye - oo) / (2.0 + exm)
    k0 = kron2(np.eye(2), OMEGA) - kron2(OMEGA, np.eye(2))
    t = kron2(s_inv, s_inv)
    nu = np.sqrt(1.0 + ex)[..., None, None]
    return nu * (np.swapaxes(t, -1, -2) @ core @ k0 @ core @ t)


def compatibility_trace(cov, dcov_gamma, dcov_lambda, *, method: str = "normal") -> CompatibilityResult:
    """Weak-commutativity value Tr(rho [L_gamma, L_Lambda]) up to a constant
    factor, evaluated by two independent routes."""
    cov = _as_cov(cov)
    ex = np.asarray(cov.excess, float)
    if np.any(ex <= DET_TOL):
        raise SingularMatrixError(
            "compatibility needs a mixed state (det sigma > 1 + tol)", det=float(1.0 + np.min(ex))
        )
    if method == "normal":
        direct = _middle_normal_mode(cov)
    elif method == "lu":
        s = cov.matrix()
        minv = m_inverse(cov, method="lu")
        direct = minv @ (kron2(s, OMEGA) - kron2(OMEGA, s)) @ minv
    else:
        raise ValidationError(f"unknown method {method!r}")
    closed = middle_closed_form(cov)
    u = vec2(_as_cov(dcov_gamma).matrix())
    v = vec2(_as_cov(dcov_lambda).matrix())
    trace = np.einsum("...i,...ij,...j->...", u, direct, v)
    trace_b = np.einsum("...i,...ij,...j->...", u, closed, v)
    scale = np.linalg.norm(u, axis=-1) * np.linalg.norm(direct, axis=(-2, -1)) * np.linalg.norm(v, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(scale > 0, np.abs(trace) / scale, 0.0)
    ref = np.max(np.abs(closed), axis=(-2, -1))
    discrepancy = np.max(np.abs(direct - closed), axis=(-2, -1)) / ref
    return CompatibilityResult(
        trace=_squeeze(trace),
        normalized=_squeeze(normalized),
        trace_closed=_squeeze(trace_b),
        discrepancy=_squeeze(discrepancy),
        middle_direct=direct,
        middle_closed=closed,
    )


def _squeeze(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a
