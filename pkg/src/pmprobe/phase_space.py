"""Probe parameterization and the second moments of the evolved state.

The covariance matrix uses the anticommutator convention in dimensionless
quadratures x/sigma_0 and p sigma_0/hbar, so a pure state has det = 1 and the
coherent (gamma = 0, ell_0 = inf) initial state has sigma = I.

Internally every quantity is expressed through three dimensionless numbers:

    T = t / tau_0              free-evolution time
    c = 2 sigma_0^2 / ell_0^2  initial incoherence
    k = Lambda sigma_0^2 tau_0 decoherence strength per tau_0

which keeps the entries O(1)..O(1e7) for the parameter ranges of interest and
lets det(sigma) - 1 be evaluated without subtractive cancellation.

Scalar or array-valued ``gamma``, ``lam`` and ``t`` are all accepted; arrays
broadcast elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import constants
from .errors import UnphysicalStateError, ValidationError

OMEGA = np.array([[0.0, 1.0], [-1.0, 0.0]])
OMEGA.setflags(write=False)

DET_TOL = 1e-9

Param = Literal["gamma", "lambda"]


def _finite(value, name):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class ProbeParams:
    """Initial correlated Gaussian wave packet.

    Attributes:
        mass: particle mass in kg.
        sigma0: initial wave-packet width in m.
        ell0: transverse coherence length in m; ``math.inf`` for a fully
            coherent (pure) initial state.
        gamma: position-momentum correlation, dimensionless. Negative values
            give contractive states.
    """

    mass: float = constants.PROBE_MASS
    sigma0: float = constants.PROBE_WIDTH
    ell0: float = constants.COHERENCE_LENGTH
    gamma: float = 0.0

    def __post_init__(self):
        if not self.mass > 0 or not math.isfinite(self.mass):
            raise ValidationError(f"mass must be positive and finite, got {self.mass!r}")
        if not self.sigma0 > 0 or not math.isfinite(self.sigma0):
            raise ValidationError(f"sigma0 must be positive and finite, got {self.sigma0!r}")
        if not self.ell0 > 0:
            raise ValidationError(f"ell0 must be positive (inf allowed), got {self.ell0!r}")
        _finite(self.gamma, "gamma")

    @property
    def tau0(self) -> float:
        return tau0(self)

    @property
    def incoherence(self) -> float:
        """2 sigma_0^2 / ell_0^2, exactly zero for ell_0 = inf."""
        if math.isinf(self.ell0):
            return 0.0
        return 2.0 * self.sigma0**2 / self.ell0**2

    def with_gamma(self, gamma) -> "ProbeParams":
        return replace(self, gamma=gamma)


@dataclass(frozen=True)
class EnvParams:
    """Scattering environment.

    ``lam`` is the effective scattering constant Lambda in m^-2 s^-1. The gas
    properties only matter for the Lambda <-> temperature map.
    """

    lam: float = constants.STRONG_LAMBDA
    air_mass: float = constants.AIR_MASS
    number_density: float = constants.AIR_DENSITY
    molecule_size: float = constants.MOLECULE_SIZE

    def __post_init__(self):
        _finite(self.lam, "lambda")
        if np.any(np.asarray(self.lam) < 0):
            raise ValidationError(f"lambda must be >= 0, got {self.lam!r}")
        for name in ("air_mass", "number_density", "molecule_size"):
            value = getattr(self, name)
            if not value > 0:
                raise ValidationError(f"{name} must be positive, got {value!r}")

    def with_lambda(self, lam) -> "EnvParams":
        return replace(self, lam=lam)


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric 2x2 matrix [[sxx, sxp], [sxp, spp]].

    Also used as the container for entrywise derivatives of a covariance.
    ``det_excess`` optionally caches det - 1 computed in closed form; when it
    is absent the determinant is formed from the entries.
    """

    sxx: float | np.ndarray
    sxp: float | np.ndarray
    spp: float | np.ndarray
    det_excess: float | np.ndarray | None = field(default=None, compare=False)

    @classmethod
    def from_array(cls, m) -> "CovarianceMatrix":
        m = np.asarray(m, dtype=float)
        if m.shape[-2:] != (2, 2):
            raise ValidationError(f"expected a (..., 2, 2) array, got shape {m.shape}")
        if not np.allclose(m[..., 0, 1], m[..., 1, 0], rtol=1e-12, atol=0.0):
            raise ValidationError("covariance matrix must be symmetric")
        return cls(m[..., 0, 0], m[..., 0, 1], m[..., 1, 1])

    @property
    def shape(self) -> tuple[int, ...]:
        return np.broadcast(self.sxx, self.sxp, self.spp).shape

    def matrix(self) -> np.ndarray:
        """Entries as a (..., 2, 2) array."""
        sxx, sxp, spp = np.broadcast_arrays(
            np.asarray(self.sxx, float), np.asarray(self.sxp, float), np.asarray(self.spp, float)
        )
        return np.stack([np.stack([sxx, sxp], -1), np.stack([sxp, spp], -1)], -2)

    @property
    def displacement(self) -> np.ndarray:
        """First moments; identically zero for this probe."""
        return np.zeros(self.shape + (2,))

    @property
    def excess(self):
        """det(sigma) - 1."""
        if self.det_excess is not None:
            return self.det_excess
        return self.sxx * self.spp - self.sxp**2 - 1.0

    @property
    def det(self):
        if self.det_excess is not None:
            return 1.0 + self.det_excess
        return self.sxx * self.spp - self.sxp**2

    def scaled(self, factor: float) -> "CovarianceMatrix":
        """Return factor * sigma, keeping the cached determinant consistent."""
        excess = None
        if self.det_excess is not None:
            # (1 + e) f^2 - 1 = e f^2 + (f - 1)(f + 1)
            excess = self.det_excess * factor**2 + (factor - 1.0) * (factor + 1.0)
        return CovarianceMatrix(self.sxx * factor, self.sxp * factor, self.spp * factor, excess)

    def check_physical(self, tol: float = DET_TOL) -> "CovarianceMatrix":
        """Raise UnphysicalStateError unless sxx, spp > 0 and det >= 1 - tol."""
        if np.any(np.asarray(self.sxx) <= 0) or np.any(np.asarray(self.spp) <= 0):
            raise UnphysicalStateError("diagonal covariance entries must be positive")
        if np.any(np.asarray(self.excess) < -tol):
            worst = float(np.min(self.det))
            raise UnphysicalStateError(f"det(sigma) = {worst!r} violates the uncertainty relation")
        return self


def tau0(probe: ProbeParams) -> float:
    """Free-evolution time scale m sigma_0^2 / hbar in seconds."""
    return probe.mass * probe.sigma0**2 / constants.HBAR


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValidationError("t must be finite")
    if np.any(t < 0):
        raise ValidationError(f"t must be >= 0, got min {float(np.min(t))!r}")
    return t


def _scaled(probe, env, t):
    """Return (T, c, k) for the given physical parameters."""
    tau = tau0(probe)
    T = _check_time(t) / tau
    k = np.asarray(env.lam, dtype=float) * probe.sigma0**2 * tau
    return T, probe.incoherence, k


def covariance(probe: ProbeParams, env: EnvParams, t) -> CovarianceMatrix:
    """Covariance matrix of the probe after free flight under scattering
    decoherence for a time ``t`` (seconds).

    The entries are evaluated as polynomials in t/tau_0, so t = 0 needs no
    special casing. det - 1 is cached in closed form.
    """
    T, c, k = _scaled(probe, env, t)
    g = np.asarray(probe.gamma, dtype=float)
    b = 1.0 + g * g + c
    sxx = 1.0 + 2.0 * g * T + b * T * T + (4.0 / 3.0) * k * T**3
    spp = b + 4.0 * k * T
    sxp = g + b * T + 2.0 * k * T * T
    # 3 + 3 g T + (1 + g^2) T^2 is a positive-definite quadratic in T
    excess = (
        c
        + (4.0 / 3.0) * k * k * T**4
        + (4.0 / 3.0) * c * k * T**3
        + (4.0 / 3.0) * k * T * (3.0 + 3.0 * g * T + (1.0 + g * g) * T * T)
    )
    return CovarianceMatrix(_squeeze(sxx), _squeeze(sxp), _squeeze(spp), _squeeze(excess))


def d_covariance(probe: ProbeParams, env: EnvParams, t, which: Param) -> CovarianceMatrix:
    """Analytic partial derivative of the covariance entries.

    ``which="gamma"`` returns a dimensionless matrix; ``which="lambda"``
    carries units of m^2 s (the inverse of Lambda's).
    """
    T, c, k = _scaled(probe, env, t)
    g = np.asarray(probe.gamma, dtype=float)
    if which == "gamma":
        dxx = 2.0 * T + 2.0 * g * T * T
        dxp = 1.0 + 2.0 * g * T
        dpp = 2.0 * g + 0.0 * T
    elif which == "lambda":
        dk = probe.sigma0**2 * tau0(probe)
        dxx = (4.0 / 3.0) * dk * T**3
        dxp = 2.0 * dk * T * T
        dpp = 4.0 * dk * T
        dxx, dxp, dpp = np.broadcast_arrays(dxx, dxp, dpp + 0.0 * g)
    else:
        raise ValidationError(f"which must be 'gamma' or 'lambda', got {which!r}")
    dxx, dxp, dpp = np.broadcast_arrays(dxx, dxp, dpp + 0.0 * np.asarray(env.lam, dtype=float))
    return CovarianceMatrix(_squeeze(dxx), _squeeze(dxp), _squeeze(dpp))


def finite_diff_covariance(
    probe: ProbeParams, env: EnvParams, t, which: Param, step
) -> CovarianceMatrix:
    """Central-difference estimate (f(theta + h) - f(theta - h)) / 2h of the
    covariance derivative. Used as an oracle for :func:`d_covariance`.

    ``step`` may be an array broadcasting against the parameter.
    """
    step = np.asarray(step, dtype=float)
    if not np.all(step > 0):
        raise ValidationError(f"step must be positive, got {step!r}")
    if which == "gamma":
        theta = np.asarray(probe.gamma, dtype=float)
        lo, hi = probe.with_gamma(theta - step), probe.with_gamma(theta + step)
        f_lo, f_hi = covariance(lo, env, t), covariance(hi, env, t)
    elif which == "lambda":
        theta = np.asarray(env.lam, dtype=float)
        if np.any(theta - step < 0):
            raise ValidationError("step pushes lambda below zero; use a smaller step")
        f_lo = covariance(probe, env.with_lambda(theta - step), t)
        f_hi = covariance(probe, env.with_lambda(theta + step), t)
    else:
        raise ValidationError(f"which must be 'gamma' or 'lambda', got {which!r}")
    if np.any(theta + step == theta) or np.any(theta - step == theta):
        raise ValidationError(f"step {step!r} underflows the precision of {which}")
    h2 = (theta + step) - (theta - step)  # the step actually realized in floating point
    return CovarianceMatrix(
        _squeeze((f_hi.sxx - f_lo.sxx) / h2),
        _squeeze((f_hi.sxp - f_lo.sxp) / h2),
        _squeeze((f_hi.spp - f_lo.spp) / h2),
    )


def purity(cov: CovarianceMatrix):
    """Tr(rho^2) = 1 / sqrt(det sigma)."""
    det = np.asarray(cov.det, dtype=float)
    if np.any(det <= 0):
        raise UnphysicalStateError(f"non-positive det(sigma) = {float(np.min(det))!r}")
    return _squeeze(1.0 / np.sqrt(det))


def _squeeze(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a
