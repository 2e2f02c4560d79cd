"""Scattering decoherence: the temperature map, the closed-form evolved
density matrix, and a direct quadrature of the propagator used to check both.

Position-space conventions. The evolved state is

    rho(x, x') = N exp(-A x^2 - B x'^2 + C x x')

and with the Hermitian assembly used here (A = A1 + A2 - i A3, B = conj(A),
C = 2 A2) this is

    rho(x, x') = sqrt(2 A1 / pi) exp(-A1 (x^2 + x'^2) - A2 (x - x')^2
                                     + i A3 (x^2 - x'^2)).

The quadrature oracle works in the scaled coordinate X = x / sigma_0, time
tau = t / tau_0 and decoherence strength lam = Lambda sigma_0^2 tau_0, where
the initial state is exp(-(1 - i g) X^2/2 - (1 + i g) X'^2/2
- (X - X')^2 / (2 l^2)) / sqrt(pi) and the kernel is

    exp{ i/(2 tau) [(X - X0)^2 - (X' - X0')^2]
         - lam tau/3 [(X - X')^2 + (X0 - X0')^2 + (X - X')(X0 - X0')] } / (2 pi tau).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import constants
from .errors import QuadratureError, UnphysicalStateError, ValidationError
from .phase_space import CovarianceMatrix, EnvParams, ProbeParams, tau0

MAX_NODES = 4096


# --------------------------------------------------------------------------
# thermometry


@dataclass(frozen=True)
class ThermometryConstants:
    """Gas and probe properties entering the long-wavelength scattering rate."""

    air_mass: float = constants.AIR_MASS
    number_density: float = constants.AIR_DENSITY
    molecule_size: float = constants.MOLECULE_SIZE

    def __post_init__(self):
        for name in ("air_mass", "number_density", "molecule_size"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be positive and finite, got {value!r}")

    @classmethod
    def from_env(cls, env: EnvParams) -> "ThermometryConstants":
        return cls(env.air_mass, env.number_density, env.molecule_size)

    @property
    def prefactor(self) -> float:
        """Lambda / (k_B T)^(3/2)."""
        return (
            8.0 / (3.0 * constants.HBAR**2)
            * math.sqrt(2.0 * math.pi * self.air_mass)
            * self.number_density
            * self.molecule_size**2
        )


def lambda_of_temperature(temperature, c: ThermometryConstants | None = None):
    """Scattering constant (m^-2 s^-1) of a gas at ``temperature`` kelvin."""
    c = c or ThermometryConstants()
    temp = np.asarray(temperature, float)
    if np.any(~(temp > 0)) or not np.all(np.isfinite(temp)):
        raise ValidationError(f"temperature must be positive and finite, got {temperature!r}")
    return _squeeze(c.prefactor * (constants.K_B * temp) ** 1.5)


def temperature_of_lambda(lam, c: ThermometryConstants | None = None):
    """Analytic inverse of :func:`lambda_of_temperature`."""
    c = c or ThermometryConstants()
    lam = np.asarray(lam, float)
    if np.any(~(lam > 0)) or not np.all(np.isfinite(lam)):
        raise ValidationError(f"lambda must be positive and finite, got {lam!r}")
    return _squeeze((lam / c.prefactor) ** (2.0 / 3.0) / constants.K_B)


def decoherence_timescale(lam, delta_x):
    """Time (s) for coherence across ``delta_x`` to decay: 1 / (Lambda dx^2).

    Returns ``inf`` for Lambda = 0.
    """
    lam = np.asarray(lam, float)
    dx = np.asarray(delta_x, float)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValidationError(f"lambda must be >= 0 and finite, got {lam!r}")
    if np.any(~(dx > 0)):
        raise ValidationError(f"delta_x must be positive, got {delta_x!r}")
    with np.errstate(divide="ignore"):
        return _squeeze(1.0 / (lam * dx * dx))


# --------------------------------------------------------------------------
# closed-form density matrix


@dataclass(frozen=True)
class RhoParameters:
    """Gaussian density-matrix coefficients in SI units (m^-2, N in m^-1).

    ``a2_printed`` is the coefficient exactly as published; ``a2`` includes the
    missing Lambda t / (24 sigma_0^4 B^2) term found by the quadrature oracle.
    """

    a1: float
    a2: float
    a3: float
    b_sq: float
    a2_printed: float
    sigma0: float

    @property
    def n_t(self):
        return np.sqrt(2.0 * self.a1 / np.pi)

    @property
    def a_t(self):
        return self.a1 + self.a2 - 1j * self.a3

    @property
    def b_t(self):
        return self.a1 + self.a2 + 1j * self.a3

    @property
    def c_t(self):
        return 2.0 * self.a2 + 0j

    def density(self, x, xp):
        """rho(x, x') with positions in metres."""
        x = np.asarray(x, float)
        xp = np.asarray(xp, float)
        return self.n_t * np.exp(-self.a_t * x * x - self.b_t * xp * xp + self.c_t * x * xp)

    def covariance(self) -> CovarianceMatrix:
        """Second moments of rho in the dimensionless covariance convention."""
        s2 = self.sigma0**2
        return CovarianceMatrix(
            1.0 / (2.0 * self.a1 * s2),
            self.a3 / self.a1,
            2.0 * s2 * (self.a1 + 2.0 * self.a2 + self.a3**2 / self.a1),
        )

    def purity(self):
        """Tr(rho^2) of the Gaussian."""
        return np.sqrt(self.a1 / (self.a1 + 2.0 * self.a2))


def rho_parameters(probe: ProbeParams, env: EnvParams, t) -> RhoParameters:
    """Coefficients of the evolved position-space density matrix at ``t`` > 0."""
    t = np.asarray(t, float)
    if np.any(~(t > 0)) or not np.all(np.isfinite(t)):
        raise ValidationError("rho_parameters needs t > 0 (the propagator is singular at t = 0)")
    m, h, s, g, lam = probe.mass, constants.HBAR, probe.sigma0, probe.gamma, env.lam
    inv_l2 = 0.0 if math.isinf(probe.ell0) else 1.0 / probe.ell0**2
    b_sq = (
        1.0 / (4.0 * s**4) + inv_l2 / (2.0 * s**2)
        + (m / (2.0 * h * t) + g / (2.0 * s**2)) ** 2 + lam * t / (3.0 * s**2)
    )
    a1 = m**2 / (8.0 * h**2 * t**2 * s**2 * b_sq)
    a2_printed = (
        m**2 / (4.0 * h**2 * t**2 * b_sq) * (inv_l2 / 2.0 + lam * t)
        + lam * t / (12.0 * s**2 * b_sq) * (lam * t + 1.0 / (2.0 * s**2) + 2.0 * inv_l2)
        + m * lam * g / (4.0 * h * s**2 * b_sq)
        + lam * t * g**2 / (12.0 * s**4 * b_sq)
    )
    a2 = a2_printed + lam * t / (24.0 * s**4 * b_sq)
    a3 = (
        m / (4.0 * h * t * s**2 * b_sq) * (lam * t + 1.0 / (2.0 * s**2) + inv_l2)
        + m * g / (8.0 * h * t * s**2 * b_sq) * (m / (h * t) + g / s**2)
    )
    if np.any(~(a1 > 0)) or np.any(~(b_sq > 0)) or np.any(a2 < 0):
        raise UnphysicalStateError("density-matrix coefficients out of range")
    return RhoParameters(_squeeze(a1), _squeeze(a2), _squeeze(a3), _squeeze(b_sq), _squeeze(a2_printed), s)


# --------------------------------------------------------------------------
# quadrature of the propagator


def _scaled_params(probe, env, t):
    t = float(t)
    if not t > 0:
        raise ValidationError("propagate_numeric needs t > 0")
    tau = t / tau0(probe)
    lam = float(env.lam) * probe.sigma0**2 * tau0(probe)
    ell = probe.ell0 / probe.sigma0
    return tau, lam, ell, float(probe.gamma)


def _initial(g, ell, x0, x0p):
    incoh = 0.0 if math.isinf(ell) else 1.0 / (2.0 * ell * ell)
    return np.exp(
        -(1 - 1j * g) * x0**2 / 2 - (1 + 1j * g) * x0p**2 / 2 - incoh * (x0 - x0p) ** 2
    ) / math.sqrt(math.pi)


def _nodes_for(tau, half, xmax, nodes):
    # enough nodes per oscillation of the free-propagator phase
    need = int(math.ceil(2.0 * half * (half + xmax) / tau))
    n = max(nodes, need)
    if n > MAX_NODES:
        raise QuadratureError(
            f"propagator phase too oscillatory to resolve (needs {n} nodes per axis); "
            "use a larger t or smaller sample points"
        )
    return n


class _Kernel:
    """Source-plane quadrature rule with the initial state folded into the weights."""

    def __init__(self, tau, lam, ell, g, n, half):
        u, w = leggauss(n)
        self.x0 = (u * half)[:, None]
        self.x0p = (u * half)[None, :]
        self.weights = (w * half)[:, None] * (w * half)[None, :] * _initial(g, ell, self.x0, self.x0p)
        self.weights = self.weights / (2.0 * math.pi * tau)
        self.tau, self.lam = tau, lam

    def phase(self, x, xp):
        d0 = self.x0 - self.x0p
        return (
            1j / (2 * self.tau) * ((x - self.x0) ** 2 - (xp - self.x0p) ** 2)
            - (self.lam * self.tau / 3) * ((x - xp) ** 2 + d0**2 + (x - xp) * d0)
        )

    def rho(self, x, xp):
        return np.sum(self.weights * np.exp(self.phase(x, xp)))

    def diagonal_moments(self, x):
        """rho(x, x), d_X rho and d_X d_X' rho at X = X' = x."""
        e = self.weights * np.exp(self.phase(x, x))
        d0 = self.x0 - self.x0p
        c = self.lam * self.tau / 3
        dx = 1j / self.tau * (x - self.x0) - c * d0
        dxp = -1j / self.tau * (x - self.x0p) + c * d0
        return np.sum(e), np.sum(e * dx), np.sum(e * (dx * dxp + 2 * c))


def _scaled_rho(probe, env, t, xs, xps, nodes, half):
    tau, lam, ell, g = _scaled_params(probe, env, t)
    xmax = float(max(np.max(np.abs(xs), initial=0.0), np.max(np.abs(xps), initial=0.0)))
    n = _nodes_for(tau, half, xmax, nodes)
    kern = _Kernel(tau, lam, ell, g, n, half)
    out = np.empty(xs.shape, complex)
    for idx in np.ndindex(xs.shape):
        out[idx] = kern.rho(xs[idx], xps[idx])
    return out, n


def propagate_numeric(
    probe: ProbeParams,
    env: EnvParams,
    t,
    x,
    xp,
    *,
    nodes: int = 200,
    half_width: float = 8.0,
    check: bool = True,
    rtol: float = 1e-6,
):
    """rho(x, x', t) by direct Gauss-Legendre quadrature of the propagator
    integral over the initial state.

    Args:
        x, xp: sample positions in metres (broadcast together).
        nodes: minimum Gauss-Legendre nodes per source axis; raised
            automatically to resolve the free-propagator phase.
        half_width: source-plane truncation in units of sigma_0.
        check: repeat with twice the nodes and raise QuadratureError when the
            results differ by more than ``rtol`` relative to max |rho|.

    Returns:
        complex ndarray in m^-1, shaped like broadcast(x, xp).
    """
    xs, xps = np.broadcast_arrays(np.asarray(x, float) / probe.sigma0, np.asarray(xp, float) / probe.sigma0)
    rho, n = _scaled_rho(probe, env, t, xs, xps, nodes, half_width)
    if check:
        fine, _ = _scaled_rho(probe, env, t, xs, xps, 2 * n, half_width)
        scale = np.max(np.abs(fine), initial=0.0)
        err = np.max(np.abs(fine - rho), initial=0.0)
        if scale > 0 and err > rtol * scale:
            raise QuadratureError(f"propagator quadrature unresolved: refinement changed rho by {err / scale:.2e}")
        rho = fine
    return rho / probe.sigma0


def quadrature_moments(
    probe: ProbeParams,
    env: EnvParams,
    t,
    *,
    nodes: int = 200,
    outer_nodes: int = 160,
    half_width: float = 8.0,
):
    """Trace and covariance of the quadrature-propagated state.

    The position integral runs over a window grown until the diagonal density
    at its edge is below 1e-15 of its peak.

    Returns:
        (trace, CovarianceMatrix)
    """
    tau, lam, ell, g = _scaled_params(probe, env, t)
    edge = 4.0
    while True:
        n = _nodes_for(tau, half_width, edge, nodes)
        kern = _Kernel(tau, lam, ell, g, n, half_width)
        peak = abs(kern.rho(0.0, 0.0))
        if abs(kern.rho(edge, edge)) < 1e-15 * peak and abs(kern.rho(-edge, -edge)) < 1e-15 * peak:
            break
        edge *= 1.5
        if edge > 1e4:
            raise QuadratureError("state too wide for the outer quadrature window")
    u, w = leggauss(outer_nodes)
    xs, ws = u * edge, w * edge
    trace = xx = xp = pp = 0.0
    for xi, wi in zip(xs, ws):
        r, dr, ddr = kern.diagonal_moments(xi)
        trace += wi * r.real
        xx += wi * xi * xi * r.real
        xp += wi * (-1j * (2 * xi * dr + r)).real
        pp += wi * ddr.real
    cov = CovarianceMatrix(2.0 * xx / trace, xp / trace, 2.0 * pp / trace)
    return trace, cov


def _squeeze(a):
    a = np.asarray(a)
    return a.item() if a.ndim == 0 else a
