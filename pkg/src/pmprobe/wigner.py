"""Wigner function of the evolved Gaussian state.

Phase-space coordinates are the quadratures r = (sqrt(2) x / sigma_0,
sqrt(2) p sigma_0 / hbar). In these units the covariance matrix of
:mod:`pmprobe.phase_space` is literally the covariance of W, so

    W(r) = exp(-r^T sigma^-1 r / 2) / (2 pi sqrt(det sigma)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .decoherence import RhoParameters
from .errors import QuadratureError, UnphysicalStateError, ValidationError
from .phase_space import CovarianceMatrix

MIN_SPAN = 5.0
MAX_RESOLUTION = 1.0
SQRT2 = math.sqrt(2.0)


def _inverse_entries(cov: CovarianceMatrix):
    sxx, sxp, spp = (np.asarray(v, float) for v in (cov.sxx, cov.sxp, cov.spp))
    det = np.asarray(cov.det, float)
    if np.any(~(det > 0)) or np.any(sxx <= 0) or np.any(spp <= 0):
        raise UnphysicalStateError("covariance matrix is singular or not positive definite")
    return sxx, sxp, spp, det


def wigner_gaussian(cov: CovarianceMatrix, x, p):
    """Gaussian Wigner function at quadrature coordinates (x, p); broadcasts."""
    sxx, sxp, spp, det = _inverse_entries(cov)
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    quad = (spp * x * x - 2.0 * sxp * x * p + sxx * p * p) / det
    return np.exp(-0.5 * quad) / (2.0 * math.pi * np.sqrt(det))


def ellipse_angle(cov: CovarianceMatrix):
    """Orientation (radians) of the major axis of the Wigner level sets,
    measured from the x axis."""
    return 0.5 * np.arctan2(2.0 * np.asarray(cov.sxp, float), np.asarray(cov.sxx, float) - np.asarray(cov.spp, float))


def scaled_rho_sampler(params: RhoParameters) -> Callable:
    """rho as a function of X = x / sigma_0, normalized so that
    the integral of rho(X, X) dX is 1."""
    s = params.sigma0

    def sampler(xs, xps):
        return s * params.density(np.asarray(xs) * s, np.asarray(xps) * s)

    return sampler


def _transform(rho_sampler, x, p, nodes, half_width):
    u, w = leggauss(nodes)
    y = u * half_width
    w = w * half_width
    xs = x / SQRT2
    ps = p / SQRT2
    vals = rho_sampler(xs - y, xs + y)
    return np.sum(w * np.exp(2j * ps * y) * vals) / (2.0 * math.pi)


def wigner_from_rho(
    rho_sampler: Callable,
    x: float,
    p: float,
    *,
    nodes: int = 200,
    half_width: float = 12.0,
    check: bool = True,
    rtol: float = 1e-8,
    max_nodes: int = 12800,
):
    """Wigner function at one quadrature point by direct integration of the
    position-space density matrix.

    Args:
        rho_sampler: callable rho(X, X') in units of sigma_0 (see
            :func:`scaled_rho_sampler`); must accept arrays.
        x, p: quadrature coordinates.
        nodes, half_width: starting Gauss-Legendre rule over the separation
            variable.
        check: double the nodes until two successive values agree to
            ``rtol`` (relative to the larger of |W(x, p)| and |W(0, 0)|), then
            confirm with a 1.5x wider window. Raises QuadratureError if that
            fails within ``max_nodes``.

    Returns:
        (value, imaginary_residue)
    """
    val = _transform(rho_sampler, x, p, nodes, half_width)
    if check:
        origin = abs(_transform(rho_sampler, 0.0, 0.0, 4 * nodes, half_width))
        n = nodes
        while True:
            fine = _transform(rho_sampler, x, p, 2 * n, half_width)
            scale = max(abs(fine), origin)
            if abs(fine - val) <= rtol * scale:
                break
            n *= 2
            val = fine
            if 2 * n > max_nodes:
                raise QuadratureError(
                    f"Wigner transform did not converge at ({x}, {p}) within {max_nodes} nodes"
                )
        wide = _transform(rho_sampler, x, p, 3 * n, 1.5 * half_width)
        if abs(wide - fine) > rtol * scale:
            raise QuadratureError(f"Wigner transform at ({x}, {p}) depends on the integration window")
        val = fine
    return float(val.real), float(val.imag)


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Wigner function sampled on a rectangular quadrature grid.

    ``values[i, j]`` is W(x[i], p[j]). ``normalization`` is the Riemann sum of
    the values times the cell area; ``span`` is the smaller half-width of the
    grid in standard deviations, and ``under_spanned`` is set when it is
    below 5. ``resolution`` is the larger of the grid spacings measured in
    conditional standard deviations (the width of W along one axis with the
    other held fixed); above 1 the Riemann sum aliases a thin tilted ellipse
    and ``under_resolved`` is set.
    """

    x: np.ndarray
    p: np.ndarray
    values: np.ndarray
    normalization: float
    span: float
    under_spanned: bool
    resolution: float = 0.0
    under_resolved: bool = False

    @property
    def x_range(self):
        return float(self.x[0]), float(self.x[-1])

    @property
    def p_range(self):
        return float(self.p[0]), float(self.p[-1])

    @property
    def nx(self):
        return self.x.size

    @property
    def np(self):
        return self.p.size

    @property
    def cell_area(self):
        return float((self.x[1] - self.x[0]) * (self.p[1] - self.p[0]))


def wigner_grid(
    cov: CovarianceMatrix,
    *,
    span: float = 6.0,
    n: int = 201,
    x_range=None,
    p_range=None,
) -> PhaseSpaceGrid:
    """Sample :func:`wigner_gaussian` on an n x n grid.

    By default the grid covers +-``span`` standard deviations per axis.
    Explicit ``x_range``/``p_range`` override that; a grid narrower than 5
    standard deviations on either side is flagged with a warning.
    """
    if n < 3:
        raise ValidationError("grid needs at least 3 points per axis")
    sd_x = math.sqrt(float(cov.sxx))
    sd_p = math.sqrt(float(cov.spp))
    xr = x_range if x_range is not None else (-span * sd_x, span * sd_x)
    pr = p_range if p_range is not None else (-span * sd_p, span * sd_p)
    if not (xr[0] < xr[1] and pr[0] < pr[1]):
        raise ValidationError("grid ranges must be increasing")
    x = np.linspace(xr[0], xr[1], n)
    p = np.linspace(pr[0], pr[1], n)
    values = wigner_gaussian(cov, x[:, None], p[None, :])
    area = (x[1] - x[0]) * (p[1] - p[0])
    norm = float(np.sum(values) * area)
    reach = min(-xr[0] / sd_x, xr[1] / sd_x, -pr[0] / sd_p, pr[1] / sd_p)
    under = reach < MIN_SPAN
    if under:
        warnings.warn(f"Wigner grid spans only {reach:.2f} standard deviations", RuntimeWarning, stacklevel=2)
    det = float(cov.det)
    resolution = max((x[1] - x[0]) / math.sqrt(det / float(cov.spp)), (p[1] - p[0]) / math.sqrt(det / float(cov.sxx)))
    coarse = resolution > MAX_RESOLUTION
    if coarse:
        warnings.warn(
            f"Wigner grid spacing is {resolution:.2f} conditional standard deviations; increase n",
            RuntimeWarning,
            stacklevel=2,
        )
    return PhaseSpaceGrid(x, p, values, norm, float(reach), bool(under), float(resolution), bool(coarse))
