"""The invariant suite behind ``pmprobe validate``.

Each check returns a :class:`CheckResult`; the suite never stops at the first
failure so the report is complete.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from .. import constants
from ..decoherence import propagate_numeric, quadrature_moments, rho_parameters
from ..phase_space import EnvParams, ProbeParams, covariance, d_covariance, finite_diff_covariance
from ..wigner import scaled_rho_sampler, wigner_from_rho, wigner_gaussian
from .config import ScenarioConfig
from .sweeps import (
    run_closed_form_report,
    run_compat_check,
    run_det_sweep,
    run_ratio_sweep,
    run_thermometry,
    run_tilde_lambda_vs_time,
    run_wigner_snapshots,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float | None
    threshold: float | None
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        val = "-" if self.value is None else f"{self.value:.3e}"
        thr = "-" if self.threshold is None else f"{self.threshold:.1e}"
        return f"[{status}] {self.name}: value={val} threshold={thr} ({self.seconds:.2f}s) {self.detail}".rstrip()

    def to_dict(self) -> dict:
        return asdict(self)


def _timed(name: str, fn: Callable[[], tuple[bool, float | None, float | None, str]]) -> CheckResult:
    start = time.perf_counter()
    try:
        passed, value, threshold, detail = fn()
    except Exception as exc:  # a crashing check is a failed check
        passed, value, threshold, detail = False, None, None, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), value, threshold, time.perf_counter() - start, detail)


def matrix_rel_err(a, b) -> np.ndarray:
    """max |a - b| / max |b| over the three entries, per point."""
    num = np.maximum.reduce([np.abs(np.asarray(a.sxx) - b.sxx), np.abs(np.asarray(a.sxp) - b.sxp),
                             np.abs(np.asarray(a.spp) - b.spp)])
    den = np.maximum.reduce([np.abs(b.sxx), np.abs(b.sxp), np.abs(b.spp)])
    return num / den


def random_points(n: int, seed: int = 12345):
    """Random (gamma, lambda, t): uniform gamma in [-3, 3], log-uniform
    lambda in [1e15, 1e23] and t in [1e-8, 1e-4]."""
    rng = np.random.default_rng(seed)
    g = rng.uniform(-3.0, 3.0, n)
    lam = 10.0 ** rng.uniform(15.0, 23.0, n)
    t = 10.0 ** rng.uniform(-8.0, -4.0, n)
    return g, lam, t


def derivative_steps(lam):
    """Central-difference steps: 1e-3 for gamma; lambda / 2 for Lambda, the
    largest admissible step, since the entries are linear in Lambda and the
    only error left is roundoff."""
    return 1e-3, 0.5 * np.asarray(lam, float)


def ratio_max_iff_uncorrelated(ratio, f_gg, f_gl, f_ll, tol):
    """Per row: (ratio within 2 tol of 2) == (F_gl^2 / (F_gg F_ll) <= tol).

    Rows whose normalized correlation sits within 1e-6 relative of the
    threshold are undecidable in floating point and count as consistent.
    """
    r2 = f_gl**2 / (f_gg * f_ll)
    at_max = (2.0 - ratio) <= 2.0 * tol
    uncorrelated = r2 <= tol
    edge = np.abs(r2 - tol) <= 1e-6 * tol
    return (at_max == uncorrelated) | edge


def check_derivatives(config: ScenarioConfig, n: int = 1000):
    g, lam, t = random_points(n)
    pr, env = config.probe(g), config.env(lam)
    h_gamma, h_lambda = derivative_steps(lam)
    worst = 0.0
    for which, step in (("gamma", h_gamma), ("lambda", h_lambda)):
        err = matrix_rel_err(finite_diff_covariance(pr, env, t, which, step), d_covariance(pr, env, t, which))
        worst = max(worst, float(np.max(err)))
    return worst < config.tol_oracle, worst, config.tol_oracle, f"{n} random points"


def check_rho_moments(config: ScenarioConfig, n: int = 100):
    g, lam, t = random_points(n, seed=777)
    worst = 0.0
    for i in range(n):
        pr, env = config.probe(g[i]), config.env(lam[i])
        worst = max(worst, float(matrix_rel_err(rho_parameters(pr, env, t[i]).covariance(), covariance(pr, env, t[i]))))
    return worst < config.tol_oracle, worst, config.tol_oracle, f"{n} random points"


QUADRATURE_POINTS = ((0.5, 3e20, 1e-6), (-0.5, 3e22, 2.2e-6), (0.0, 3e15, 4e-6), (1.0, 3e20, 3e-7), (-1.5, 3e22, 1e-5))


def check_quadrature(config: ScenarioConfig, points=QUADRATURE_POINTS, tol: float = 1e-4):
    worst = 0.0
    offsets = np.array([[0.0, 0.0], [0.5, -0.3], [1.0, 0.7], [-1.2, 0.4], [0.3, 1.5]])
    for g, lam, t in points:
        pr, env = config.probe(g), config.env(lam)
        _, cov_q = quadrature_moments(pr, env, t)
        worst = max(worst, float(matrix_rel_err(cov_q, covariance(pr, env, t))))
        x, xp = offsets[:, 0] * pr.sigma0, offsets[:, 1] * pr.sigma0
        rho_q = propagate_numeric(pr, env, t, x, xp)
        rho_a = rho_parameters(pr, env, t).density(x, xp)
        worst = max(worst, float(np.max(np.abs(rho_q - rho_a)) / np.max(np.abs(rho_a))))
    return worst < tol, worst, tol, f"{len(points)} spot points"


def check_purity_identity(config: ScenarioConfig):
    g = np.linspace(-3, 3, 61)[:, None]
    t = np.concatenate([[0.0], np.logspace(-10, -4, 200)])[None, :]
    cov = covariance(ProbeParams(config.mass, config.sigma0, math.inf, g), EnvParams(0.0), t)
    err = float(np.max(np.abs(np.asarray(cov.det) - 1.0)))
    raw = float(np.max(np.abs(np.asarray(cov.sxx * cov.spp - cov.sxp**2) - 1.0) / (cov.sxx * cov.spp)))
    return err <= config.tol_equal, err, config.tol_equal, f"entrywise det relative residual {raw:.1e}"


def check_wigner_oracle(config: ScenarioConfig, tol: float = 1e-4):
    pr, env, t = config.probe(0.0), config.env(constants.STRONG_LAMBDA), 2.2e-6
    cov = covariance(pr, env, t)
    sampler = scaled_rho_sampler(rho_parameters(pr, env, t))
    evals, evecs = np.linalg.eigh(cov.matrix())
    worst = 0.0
    for a in np.linspace(-1.5, 1.5, 5):
        for b in np.linspace(-1.5, 1.5, 5):
            r = evecs @ (np.sqrt(evals) * np.array([a, b]))
            val, _ = wigner_from_rho(sampler, r[0], r[1])
            ref = float(wigner_gaussian(cov, r[0], r[1]))
            worst = max(worst, abs(val - ref) / ref)
    return worst < tol, worst, tol, "5x5 points on the covariance ellipse"


def run_validation(config: ScenarioConfig, threads: int | None = None, quick: bool = False) -> list[CheckResult]:
    results = []

    def thermo():
        tab = run_thermometry(config)
        return tab.summary["anchors_within_2pct"], tab.summary["max_abs_deviation_pct"], 2.0, "percent"

    results.append(_timed("thermometry anchors", thermo))

    def compat():
        tab = run_compat_check(config, threads)
        detail = f"route discrepancy {tab.summary['max_discrepancy']:.1e}"
        return tab.summary["saturable"], tab.summary["max_normalized"], config.tol_compat, detail

    results.append(_timed("compatibility saturation", compat))
    results.append(_timed("derivatives vs finite differences", lambda: check_derivatives(config)))
    results.append(_timed("density-matrix moments", lambda: check_rho_moments(config)))
    if not quick:
        results.append(_timed("propagator quadrature", lambda: check_quadrature(config)))
    results.append(_timed("purity identity", lambda: check_purity_identity(config)))

    ratio_holder = {}

    def penalty():
        tab = run_ratio_sweep(config, threads)
        ratio_holder["tab"] = tab
        d = tab.data
        ok = np.isfinite(d["ratio"])
        tilde_ok = bool(np.all(d["tilde_gg"][ok] <= d["f_gg"][ok]) and np.all(d["tilde_ll"][ok] <= d["f_ll"][ok]))
        range_ok = bool(np.all((d["ratio"][ok] > 0) & (d["ratio"][ok] <= 2.0)))
        iff_ok = bool(np.all(ratio_max_iff_uncorrelated(d["ratio"][ok], d["f_gg"][ok], d["f_gl"][ok],
                                                        d["f_ll"][ok], config.tol_equal)))
        detail = f"tilde<=F {tilde_ok}, 0<R<=2 {range_ok}, R=2 iff F_gl~0 {iff_ok}, failed rows {int(np.sum(~ok))}"
        return tilde_ok and range_ok and iff_ok and bool(np.all(ok)), float(np.max(d["ratio"][ok])), 2.0, detail

    results.append(_timed("multiparameter penalty", penalty))

    def qualitative():
        tab = ratio_holder.get("tab") or run_ratio_sweep(config, threads)
        d = tab.data
        regions = {float(L): bool(np.any(d["ratio"][d["lambda"] == L] > 1)) for L in config.lambda_values()}
        tl = run_tilde_lambda_vs_time(config, threads)
        key = next((k for k in tl.summary if k.startswith(f"dominance@{constants.STRONG_LAMBDA:.3g}@gamma=-0.5")), None)
        dom = tl.summary.get(key) if key else None
        det = run_det_sweep(config, threads)
        ok = all(regions.values()) and bool(dom and dom["points"] > 0) and det.summary["all_positive"]
        window = dom["widest_window_s"] if dom else None
        return ok, None, None, f"R>1 regions {regions}; gamma=-0.5 window {window}; det>0 {det.summary['all_positive']}"

    results.append(_timed("qualitative figure properties", qualitative))

    def wigner():
        tab, _ = run_wigner_snapshots(config)
        d = tab.data
        norm_ok = tab.summary["max_norm_error"] <= 1e-3
        t0 = d["t"] == 0
        tilt_ok = bool(np.all(d["tilt_sign"][t0] == np.sign(d["gamma"][t0])))
        passed, worst, tol, _ = check_wigner_oracle(config)
        return norm_ok and tilt_ok and passed, worst, tol, f"norm err {tab.summary['max_norm_error']:.1e}, tilt ok {tilt_ok}"

    results.append(_timed("wigner validation", wigner))

    def closed_form():
        rep = run_closed_form_report(config)
        agrees = rep.get("agrees")
        return "summary" in rep or "skipped" in rep, None, None, f"report produced; closed forms agree: {agrees}"

    results.append(_timed("closed-form report", closed_form))

    def determinism():
        small = replace(config, t_points=40, gamma_points=11, contour_points=11)
        a = run_ratio_sweep(small, threads).body_lines()
        b = run_ratio_sweep(small, 1).body_lines()
        return a == b, None, None, "threaded vs serial ratio sweep bodies"

    results.append(_timed("determinism", determinism))
    return results
