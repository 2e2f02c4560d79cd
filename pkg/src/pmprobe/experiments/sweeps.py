"""Sweep runners behind the CLI subcommands.

Grid points are flattened in (lambda, gamma, t) order and cut into fixed-size
chunks. Chunks are evaluated on a thread pool and written back by index, so
the output does not depend on the worker count. If a chunk raises, its points
are re-evaluated one by one and failures are recorded in the ``error``
column of the affected rows only.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import constants
from ..decoherence import lambda_of_temperature, temperature_of_lambda
from ..errors import PmProbeError, PurityFallbackWarning, ValidationError
from ..phase_space import covariance, d_covariance
from ..qfim import (
    closed_form_report,
    compatibility_trace,
    performance_ratio,
    qfim_closed_form,
    qfim_general,
)
from ..wigner import PhaseSpaceGrid, ellipse_angle, wigner_grid
from .config import ScenarioConfig
from .table import Column, ResultTable

logger = logging.getLogger(__name__)

CHUNK = 2048
LAMBDA_UNIT = "m^-2 s^-1"
FGL_UNIT = "m^2 s"
FLL_UNIT = "m^4 s^2"


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def _mesh(*axes):
    grids = np.meshgrid(*[np.asarray(a, float) for a in axes], indexing="ij")
    return [g.reshape(-1) for g in grids]


def _map_chunks(func, n: int, threads: int | None, fields: tuple[str, ...]):
    """Evaluate ``func(lo, hi) -> dict[field, array]`` over [0, n) in chunks.

    Returns (columns, errors). ``func`` is retried per point on failure.
    """
    out = {f: np.full(n, np.nan) for f in fields}
    errors = np.full(n, "", dtype=object)
    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]

    def run(bound):
        lo, hi = bound
        try:
            return bound, func(lo, hi), None
        except (PmProbeError, ArithmeticError, ValueError, FloatingPointError):
            per_point = []
            for i in range(lo, hi):
                try:
                    per_point.append((i, func(i, i + 1), ""))
                except (PmProbeError, ArithmeticError, ValueError, FloatingPointError) as exc:
                    per_point.append((i, None, f"{type(exc).__name__}: {exc}"))
            return bound, None, per_point

    workers = max(1, int(threads or default_threads()))
    if workers == 1 or len(bounds) == 1:
        results = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, bounds))
    for (lo, hi), values, per_point in results:
        if values is not None:
            for f in fields:
                out[f][lo:hi] = values[f]
        else:
            for i, vals, err in per_point:
                if vals is not None:
                    for f in fields:
                        out[f][i] = np.asarray(vals[f]).reshape(-1)[0]
                errors[i] = err.replace("\n", " ")
    return out, errors


def _qfim_fields(config: ScenarioConfig, lam, gam, t):
    def func(lo, hi):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PurityFallbackWarning)
            f = qfim_general(config.probe(gam[lo:hi]), config.env(lam[lo:hi]), t[lo:hi])
        rep = performance_ratio(f, strict=False)
        approx = np.broadcast_to(np.asarray(f.approximate, float), (hi - lo,))
        return {
            "f_gg": f.f_gg, "f_gl": f.f_gl, "f_ll": f.f_ll,
            "tilde_gg": rep.tilde_gg, "tilde_ll": rep.tilde_ll,
            "delta_i": rep.delta_i, "delta_s": rep.delta_s,
            "ratio": rep.ratio, "det_f": rep.det_f, "approximate": approx,
        }

    return func


_QFIM_FIELDS = ("f_gg", "f_gl", "f_ll", "tilde_gg", "tilde_ll", "delta_i", "delta_s", "ratio", "det_f", "approximate")


def _invalid_rows(vals, errors):
    """Mark rows whose simultaneous quantities are undefined."""
    bad = ~np.isfinite(vals["ratio"]) & (errors == "")
    errors = errors.copy()
    errors[bad & (vals["det_f"] <= 0)] = "SingularMatrixError: det F <= 0"
    errors[bad & (errors == "")] = "ValidationError: non-positive diagonal QFIM element"
    return errors


def _qfim_columns():
    return [
        Column("f_gg", "1"), Column("f_gl", FGL_UNIT), Column("f_ll", FLL_UNIT),
        Column("tilde_gg", "1"), Column("tilde_ll", FLL_UNIT),
        Column("delta_i", "mixed"), Column("delta_s", "mixed"),
        Column("ratio", "1"), Column("det_f", FLL_UNIT),
    ]


# --------------------------------------------------------------------------
# ratio / contour sweep


def run_ratio_sweep(config: ScenarioConfig, threads: int | None = None) -> ResultTable:
    """Performance ratio over the contour grid of (gamma, t) for every lambda."""
    n = config.contour_points
    lam, gam, t = _mesh(config.lambda_values(), config.gammas(n), config.times(n))
    vals, errors = _map_chunks(_qfim_fields(config, lam, gam, t), lam.size, threads, _QFIM_FIELDS)
    errors = _invalid_rows(vals, errors)
    cols = [Column("lambda", LAMBDA_UNIT), Column("gamma", "1"), Column("t", "s")] + _qfim_columns()
    cols += [Column("approximate", "1", "bool"), Column("error", "1", "str")]
    data = {"lambda": lam, "gamma": gam, "t": t, **vals, "error": errors}
    data["approximate"] = vals["approximate"] > 0
    ratio = vals["ratio"]
    summary = {
        "rows": int(lam.size),
        "failed_rows": int(np.sum(errors != "")),
        "max_ratio": float(np.nanmax(ratio)) if np.any(np.isfinite(ratio)) else None,
        "min_ratio": float(np.nanmin(ratio)) if np.any(np.isfinite(ratio)) else None,
    }
    for L in config.lambda_values():
        sel = (lam == L) & np.isfinite(ratio)
        summary[f"frac_ratio_gt_1@{L:.3g}"] = float(np.mean(ratio[sel] > 1)) if np.any(sel) else None
    return ResultTable("ratio", cols, data, summary, config.config_hash())


# --------------------------------------------------------------------------
# QFIM against gamma at fixed time


def run_qfim_vs_gamma(config: ScenarioConfig, t_fixed: float | None = None, threads: int | None = None) -> ResultTable:
    """QFIM elements and tilde bounds against gamma at a fixed time, with the
    published closed forms alongside."""
    t_fixed = config.t_fixed if t_fixed is None else float(t_fixed)
    if not t_fixed > 0:
        raise ValidationError("t_fixed must be positive")
    lam, gam = _mesh(config.lambda_values(), config.gammas())
    t = np.full(lam.shape, t_fixed)
    vals, errors = _map_chunks(_qfim_fields(config, lam, gam, t), lam.size, threads, _QFIM_FIELDS)

    finite_ell = not math.isinf(config.ell0)

    def closed(lo, hi):
        f = qfim_closed_form(config.probe(gam[lo:hi]), config.env(lam[lo:hi]), t[lo:hi])
        return {"cf_gg": f.f_gg, "cf_gl": f.f_gl, "cf_ll": f.f_ll}

    if finite_ell:
        cf, _ = _map_chunks(closed, lam.size, threads, ("cf_gg", "cf_gl", "cf_ll"))
    else:
        cf = {k: np.full(lam.size, np.nan) for k in ("cf_gg", "cf_gl", "cf_ll")}
    with np.errstate(divide="ignore", invalid="ignore"):
        scale_gl = np.sqrt(vals["f_gg"] * vals["f_ll"])
        cf_err = np.maximum.reduce([
            np.abs(cf["cf_gg"] - vals["f_gg"]) / vals["f_gg"],
            np.abs(cf["cf_gl"] - vals["f_gl"]) / scale_gl,
            np.abs(cf["cf_ll"] - vals["f_ll"]) / vals["f_ll"],
        ])
    data = {
        "lambda": lam, "gamma": gam,
        "f_gg": vals["f_gg"], "f_gl": vals["f_gl"], "f_ll": vals["f_ll"],
        "f_gl_rel": vals["f_gl"] * lam, "f_ll_rel": vals["f_ll"] * lam * lam,
        "tilde_gg": vals["tilde_gg"], "tilde_ll": vals["tilde_ll"],
        "tilde_ll_rel": vals["tilde_ll"] * lam * lam,
        **cf, "cf_max_rel_err": cf_err,
        "error": _invalid_rows(vals, errors),
    }
    cols = [
        Column("lambda", LAMBDA_UNIT), Column("gamma", "1"),
        Column("f_gg", "1"), Column("f_gl", FGL_UNIT), Column("f_ll", FLL_UNIT),
        Column("f_gl_rel", "1"), Column("f_ll_rel", "1"),
        Column("tilde_gg", "1"), Column("tilde_ll", FLL_UNIT), Column("tilde_ll_rel", "1"),
        Column("cf_gg", "1"), Column("cf_gl", FGL_UNIT), Column("cf_ll", FLL_UNIT),
        Column("cf_max_rel_err", "1"), Column("error", "1", "str"),
    ]
    gl_norm = np.abs(vals["f_gl"]) / np.sqrt(vals["f_gg"] * vals["f_ll"])
    summary = {
        "t_fixed": t_fixed,
        "rows": int(lam.size),
        "tilde_le_diag": bool(np.all(vals["tilde_gg"] <= vals["f_gg"]) and np.all(vals["tilde_ll"] <= vals["f_ll"])),
        "min_normalized_f_gl": float(np.nanmin(gl_norm)),
        "closed_form_max_rel_err": float(np.nanmax(cf_err)) if finite_ell else None,
    }
    return ResultTable("qfim", cols, data, summary, config.config_hash())


# --------------------------------------------------------------------------
# tilde bound on Lambda against time


def dominance_windows(t: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    """Contiguous runs of True in ``mask`` as (t_start, t_end) pairs."""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        if not flag and start is not None:
            runs.append((float(t[start]), float(t[i - 1])))
            start = None
    if start is not None:
        runs.append((float(t[start]), float(t[len(mask) - 1])))
    return runs


def run_tilde_lambda_vs_time(config: ScenarioConfig, threads: int | None = None) -> ResultTable:
    """Tilde bound on Lambda against time for each gamma in ``gamma_set``,
    ranked per (lambda, t)."""
    gset = np.asarray(config.gamma_set, float)
    times = config.times()
    lams = config.lambda_values()
    lam, gam, t = _mesh(lams, gset, times)
    vals, errors = _map_chunks(_qfim_fields(config, lam, gam, t), lam.size, threads, _QFIM_FIELDS)
    tl = vals["tilde_ll"].reshape(lams.size, gset.size, times.size)
    # rank 1 = largest tilde bound; ties broken by gamma order, NaN ranks last
    key = np.where(np.isfinite(tl), -tl, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(1, gset.size + 1)[None, :, None], axis=1)
    best = gset[order[:, 0, :]]
    summary = {"rows": int(lam.size)}
    for i, L in enumerate(lams):
        for j, g in enumerate(gset):
            others = np.delete(tl[i], j, axis=0)
            if others.size == 0:
                continue
            strict = np.all(tl[i, j][None, :] > others, axis=0)
            wins = dominance_windows(times, strict)
            summary[f"dominance@{L:.3g}@gamma={g:g}"] = {
                "points": int(np.sum(strict)),
                "widest_window_s": max(wins, key=lambda w: w[1] / w[0]) if wins else None,
            }
    data = {
        "lambda": lam, "gamma": gam, "t": t,
        "tilde_ll": vals["tilde_ll"], "tilde_ll_rel": vals["tilde_ll"] * lam * lam,
        "rank": rank.reshape(-1), "best_gamma": np.repeat(best[:, None, :], gset.size, axis=1).reshape(-1),
        "error": _invalid_rows(vals, errors),
    }
    cols = [
        Column("lambda", LAMBDA_UNIT), Column("gamma", "1"), Column("t", "s"),
        Column("tilde_ll", FLL_UNIT), Column("tilde_ll_rel", "1"),
        Column("rank", "1", "int"), Column("best_gamma", "1"), Column("error", "1", "str"),
    ]
    return ResultTable("tilde", cols, data, summary, config.config_hash())


# --------------------------------------------------------------------------
# determinant


def run_det_sweep(config: ScenarioConfig, threads: int | None = None) -> ResultTable:
    """det F against time for ``det_lambdas`` x ``gamma_set``."""
    gset = np.asarray(config.gamma_set, float)
    lam, gam, t = _mesh(config.det_lambdas, gset, config.times())
    vals, errors = _map_chunks(_qfim_fields(config, lam, gam, t), lam.size, threads, _QFIM_FIELDS)
    det = vals["det_f"]
    data = {
        "lambda": lam, "gamma": gam, "t": t,
        "f_gg": vals["f_gg"], "f_gl": vals["f_gl"], "f_ll": vals["f_ll"],
        "det_f": det, "det_f_rel": det * lam * lam, "error": _invalid_rows(vals, errors),
    }
    cols = [
        Column("lambda", LAMBDA_UNIT), Column("gamma", "1"), Column("t", "s"),
        Column("f_gg", "1"), Column("f_gl", FGL_UNIT), Column("f_ll", FLL_UNIT),
        Column("det_f", FLL_UNIT), Column("det_f_rel", "1"), Column("error", "1", "str"),
    ]
    psd_floor = -1e-12 * vals["f_gg"] * vals["f_ll"]
    summary = {
        "rows": int(lam.size),
        "all_positive": bool(np.all(det > 0)),
        "psd": bool(np.all(det >= psd_floor)),
        "min_det_rel": float(np.nanmin(det / (vals["f_gg"] * vals["f_ll"]))),
    }
    return ResultTable("det", cols, data, summary, config.config_hash())


# --------------------------------------------------------------------------
# compatibility


def run_compat_check(config: ScenarioConfig, threads: int | None = None) -> ResultTable:
    """Weak-commutativity value over (lambda, gamma, t) with both routes."""
    lam, gam, t = _mesh(config.lambda_values(), config.gammas(), config.times())

    def func(lo, hi):
        pr, env, tt = config.probe(gam[lo:hi]), config.env(lam[lo:hi]), t[lo:hi]
        res = compatibility_trace(
            covariance(pr, env, tt), d_covariance(pr, env, tt, "gamma"), d_covariance(pr, env, tt, "lambda")
        )
        return {"trace": res.trace, "normalized": res.normalized,
                "trace_closed": res.trace_closed, "discrepancy": res.discrepancy}

    fields = ("trace", "normalized", "trace_closed", "discrepancy")
    vals, errors = _map_chunks(func, lam.size, threads, fields)
    cols = [
        Column("lambda", LAMBDA_UNIT), Column("gamma", "1"), Column("t", "s"),
        Column("trace", FGL_UNIT), Column("normalized", "1"), Column("trace_closed", FGL_UNIT),
        Column("discrepancy", "1"), Column("error", "1", "str"),
    ]
    data = {"lambda": lam, "gamma": gam, "t": t, **vals, "error": errors}
    summary = {
        "rows": int(lam.size),
        "failed_rows": int(np.sum(errors != "")),
        "max_normalized": float(np.nanmax(vals["normalized"])),
        "max_discrepancy": float(np.nanmax(vals["discrepancy"])),
        "tol": config.tol_compat,
        "saturable": bool(np.nanmax(vals["normalized"]) < config.tol_compat and not np.any(errors != "")),
    }
    return ResultTable("compat", cols, data, summary, config.config_hash())


# --------------------------------------------------------------------------
# thermometry


def run_thermometry(config: ScenarioConfig) -> ResultTable:
    """Lambda <-> temperature for the configured environment and the three
    reference pairs, with percent deviation and round-trip error."""
    c = config.thermometry()
    rows = []
    for L, T_ref in constants.ANCHOR_TEMPERATURES.items():
        T = float(temperature_of_lambda(L, c))
        back = float(lambda_of_temperature(T, c))
        rows.append(("lambda_to_T", L, T, T_ref, 100.0 * (T - T_ref) / T_ref, abs(back - L) / L))
        L2 = float(lambda_of_temperature(T_ref, c))
        back_T = float(temperature_of_lambda(L2, c))
        rows.append(("T_to_lambda", L2, T_ref, L, 100.0 * (L2 - L) / L, abs(back_T - T_ref) / T_ref))
    if config.temperatures is not None:
        for T in config.temperatures:
            L = float(lambda_of_temperature(T, c))
            back = float(temperature_of_lambda(L, c))
            rows.append(("T_to_lambda", L, T, math.nan, math.nan, abs(back - T) / T))
    else:
        for L in config.lambda_values():
            if L <= 0:
                continue
            T = float(temperature_of_lambda(L, c))
            back = float(lambda_of_temperature(T, c))
            rows.append(("lambda_to_T", L, T, math.nan, math.nan, abs(back - L) / L))
    cols = [
        Column("direction", "1", "str"), Column("lambda", LAMBDA_UNIT), Column("temperature", "K"),
        Column("reference", "mixed"), Column("deviation", "%"), Column("roundtrip_rel_err", "1"),
    ]
    names = [col.name for col in cols]
    data = {n: np.array([r[i] for r in rows], dtype=object if i == 0 else float) for i, n in enumerate(names)}
    dev = data["deviation"]
    summary = {
        "max_abs_deviation_pct": float(np.nanmax(np.abs(dev))),
        "anchors_within_2pct": bool(np.all(np.abs(dev[np.isfinite(dev)]) <= 2.0)),
        "max_roundtrip_rel_err": float(np.max(data["roundtrip_rel_err"])),
    }
    return ResultTable("thermo", cols, data, summary, config.config_hash())


# --------------------------------------------------------------------------
# Wigner snapshots


@dataclass(frozen=True)
class WignerSnapshot:
    t: float
    gamma: float
    grid: PhaseSpaceGrid
    angle_deg: float
    tilt_sign: int


def run_wigner_snapshots(config: ScenarioConfig, times=None, gammas=None):
    """Wigner grids for every (t, gamma) pair at ``wigner_lambda``.

    Returns (summary table, list of WignerSnapshot).
    """
    times = tuple(config.wigner_times if times is None else times)
    gammas = tuple(config.wigner_gammas if gammas is None else gammas)
    if not times or not gammas:
        raise ValidationError("wigner snapshots need at least one time and one gamma")
    env = config.env(config.wigner_lambda)
    snaps = []
    for t in times:
        for g in gammas:
            cov = covariance(config.probe(float(g)), env, float(t))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                grid = wigner_grid(cov, span=config.wigner_span, n=config.wigner_points)
            for w in caught:
                logger.warning("t=%g gamma=%g: %s", t, g, w.message)
            snaps.append(WignerSnapshot(
                float(t), float(g), grid,
                float(np.degrees(ellipse_angle(cov))), int(np.sign(cov.sxp)),
            ))
    cols = [
        Column("t", "s"), Column("gamma", "1"), Column("sxx", "1"), Column("sxp", "1"), Column("spp", "1"),
        Column("angle", "deg"), Column("tilt_sign", "1", "int"), Column("normalization", "1"),
        Column("span", "sd"), Column("under_spanned", "1", "bool"),
        Column("resolution", "sd"), Column("under_resolved", "1", "bool"),
    ]
    data = {c.name: [] for c in cols}
    for s in snaps:
        cov = covariance(config.probe(s.gamma), env, s.t)
        for k, v in (("t", s.t), ("gamma", s.gamma), ("sxx", cov.sxx), ("sxp", cov.sxp), ("spp", cov.spp),
                     ("angle", s.angle_deg), ("tilt_sign", s.tilt_sign), ("normalization", s.grid.normalization),
                     ("span", s.grid.span), ("under_spanned", s.grid.under_spanned),
                     ("resolution", s.grid.resolution), ("under_resolved", s.grid.under_resolved)):
            data[k].append(v)
    data = {k: np.asarray(v) for k, v in data.items()}
    summary = {"lambda": config.wigner_lambda,
               "max_norm_error": float(np.max(np.abs(data["normalization"] - 1.0)))}
    for t in times:
        angles = data["angle"][data["t"] == t]
        summary[f"angle_spread_deg@t={t:g}"] = float(np.ptp(angles))
    return ResultTable("wigner", cols, data, summary, config.config_hash()), snaps


def wigner_grid_table(snap: WignerSnapshot, config_hash: str) -> ResultTable:
    """Long-format (x, p, W) table for one snapshot."""
    g = snap.grid
    x, p = _mesh(g.x, g.p)
    cols = [Column("x", "sqrt2 sigma0"), Column("p", "sqrt2 hbar/sigma0"), Column("w", "1")]
    name = f"wigner_t{snap.t:g}_g{snap.gamma:+g}"
    summary = {"t": snap.t, "gamma": snap.gamma, "normalization": g.normalization,
               "span": g.span, "under_spanned": g.under_spanned,
               "resolution": g.resolution, "under_resolved": g.under_resolved, "angle_deg": snap.angle_deg}
    return ResultTable(name, cols, {"x": x, "p": p, "w": g.values.reshape(-1)}, summary, config_hash)


# --------------------------------------------------------------------------
# closed-form comparison


def run_closed_form_report(config: ScenarioConfig) -> dict:
    """Machine-readable comparison of the printed closed forms with the
    general formula, or a skip notice for an infinite coherence length."""
    if math.isinf(config.ell0):
        return {"kind": "closed_form_vs_general", "skipped": "closed forms need a finite ell0"}
    report = closed_form_report(config.probe(), lambdas=tuple(config.lambda_values()))
    report["config_hash"] = config.config_hash()
    return report
