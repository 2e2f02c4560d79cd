"""Sweeps, tables and the command-line interface."""

from .config import ScenarioConfig, load_config, parse_config_text
from .sweeps import (
    WignerSnapshot,
    dominance_windows,
    run_closed_form_report,
    run_compat_check,
    run_det_sweep,
    run_qfim_vs_gamma,
    run_ratio_sweep,
    run_thermometry,
    run_tilde_lambda_vs_time,
    run_wigner_snapshots,
    wigner_grid_table,
)
from .table import Column, ResultTable, read_csv, read_csv_body
from .validate import CheckResult, run_validation
