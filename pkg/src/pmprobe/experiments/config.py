"""Scenario configuration: defaults, a flat ``key = value`` file format and
command-line overrides.

Example file::

    # probe
    sigma0 = 7.8e-9
    ell0 = 50e-9
    lambdas = 3e15, 3e20, 3e22
    t_points = 400

List values are comma separated. ``ell0 = inf`` selects a fully coherent
probe. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .. import constants
from ..decoherence import ThermometryConstants, lambda_of_temperature, temperature_of_lambda
from ..errors import ValidationError
from ..phase_space import EnvParams, ProbeParams


def _floats(text: str) -> tuple[float, ...]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    return tuple(float(s) for s in items)


@dataclass(frozen=True)
class ScenarioConfig:
    # probe and gas
    mass: float = constants.PROBE_MASS
    sigma0: float = constants.PROBE_WIDTH
    ell0: float = constants.COHERENCE_LENGTH
    air_mass: float = constants.AIR_MASS
    number_density: float = constants.AIR_DENSITY
    molecule_size: float = constants.MOLECULE_SIZE
    # environment; give lambdas or temperatures, not both
    lambdas: tuple[float, ...] | None = None
    temperatures: tuple[float, ...] | None = None
    # time axis (log spaced, seconds)
    t_min: float = 1e-8
    t_max: float = 1e-4
    t_points: int = 400
    # gamma axis
    gamma_min: float = -3.0
    gamma_max: float = 3.0
    gamma_points: int = 101
    # contour grid for the ratio sweep
    contour_points: int = 121
    # discrete gamma set for time-resolved curves
    gamma_set: tuple[float, ...] = (-0.5, 0.0, 0.5)
    t_fixed: float = 4e-5
    det_lambdas: tuple[float, ...] = (constants.WEAK_LAMBDA, constants.STRONG_LAMBDA)
    # Wigner snapshots
    wigner_times: tuple[float, ...] = (0.0, 2.2e-6)
    wigner_gammas: tuple[float, ...] = (-0.5, 0.0, 0.5)
    wigner_lambda: float = constants.STRONG_LAMBDA
    wigner_points: int = 201
    wigner_span: float = 6.0
    # tolerances
    tol_equal: float = 1e-10
    tol_oracle: float = 1e-6
    tol_compat: float = 1e-9
    tol_det: float = 1e-9

    def __post_init__(self):
        if self.lambdas is not None and self.temperatures is not None:
            raise ValidationError("give either lambdas or temperatures, not both")
        for name in ("lambdas", "temperatures", "gamma_set", "det_lambdas", "wigner_times", "wigner_gammas"):
            value = getattr(self, name)
            if value is not None and len(value) == 0:
                raise ValidationError(f"{name} must not be empty")
        if self.lambdas is not None and any(not (v >= 0 and math.isfinite(v)) for v in self.lambdas):
            raise ValidationError("lambdas must be finite and >= 0")
        if self.temperatures is not None and any(not (v > 0 and math.isfinite(v)) for v in self.temperatures):
            raise ValidationError("temperatures must be positive")
        if not (0 < self.t_min < self.t_max):
            raise ValidationError("need 0 < t_min < t_max")
        if not self.gamma_min < self.gamma_max:
            raise ValidationError("need gamma_min < gamma_max")
        for name in ("t_points", "gamma_points", "contour_points", "wigner_points"):
            if getattr(self, name) < 2:
                raise ValidationError(f"{name} must be at least 2")
        if not self.t_fixed > 0:
            raise ValidationError("t_fixed must be positive")
        if any(t < 0 for t in self.wigner_times):
            raise ValidationError("wigner_times must be >= 0")
        # constructing these validates the physical parameters
        self.probe()
        self.thermometry()

    # -- derived objects

    def probe(self, gamma=0.0) -> ProbeParams:
        return ProbeParams(mass=self.mass, sigma0=self.sigma0, ell0=self.ell0, gamma=gamma)

    def env(self, lam) -> EnvParams:
        return EnvParams(lam=lam, air_mass=self.air_mass, number_density=self.number_density,
                         molecule_size=self.molecule_size)

    def thermometry(self) -> ThermometryConstants:
        return ThermometryConstants(self.air_mass, self.number_density, self.molecule_size)

    def lambda_values(self) -> np.ndarray:
        """Scattering constants, derived from temperatures when those were given."""
        if self.temperatures is not None:
            return np.asarray(lambda_of_temperature(np.asarray(self.temperatures), self.thermometry()), float).reshape(-1)
        if self.lambdas is not None:
            return np.asarray(self.lambdas, float)
        return np.asarray(constants.DEFAULT_LAMBDAS, float)

    def temperature_values(self) -> np.ndarray:
        if self.temperatures is not None:
            return np.asarray(self.temperatures, float)
        lams = self.lambda_values()
        out = np.full(lams.shape, np.nan)
        pos = lams > 0
        out[pos] = temperature_of_lambda(lams[pos], self.thermometry())
        return out

    def times(self, n: int | None = None) -> np.ndarray:
        return np.logspace(math.log10(self.t_min), math.log10(self.t_max), n or self.t_points)

    def gammas(self, n: int | None = None) -> np.ndarray:
        return np.linspace(self.gamma_min, self.gamma_max, n or self.gamma_points)

    # -- serialization

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                out[f.name] = ", ".join(format(float(v), ".17g") for v in value)
            elif isinstance(value, int):
                out[f.name] = str(value)
            else:
                out[f.name] = format(float(value), ".17g")
        return out

    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in sorted(self.to_mapping().items()))
        text += f"\nconstants={constants.CONSTANTS_VERSION}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}
_TUPLE_KEYS = {"lambdas", "temperatures", "gamma_set", "det_lambdas", "wigner_times", "wigner_gammas"}
_INT_KEYS = {"t_points", "gamma_points", "contour_points", "wigner_points"}


def _convert(key: str, text: str):
    try:
        if key in _TUPLE_KEYS:
            return _floats(text)
        if key in _INT_KEYS:
            value = float(text)
            if value != int(value):
                raise ValueError
            return int(value)
        return float(text)
    except ValueError:
        raise ValidationError(f"bad value for {key!r}: {text!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ValidationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> ScenarioConfig:
    """Build a config from defaults, an optional file, then overrides.

    Overrides win over file values. Setting ``lambdas`` through an override
    clears ``temperatures`` from the file and vice versa.
    """
    values: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text, str(path)))
    overrides = overrides or {}
    for key in overrides:
        if key not in _FIELDS:
            raise ValidationError(f"unknown key {key!r}")
    if "lambdas" in overrides:
        values.pop("temperatures", None)
    if "temperatures" in overrides:
        values.pop("lambdas", None)
    values.update(overrides)
    kwargs = {k: _convert(k, v) for k, v in values.items()}
    return ScenarioConfig(**kwargs)


def with_overrides(config: ScenarioConfig, **kwargs) -> ScenarioConfig:
    return replace(config, **kwargs)
