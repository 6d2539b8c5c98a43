"""Run configuration: strict JSON schema, Hz on input and rad/s inside."""

from __future__ import annotations

import hashlib
import json
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .model import ModelConstants, TWO_PI, cesium_g_ratio
from .optimizer import haar_random_state
from .propagation import EnsembleGrid
from .spin_algebra import DIM, check_state, ket, normalize

MODES = ("synthesize-semi", "optimize-full", "scan", "tomography", "haar-sample", "verify")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Strict):
    omega0_hz: float = Field(100e3, gt=0)
    omega_rf_max_hz: float = Field(1.5e3, gt=0)
    omega_uw_max_hz: float = Field(3.5e3, gt=0)
    # None: Landé-factor ratio for Cs, see model.cesium_g_ratio
    g_r: Optional[float] = Field(None, gt=0)
    m_up: int = 4
    dt_s: float = Field(125e-6, gt=0)
    rf_residual: bool = False

    def to_constants(self) -> ModelConstants:
        return ModelConstants(
            omega0=TWO_PI * self.omega0_hz,
            omega_rf_max=TWO_PI * self.omega_rf_max_hz,
            omega_uw_max=TWO_PI * self.omega_uw_max_hz,
            g_r=cesium_g_ratio() if self.g_r is None else self.g_r,
            m_up=self.m_up, dt=self.dt_s, rf_residual=self.rf_residual)


class AxisConfig(_Strict):
    """Symmetric range of one inhomogeneity; 0 pins the parameter at zero."""

    range: float = Field(0.0, ge=0, lt=1)
    opt_points: int = Field(3, ge=1)
    eval_points: int = Field(15, ge=1)

    def opt_values(self) -> np.ndarray:
        return _axis(self.range, self.opt_points)

    def eval_values(self) -> np.ndarray:
        return _axis(self.range, self.eval_points)


def _axis(r: float, n: int) -> np.ndarray:
    if r == 0 or n == 1:
        return np.zeros(1)
    return np.linspace(-r, r, n)


def _default_axis():
    return AxisConfig(range=0.01)


class GridConfig(_Strict):
    eps_rf: AxisConfig = Field(default_factory=_default_axis)
    eps_uw: AxisConfig = Field(default_factory=_default_axis)
    # detuning as a fraction of the maximum rf Larmor frequency
    delta_frac: AxisConfig = Field(default_factory=_default_axis)

    def axes(self):
        return {"eps_rf": self.eps_rf, "eps_uw": self.eps_uw, "delta_frac": self.delta_frac}

    def optimization_grid(self, constants: ModelConstants, target=None) -> EnsembleGrid:
        return EnsembleGrid.product(self.eps_rf.opt_values(), self.eps_uw.opt_values(),
                                    self.delta_frac.opt_values() * constants.omega_rf_max, target)

    def evaluation_grid(self, constants: ModelConstants, target=None) -> EnsembleGrid:
        return EnsembleGrid.product(self.eps_rf.eval_values(), self.eps_uw.eval_values(),
                                    self.delta_frac.eval_values() * constants.omega_rf_max, target)

    def evaluation_shape(self) -> tuple:
        return tuple(len(a.eval_values()) for a in self.axes().values())


NAMED_STATES = {
    "up": lambda: ket(4, 4),
    "down": lambda: ket(3, 3),
    "psi1": lambda: normalize(ket(3, -3) + ket(3, 3)),
    "psi2": lambda: ket(3, 0),
}
NAMED_STATES.update({f"|3,{m}>": (lambda m=m: ket(3, m)) for m in range(-3, 4)})
NAMED_STATES["|4,4>"] = lambda: ket(4, 4)


def named_state(name: str) -> np.ndarray:
    try:
        return NAMED_STATES[name]()
    except KeyError:
        raise ConfigError(f"unknown named state {name!r}; choose from {sorted(NAMED_STATES)}") from None


class TargetConfig(_Strict):
    kind: Literal["haar", "named", "amplitudes"] = "haar"
    count: int = Field(5, ge=1)
    # Haar seed base; defaults to the run's master seed
    seed: Optional[int] = None
    name: Optional[str] = None
    # one list of [re, im] pairs per target
    amplitudes: Optional[List[List[List[float]]]] = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "named":
            if self.name is None:
                raise ValueError("named targets need 'name'")
            named_state(self.name)
        if self.kind == "amplitudes":
            if not self.amplitudes:
                raise ValueError("amplitude targets need 'amplitudes'")
            for vec in self.amplitudes:
                if len(vec) != DIM or any(len(c) != 2 for c in vec):
                    raise ValueError(f"each target needs {DIM} [re, im] pairs")
        return self

    def seeds(self, master_seed: int) -> list:
        base = master_seed if self.seed is None else self.seed
        return [[base, i] for i in range(self.count)]

    def states(self, master_seed: int) -> list[np.ndarray]:
        if self.kind == "haar":
            return [haar_random_state(DIM, s) for s in self.seeds(master_seed)]
        if self.kind == "named":
            return [named_state(self.name)]
        return [check_state(np.array([complex(re, im) for re, im in vec]))
                for vec in self.amplitudes]


class ScheduleConfig(_Strict):
    duration_s: float = Field(1e-3, gt=0)

    def n_steps(self, dt: float) -> int:
        return max(1, int(round(self.duration_s / dt)))


class OptimizerConfig(_Strict):
    starts: int = Field(10, ge=1)
    max_iter: int = Field(1000, ge=1)
    target_fidelity: float = Field(0.99, gt=0, le=1)
    grad_tol: float = Field(1e-8, gt=0)
    stop_at_target: bool = True


class SemiConfig(_Strict):
    threshold: float = Field(0.99, gt=0, lt=1)
    restarts: int = Field(10, ge=1)
    max_pairs: int = Field(12, ge=1)
    substeps: int = Field(3, ge=1)
    perturb: float = Field(0.3, ge=0)
    rf_desired: Literal["rotation", "down"] = "rotation"


class TomographyConfig(_Strict):
    delta0_hz: float = Field(300.0, gt=0)
    a_m: float = Field(0.5e-3, gt=0)
    m: int = Field(8, ge=2)
    offsets_hz: List[float] = Field(default_factory=lambda: [0.0, 10.0, -10.0])
    region_targets: List[str] = Field(default_factory=lambda: ["psi1", "psi2"])
    # centre detuning of each region, Hz; default: 0 and delta0
    region_centers_hz: Optional[List[float]] = None
    duration_s: float = Field(5e-3, gt=0)
    positions: int = Field(201, ge=2)
    x_max_m: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def _regions(self):
        if self.m % 2:
            raise ValueError("profile exponent m must be even")
        for name in self.region_targets:
            named_state(name)
        centers = self.region_centers_hz
        if centers is not None and len(centers) != len(self.region_targets):
            raise ValueError("region_centers_hz needs one entry per region target")
        if centers is None and len(self.region_targets) != 2:
            raise ValueError("give region_centers_hz when using more than two regions")
        return self


class VerifyConfig(_Strict):
    waveform: Optional[str] = None
    result: Optional[str] = None
    manifest: Optional[str] = None
    target_index: int = Field(0, ge=0)


class ScanConfig(_Strict):
    method: Literal["full", "semi"] = "full"
    # existing waveform files, one per target; optimized when empty
    waveforms: List[str] = Field(default_factory=list)


class HaarConfig(_Strict):
    count: int = Field(20, ge=1)
    dim: int = Field(DIM, ge=2)


class RunConfig(_Strict):
    mode: Literal["synthesize-semi", "optimize-full", "scan", "tomography", "haar-sample", "verify"]
    seed: int = 0
    output_dir: str = "runs"
    threads: int = Field(1, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    targets: TargetConfig = Field(default_factory=TargetConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    semi: SemiConfig = Field(default_factory=SemiConfig)
    tomography: TomographyConfig = Field(default_factory=TomographyConfig)
    scan: ScanConfig = Field(default_factory=ScanConfig)
    haar: HaarConfig = Field(default_factory=HaarConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)

    @model_validator(mode="after")
    def _mode_fields(self):
        if self.mode == "verify" and self.verify.waveform is None:
            raise ValueError("verify mode needs verify.waveform")
        return self

    def constants(self) -> ModelConstants:
        return self.model.to_constants()

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=1)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def config_from_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(f"invalid run config: {_format_errors(err)}") from None


def load_config(path) -> RunConfig:
    """Read and validate a JSON run config; unknown keys are rejected."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(data)
