"""
Pydantic schemas of the laboratory.
Holds the domain types of every module: gains and states, controller variants,
disturbance descriptions, simulation traces and sweep tables, verification
reports and the experiment configuration consumed by the CLI and the HTTP API.
"""

import math
from enum import Enum
from typing import Annotated, Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.errors import ConfigurationError

FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]


# Core schemas
class GainSet(BaseModel):
    """
    Controller and plant parameters.
    alpha, beta and gamma are dimensionless gains, h is the discretization time
    in seconds and lipschitz_L the known bound on |Δ|.
    """
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0, allow_inf_nan=False)
    beta: float = Field(gt=0, allow_inf_nan=False)
    h: float = Field(gt=0, allow_inf_nan=False)
    gamma: Optional[float] = Field(default=None, gt=0, allow_inf_nan=False)  # Hanan only
    lipschitz_L: float = Field(default=0.0, ge=0, allow_inf_nan=False)

    def replace(self, **changes: Any) -> "GainSet":
        """Validated copy with some fields changed."""
        return GainSet(**{**self.model_dump(), **changes})


class PlantState(BaseModel):
    """Sampled sliding variable x1,k and interval-averaged perturbation φ̄_k."""
    model_config = ConfigDict(frozen=True)

    x1: FiniteFloat
    phi_bar: FiniteFloat


class VirtualState(BaseModel):
    """Closed-loop state (x1,k, x2,k) with x2,k = ν_k + φ̄_k."""
    model_config = ConfigDict(frozen=True)

    x1: FiniteFloat
    x2: FiniteFloat


# Controller schemas
class ControllerVariant(str, Enum):
    """Discretization of the super-twisting controller that is active."""
    EXPLICIT = "explicit"
    BROGLIATO = "brogliato"
    KOCH = "koch"
    XIONG = "xiong"
    HANAN = "hanan"
    PROPOSED = "proposed"


class ControllerState(BaseModel):
    """Controller integrator state ν_k."""
    model_config = ConfigDict(frozen=True)

    nu: FiniteFloat


# Disturbance schemas
class DisturbanceKind(str, Enum):
    ZERO = "zero"
    STEP = "step"
    SINUSOID_MIX = "sinusoid-mix"


class SinusoidTerm(BaseModel):
    """One term A·cos(ωt) of Δ(t)."""
    model_config = ConfigDict(frozen=True)

    amplitude: FiniteFloat
    omega: float = Field(gt=0, allow_inf_nan=False)  # angular frequency, rad/s


class DisturbanceSignal(BaseModel):
    """
    Analytic description of the disturbance Δ(t) and of φ(0).

    ZERO: Δ ≡ 0. STEP: Δ = level for t >= t0, 0 before.
    SINUSOID_MIX: Δ(t) = Σ A·cos(ωt) + offset.
    """
    model_config = ConfigDict(frozen=True)

    kind: DisturbanceKind
    t0: float = Field(default=0.0, ge=0, allow_inf_nan=False)
    level: FiniteFloat = 0.0
    terms: Tuple[SinusoidTerm, ...] = ()
    offset: float = Field(default=0.0, allow_inf_nan=False)
    phi0: float = Field(default=0.0, allow_inf_nan=False)

    @classmethod
    def zero(cls, phi0: float = 0.0) -> "DisturbanceSignal":
        return cls(kind=DisturbanceKind.ZERO, phi0=phi0)

    @classmethod
    def step(cls, t0: float, level: float, phi0: float = 0.0) -> "DisturbanceSignal":
        return cls(kind=DisturbanceKind.STEP, t0=t0, level=level, phi0=phi0)

    @classmethod
    def sinusoid_mix(
        cls, terms: List[Tuple[float, float]], offset: float = 0.0, phi0: float = 0.0
    ) -> "DisturbanceSignal":
        return cls(
            kind=DisturbanceKind.SINUSOID_MIX,
            terms=tuple(SinusoidTerm(amplitude=a, omega=w) for a, w in terms),
            offset=offset,
            phi0=phi0,
        )


class SignalName(str, Enum):
    """Disturbance catalog entries addressable from the experiment configuration."""
    ZERO = "zero"
    STEP = "step"
    SIN_OFFSET5 = "sin-offset5"
    SIN = "sin"


# Simulation schemas
class SimConfig(BaseModel):
    """Closed-loop run: controller, gains, disturbance, initial conditions and horizon."""
    model_config = ConfigDict(frozen=True)

    variant: ControllerVariant
    gains: GainSet
    signal: DisturbanceSignal
    x1_0: float = Field(default=1.0, allow_inf_nan=False)
    nu_0: float = Field(default=0.0, allow_inf_nan=False)
    horizon_T: float = Field(default=20.0, gt=0, allow_inf_nan=False)  # seconds

    @model_validator(mode="after")
    def check_horizon(self) -> "SimConfig":
        if self.horizon_T < self.gains.h:
            raise ConfigurationError(
                f"horizon {self.horizon_T} s is shorter than one step h = {self.gains.h} s"
            )
        return self

    @property
    def steps(self) -> int:
        """Number of plant updates, floor(T/h)."""
        return int(math.floor(self.horizon_T / self.gains.h + 1e-9))


class SimTrace(BaseModel):
    """
    Time-indexed record of one closed-loop run.
    All arrays have N+1 entries for k = 0..N; x2 = nu + phi_bar.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    h: float
    variant: Optional[ControllerVariant] = None
    t: np.ndarray
    x1: np.ndarray
    phi_bar: np.ndarray
    nu: np.ndarray
    x2: np.ndarray
    u: np.ndarray
    delta_bar: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def truncated(self, n: int) -> "SimTrace":
        """First n samples of the trace."""
        return SimTrace(
            h=self.h,
            variant=self.variant,
            **{name: getattr(self, name)[:n] for name in TRACE_COLUMNS},
        )


TRACE_COLUMNS = ("t", "x1", "phi_bar", "nu", "x2", "u", "delta_bar")


class SweepAxis(str, Enum):
    ALPHA = "alpha"
    BETA = "beta"
    LAMBDA = "lambda"
    H = "h"


class SweepMetric(str, Enum):
    CONVERGENCE_TIME = "t_C"
    STEADY_STATE_ERROR = "e_f"


class SweepTable(BaseModel):
    """
    Parameter grid plus one metric per (variant, axis value).
    Missing metrics (divergence, threshold never held) are None.
    """
    axis: SweepAxis
    metric: SweepMetric
    values: List[float]
    results: Dict[ControllerVariant, List[Optional[float]]] = {}

    @field_validator("values")
    @classmethod
    def check_increasing(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("sweep axis needs at least one value")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep axis values must be strictly increasing")
        return v

    @model_validator(mode="after")
    def check_lengths(self) -> "SweepTable":
        for variant, column in self.results.items():
            if len(column) != len(self.values):
                raise ValueError(f"column {variant.value} has {len(column)} entries for {len(self.values)} values")
        return self


# Verification schemas
class InvariantSetSpec(BaseModel):
    """Parameters of the set M = {|x1| <= h²β, |h·x2 - x1| <= h²β}."""
    model_config = ConfigDict(frozen=True)

    h: float = Field(gt=0, allow_inf_nan=False)
    beta: float = Field(gt=0, allow_inf_nan=False)


class LyapunovCase(str, Enum):
    """Case partition of the plane outside M used by the decrease argument."""
    CASE_1A = "1a"
    CASE_1B = "1b"
    CASE_2A = "2a"
    CASE_2B = "2b"


class DecreaseWitness(BaseModel):
    """State and disturbance sequence for which the decrease check failed."""
    x1: float
    x2: float
    case: LyapunovCase
    deltas: List[float]
    margin: float  # ΔV, or V_{k+2} - V_k for case 1b


class LyapunovReport(BaseModel):
    """Outcome of a sampled Lyapunov decrease audit."""
    samples: int = 0
    violation_count: int = 0
    violations: List[DecreaseWitness] = []
    worst_margin: float = -math.inf  # largest decrease quantity seen; < 0 when no violation
    case_histogram: Dict[LyapunovCase, int] = Field(
        default_factory=lambda: {case: 0 for case in LyapunovCase}
    )

    @property
    def passed(self) -> bool:
        return self.violation_count == 0

    def merge(self, other: "LyapunovReport", max_witnesses: int = 50) -> "LyapunovReport":
        """Combine two partial reports; the operation is associative."""
        return LyapunovReport(
            samples=self.samples + other.samples,
            violation_count=self.violation_count + other.violation_count,
            violations=(self.violations + other.violations)[:max_witnesses],
            worst_margin=max(self.worst_margin, other.worst_margin),
            case_histogram={
                case: self.case_histogram.get(case, 0) + other.case_histogram.get(case, 0)
                for case in LyapunovCase
            },
        )


class DeadbeatReport(BaseModel):
    """Nilpotency of the in-band closed-loop matrix and two-step arrival at the origin."""
    h: float
    matrix_trace: float
    matrix_determinant: float
    eigenvalue_max_abs: float
    square_max_abs: float
    states_tested: int
    max_two_step_residual: float
    passed: bool


class InvarianceReport(BaseModel):
    """Sampled forward-invariance audit of M."""
    states: int
    steps: int
    max_identity_residual: float  # max |x1[k+2] - h²Δ[k]|
    left_set_count: int
    passed: bool


class VerificationSummary(BaseModel):
    """Combined result of the verify experiment."""
    gains: GainSet
    lipschitz_L: float
    v_budget: float
    beta_bound: Optional[float] = None  # only for L > 0
    decrease: LyapunovReport
    deadbeat: DeadbeatReport
    invariance: InvarianceReport

    @property
    def passed(self) -> bool:
        return self.decrease.passed and self.deadbeat.passed and self.invariance.passed


# Experiment configuration schemas
class ExperimentName(str, Enum):
    PLOT_FUNCTIONS = "plot-functions"
    SIM_DISTURBED = "sim-disturbed"
    SIM_UNDISTURBED = "sim-undisturbed"
    SWEEP_TC = "sweep-tc"
    SWEEP_ACCURACY = "sweep-accuracy"
    TRAJECTORIES = "trajectories"
    VERIFY = "verify"


class GridSpec(BaseModel):
    """Sweep grid: axis, inclusive range and either a point count or a step."""
    axis: SweepAxis
    metric: SweepMetric
    start: float
    stop: float
    num: Optional[int] = Field(default=None, ge=1)
    step: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_resolution(self) -> "GridSpec":
        if (self.num is None) == (self.step is None):
            raise ValueError("grid needs exactly one of 'num' or 'step'")
        if self.stop < self.start:
            raise ValueError("grid stop lies before start")
        return self

    def points(self) -> np.ndarray:
        num = self.num
        if num is None:
            num = int(round((self.stop - self.start) / self.step)) + 1
        return np.linspace(self.start, self.stop, num)


class FunctionGrid(BaseModel):
    """x1 grid of the controller-function plots."""
    start: float = -4.0
    stop: float = 4.0
    num: int = Field(default=2001, ge=1)

    def points(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.num)


class ExperimentConfig(BaseModel):
    """
    Configuration of one CLI experiment.
    Unknown experiment, variant and signal names fail validation and the
    error message names the offending token.
    """
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentName
    variants: List[ControllerVariant] = list(ControllerVariant)
    gains: GainSet
    signal: SignalName = SignalName.ZERO
    grid: Optional[GridSpec] = None
    function_grid: FunctionGrid = FunctionGrid()
    x1_0: float = 1.0
    nu_0: float = 0.0
    horizon_T: float = Field(default=20.0, gt=0)
    tail_start: float = 15.0
    h_list: List[float] = [0.01, 0.05, 0.1]
    fine_h: float = Field(default=1e-5, gt=0)
    reference_record_h: float = Field(default=1e-4, gt=0)
    v_budget: float = Field(default=50.0, gt=0)
    samples: int = Field(default=100_000, ge=1)
    invariance_steps: int = Field(default=100, ge=2)
    invariance_states: int = Field(default=10_000, ge=1)
    invariance_L: Optional[float] = Field(default=None, ge=0)  # defaults to beta/2
    deadbeat_states: int = Field(default=10_000, ge=1)
    hanan_g: Optional[float] = None
    output_dir: Optional[str] = None  # falls back to settings.OUTPUT_DIR
    seed: int = 0

    @field_validator("variants")
    @classmethod
    def check_variants(cls, v: List[ControllerVariant]) -> List[ControllerVariant]:
        if not v:
            raise ValueError("at least one controller variant is required")
        return list(dict.fromkeys(v))

    @classmethod
    def defaults(cls, experiment: ExperimentName) -> Dict[str, Any]:
        """Default fields of an experiment, mirroring the published simulation settings."""
        stc = {"alpha": math.sqrt(10.0), "beta": 10.0, "h": 0.01}
        table: Dict[ExperimentName, Dict[str, Any]] = {
            ExperimentName.PLOT_FUNCTIONS: {
                "gains": {"alpha": math.sqrt(2.0), "beta": 1.0, "h": 1.0},
            },
            ExperimentName.SIM_DISTURBED: {"gains": stc, "signal": "step"},
            ExperimentName.SIM_UNDISTURBED: {"gains": stc, "signal": "zero"},
            ExperimentName.SWEEP_TC: {
                "gains": stc,
                "signal": "zero",
                "grid": {"axis": "alpha", "metric": "t_C", "start": 1.0, "stop": 100.0, "step": 0.1},
            },
            ExperimentName.SWEEP_ACCURACY: {
                "gains": {"alpha": 1.5 * math.sqrt(10.0), "beta": 11.0, "h": 0.05},
                "signal": "sin",
                "x1_0": 0.0,
                "grid": {"axis": "lambda", "metric": "e_f", "start": 1.0, "stop": 40.0, "num": 1000},
            },
            ExperimentName.TRAJECTORIES: {
                "gains": stc,
                "signal": "zero",
                "variants": ["proposed"],
                "horizon_T": 5.0,
            },
            ExperimentName.VERIFY: {"gains": {**stc, "lipschitz_L": 0.0}, "variants": ["proposed"]},
        }
        return {"experiment": experiment.value, **table[experiment]}

    @classmethod
    def build(cls, experiment: str, *overrides: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build a configuration from the experiment defaults and override layers.

        Args:
            experiment (str): Experiment name.
            *overrides (Dict[str, Any]): Layers applied in order (config file, CLI flags);
                nested dictionaries are merged, other values replaced.

        Returns:
            ExperimentConfig: Validated configuration.

        Raises:
            ConfigurationError: If the experiment name is unknown.
            pydantic.ValidationError: If any field is invalid.
        """
        try:
            name = ExperimentName(experiment)
        except ValueError:
            raise ConfigurationError(f"unknown experiment '{experiment}'") from None
        merged = cls.defaults(name)
        for layer in overrides:
            merged = _deep_merge(merged, layer)
        merged["experiment"] = name.value
        return cls.model_validate(merged)


def _deep_merge(base: Dict[str, Any], layer: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in layer.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


# Result and API schemas
class RunSummary(BaseModel):
    """Metrics of one closed-loop run; missing metrics are None."""
    variant: ControllerVariant
    t_C: Optional[float] = None
    e_f: Optional[float] = None
    diverged_at: Optional[int] = None
    final_x1: Optional[float] = None


class SimulationRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: ControllerVariant
    gains: GainSet
    signal: SignalName = SignalName.ZERO
    x1_0: FiniteFloat = 1.0
    nu_0: FiniteFloat = 0.0
    horizon_T: float = Field(default=20.0, gt=0, le=1000)
    tail_start: float = Field(default=15.0, ge=0)


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variants: List[ControllerVariant] = [ControllerVariant.PROPOSED]
    gains: GainSet
    signal: SignalName = SignalName.ZERO
    grid: GridSpec
    x1_0: FiniteFloat = 1.0
    nu_0: FiniteFloat = 0.0
    horizon_T: float = Field(default=20.0, gt=0, le=1000)
    tail_start: float = Field(default=15.0, ge=0)


class PsiRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: ControllerVariant
    gains: GainSet
    x1: List[FiniteFloat] = Field(min_length=1, max_length=100_000)
    nu: FiniteFloat = 0.0


class PsiResponse(BaseModel):
    variant: ControllerVariant
    x1: List[float]
    psi1: List[float]
    psi2: List[float]


class DecreaseRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gains: GainSet
    lipschitz_L: float = Field(default=0.0, ge=0)
    v_budget: float = Field(default=50.0, gt=0)
    samples: int = Field(default=10_000, ge=1, le=1_000_000)
    seed: int = 0
