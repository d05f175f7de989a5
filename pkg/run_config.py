"""
Run configuration - JSON run files validated with pydantic

A run file holds one model block (discriminated on "kind") and optional
per-command blocks; everything not given is filled from config.py.
"""
import hashlib
import json
import math
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

import config
from errors import ConfigError
from moment_dynamics import CoefficientSystem, MomentState, Segment
from pitchfork import PitchforkParams, ReducedState

U64_MAX = 2 ** 64 - 1

Matrix = List[List[float]]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_square(name: str, values: Matrix, d: int) -> None:
    rows = len(values)
    cols = {len(row) for row in values}
    if rows != d or cols != {d}:
        shape = f"{rows}x{max(cols) if cols else 0}" if len(cols) <= 1 else f"{rows}x(ragged)"
        raise ValueError(f"dimension mismatch: {name} is {shape}, expected {d}x{d}")
    if not all(math.isfinite(v) for row in values for v in row):
        raise ValueError(f"{name} has non-finite entries")


class SegmentConfig(StrictModel):
    start: float
    A: Matrix
    B: Matrix
    C: Matrix
    D: Matrix


class LinearModelConfig(StrictModel):
    kind: Literal["linear"]
    d: int = Field(ge=1, le=7)
    A: Optional[Matrix] = None
    B: Optional[Matrix] = None
    C: Optional[Matrix] = None
    D: Optional[Matrix] = None
    schedule: Optional[List[SegmentConfig]] = None
    bound_m: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _matrices_or_schedule(self):
        given = [name for name in "ABCD" if getattr(self, name) is not None]
        if self.schedule is None:
            if len(given) != 4:
                missing = [name for name in "ABCD" if name not in given]
                raise ValueError(f"linear model needs matrices A, B, C, D (missing {', '.join(missing)})")
            for name in "ABCD":
                _check_square(name, getattr(self, name), self.d)
        else:
            if given:
                raise ValueError("give either matrices A, B, C, D or a schedule, not both")
            if not self.schedule:
                raise ValueError("schedule must not be empty")
            for k, seg in enumerate(self.schedule):
                for name in "ABCD":
                    _check_square(f"schedule[{k}].{name}", getattr(seg, name), self.d)
            starts = [seg.start for seg in self.schedule]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError("schedule start times must be strictly increasing")
        return self

    def coefficients(self) -> CoefficientSystem:
        if self.schedule is None:
            return CoefficientSystem.autonomous(self.A, self.B, self.C, self.D, bound_m=self.bound_m)
        segments = tuple(Segment(seg.start, seg.A, seg.B, seg.C, seg.D) for seg in self.schedule)
        bound = self.bound_m
        if bound is None:
            bound = max(abs(v) for seg in self.schedule for M in (seg.A, seg.B, seg.C, seg.D)
                        for row in M for v in row)
        return CoefficientSystem(d=self.d, schedule=segments, bound_m=bound)


class PitchforkModelConfig(StrictModel):
    kind: Literal["pitchfork"]
    alpha: float
    beta: float = 1.0

    @property
    def d(self) -> int:
        return 1

    def params(self) -> PitchforkParams:
        return PitchforkParams(self.alpha, self.beta)

    def coefficients(self) -> CoefficientSystem:
        """Linearization at E X^2 = 0: A = alpha, B = beta, C = 1, D = 0."""
        return CoefficientSystem.scalar(self.alpha, self.beta)


ModelConfig = Annotated[Union[LinearModelConfig, PitchforkModelConfig], Field(discriminator="kind")]


class MomentInit(StrictModel):
    m: List[float]
    S: Matrix

    def state(self) -> MomentState:
        return MomentState(self.m, self.S)


class ReducedInit(StrictModel):
    x: float = 1.0
    y: float = 1.0

    @model_validator(mode="after")
    def _admissible(self):
        if self.y < self.x * self.x:
            raise ValueError(f"initial state violates x^2 <= y (x={self.x}, y={self.y})")
        return self

    def state(self) -> ReducedState:
        return ReducedState(self.x, self.y)


class ToleranceConfig(StrictModel):
    rel_tol: float = Field(default=config.TOLERANCES["rel_tol"], gt=0.0, lt=1.0)
    abs_tol: float = Field(default=config.TOLERANCES["abs_tol"], gt=0.0, lt=1.0)


class SpectrumCommand(StrictModel):
    finite_time: bool = True
    horizon: float = Field(default=config.FINITE_TIME["horizon"], ge=10.0)
    n_samples: int = Field(default=config.FINITE_TIME["n_samples"], ge=16)
    cluster_width: float = Field(default=config.FINITE_TIME["cluster_width"], gt=0.0)
    merge_tol: float = Field(default=config.SPECTRUM["merge_tol"], gt=0.0)
    proj_tol: float = Field(default=config.SPECTRUM["proj_tol"], gt=0.0)
    cone_samples: int = Field(default=config.SPECTRUM["cone_samples"], ge=1)
    seed: int = Field(default=0, ge=0, le=U64_MAX)


class SimulateCommand(StrictModel):
    N: int = Field(default=config.SIMULATION["N"], ge=100)
    dt: float = Field(default=config.SIMULATION["dt"], gt=0.0, le=1e-2)
    start: float = 0.0
    horizon: float = Field(default=1.0, ge=0.0)
    record_every: int = Field(default=config.SIMULATION["record_every"], ge=1)
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    initial: Optional[MomentInit] = None


class PullbackCommand(StrictModel):
    t: float = 0.0
    start_times: List[float] = Field(default_factory=lambda: [-10.0, -20.0, -40.0])
    initial: ReducedInit = Field(default_factory=ReducedInit)
    classify_tol: float = Field(default=config.PULLBACK["classify_tol"], gt=0.0)

    @model_validator(mode="after")
    def _decreasing(self):
        if not self.start_times:
            raise ValueError("start_times must not be empty")
        if any(b >= a for a, b in zip(self.start_times, self.start_times[1:])):
            raise ValueError("start_times must be strictly decreasing")
        if any(s > self.t for s in self.start_times):
            raise ValueError(f"start_times must not exceed t={self.t}")
        return self


class BifurcateCommand(StrictModel):
    alpha_grid: List[float] = Field(default_factory=lambda: [-1.5, -1.25, -1.1, -0.9, -0.75, -0.6])
    initial: ReducedInit = Field(default_factory=ReducedInit)
    depth: float = Field(default=config.PULLBACK["depth"], ge=40.0)
    t: float = 0.0
    classify_tol: float = Field(default=config.PULLBACK["classify_tol"], gt=0.0)

    @model_validator(mode="after")
    def _grid(self):
        if not self.alpha_grid:
            raise ValueError("alpha_grid must not be empty")
        return self


class OutputConfig(StrictModel):
    directory: str = config.OUTPUT["directory"]
    formats: List[Literal["csv", "svg"]] = Field(default_factory=lambda: list(config.OUTPUT["formats"]))


class RunConfig(StrictModel):
    model: ModelConfig
    tolerances: ToleranceConfig = Field(default_factory=ToleranceConfig)
    spectrum: SpectrumCommand = Field(default_factory=SpectrumCommand)
    simulate: SimulateCommand = Field(default_factory=SimulateCommand)
    pullback: PullbackCommand = Field(default_factory=PullbackCommand)
    bifurcate: BifurcateCommand = Field(default_factory=BifurcateCommand)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _fill_initial(self):
        d = self.model.d
        init = self.simulate.initial
        if init is None:
            if self.model.kind == "pitchfork":
                init = MomentInit(m=[1.0], S=[[1.0]])
            else:
                init = MomentInit(m=[0.0] * d, S=[[1.0 if i == j else 0.0 for j in range(d)] for i in range(d)])
            self.simulate.initial = init
        if len(init.m) != d:
            raise ValueError(f"dimension mismatch: simulate.initial.m has length {len(init.m)}, expected {d}")
        _check_square("simulate.initial.S", init.S, d)
        return self


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a JSON run file.

    Raises:
        ConfigError: unreadable file, JSON syntax error (with line/column),
            schema violation (naming the offending key) or inadmissible data
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    return parse_config(raw, source=str(path))


def parse_config(raw, source: str = "<config>") -> RunConfig:
    try:
        cfg = RunConfig.model_validate(raw)
        if cfg.simulate.initial is not None:
            cfg.simulate.initial.state()
        if isinstance(cfg.model, LinearModelConfig):
            cfg.model.coefficients()
    except ValidationError as e:
        problems = []
        for err in e.errors():
            where = ".".join(str(part) for part in err["loc"]) or "<root>"
            problems.append(f"{where}: {err['msg']}")
        raise ConfigError(f"{source}: invalid config\n  " + "\n  ".join(problems)) from e
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e
    return cfg


def with_overrides(cfg: RunConfig, seed: Optional[int] = None, directory: Optional[str] = None,
                   formats: Optional[List[str]] = None) -> RunConfig:
    """Copy of cfg with the command-line overrides applied (and re-validated)."""
    raw = cfg.model_dump(mode="json")
    if seed is not None:
        if not 0 <= seed <= U64_MAX:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")
        raw["spectrum"]["seed"] = seed
        raw["simulate"]["seed"] = seed
    if directory is not None:
        raw["output"]["directory"] = directory
    if formats is not None:
        raw["output"]["formats"] = formats
    return parse_config(raw, source="<command line>")


def canonical_json(cfg: RunConfig, include_output: bool = True) -> str:
    raw = cfg.model_dump(mode="json")
    if not include_output:
        raw.pop("output")
    return json.dumps(raw, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    """sha256 of the resolved config (output location excluded)."""
    return hashlib.sha256(canonical_json(cfg, include_output=False).encode("utf-8")).hexdigest()
