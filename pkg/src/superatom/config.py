"""JSON run configuration, validated with pydantic. Unknown keys are rejected.

Minimal four-level example::

    {
      "model": {"type": "four-level", "reference": "d100_r15"},
      "pulse": {"lengths": [0.5, 1.0, 2.0]},
      "grid": {"t_stop": 6.0}
    }
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .params import BIN_WIDTH, DETECTION_EFFICIENCY, REFERENCE_SETS, THRESHOLD_COUNTS, EffectiveParams


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FourLevelModel(_Strict):
    """Four-level model rates in 1/µs. ``reference`` fills unset fields from a tabulated row."""

    type: Literal["four-level"] = "four-level"
    reference: Optional[str] = None
    kappa: Optional[float] = Field(None, ge=0)
    gamma_raman: Optional[float] = Field(None, ge=0)
    gamma_d: Optional[float] = Field(None, ge=0)
    varkappa: Optional[float] = None
    r_p: Optional[float] = Field(None, ge=0)

    @field_validator("reference")
    @classmethod
    def _known(cls, v):
        if v is not None and v not in REFERENCE_SETS:
            raise ValueError(f"unknown reference {v!r}; choose from {sorted(REFERENCE_SETS)}")
        return v

    @model_validator(mode="after")
    def _complete(self):
        if self.reference is None:
            missing = [n for n in ("kappa", "r_p") if getattr(self, n) is None]
            if missing:
                raise ValueError(f"without a reference, {missing} must be given")
        return self

    def effective(self) -> EffectiveParams:
        base = REFERENCE_SETS[self.reference].effective().to_dict() if self.reference else {}
        for name in ("kappa", "gamma_raman", "gamma_d", "varkappa", "r_p"):
            value = getattr(self, name)
            if value is not None:
                base[name] = value
        return EffectiveParams(**{k: base.get(k, 0.0) for k in ("kappa", "gamma_raman", "gamma_d", "varkappa", "r_p")})


class ThermalBlock(_Strict):
    spin_wavelength: float = Field(..., gt=0, description="µm")
    velocity_fraction: Optional[float] = Field(None, ge=0, description="most probable speed in spin wavelengths per µs")
    velocity_scale: Optional[float] = Field(None, ge=0, description="most probable speed in µm/µs")
    seed: int = 0

    @model_validator(mode="after")
    def _one_velocity(self):
        if (self.velocity_fraction is None) == (self.velocity_scale is None):
            raise ValueError("give exactly one of velocity_fraction and velocity_scale")
        return self


class WaveguideModel(_Strict):
    type: Literal["waveguide"]
    n_atoms: int = Field(..., ge=1)
    kappa: float = Field(..., ge=0)
    gamma_raman: float = Field(0.0, ge=0)
    r_p: float = Field(..., ge=0)
    positions: Union[Literal["ordered", "random"], List[float]] = "ordered"
    position_seed: int = 0
    k0: float = 1.0
    thermal: Optional[ThermalBlock] = None
    backend: Literal["auto", "density", "trajectory"] = "auto"
    n_traj: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _positions(self):
        if isinstance(self.positions, list):
            if len(self.positions) != self.n_atoms:
                raise ValueError(f"{len(self.positions)} positions for {self.n_atoms} atoms")
            if len(set(self.positions)) != len(self.positions):
                raise ValueError("atom positions must be distinct")
        if self.k0 == 0:
            raise ValueError("k0 must be non-zero")
        return self


Model = Annotated[Union[FourLevelModel, WaveguideModel], Field(discriminator="type")]


class PulseBlock(_Strict):
    lengths: List[float] = Field(..., description="pulse durations in µs")
    taper_time: float = Field(0.2, gt=0)
    end_time: float = 0.0

    @field_validator("lengths")
    @classmethod
    def _lengths(cls, v):
        if len(v) == 0:
            raise ValueError("lengths must not be empty")
        if any(x < 0 for x in v):
            raise ValueError("lengths must be >= 0")
        if len(set(v)) != len(v):
            raise ValueError("lengths must be distinct")
        return sorted(v)


class GridBlock(_Strict):
    t_start: Optional[float] = Field(None, description="default: 0.2 µs before the longest pulse starts")
    t_stop: float = 6.0
    bin_width: float = Field(BIN_WIDTH, gt=0)


class NoiseBlock(_Strict):
    n_measurements: int = Field(..., ge=1)
    efficiency: float = Field(DETECTION_EFFICIENCY, gt=0, le=1)


class AnalysisBlock(_Strict):
    min_counts: int = Field(THRESHOLD_COUNTS, ge=0)
    rel_floor: float = Field(1e-3, gt=0, lt=1)


class DatasetBlock(_Strict):
    traces: List[str] = Field(..., min_length=1)
    r_p: float = Field(..., ge=0)
    gamma_raman: float = Field(..., ge=0)
    delta_mhz: Optional[float] = Field(None, gt=0)
    name: str = ""


class CalibrationBlock(_Strict):
    datasets: List[DatasetBlock] = Field(..., min_length=1)
    mode: Literal["joint", "separate"] = "joint"
    free: List[Literal["kappa", "varkappa", "gamma_d"]] = ["kappa", "varkappa", "gamma_d"]
    fixed: dict = Field(default_factory=dict)
    shared_gamma_d: bool = True
    kappa_scaling: bool = False
    post_pulse_weight: float = Field(1.0, ge=0)
    gamma_d_pass: bool = True
    n_starts: int = Field(8, ge=1)
    max_fev: int = Field(600, ge=10)
    scaling_analysis: bool = False

    @field_validator("fixed")
    @classmethod
    def _fixed(cls, v):
        bad = set(v) - {"kappa", "varkappa", "gamma_d"}
        if bad:
            raise ValueError(f"unknown fixed parameters {sorted(bad)}")
        return v


class RunConfig(_Strict):
    model: Optional[Model] = None
    pulse: Optional[PulseBlock] = None
    grid: GridBlock = GridBlock()
    noise: Optional[NoiseBlock] = None
    analysis: AnalysisBlock = AnalysisBlock()
    calibration: Optional[CalibrationBlock] = None
    seed: int = Field(0, ge=0)
    threads: Optional[int] = Field(None, ge=1)
    format: Literal["csv", "json"] = "csv"
    output: str = "out"

    def require(self, *blocks: str) -> None:
        missing = [b for b in blocks if getattr(self, b) is None]
        if missing:
            raise ValueError(f"config is missing required block(s): {', '.join(missing)}")

    def digest(self) -> str:
        """sha256 of the canonical JSON form, ignoring fields that do not affect results."""
        data = self.model_dump(mode="json", exclude={"output", "threads", "format"})
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


REQUIRED = {
    "simulate": ("model", "pulse"),
    "sweep": ("model", "pulse"),
    "calibrate": ("calibration",),
}


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        raw = json.load(fh)
    return RunConfig.model_validate(raw)
