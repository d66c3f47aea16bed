"""Collective decay of a Rydberg superatom: four-level and chiral-waveguide models."""

__version__ = "0.1.0"

from .params import (
    BIN_WIDTH,
    DETECTION_EFFICIENCY,
    REFERENCE_SETS,
    EffectiveParams,
    ExperimentParams,
    PulseShape,
    derive_effective,
)
from .superatom import forward_rate, poissonize, simulate_sweep, simulate_trace
from .traces import PhotonTrace, read_trace, write_trace

__all__ = [
    "BIN_WIDTH",
    "DETECTION_EFFICIENCY",
    "REFERENCE_SETS",
    "EffectiveParams",
    "ExperimentParams",
    "PhotonTrace",
    "PulseShape",
    "derive_effective",
    "forward_rate",
    "poissonize",
    "read_trace",
    "simulate_sweep",
    "simulate_trace",
    "write_trace",
]
