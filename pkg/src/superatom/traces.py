"""Binned photon traces and their CSV + JSON-sidecar file format.

A trace file ``name.csv`` has a header row and two columns,
``t_bin_center_us`` and either ``rate`` (photons/µs) or ``counts`` (integer
counts summed over all measurements). The sidecar ``name.meta.json`` carries the
bin width and everything else needed to interpret or regenerate the trace.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .params import PulseShape


@dataclass
class PhotonTrace:
    bin_edges: np.ndarray
    rates: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    n_measurements: int = 1
    detection_efficiency: float = 1.0
    mask: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        if self.bin_edges.ndim != 1 or len(self.bin_edges) < 2:
            raise ValueError("bin_edges needs at least two entries")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing")
        n = len(self.bin_edges) - 1
        if self.rates is None and self.counts is None:
            raise ValueError("a trace needs rates or counts")
        if self.rates is not None:
            self.rates = np.asarray(self.rates, dtype=float)
            if self.rates.shape != (n,):
                raise ValueError(f"rates has shape {self.rates.shape}, expected ({n},)")
            if np.any(self.rates < 0):
                raise ValueError("rates must be non-negative")
        if self.counts is not None:
            self.counts = np.asarray(self.counts)
            if self.counts.shape != (n,):
                raise ValueError(f"counts has shape {self.counts.shape}, expected ({n},)")
            if np.any(self.counts < 0):
                raise ValueError("counts must be non-negative")
        if not 0 < self.detection_efficiency <= 1:
            raise ValueError("detection_efficiency must be in (0, 1]")
        if self.mask is None:
            self.mask = np.zeros(n, dtype=bool)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def has_counts(self) -> bool:
        return self.counts is not None

    @property
    def exposure(self) -> np.ndarray:
        """Conversion factor from photons/µs to expected counts per bin."""
        return self.widths * self.n_measurements * self.detection_efficiency

    def rate_values(self) -> np.ndarray:
        """Rates in photons/µs; derived from counts for count traces."""
        if self.counts is not None:
            return self.counts / self.exposure
        return self.rates

    def rate_errors(self) -> Optional[np.ndarray]:
        """Poisson standard errors of the rates (None for noiseless traces)."""
        if self.counts is None:
            return None
        return np.sqrt(np.maximum(self.counts, 1)) / self.exposure

    def pulse(self) -> Optional[PulseShape]:
        p = self.metadata.get("pulse")
        return PulseShape(**p) if p else None

    def drive(self) -> np.ndarray:
        """Input photon rate at the bin centres, zero if no pulse is recorded."""
        shape = self.pulse()
        if shape is None:
            return np.zeros(len(self.centers))
        return shape.rate(self.centers)

    def shifted(self, dt: float) -> "PhotonTrace":
        meta = dict(self.metadata)
        if meta.get("pulse"):
            meta["pulse"] = dict(meta["pulse"], end_time=meta["pulse"]["end_time"] + dt)
        return replace(self, bin_edges=self.bin_edges + dt, metadata=meta)


def uniform_edges(t_start: float, t_stop: float, width: float) -> np.ndarray:
    """Bin edges of width ``width`` from ``t_start``; the last edge is >= t_stop."""
    n = int(np.ceil((t_stop - t_start) / width - 1e-9))
    return t_start + width * np.arange(n + 1)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_trace(trace: PhotonTrace, path, metadata: Optional[dict] = None, fmt: str = "csv") -> Path:
    """Write a trace; returns the data file path.

    ``fmt="csv"`` writes ``path`` plus a JSON sidecar next to it;
    ``fmt="json"`` writes a single JSON document with the columns and the
    metadata under ``"metadata"``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    widths = trace.widths
    if np.max(np.abs(widths - widths[0])) > 1e-9 * max(1.0, abs(widths[0])):
        raise ValueError("only uniform bins can be written")
    column = "counts" if trace.has_counts else "rate"
    values = trace.counts if trace.has_counts else trace.rates
    meta = dict(trace.metadata)
    if metadata:
        meta.update(metadata)
    meta.update(
        bin_width_us=float(widths[0]),
        column=column,
        n_measurements=int(trace.n_measurements),
        detection_efficiency=float(trace.detection_efficiency),
    )
    if fmt == "json":
        doc = {
            "t_bin_center_us": [float(f"{t:.9g}") for t in trace.centers],
            column: [int(v) for v in values] if trace.has_counts else [float(v) for v in values],
            "metadata": meta,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_bin_center_us", column])
        for t, v in zip(trace.centers, values):
            writer.writerow([f"{t:.9g}", f"{int(v)}" if trace.has_counts else f"{v:.12e}"])
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_trace(path) -> PhotonTrace:
    """Read a trace written by ``write_trace`` (CSV + sidecar, or single JSON)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace file not found: {path}")
    if path.suffix == ".json":
        with open(path) as fh:
            doc = json.load(fh)
        meta = doc["metadata"]
        centers = np.asarray(doc["t_bin_center_us"], dtype=float)
        width = float(meta["bin_width_us"])
        kwargs = dict(
            bin_edges=np.append(centers - 0.5 * width, centers[-1] + 0.5 * width),
            n_measurements=int(meta.get("n_measurements", 1)),
            detection_efficiency=float(meta.get("detection_efficiency", 1.0)),
            metadata=meta,
        )
        if "counts" in doc:
            return PhotonTrace(counts=np.asarray(doc["counts"], dtype=np.int64), **kwargs)
        return PhotonTrace(rates=np.asarray(doc["rate"], dtype=float), **kwargs)
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise FileNotFoundError(f"trace metadata not found: {sidecar}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if len(header) != 2 or header[0] != "t_bin_center_us" or header[1] not in ("rate", "counts"):
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array([[float(a), float(b)] for a, b in rows])
    width = float(meta["bin_width_us"])
    edges = np.append(data[:, 0] - 0.5 * width, data[-1, 0] + 0.5 * width)
    kwargs = dict(
        bin_edges=edges,
        n_measurements=int(meta.get("n_measurements", 1)),
        detection_efficiency=float(meta.get("detection_efficiency", 1.0)),
        metadata=meta,
    )
    if header[1] == "counts":
        return PhotonTrace(counts=data[:, 1].astype(np.int64), **kwargs)
    return PhotonTrace(rates=data[:, 1], **kwargs)
