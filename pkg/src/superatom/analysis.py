"""Post-pulse decay analysis: thresholds, exponential fits and pulse-length sweeps."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.ndimage import uniform_filter1d

from .params import EffectiveParams
from .traces import PhotonTrace

log = logging.getLogger(__name__)

REL_FLOOR = 1e-3
DRIVE_FLOOR = 1e-3


class FitError(ValueError):
    pass


class DegenerateSeries(ValueError):
    pass


@dataclass
class FitResult:
    """Result of fitting I0 * exp(-gamma * (t - t_origin))."""

    i0: float
    gamma: float
    covariance: np.ndarray
    fit_window: tuple
    n_points_used: int
    threshold_applied: bool
    t_origin: float = 0.0

    @property
    def i0_err(self) -> float:
        return float(np.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def gamma_err(self) -> float:
        return float(np.sqrt(max(self.covariance[1, 1], 0.0)))

    def predict(self, t):
        return self.i0 * np.exp(-self.gamma * (np.asarray(t) - self.t_origin))

    def to_dict(self) -> dict:
        return {
            "i0": self.i0,
            "gamma": self.gamma,
            "i0_err": self.i0_err,
            "gamma_err": self.gamma_err,
            "covariance": self.covariance.tolist(),
            "fit_window": list(self.fit_window),
            "n_points_used": self.n_points_used,
            "threshold_applied": self.threshold_applied,
            "t_origin": self.t_origin,
        }


def apply_threshold(trace: PhotonTrace, min_counts: int = 50, rel_floor: float = REL_FLOOR) -> PhotonTrace:
    """Mask bins too weak to fit.

    Count traces lose bins with fewer than ``min_counts`` counts. Noiseless
    rate traces lose bins below ``rel_floor`` times the trace maximum.
    """
    if trace.has_counts:
        mask = trace.counts < min_counts
        rule = {"min_counts": int(min_counts)}
    else:
        rates = trace.rates
        if not np.max(rates) > 0:
            raise FitError("trace is identically zero")
        mask = rates < rel_floor * np.max(rates)
        rule = {"rel_floor": float(rel_floor)}
    if np.all(mask):
        raise FitError("threshold masks every bin")
    return replace(trace, mask=mask, metadata=dict(trace.metadata, threshold=rule))


def post_pulse_start(trace: PhotonTrace, drive_floor: float = DRIVE_FLOOR) -> float:
    """Left edge of the first bin after the drive has fallen below ``drive_floor`` of its peak."""
    drive = trace.drive()
    if not np.any(drive > 0):
        shape = trace.pulse()
        if shape is not None and shape.duration == 0:
            return shape.end_time
        raise FitError("trace carries no pulse; pass an explicit window")
    on = np.nonzero(drive >= drive_floor * np.max(drive))[0]
    k = on[-1] + 1
    if k >= len(drive):
        raise FitError("the pulse does not end inside the trace")
    return float(trace.bin_edges[k])


def fit_window(trace: PhotonTrace, start: Optional[float] = None) -> tuple:
    """Default fit window: from the post-pulse start to the first masked bin."""
    t0 = post_pulse_start(trace) if start is None else start
    centers = trace.centers
    idx = np.nonzero(centers >= t0)[0]
    if len(idx) == 0:
        raise FitError("window starts after the trace")
    masked = np.nonzero(trace.mask[idx])[0]
    stop = idx[masked[0]] if len(masked) else idx[-1] + 1
    return (t0, float(trace.bin_edges[stop]))


def fit_exponential(
    trace: PhotonTrace,
    window: Optional[tuple] = None,
    t_origin: float = 0.0,
    weights: str = "auto",
) -> FitResult:
    """Weighted straight-line fit of log(rate) against time.

    ``weights`` is ``"poisson"`` (weight = counts, i.e. inverse variance of
    log counts), ``"uniform"``, or ``"auto"`` (Poisson for count traces).
    """
    if window is None:
        window = fit_window(trace)
    t_lo, t_hi = window
    centers = trace.centers
    sel = (centers >= t_lo) & (centers <= t_hi) & ~trace.mask
    rates = trace.rate_values()
    sel &= rates > 0
    n = int(np.sum(sel))
    if n < 3:
        raise FitError(f"only {n} usable bins in window {window}")
    if weights == "auto":
        weights = "poisson" if trace.has_counts else "uniform"
    t = centers[sel] - t_origin
    y = np.log(rates[sel])
    if weights == "poisson":
        if not trace.has_counts:
            raise FitError("Poisson weights need a count trace")
        w = trace.counts[sel].astype(float)
    elif weights == "uniform":
        w = np.ones(n)
    else:
        raise ValueError(f"unknown weights {weights!r}")
    design = np.column_stack([np.ones(n), t])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    normal = np.linalg.inv(design.T @ (design * w[:, None]))
    if weights == "uniform":
        resid = y - design @ coef
        dof = n - 2
        normal = normal * (float(resid @ resid) / dof if dof > 0 else 0.0)
    i0 = float(np.exp(coef[0]))
    gamma = float(-coef[1])
    jac = np.array([[i0, 0.0], [0.0, -1.0]])
    cov = jac @ normal @ jac.T
    return FitResult(
        i0=i0,
        gamma=gamma,
        covariance=cov,
        fit_window=(float(t_lo), float(t_hi)),
        n_points_used=n,
        threshold_applied=bool(np.any(trace.mask)),
        t_origin=t_origin,
    )


def analyze_trace(trace: PhotonTrace, min_counts: int = 50, rel_floor: float = REL_FLOOR) -> FitResult:
    """Threshold and fit the post-pulse part of one trace, t_origin at the pulse end."""
    shape = trace.pulse()
    origin = shape.end_time if shape is not None else 0.0
    masked = apply_threshold(trace, min_counts=min_counts, rel_floor=rel_floor)
    return fit_exponential(masked, t_origin=origin)


@dataclass
class SweepResult:
    pulse_lengths: np.ndarray
    fits: list
    failures: dict = field(default_factory=dict)
    traces: list = field(default_factory=list, repr=False)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pulse_lengths = np.asarray(self.pulse_lengths, dtype=float)
        if np.any(np.diff(self.pulse_lengths) <= 0):
            raise ValueError("pulse lengths must be strictly increasing")

    def _series(self, attr):
        return np.array([getattr(f, attr) if f is not None else np.nan for f in self.fits])

    @property
    def gamma(self):
        return self._series("gamma")

    @property
    def i0(self):
        return self._series("i0")

    @property
    def gamma_err(self):
        return self._series("gamma_err")

    @property
    def i0_err(self):
        return self._series("i0_err")

    def write_csv(self, path, metadata: Optional[dict] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["pulse_length_us", "gamma", "gamma_err", "i0", "i0_err"])
            for row in zip(self.pulse_lengths, self.gamma, self.gamma_err, self.i0, self.i0_err):
                writer.writerow([f"{v:.12g}" for v in row])
        meta = dict(self.metadata)
        if metadata:
            meta.update(metadata)
        meta["failures"] = {f"{k:.12g}": v for k, v in self.failures.items()}
        with open(path.with_name(path.stem + ".meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def write_json(self, path, metadata: Optional[dict] = None) -> Path:
        """Single JSON document: columns, fit windows, failures and metadata."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(self.metadata)
        if metadata:
            meta.update(metadata)

        def col(values):
            return [None if not np.isfinite(v) else float(v) for v in values]

        doc = {
            "pulse_length_us": col(self.pulse_lengths),
            "gamma": col(self.gamma),
            "gamma_err": col(self.gamma_err),
            "i0": col(self.i0),
            "i0_err": col(self.i0_err),
            "fit_window": [list(f.fit_window) if f is not None else None for f in self.fits],
            "failures": {f"{k:.12g}": v for k, v in self.failures.items()},
            "metadata": meta,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def sweep_pulse_lengths(
    source,
    lengths,
    bin_edges,
    min_counts: int = 50,
    rel_floor: float = REL_FLOOR,
    taper_time: float = 0.2,
    end_time: float = 0.0,
    poisson: Optional[dict] = None,
    simulate_kwargs: Optional[dict] = None,
) -> SweepResult:
    """Simulate and fit one post-pulse decay per pulse length (fixed end time).

    ``source`` is EffectiveParams (four-level model) or a WaveguideConfig.
    ``poisson``, if given, holds ``n_measurements``, ``efficiency`` and ``seed``
    and turns each simulated trace into counts before fitting. A failing
    length is recorded in ``failures`` and does not stop the sweep.
    """
    lengths = np.asarray(lengths, dtype=float)
    if len(lengths) == 0:
        raise ValueError("lengths must not be empty")
    traces = simulate_lengths(source, lengths, bin_edges, taper_time, end_time, **(simulate_kwargs or {}))
    if poisson is not None:
        from .superatom import poissonize

        seeds = child_seeds(poisson.get("seed"), len(traces))
        traces = [
            poissonize(tr, poisson["n_measurements"], poisson.get("efficiency", 0.35), seed=s)
            for tr, s in zip(traces, seeds)
        ]
    fits, failures = [], {}
    for length, trace in zip(lengths, traces):
        try:
            fits.append(analyze_trace(trace, min_counts=min_counts, rel_floor=rel_floor))
        except (FitError, np.linalg.LinAlgError) as exc:
            log.warning("fit failed for pulse length %.4g: %s", length, exc)
            failures[float(length)] = str(exc)
            fits.append(None)
    return SweepResult(pulse_lengths=lengths, fits=fits, failures=failures, traces=traces)


def child_seeds(seed, n: int) -> list:
    """Independent integer seeds derived from ``seed`` (None stays None)."""
    if seed is None:
        return [None] * n
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def simulate_lengths(source, lengths, bin_edges, taper_time=0.2, end_time=0.0, **kwargs) -> list:
    """Noiseless forward-emission traces for each pulse length."""
    if isinstance(source, EffectiveParams):
        from .superatom import simulate_sweep

        return [r.trace for r in simulate_sweep(source, lengths, bin_edges, taper_time, end_time)]
    from .waveguide import WaveguideConfig, simulate_waveguide_sweep

    if isinstance(source, WaveguideConfig):
        return simulate_waveguide_sweep(source, lengths, bin_edges, taper_time, end_time, **kwargs)
    raise TypeError(f"cannot simulate from {type(source).__name__}")


def _oscillation_model(x, c, b, d1, a, d2, period, phase):
    return c + b * np.exp(-d1 * x) + a * np.exp(-d2 * x) * np.cos(2 * np.pi * x / period + phase)


def oscillation_period(x, y, n_guesses: int = 25) -> tuple:
    """Period (and its standard error) of a damped oscillation sampled at ``x``.

    The model is an exponential baseline plus an exponentially damped cosine.
    It is fitted by bounded least squares from a grid of starting periods
    and phases; the lowest residual wins.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 8:
        raise DegenerateSeries("need at least 8 finite points")
    if np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300):
        raise DegenerateSeries("constant series has no period")
    x0 = x[0]
    xs = x - x0
    spacing = float(np.median(np.diff(xs)))
    span = float(xs[-1])
    lo = 2.0 * spacing
    guesses = np.linspace(max(2.2 * spacing, 0.1 * span), span / 1.5, n_guesses)
    amp = 0.5 * np.ptp(y)
    lower = [-np.inf, -np.inf, 0.0, 0.0, 0.0, lo, -10.0]
    upper = [np.inf, np.inf, 20.0, np.inf, 20.0, np.inf, 10.0]
    best = None
    for p0 in guesses:
        for phase in np.linspace(-np.pi, np.pi, 4, endpoint=False):
            start = [y[-1], 0.0, 0.5, amp, 0.5, p0, phase]
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", optimize.OptimizeWarning)
                    popt, pcov = optimize.curve_fit(
                        _oscillation_model, xs, y, p0=start, bounds=(lower, upper), maxfev=3000
                    )
            except (RuntimeError, ValueError):
                continue
            cost = float(np.sum((_oscillation_model(xs, *popt) - y) ** 2))
            if best is None or cost < best[0]:
                best = (cost, popt, pcov)
    if best is None:
        raise DegenerateSeries("no oscillation fit converged")
    _, popt, pcov = best
    err = float(np.sqrt(pcov[5, 5])) if np.isfinite(pcov[5, 5]) and pcov[5, 5] >= 0 else float("nan")
    return float(popt[5]), err


def detrend(x, y, window: float) -> np.ndarray:
    """Subtract a moving-average baseline spanning ``window`` in x units."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    spacing = np.median(np.diff(x))
    size = max(2, int(round(window / spacing)))
    return y - uniform_filter1d(y, size=size, mode="nearest")


def phase_correlation(sweep: SweepResult, window: Optional[float] = None) -> float:
    """Pearson correlation of the detrended decay-rate and amplitude series.

    ``window`` is the moving-average baseline length in µs, by default one
    oscillation period estimated from the amplitude series.
    """
    x = sweep.pulse_lengths
    g, a = sweep.gamma, sweep.i0
    ok = np.isfinite(g) & np.isfinite(a)
    x, g, a = x[ok], g[ok], a[ok]
    if len(x) < 8:
        raise DegenerateSeries("need at least 8 fitted pulse lengths")
    scale = max(np.max(np.abs(g)), 1e-300)
    if np.ptp(g) <= 1e-9 * scale or np.ptp(a) <= 1e-9 * max(np.max(np.abs(a)), 1e-300):
        raise DegenerateSeries("decay-rate or amplitude series is constant")
    if window is None:
        window, _ = oscillation_period(x, a)
    dg, da = detrend(x, g, window), detrend(x, a, window)
    if np.std(dg) == 0 or np.std(da) == 0:
        raise DegenerateSeries("detrended series is constant")
    return float(np.corrcoef(dg, da)[0, 1])


@dataclass
class Revival:
    """First post-pulse local minimum of the emission and the peak that follows it."""

    t_min: float
    rate_min: float
    t_peak: float
    rate_peak: float
    initial_rate: float

    @property
    def depth(self) -> float:
        """Minimum relative to the rate at the post-pulse start."""
        return self.rate_min / self.initial_rate


def find_revival(trace: PhotonTrace, start: Optional[float] = None) -> Optional[Revival]:
    """Locate a drop-and-revival in a noiseless post-pulse trace, or None if the decay is monotonic."""
    t0 = post_pulse_start(trace) if start is None else start
    sel = trace.centers >= t0
    x, y = trace.centers[sel], trace.rate_values()[sel]
    if len(y) < 3:
        raise FitError("too few post-pulse bins")
    d = np.diff(y)
    rising = np.nonzero(d > 0)[0]
    if len(rising) == 0:
        return None
    i = rising[0]
    falling = np.nonzero(d[i:] < 0)[0]
    j = i + falling[0] if len(falling) else len(y) - 1
    return Revival(float(x[i]), float(y[i]), float(x[j]), float(y[j]), float(y[0]))
