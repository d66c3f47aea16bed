"""Least-squares calibration of the four-level model against photon traces.

Each dataset is a set of traces (one per pulse length) recorded at one
setting. Count traces are compared through signed Poisson deviance residuals,
so the summed squares are -2 log L up to a constant and the fit is maximum
likelihood. Noiseless rate traces use residuals scaled by the largest rate of
the dataset, restricted to bins above the relative floor.

The optimiser is a bounded Nelder-Mead simplex from several Latin-hypercube
starts, polished by a finite-difference Gauss-Newton (trust-region)
least-squares step that also supplies the covariance.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special, stats
from scipy.stats import qmc

from .analysis import apply_threshold
from .params import EffectiveParams, ExperimentParams, PulseShape
from .superatom import FourLevelPropagator, simulate_sweep, simulate_trace
from .traces import PhotonTrace

log = logging.getLogger(__name__)

PARAM_NAMES = ("kappa", "varkappa", "gamma_d")
START_RANGES = {"kappa": (0.05, 2.0), "varkappa": (0.0, 2.0), "gamma_d": (0.05, 3.0)}
BOUNDS = {"kappa": (1e-4, 10.0), "varkappa": (0.0, 10.0), "gamma_d": (0.0, 10.0)}


class CalibrationError(RuntimeError):
    pass


@dataclass
class Dataset:
    """Traces over pulse lengths recorded at one setting.

    Every trace must carry its pulse in ``metadata["pulse"]``. ``gamma_raman``
    is held fixed during fits. ``delta_mhz`` is needed for the kappa ~ 1/Delta^2
    constraint and for the report.
    """

    traces: list
    r_p: float
    gamma_raman: float
    delta_mhz: Optional[float] = None
    name: str = ""
    experiment: Optional[ExperimentParams] = None
    counts: bool = field(init=False, default=False)

    def __post_init__(self):
        if not self.traces:
            raise ValueError("a dataset needs at least one trace")
        for tr in self.traces:
            if tr.pulse() is None:
                raise ValueError("every trace needs pulse metadata")
        if self.delta_mhz is None and self.experiment is not None:
            self.delta_mhz = self.experiment.delta / (2 * np.pi)
        kinds = {tr.has_counts for tr in self.traces}
        if len(kinds) != 1:
            raise ValueError("a dataset must hold only count traces or only rate traces")
        self.counts = kinds.pop()

    @property
    def n_bins(self) -> int:
        return int(sum(len(tr.centers) for tr in self.traces))


@dataclass
class CalibrationProblem:
    """Datasets plus what to fit and how.

    ``free`` lists the fitted parameters, the rest come from ``fixed``
    (default 0). With several datasets, ``shared_gamma_d`` ties gamma_D across
    them and ``kappa_scaling`` imposes kappa = kappa_ref (Delta_ref/Delta)^2
    with the first dataset as reference.
    """

    datasets: list
    free: tuple = PARAM_NAMES
    fixed: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=lambda: dict(BOUNDS))
    start_ranges: dict = field(default_factory=lambda: dict(START_RANGES))
    shared_gamma_d: bool = True
    kappa_scaling: bool = False
    post_pulse_weight: float = 1.0
    gamma_d_pass: bool = True
    n_starts: int = 8
    seed: int = 0
    threads: int = 1
    max_fev: int = 600

    def __post_init__(self):
        if isinstance(self.datasets, Dataset):
            self.datasets = [self.datasets]
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        self.free = tuple(self.free)
        for name in self.free:
            if name not in PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
        for name in PARAM_NAMES:
            lo, hi = self.bounds[name]
            if lo < 0 or hi <= lo:
                raise ValueError(f"bounds for {name} must satisfy 0 <= lo < hi, got {(lo, hi)}")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.kappa_scaling and any(d.delta_mhz is None for d in self.datasets):
            raise ValueError("the kappa ~ 1/Delta^2 constraint needs delta_mhz for every dataset")

    def single(self, i: int) -> "CalibrationProblem":
        return replace(self, datasets=[self.datasets[i]], kappa_scaling=False)


def model_rates(eff: EffectiveParams, traces: Sequence[PhotonTrace]) -> list:
    """Noiseless model rates on each trace's bins, sharing propagators.

    Traces on identical bins whose pulses end together are simulated as one
    sweep.
    """
    prop = FourLevelPropagator(eff)
    out = [None] * len(traces)
    groups = {}
    for i, tr in enumerate(traces):
        p = tr.pulse()
        groups.setdefault((tr.bin_edges.tobytes(), p.end_time, p.peak_rate), []).append(i)
    for idx in groups.values():
        shapes = [traces[i].pulse() for i in idx]
        taper = max(s.taper_time for s in shapes)
        lengths = [s.duration for s in shapes]
        nominal = [PulseShape.tukey(L, shapes[0].peak_rate, taper, shapes[0].end_time) for L in lengths]
        if nominal == shapes and len(set(lengths)) == len(lengths):
            order = np.argsort(lengths, kind="stable")
            res = simulate_sweep(
                eff.with_(r_p=shapes[0].peak_rate),
                [lengths[k] for k in order],
                traces[idx[0]].bin_edges,
                taper_time=taper,
                end_time=shapes[0].end_time,
                propagator=prop,
            )
            for k, r in zip(order, res):
                out[idx[k]] = r.trace.rates
        else:
            for i, s in zip(idx, shapes):
                sim = simulate_trace(eff.with_(r_p=s.peak_rate), s, traces[i].bin_edges, propagator=prop)
                out[i] = sim.trace.rates
    return out


class _Target:
    """Residual machinery for one dataset; arrays are built once."""

    def __init__(self, ds: Dataset, post_pulse_weight: float = 1.0):
        self.ds = ds
        self.keep, self.post, self.sigma, self.data, self.weight = [], [], [], [], []
        self.ref = 1.0
        if not ds.counts:
            self.ref = max(float(np.max(tr.rates)) for tr in ds.traces)
        for tr in ds.traces:
            post = tr.centers > tr.pulse().end_time
            self.post.append(post)
            self.weight.append(np.where(post, post_pulse_weight, 1.0))
            if ds.counts:
                self.data.append(tr.counts.astype(float))
                self.sigma.append(None)
                self.keep.append(np.ones(len(post), dtype=bool))
            else:
                self.data.append(tr.rates)
                self.sigma.append(np.full(len(post), self.ref))
                # noiseless traces: drop the bins below the relative floor, as in the decay fits
                self.keep.append(~apply_threshold(tr).mask)

    def predicted(self, eff: EffectiveParams) -> list:
        rates = model_rates(eff, self.ds.traces)
        if self.ds.counts:
            return [r * tr.exposure for r, tr in zip(rates, self.ds.traces)]
        return rates

    def residuals(self, eff: EffectiveParams, post_only: bool = False, weighted: bool = True) -> np.ndarray:
        parts = []
        for m, d, s, w, k, p in zip(self.predicted(eff), self.data, self.sigma, self.weight, self.keep, self.post):
            res = self._residual(m, d, s)
            if weighted:
                res = res * w
            parts.append(res[k & p] if post_only else res[k])
        return np.concatenate(parts)

    def _residual(self, m, d, s):
        if not self.ds.counts:
            return (m - d) / s
        mu = np.maximum(m, 1e-300)
        dev = 2.0 * (mu - d + special.xlogy(d, d) - special.xlogy(d, mu))
        return np.sign(mu - d) * np.sqrt(np.maximum(dev, 0.0))

    def diagnostics(self, eff: EffectiveParams) -> dict:
        """chi^2 and relative residuals, overall and after the pulse."""
        pred = self.predicted(eff)
        num = den = num_post = den_post = chi2 = 0.0
        n = 0
        for m, d, s, k, p in zip(pred, self.data, self.sigma, self.keep, self.post):
            diff = (m - d)[k]
            num += float(diff @ diff)
            den += float(d[k] @ d[k])
            dp = (m - d)[k & p]
            num_post += float(dp @ dp)
            den_post += float(d[k & p] @ d[k & p])
            r = self._residual(m, d, s)[k]
            chi2 += float(r @ r)
            n += int(np.sum(k))
        return {
            "name": self.ds.name,
            "chi2": chi2,
            "n_bins": n,
            "relative_residual": float(np.sqrt(num / den)) if den > 0 else float("nan"),
            "relative_residual_post": float(np.sqrt(num_post / den_post)) if den_post > 0 else float("nan"),
        }


@dataclass
class _Layout:
    """Maps a flat parameter vector onto per-dataset EffectiveParams."""

    entries: list  # (parameter name, dataset index or None when shared)
    problem: CalibrationProblem

    @property
    def labels(self) -> list:
        return [n if i is None else f"{n}[{i}]" for n, i in self.entries]

    def bounds(self) -> tuple:
        lo = [self.problem.bounds[n][0] for n, _ in self.entries]
        hi = [self.problem.bounds[n][1] for n, _ in self.entries]
        return np.array(lo), np.array(hi)

    def effective(self, x) -> list:
        prob = self.problem
        out = []
        for i, ds in enumerate(prob.datasets):
            vals = {n: float(prob.fixed.get(n, 0.0)) for n in PARAM_NAMES}
            for (name, j), v in zip(self.entries, x):
                if j is None or j == i:
                    vals[name] = float(v)
            if prob.kappa_scaling and i > 0 and any(n == "kappa" and j is None for n, j in self.entries):
                ref = prob.datasets[0].delta_mhz
                vals["kappa"] *= (ref / ds.delta_mhz) ** 2
            out.append(
                EffectiveParams(
                    kappa=vals["kappa"],
                    gamma_raman=ds.gamma_raman,
                    gamma_d=vals["gamma_d"],
                    varkappa=vals["varkappa"],
                    r_p=ds.r_p,
                )
            )
        return out


def _single_layout(problem: CalibrationProblem, free) -> _Layout:
    return _Layout([(n, None) for n in PARAM_NAMES if n in free], problem)


def _joint_layout(problem: CalibrationProblem) -> _Layout:
    entries = []
    n = len(problem.datasets)
    for name in PARAM_NAMES:
        if name not in problem.free:
            continue
        shared = (name == "gamma_d" and problem.shared_gamma_d) or (name == "kappa" and problem.kappa_scaling)
        entries.extend([(name, None)] if shared else [(name, i) for i in range(n)])
    return _Layout(entries, problem)


@dataclass
class StartResult:
    x0: list
    x: list
    loss: float
    n_fev: int
    converged: bool


@dataclass
class FitReport:
    """Outcome of a calibration.

    ``params`` holds one dict per dataset with the fitted (or fixed) rates.
    ``covariance`` is over ``labels`` (the free parameters).
    """

    labels: list
    x: np.ndarray
    covariance: np.ndarray
    params: list
    loss: float
    n_residuals: int
    datasets: list
    starts: dict = field(default_factory=dict)
    at_bound: dict = field(default_factory=dict)
    converged: bool = True
    stage1: Optional[dict] = None
    gamma_d_pass: Optional[dict] = None
    per_dataset: Optional[list] = None
    consistency: Optional[dict] = None
    rows: list = field(default_factory=list)

    @property
    def errors(self) -> dict:
        d = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        return dict(zip(self.labels, d))

    @property
    def dof(self) -> int:
        return self.n_residuals - len(self.labels)

    def value(self, name: str, dataset: int = 0) -> float:
        return float(self.params[dataset][name])

    def error(self, name: str, dataset: int = 0) -> float:
        errs = self.errors
        for key in (f"{name}[{dataset}]", name):
            if key in errs:
                return float(errs[key])
        return 0.0

    def to_dict(self) -> dict:
        return {
            "parameters": list(self.labels),
            "values": [float(v) for v in self.x],
            "errors": {k: float(v) for k, v in self.errors.items()},
            "covariance": np.asarray(self.covariance).tolist(),
            "rows": self.rows,
            "loss": self.loss,
            "n_residuals": self.n_residuals,
            "datasets": self.datasets,
            "starts": {
                stage: [{"x0": s.x0, "x": s.x, "loss": s.loss, "n_fev": s.n_fev, "converged": s.converged} for s in runs]
                for stage, runs in self.starts.items()
            },
            "at_bound": self.at_bound,
            "converged": self.converged,
            "stage1": self.stage1,
            "gamma_d_pass": self.gamma_d_pass,
            "per_dataset": self.per_dataset,
            "consistency": self.consistency,
        }


class _Objective:
    def __init__(self, layout: _Layout, targets: list, post_only: bool = False):
        self.layout = layout
        self.targets = targets
        self.post_only = post_only
        self.lo, self.hi = layout.bounds()

    def residuals(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        effs = self.layout.effective(x)
        return np.concatenate([t.residuals(e, post_only=self.post_only) for t, e in zip(self.targets, effs)])

    def loss(self, x) -> float:
        r = self.residuals(x)
        val = float(r @ r)
        return val if np.isfinite(val) else np.inf


def _lhs_starts(problem: CalibrationProblem, layout: _Layout, n: int, salt: int) -> np.ndarray:
    sampler = qmc.LatinHypercube(d=len(layout.entries), seed=np.random.default_rng([problem.seed, salt]))
    unit = sampler.random(n)
    lo = np.array([problem.start_ranges[name][0] for name, _ in layout.entries])
    hi = np.array([problem.start_ranges[name][1] for name, _ in layout.entries])
    return qmc.scale(unit, lo, hi) if np.all(hi > lo) else np.tile(lo, (n, 1))


def _nelder_mead(obj: _Objective, x0, max_fev: int) -> StartResult:
    res = optimize.minimize(
        obj.loss,
        x0,
        method="Nelder-Mead",
        bounds=list(zip(obj.lo, obj.hi)),
        options={"maxfev": max_fev, "xatol": 1e-4, "fatol": 1e-3, "adaptive": len(x0) > 3},
    )
    return StartResult(
        x0=[float(v) for v in x0],
        x=[float(v) for v in res.x],
        loss=float(res.fun),
        n_fev=int(res.nfev),
        converged=bool(res.success),
    )


def _multistart(obj: _Objective, starts, max_fev: int, threads: int) -> list:
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: _nelder_mead(obj, s, max_fev), starts))
    return [_nelder_mead(obj, s, max_fev) for s in starts]


def _polish(obj: _Objective, x0, scaled: bool) -> tuple:
    """Finite-difference Gauss-Newton polish; returns (x, covariance, residuals)."""
    lo, hi = obj.lo, obj.hi
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    res = optimize.least_squares(
        obj.residuals, x0, bounds=(lo, hi), method="trf", x_scale="jac", diff_step=1e-6, xtol=1e-10, ftol=1e-10
    )
    jac = res.jac
    jtj = jac.T @ jac
    cov = np.linalg.pinv(jtj, rcond=1e-12)
    r = res.fun
    if scaled:
        dof = max(len(r) - len(x0), 1)
        cov = cov * float(r @ r) / dof
    return res.x, cov, r


def _at_bound(layout: _Layout, x) -> dict:
    lo, hi = layout.bounds()
    tol = np.maximum(1e-6, 1e-4 * (hi - lo))
    flags = {}
    for label, v, a, b, t in zip(layout.labels, x, lo, hi, tol):
        if v - a <= t:
            flags[label] = "lower"
        elif b - v <= t:
            flags[label] = "upper"
    return flags


def _params_dicts(layout: _Layout, x) -> list:
    return [
        {"kappa": e.kappa, "varkappa": e.varkappa, "gamma_d": e.gamma_d, "gamma_raman": e.gamma_raman, "r_p": e.r_p}
        for e in layout.effective(x)
    ]


def _rows(problem: CalibrationProblem, report: FitReport) -> list:
    rows = []
    for i, (ds, p) in enumerate(zip(problem.datasets, report.params)):
        rows.append(
            {
                "name": ds.name,
                "R_p": ds.r_p,
                "Delta_MHz": ds.delta_mhz,
                "kappa": p["kappa"],
                "Gamma": p["gamma_raman"],
                "gamma_D": p["gamma_d"],
                "varkappa": p["varkappa"],
                "kappa_err": report.error("kappa", i),
                "gamma_D_err": report.error("gamma_d", i),
                "varkappa_err": report.error("varkappa", i),
            }
        )
    return rows


def fit_model_to_traces(problem: CalibrationProblem) -> FitReport:
    """Two-stage fit of a single dataset (or delegate to ``joint_fit``).

    Stage 1 holds varkappa = 0 and fits kappa and gamma_D. Stage 2 frees all
    parameters in ``problem.free``, starting from the stage-1 optimum and from
    fresh Latin-hypercube points. The best simplex result is polished by
    least squares, then gamma_D is optionally re-adjusted on the post-pulse
    bins alone.
    """
    if len(problem.datasets) > 1:
        return joint_fit(problem)
    ds = problem.datasets[0]
    target = _Target(ds, problem.post_pulse_weight)
    n_res = int(sum(np.sum(k) for k in target.keep))
    if n_res < len(problem.free):
        raise CalibrationError(f"{n_res} residuals for {len(problem.free)} parameters")

    starts = {}
    stage1 = None
    x_seed = None
    free1 = tuple(n for n in problem.free if n != "varkappa")
    if "varkappa" in problem.free and free1:
        p1 = replace(problem, fixed=dict(problem.fixed, varkappa=0.0))
        lay1 = _single_layout(p1, free1)
        obj1 = _Objective(lay1, [target])
        runs = _multistart(obj1, _lhs_starts(problem, lay1, problem.n_starts, 1), problem.max_fev, problem.threads)
        starts["stage1"] = runs
        best1 = min(runs, key=lambda s: s.loss)
        stage1 = dict(zip(lay1.labels, best1.x), loss=best1.loss)
        x_seed = best1.x

    layout = _single_layout(problem, problem.free)
    obj = _Objective(layout, [target])
    pts = list(_lhs_starts(problem, layout, problem.n_starts, 2))
    if x_seed is not None:
        seeded = dict(zip([n for n, _ in _single_layout(problem, free1).entries], x_seed))
        mid = 0.5 * sum(problem.start_ranges["varkappa"])
        pts.insert(0, np.array([seeded.get(n, mid) for n, _ in layout.entries]))
    runs = _multistart(obj, pts, problem.max_fev, problem.threads)
    starts["stage2"] = runs
    finite = [s for s in runs if np.isfinite(s.loss)]
    if not finite:
        raise CalibrationError("no start produced a finite loss")
    best = min(finite, key=lambda s: s.loss)
    x, cov, r = _polish(obj, best.x, scaled=not ds.counts)

    gd_pass = None
    if problem.gamma_d_pass and "gamma_d" in problem.free:
        x, gd_pass = _adjust_gamma_d(problem, layout, target, x)

    report = FitReport(
        labels=layout.labels,
        x=np.asarray(x),
        covariance=cov,
        params=_params_dicts(layout, x),
        loss=obj.loss(x),
        n_residuals=len(r),
        datasets=[target.diagnostics(e) for e in layout.effective(x)],
        starts=starts,
        at_bound=_at_bound(layout, x),
        converged=any(s.converged for s in runs),
        stage1=stage1,
        gamma_d_pass=gd_pass,
    )
    if not report.converged:
        log.warning("no simplex start converged within %d evaluations", problem.max_fev)
    if report.at_bound:
        log.warning("parameters pinned at bounds: %s", report.at_bound)
    report.rows = _rows(problem, report)
    return report


def _adjust_gamma_d(problem, layout: _Layout, target: _Target, x) -> tuple:
    """Re-fit gamma_D alone on the post-pulse bins, other parameters held."""
    k = [n for n, _ in layout.entries].index("gamma_d")
    lo, hi = problem.bounds["gamma_d"]
    x = np.array(x, dtype=float)

    def loss(g):
        y = x.copy()
        y[k] = g
        r = target.residuals(layout.effective(y)[0], post_only=True)
        return float(r @ r)

    before = float(x[k])
    span = max(0.2 * before, 0.05)
    a, b = max(lo, before - span), min(hi, before + span)
    res = optimize.minimize_scalar(loss, bounds=(a, b), method="bounded", options={"xatol": 1e-6})
    if res.fun <= loss(before):
        x[k] = res.x
    return x, {"before": before, "after": float(x[k]), "post_loss": float(min(res.fun, loss(before)))}


def joint_fit(problem: CalibrationProblem) -> FitReport:
    """Fit several datasets at once with shared gamma_D (and optionally kappa ~ 1/Delta^2).

    Each dataset is first fitted on its own; the joint fit is polished from
    starts built out of those results. The joint loss is compared with the sum
    of the separate losses (likelihood-ratio style) to flag datasets that do
    not share gamma_D.
    """
    if len(problem.datasets) == 1:
        return fit_model_to_traces(problem)
    singles = [fit_model_to_traces(problem.single(i)) for i in range(len(problem.datasets))]
    targets = [_Target(ds, problem.post_pulse_weight) for ds in problem.datasets]
    layout = _joint_layout(problem)
    obj = _Objective(layout, targets)

    gds = [s.value("gamma_d") for s in singles]
    ks = [s.value("kappa") for s in singles]
    ref = problem.datasets[0].delta_mhz
    starts_x = []
    for g0 in sorted(set(np.round(gds, 12))) + [float(np.median(gds))]:
        x0 = []
        for name, i in layout.entries:
            if name == "gamma_d" and i is None:
                x0.append(g0)
            elif name == "kappa" and i is None:
                x0.append(float(np.mean([k * (d.delta_mhz / ref) ** 2 for k, d in zip(ks, problem.datasets)])))
            else:
                x0.append(singles[i].value(name))
        starts_x.append(np.array(x0))
    counts = all(ds.counts for ds in problem.datasets)
    best = None
    polished = []
    for x0 in starts_x:
        x, cov, r = _polish(obj, x0, scaled=not counts)
        loss = float(r @ r)
        polished.append(StartResult(list(map(float, x0)), list(map(float, x)), loss, 0, True))
        if best is None or loss < best[0]:
            best = (loss, x, cov, r)
    loss, x, cov, r = best

    consistency = None
    separate = float(sum(s.loss for s in singles))
    n_constraints = len(problem.free) * len(problem.datasets) - len(layout.entries)
    if counts and n_constraints > 0:
        delta = loss - separate
        p = float(stats.chi2.sf(max(delta, 0.0), n_constraints))
        consistency = {
            "joint_loss": loss,
            "separate_loss": separate,
            "delta_chi2": delta,
            "n_constraints": n_constraints,
            "p_value": p,
            "inconsistent": bool(p < 0.01),
        }
        if consistency["inconsistent"]:
            log.warning("joint constraints are inconsistent with the data (p=%.3g)", p)

    stage1_kappas = []
    for s, ds in zip(singles, problem.datasets):
        if s.stage1 is not None and "kappa" in s.stage1:
            stage1_kappas.append({"name": ds.name, "Delta_MHz": ds.delta_mhz, "kappa": s.stage1["kappa"]})

    report = FitReport(
        labels=layout.labels,
        x=np.asarray(x),
        covariance=cov,
        params=_params_dicts(layout, x),
        loss=loss,
        n_residuals=len(r),
        datasets=[t.diagnostics(e) for t, e in zip(targets, layout.effective(x))],
        starts={"joint": polished},
        at_bound=_at_bound(layout, x),
        converged=all(s.converged for s in singles),
        stage1={"kappa_by_dataset": stage1_kappas} if stage1_kappas else None,
        per_dataset=[s.to_dict() for s in singles],
        consistency=consistency,
    )
    report.rows = _rows(problem, report)
    return report


def likelihood_ratio(problem: CalibrationProblem, report: FitReport, name: str, value: float = 0.0) -> float:
    """Loss increase when ``name`` is pinned to ``value`` (single dataset).

    For Poisson-normalised residuals this is a chi^2 difference with one
    degree of freedom; below 4 means consistent with ``value`` at 2 sigma.
    """
    if len(problem.datasets) != 1:
        raise ValueError("likelihood_ratio works on single-dataset problems")
    free = tuple(n for n in problem.free if n != name)
    pinned = replace(problem, free=free, fixed=dict(problem.fixed, **{name: value}))
    layout = _single_layout(pinned, free)
    obj = _Objective(layout, [_Target(problem.datasets[0], problem.post_pulse_weight)])
    x0 = [report.value(n) for n, _ in layout.entries]
    _, _, r = _polish(obj, x0, scaled=False)
    full = _Objective(_single_layout(problem, problem.free), [_Target(problem.datasets[0], problem.post_pulse_weight)])
    return float(r @ r) - full.loss(report.x)


@dataclass
class ScalingResult:
    slope: float
    intercept: float
    slope_err: float
    intercept_err: float
    r_squared: float
    n_points: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def kappa_scaling(kappas, varkappas, errors=None) -> ScalingResult:
    """Weighted straight-line fit varkappa = slope * kappa + intercept.

    ``errors`` are standard errors of varkappa (uniform weights if omitted).
    R^2 is the weighted coefficient of determination.
    """
    x = np.asarray(kappas, dtype=float)
    y = np.asarray(varkappas, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("kappas and varkappas must be 1-D arrays of equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 points")
    if np.ptp(x) == 0:
        raise ValueError("all kappa values are equal; slope is undefined")
    if errors is None:
        w = np.ones_like(x)
    else:
        e = np.asarray(errors, dtype=float)
        if np.any(e <= 0) or not np.all(np.isfinite(e)):
            raise ValueError("errors must be positive and finite")
        w = 1.0 / e**2
    design = np.column_stack([x, np.ones_like(x)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    resid = y - design @ coef
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    cov = np.linalg.inv(design.T @ (design * w[:, None]))
    if errors is None:
        cov = cov * ss_res / max(len(x) - 2, 1)
    return ScalingResult(
        slope=float(coef[0]),
        intercept=float(coef[1]),
        slope_err=float(np.sqrt(cov[0, 0])),
        intercept_err=float(np.sqrt(cov[1, 1])),
        r_squared=float(r2),
        n_points=len(x),
    )


def write_report(report: FitReport, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = report.to_dict()
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
