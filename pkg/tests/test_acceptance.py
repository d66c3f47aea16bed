"""Acceptance criteria, one test each. Every test also reports a PASS/FAIL line
that is printed in the terminal summary."""

import math
import time
from functools import lru_cache

import numpy as np

from superatom.analysis import (
    REL_FLOOR,
    DegenerateSeries,
    child_seeds,
    find_revival,
    oscillation_period,
    phase_correlation,
    FitError,
    SweepResult,
    analyze_trace,
)
from superatom.calibration import CalibrationProblem, Dataset, fit_model_to_traces, joint_fit, kappa_scaling
from superatom.lindblad import HERMITICITY_TOL, POSITIVITY_TOL, TRACE_TOL, density_diagnostics
from superatom.params import REFERENCE_SETS, PulseShape, collective_rabi
from superatom.superatom import emitted_photons, pi_pulse_duration, poissonize, simulate_sweep, simulate_trace
from superatom.traces import uniform_edges
from superatom.waveguide import (
    WaveguideConfig,
    build_exchange_position,
    propagate_density,
    propagate_trajectories,
    simulate_waveguide_sweep,
    waveguide_emission,
)

from conftest import ACCEPTANCE_LINES

SWEEP_LENGTHS = np.round(np.linspace(0.2, 6.0, 26) / 0.02) * 0.02
SWEEP_EDGES = uniform_edges(-6.2, 8.0, 0.02)
WG_LENGTHS = [0.5, 1.0, 2.0, 3.0]
WG_EDGES = uniform_edges(-3.2, 6.0, 0.02)

# worst invariant values seen by any run in this module
INVARIANTS = {"trace": 0.0, "hermiticity": 0.0, "min_eigenvalue": float("inf"), "photons": 0.0, "runs": 0}


def report(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def note_states(states):
    for rho in states:
        d = density_diagnostics(rho)
        INVARIANTS["trace"] = max(INVARIANTS["trace"], d["trace_error"])
        INVARIANTS["hermiticity"] = max(INVARIANTS["hermiticity"], d["hermiticity"])
        INVARIANTS["min_eigenvalue"] = min(INVARIANTS["min_eigenvalue"], d["min_eigenvalue"])
    INVARIANTS["runs"] += 1


def note_trace(trace):
    INVARIANTS["photons"] = max(INVARIANTS["photons"], emitted_photons(trace))
    inv = trace.metadata.get("invariants")
    if inv:
        INVARIANTS["trace"] = max(INVARIANTS["trace"], inv["max_trace_error"])
        INVARIANTS["hermiticity"] = max(INVARIANTS["hermiticity"], inv["max_hermiticity"])
        if inv["min_eigenvalue"] is not None:
            INVARIANTS["min_eigenvalue"] = min(INVARIANTS["min_eigenvalue"], inv["min_eigenvalue"])
        INVARIANTS["runs"] += 1


@lru_cache(maxsize=None)
def row_sweep(name, varkappa=None):
    """26-length sweep of a reference row, with invariant bookkeeping."""
    eff = REFERENCE_SETS[name].effective()
    if varkappa is not None:
        eff = eff.with_(varkappa=varkappa)
    start = time.perf_counter()
    fits, failures = [], {}
    for length, res in zip(SWEEP_LENGTHS, simulate_sweep(eff, SWEEP_LENGTHS, SWEEP_EDGES)):
        note_states(res.states)
        note_trace(res.trace)
        try:
            fits.append(analyze_trace(res.trace))
        except FitError as exc:
            failures[float(length)] = str(exc)
            fits.append(None)
    sweep = SweepResult(SWEEP_LENGTHS, fits, failures)
    return sweep, time.perf_counter() - start


def periods(sweep):
    ok = np.isfinite(sweep.gamma)
    x = sweep.pulse_lengths[ok]
    out = {}
    for key, series in (("gamma", sweep.gamma[ok]), ("i0", sweep.i0[ok])):
        try:
            out[key] = oscillation_period(x, series)[0]
        except DegenerateSeries:
            out[key] = float("nan")
    return out


def test_criterion_01_incoherent_limit():
    sweep, elapsed = row_sweep("d100_r15", varkappa=0.0)
    rel = np.abs(sweep.gamma / 1.46 - 1.0)
    passed = not sweep.failures and bool(np.all(rel <= 5e-3)) and elapsed < 60
    report(1, passed, f"max |gamma/1.46 - 1| = {np.max(rel):.2e} over {len(rel)} lengths, {elapsed:.1f} s")
    assert not sweep.failures
    assert np.all(rel <= 5e-3)
    assert elapsed < 60


def test_criterion_02_rate_oscillation():
    sweep, elapsed = row_sweep("d100_r15")
    target = 2 * math.pi / collective_rabi(REFERENCE_SETS["d100_r15"].effective())
    p = periods(sweep)
    corr = phase_correlation(sweep)
    period_ok = abs(p["gamma"] / target - 1.0) <= 0.10
    corr_ok = corr < -0.5
    report(
        2,
        period_ok and corr_ok and elapsed < 300,
        f"gamma period {p['gamma']:.3f} us vs {target:.3f} us (+-10%), I0 period {p['i0']:.3f} us, "
        f"detrended corr {corr:+.2f} (< -0.5), {elapsed:.1f} s",
    )
    assert period_ok, f"gamma period {p['gamma']:.3f} not within 10% of {target:.3f}"
    assert corr_ok, f"detrended correlation {corr:+.2f} is not below -0.5"
    assert elapsed < 300


def test_criterion_03_range_contraction():
    start = time.perf_counter()
    maxima = []
    for name in ("d100_r15", "d125_r15", "d150_r15"):
        sweep, _ = row_sweep(name)
        maxima.append(float(np.nanmax(sweep.gamma)))
    elapsed = time.perf_counter() - start
    decreasing = maxima[0] > maxima[1] > maxima[2]
    report(3, decreasing and elapsed < 900,
           "max gamma at 100/125/150 MHz: " + ", ".join(f"{m:.3f}" for m in maxima))
    assert decreasing
    assert elapsed < 900


def test_criterion_04_rp_scaling():
    s1, _ = row_sweep("d100_r15")
    s4, _ = row_sweep("d100_r6.7")
    p1, p4 = periods(s1), periods(s4)
    ratio_gamma = p4["gamma"] / p1["gamma"]
    ratio_i0 = p4["i0"] / p1["i0"]
    expected = math.sqrt(15.0 / 6.7)
    ratio_ok = abs(ratio_gamma - expected) <= 0.15 and abs(ratio_i0 - expected) <= 0.15
    range1 = float(np.nanmax(s1.gamma) - np.nanmin(s1.gamma))
    range4 = float(np.nanmax(s4.gamma) - np.nanmin(s4.gamma))
    range_ok = abs(range4 / range1 - 1.0) <= 0.10
    report(
        4,
        ratio_ok and range_ok,
        f"period ratio {ratio_gamma:.2f} (gamma), {ratio_i0:.2f} (I0) vs {expected:.2f}+-0.15; "
        f"gamma ranges {range1:.3f} vs {range4:.3f} (within 10%)",
    )
    assert ratio_ok
    assert range_ok, f"gamma ranges {range1:.3f} and {range4:.3f} differ by more than 10%"


def test_criterion_05_drop_and_revival():
    start = time.perf_counter()
    eff = REFERENCE_SETS["d100_r15"].effective()
    length = pi_pulse_duration(eff)
    shape = PulseShape.tukey(length, eff.r_p)
    res = simulate_trace(eff, shape, uniform_edges(-1.2, 10.0, 0.02), check=True)
    note_states(res.states)
    note_trace(res.trace)
    rev = find_revival(res.trace)
    elapsed = time.perf_counter() - start
    floor = REL_FLOOR * float(np.max(res.trace.rate_values()))
    passed = rev is not None and rev.depth < 1e-2 and rev.rate_min < floor and elapsed < 60
    detail = "monotonic decay" if rev is None else (
        f"minimum {rev.depth:.1e} x initial at t={rev.t_min:.2f} us, revival peak at {rev.t_peak:.2f} us, "
        f"floor {floor:.1e}"
    )
    report(5, passed, detail)
    assert rev is not None
    assert rev.depth < 1e-2
    assert rev.rate_min < floor
    assert elapsed < 60


def test_criterion_06_eigenmode_oracle():
    start = time.perf_counter()
    worst_e = worst_c = 0.0
    kappa = 0.45
    for n in (4, 10, 50, 200):
        h = build_exchange_position(WaveguideConfig(n, kappa))
        w = np.full(n, 1 / math.sqrt(n))
        # orthonormal basis of the complement of |W>
        q, _ = np.linalg.qr(np.column_stack([w, np.eye(n)[:, : n - 1]]))
        q = q[:, 1:]
        vals, vecs = np.linalg.eigh(q.conj().T @ h @ q)
        couplings = np.abs(w @ h @ (q @ vecs))
        j = np.arange(1, n)
        eps = -kappa / (2 * n) / np.tan(np.pi * j / n)
        order = np.argsort(eps)
        expected = eps[order]
        expected_c = kappa / (2 * n * np.sin(np.pi * j[order] / n))
        worst_e = max(worst_e, float(np.max(np.abs(vals - expected))))
        worst_c = max(worst_c, float(np.max(np.abs(couplings - expected_c))))
    elapsed = time.perf_counter() - start
    passed = worst_e <= 1e-10 and worst_c <= 1e-10 and elapsed < 60
    report(6, passed, f"max eigenvalue error {worst_e:.1e}, max coupling error {worst_c:.1e}")
    assert worst_e <= 1e-10 and worst_c <= 1e-10
    assert elapsed < 60


def test_criterion_07_backend_equivalence():
    start = time.perf_counter()
    shape = PulseShape.tukey(1.0, 15.0)
    grid = np.round(np.arange(-1.2, 3.0001, 0.02), 10)
    worst_z, violations, points = 0.0, 0, 0
    for n, seed in ((3, 31), (10, 32)):
        cfg = WaveguideConfig(n, 0.45, 0.1, r_p=15.0)
        dens = propagate_density(cfg, shape, grid, check="full")
        note_states(dens.states)
        pops = np.real(np.einsum("tii->ti", dens.states))
        em = waveguide_emission(dens.states, cfg, shape.rate(grid))
        traj = propagate_trajectories(cfg, shape, grid, n_traj=10_000, seed=seed)
        for exact, mean, err in ((em, traj.emission, traj.emission_err), (pops, traj.populations, traj.populations_err)):
            diff = np.abs(exact - mean)
            violations += int(np.sum(diff > 4 * err))
            points += diff.size
            z = diff[err > 0] / err[err > 0]
            worst_z = max(worst_z, float(np.max(z)))
    elapsed = time.perf_counter() - start
    report(7, violations == 0 and elapsed < 300,
           f"{violations} of {points} points outside 4 SE (max |z| {worst_z:.2f}), {elapsed:.1f} s")
    assert violations == 0
    assert elapsed < 300


def test_criterion_08_waveguide_reproduction():
    start = time.perf_counter()
    cfg = WaveguideConfig(1000, 0.45, 0.1, r_p=15.0)
    traces = simulate_waveguide_sweep(cfg, WG_LENGTHS, WG_EDGES, backend="trajectory", n_traj=1000, seed=7)
    for tr in traces:
        note_trace(tr)
    sweep_fits = [analyze_trace(tr) for tr in traces]
    gammas = np.array([f.gamma for f in sweep_fits])
    errs = np.array([f.gamma_err for f in sweep_fits])
    problem = CalibrationProblem(
        [Dataset(traces, r_p=15.0, gamma_raman=0.1, name="waveguide")],
        free=("kappa", "varkappa"), fixed={"gamma_d": 0.0},
    )
    fit = fit_model_to_traces(problem)
    diag = fit.datasets[0]
    elapsed = time.perf_counter() - start
    slopes_vary = np.ptp(gammas) > 4 * np.max(errs)
    resid_ok = diag["relative_residual"] < 0.05 and diag["relative_residual_post"] < 0.05
    report(
        8,
        slopes_vary and resid_ok and elapsed < 1800,
        f"post-pulse slopes {', '.join(f'{g:.3f}' for g in gammas)} (spread {np.ptp(gammas):.3f}, "
        f"fit err <= {np.max(errs):.3f}); relative residual {diag['relative_residual']:.2%} overall, "
        f"{diag['relative_residual_post']:.2%} post-pulse; {elapsed:.0f} s",
    )
    assert slopes_vary
    assert resid_ok
    assert elapsed < 1800


def test_criterion_09_varkappa_kappa_scaling():
    start = time.perf_counter()
    kappas = [0.25, 0.45, 0.7, 1.0]
    varkappas, errors = [], []
    for kappa in kappas:
        cfg = WaveguideConfig(100, kappa, 0.1, r_p=15.0)
        traces = simulate_waveguide_sweep(
            cfg, WG_LENGTHS, uniform_edges(-5.2, 6.0, 0.02), backend="density", check="full"
        )
        for tr in traces:
            note_trace(tr)
        problem = CalibrationProblem(
            [Dataset(traces, r_p=15.0, gamma_raman=0.1, name=f"kappa={kappa}")],
            free=("kappa", "varkappa"), fixed={"gamma_d": 0.0},
        )
        fit = fit_model_to_traces(problem)
        varkappas.append(fit.value("varkappa"))
        errors.append(fit.error("varkappa"))
    scaling = kappa_scaling(kappas, varkappas)
    elapsed = time.perf_counter() - start
    passed = scaling.slope > 0 and scaling.r_squared > 0.95 and elapsed < 1800
    report(9, passed, f"varkappa = {', '.join(f'{v:.4f}' for v in varkappas)}; slope {scaling.slope:.3f}, "
                      f"R^2 {scaling.r_squared:.4f}; {elapsed:.0f} s")
    assert scaling.slope > 0
    assert scaling.r_squared > 0.95
    assert elapsed < 1800


def test_criterion_10_calibration_round_trip():
    start = time.perf_counter()
    lengths = [0.5, 1.0, 1.5, 2.0, 3.0]
    datasets = []
    rows = ("d100_r15", "d125_r15", "d150_r15")
    for name, seed in zip(rows, child_seeds(11, len(rows))):
        ref = REFERENCE_SETS[name]
        traces = [r.trace for r in simulate_sweep(ref.effective(), lengths, WG_EDGES)]
        traces = [poissonize(t, 1_000_000, 0.35, seed=s) for t, s in zip(traces, child_seeds(seed, len(traces)))]
        datasets.append(Dataset(traces, r_p=ref.r_p, gamma_raman=ref.gamma_raman, delta_mhz=ref.delta_mhz, name=name))
    fit = joint_fit(CalibrationProblem(datasets, seed=0))
    elapsed = time.perf_counter() - start
    gd = fit.value("gamma_d")
    gd_ok = abs(gd / 0.85 - 1) <= 0.10
    k_rel = [abs(fit.value("kappa", i) / REFERENCE_SETS[n].kappa - 1) for i, n in enumerate(rows)]
    v_rel = [abs(fit.value("varkappa", i) / REFERENCE_SETS[n].varkappa - 1) for i, n in enumerate(rows)]
    passed = gd_ok and max(k_rel) <= 0.05 and max(v_rel) <= 0.15 and elapsed < 1200
    report(10, passed, f"gamma_D {gd:.3f} ({abs(gd / 0.85 - 1):.1%}), max kappa error {max(k_rel):.1%}, "
                       f"max varkappa error {max(v_rel):.1%}; {elapsed:.0f} s")
    assert gd_ok
    assert max(k_rel) <= 0.05
    assert max(v_rel) <= 0.15
    assert elapsed < 1200


def test_criterion_11_invariants():
    # make sure the sweeps of criteria 1-4 contributed even if run alone
    for name in ("d100_r15", "d125_r15", "d150_r15", "d100_r6.7"):
        row_sweep(name)
    row_sweep("d100_r15", varkappa=0.0)
    inv = INVARIANTS
    passed = (
        inv["trace"] <= TRACE_TOL
        and inv["hermiticity"] <= HERMITICITY_TOL
        and inv["min_eigenvalue"] >= -POSITIVITY_TOL
        and inv["photons"] <= 1.0
    )
    report(11, passed, f"{inv['runs']} runs: trace error {inv['trace']:.1e}, hermiticity {inv['hermiticity']:.1e}, "
                       f"min eigenvalue {inv['min_eigenvalue']:.1e}, max post-pulse photons {inv['photons']:.3f}")
    assert inv["trace"] <= TRACE_TOL
    assert inv["hermiticity"] <= HERMITICITY_TOL
    assert inv["min_eigenvalue"] >= -POSITIVITY_TOL
    assert inv["photons"] <= 1.0
