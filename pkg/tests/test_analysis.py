import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superatom.analysis import (
    DegenerateSeries,
    FitError,
    SweepResult,
    analyze_trace,
    apply_threshold,
    child_seeds,
    detrend,
    find_revival,
    fit_exponential,
    fit_window,
    oscillation_period,
    phase_correlation,
    post_pulse_start,
    sweep_pulse_lengths,
)
from superatom.params import PulseShape
from superatom.superatom import pi_pulse_duration, poissonize, simulate_trace
from superatom.traces import PhotonTrace, uniform_edges

EDGES = uniform_edges(-1.2, 6.0, 0.02)


def _exp_trace(i0=0.3, gamma=1.2, duration=1.0, edges=EDGES):
    shape = PulseShape.tukey(duration, 15.0)
    c = 0.5 * (edges[1:] + edges[:-1])
    rates = np.where(c > 0, i0 * np.exp(-gamma * c), 0.0)
    return PhotonTrace(edges, rates=rates, metadata={"pulse": shape.to_dict()})


def test_exact_exponential_fit():
    fit = analyze_trace(_exp_trace())
    assert fit.gamma == pytest.approx(1.2, rel=1e-10)
    assert fit.i0 == pytest.approx(0.3, rel=1e-10)
    assert fit.fit_window[0] == pytest.approx(0.0)
    # threshold at 1e-3 of the maximum: 0.3 exp(-1.2 t) = 3e-4
    assert fit.fit_window[1] == pytest.approx(np.log(1000) / 1.2, abs=0.03)
    assert fit.threshold_applied


def test_post_pulse_start_and_window():
    tr = _exp_trace(duration=1.0)
    assert post_pulse_start(tr) == pytest.approx(0.0, abs=1e-12)
    assert fit_window(tr, start=0.5)[0] == 0.5
    with pytest.raises(FitError):
        post_pulse_start(PhotonTrace(EDGES, rates=np.ones(len(EDGES) - 1)))


def test_threshold_counts_and_rates():
    tr = _exp_trace()
    masked = apply_threshold(tr, rel_floor=0.5)
    assert np.all(masked.mask == (tr.rates < 0.15))
    counted = poissonize(tr, 100_000, 0.35, seed=1)
    masked = apply_threshold(counted, min_counts=50)
    assert np.all(masked.mask == (counted.counts < 50))
    assert masked.metadata["threshold"] == {"min_counts": 50}
    with pytest.raises(FitError):
        apply_threshold(PhotonTrace(EDGES, rates=np.zeros(len(EDGES) - 1)))


def test_too_few_bins():
    tr = _exp_trace(gamma=200.0)
    with pytest.raises(FitError):
        analyze_trace(tr)


def test_weights_option():
    tr = _exp_trace()
    with pytest.raises(FitError):
        fit_exponential(apply_threshold(tr), weights="poisson")
    with pytest.raises(ValueError):
        fit_exponential(apply_threshold(tr), weights="nope")


def test_poisson_fit_round_trip_coverage():
    true_gamma, true_i0 = 1.46, 0.25
    z_gamma, z_i0 = [], []
    for seed in range(60):
        tr = poissonize(_exp_trace(true_i0, true_gamma), 200_000, 0.35, seed=seed)
        fit = analyze_trace(tr, min_counts=50)
        z_gamma.append((fit.gamma - true_gamma) / fit.gamma_err)
        z_i0.append((fit.i0 - true_i0) / fit.i0_err)
    for z in (np.array(z_gamma), np.array(z_i0)):
        assert abs(np.mean(z)) < 0.5
        assert 0.7 < np.std(z) < 1.3


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.01, 10.0))
def test_fit_recovers_any_exponential(gamma, i0):
    fit = analyze_trace(_exp_trace(i0, gamma, edges=uniform_edges(-1.2, 20.0, 0.02)))
    assert fit.gamma == pytest.approx(gamma, rel=1e-8)
    assert fit.i0 == pytest.approx(i0, rel=1e-8)


def _damped(x, period, phase=0.0):
    return 1.0 + 0.4 * np.exp(-0.3 * x) + 0.2 * np.exp(-0.2 * x) * np.cos(2 * np.pi * x / period + phase)


@pytest.mark.parametrize("period", [0.9, 1.2, 1.8])
def test_oscillation_period_synthetic(period):
    x = np.linspace(0.2, 6.0, 26)
    p, err = oscillation_period(x, _damped(x, period, 0.7))
    assert p == pytest.approx(period, rel=1e-4)
    assert err >= 0


def test_oscillation_period_degenerate():
    x = np.linspace(0, 1, 5)
    with pytest.raises(DegenerateSeries):
        oscillation_period(x, np.sin(x))


def test_phase_correlation_antiphase():
    x = np.linspace(0.2, 6.0, 26)
    a = _damped(x, 1.2)
    g = 2.0 - 0.5 * (a - 1.0)
    sweep = SweepResult(x, fits=[None] * len(x))
    sweep.fits = [type("F", (), {"gamma": gi, "i0": ai})() for gi, ai in zip(g, a)]
    assert phase_correlation(sweep) < -0.95
    sweep.fits = [type("F", (), {"gamma": 1.0, "i0": ai})() for ai in a]
    with pytest.raises(DegenerateSeries):
        phase_correlation(sweep)


def test_detrend_removes_constant():
    x = np.linspace(0, 5, 50)
    assert np.allclose(detrend(x, np.full(50, 3.0), 1.0), 0)


def test_sweep_records_failures(row1):
    lengths = np.round(np.linspace(0.2, 3.0, 8), 2)
    sweep = sweep_pulse_lengths(row1.with_(varkappa=0.0), lengths, EDGES)
    assert not sweep.failures
    assert np.allclose(sweep.gamma, 1.46, rtol=1e-6)
    tight = sweep_pulse_lengths(row1, [0.2, 0.4], uniform_edges(-0.6, 0.04, 0.02))
    assert len(tight.failures) == 2 and np.all(np.isnan(tight.gamma))


def test_sweep_outputs(tmp_path, row1):
    sweep = sweep_pulse_lengths(row1, [0.5, 1.0], EDGES, poisson={"n_measurements": 10**6, "seed": 2})
    path = sweep.write_csv(tmp_path / "s.csv", {"seed": 2})
    assert path.read_text().splitlines()[0] == "pulse_length_us,gamma,gamma_err,i0,i0_err"
    assert (tmp_path / "s.meta.json").exists()
    sweep.write_json(tmp_path / "s.json")
    again = sweep_pulse_lengths(row1, [0.5, 1.0], EDGES, poisson={"n_measurements": 10**6, "seed": 2})
    assert np.array_equal(sweep.gamma, again.gamma)
    with pytest.raises(ValueError):
        sweep_pulse_lengths(row1, [], EDGES)
    with pytest.raises(ValueError):
        SweepResult([1.0, 0.5], fits=[None, None])


def test_child_seeds():
    assert child_seeds(None, 3) == [None] * 3
    a, b = child_seeds(7, 4), child_seeds(7, 4)
    assert a == b and len(set(a)) == 4
    assert child_seeds(7, 5)[:4] == a


def test_find_revival(row1):
    shape = PulseShape.tukey(pi_pulse_duration(row1), row1.r_p)
    tr = simulate_trace(row1, shape, uniform_edges(-1.2, 10.0, 0.02)).trace
    rev = find_revival(tr)
    assert rev is not None and rev.t_min < rev.t_peak
    assert rev.rate_peak > rev.rate_min
    assert find_revival(_exp_trace()) is None
