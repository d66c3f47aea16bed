"""Command-line entry point: ``superatom {simulate,sweep,calibrate,validate-config}``.

Exit codes: 0 success, 1 domain error (a simulation, fit or input file
failed), 2 usage error (bad flags or an invalid config). Errors are printed
to stderr as a JSON object with ``error`` and ``message`` keys.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .analysis import FitError, child_seeds, oscillation_period, sweep_pulse_lengths
from .calibration import CalibrationError, CalibrationProblem, Dataset, fit_model_to_traces, joint_fit, kappa_scaling
from .config import REQUIRED, RunConfig, WaveguideModel, load_config
from .lindblad import IntegrationError, InvariantViolation
from .params import PulseShape
from .superatom import poissonize, simulate_trace
from .traces import read_trace, uniform_edges, write_trace
from .waveguide import ThermalSpec, WaveguideConfig, apply_thermal_detunings, random_positions, simulate_waveguide_sweep

log = logging.getLogger("superatom")

THREADS_ENV = "SUPERATOM_THREADS"
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="superatom", description="Superatom decay simulations, sweeps and calibration.")
    parser.add_argument("--version", action="version", version=f"superatom {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "simulate photon traces for each pulse length",
        "sweep": "fit post-pulse decays over pulse lengths",
        "calibrate": "fit the four-level model to trace files",
        "validate-config": "check a config file and print its normalised form",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        if name == "validate-config":
            p.add_argument("--for", dest="target", choices=sorted(REQUIRED), help="also check blocks this command needs")
            continue
        p.add_argument("--out", help="output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, help="base seed (overrides config 'seed')")
        p.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
        p.add_argument("--format", choices=("csv", "json"), help="output format (overrides config 'format')")
    return parser


def _resolve(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "out", None):
        updates["output"] = args.out
    if getattr(args, "seed", None) is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        updates["seed"] = args.seed
    if getattr(args, "format", None):
        updates["format"] = args.format
    threads = getattr(args, "threads", None)
    if threads is None and cfg.threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if threads is not None:
        if threads < 1:
            raise UsageError("thread count must be >= 1")
        updates["threads"] = threads
    if updates:
        cfg = RunConfig.model_validate({**cfg.model_dump(), **updates})
    return cfg


def _metadata(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config_sha256": cfg.digest(), "seed": cfg.seed, "version": __version__}


def _edges(cfg: RunConfig) -> np.ndarray:
    g, p = cfg.grid, cfg.pulse
    if g.t_start is None:
        lead = max(p.lengths) + p.taper_time
        t_start = p.end_time - g.bin_width * np.ceil(lead / g.bin_width - 1e-9)
    else:
        t_start = g.t_start
    if g.t_stop <= t_start:
        raise UsageError("grid t_stop must be after t_start")
    return uniform_edges(t_start, g.t_stop, g.bin_width)


def _waveguide_config(block: WaveguideModel) -> WaveguideConfig:
    if block.positions == "ordered":
        positions = None
    elif block.positions == "random":
        positions = random_positions(block.n_atoms, block.position_seed)
    else:
        positions = tuple(block.positions)
    thermal = None
    if block.thermal is not None:
        t = block.thermal
        scale = t.velocity_scale if t.velocity_scale is not None else t.velocity_fraction * t.spin_wavelength
        thermal = ThermalSpec(t.spin_wavelength, scale)
    config = WaveguideConfig(
        n_atoms=block.n_atoms,
        kappa=block.kappa,
        gamma_raman=block.gamma_raman,
        positions=positions,
        k0=block.k0,
        r_p=block.r_p,
        thermal=thermal,
    )
    if thermal is not None:
        config = apply_thermal_detunings(config, seed=block.thermal.seed)
    return config


def _source(cfg: RunConfig):
    if isinstance(cfg.model, WaveguideModel):
        return _waveguide_config(cfg.model)
    return cfg.model.effective()


def _simulate_traces(cfg: RunConfig, edges: np.ndarray) -> list:
    p = cfg.pulse
    source = _source(cfg)
    if isinstance(source, WaveguideConfig):
        return simulate_waveguide_sweep(
            source, p.lengths, edges, taper_time=p.taper_time, end_time=p.end_time,
            backend=cfg.model.backend, n_traj=cfg.model.n_traj, seed=cfg.seed, threads=cfg.threads or 1,
        )
    traces = []
    for length in p.lengths:
        shape = PulseShape.tukey(length, source.r_p, taper_time=p.taper_time, end_time=p.end_time)
        traces.append(simulate_trace(source, shape, edges).trace)
    return traces


def cmd_simulate(cfg: RunConfig) -> dict:
    edges = _edges(cfg)
    traces = _simulate_traces(cfg, edges)
    if cfg.noise is not None:
        seeds = child_seeds(cfg.seed, len(traces))
        traces = [poissonize(tr, cfg.noise.n_measurements, cfg.noise.efficiency, seed=s) for tr, s in zip(traces, seeds)]
    out = Path(cfg.output)
    meta = _metadata(cfg, "simulate")
    files = []
    for length, tr in zip(cfg.pulse.lengths, traces):
        path = out / f"trace_L{length:.4f}.{cfg.format}"
        files.append(str(write_trace(tr, path, metadata=meta, fmt=cfg.format)))
    return {"files": files}


def cmd_sweep(cfg: RunConfig) -> dict:
    p = cfg.pulse
    if len(p.lengths) < 1:
        raise UsageError("sweep needs at least one pulse length")
    edges = _edges(cfg)
    source = _source(cfg)
    kwargs = {}
    if isinstance(source, WaveguideConfig):
        kwargs = {"backend": cfg.model.backend, "n_traj": cfg.model.n_traj, "seed": cfg.seed, "threads": cfg.threads or 1}
    poisson = None
    if cfg.noise is not None:
        poisson = {"n_measurements": cfg.noise.n_measurements, "efficiency": cfg.noise.efficiency, "seed": cfg.seed}
    sweep = sweep_pulse_lengths(
        source, p.lengths, edges,
        min_counts=cfg.analysis.min_counts, rel_floor=cfg.analysis.rel_floor,
        taper_time=p.taper_time, end_time=p.end_time, poisson=poisson, simulate_kwargs=kwargs,
    )
    meta = _metadata(cfg, "sweep")
    meta["periods"] = _periods(sweep)
    out = Path(cfg.output) / f"sweep.{cfg.format}"
    path = sweep.write_json(out, meta) if cfg.format == "json" else sweep.write_csv(out, meta)
    return {"files": [str(path)], "failures": len(sweep.failures)}


def _periods(sweep) -> dict:
    out = {}
    ok = np.isfinite(sweep.gamma)
    for name, series in (("gamma", sweep.gamma), ("i0", sweep.i0)):
        try:
            period, err = oscillation_period(sweep.pulse_lengths[ok], series[ok])
            out[name] = {"period_us": period, "period_err_us": err}
        except ValueError as exc:
            out[name] = {"error": str(exc)}
    return out


def cmd_calibrate(cfg: RunConfig) -> dict:
    cal = cfg.calibration
    datasets = []
    for i, block in enumerate(cal.datasets):
        traces = [read_trace(path) for path in block.traces]
        datasets.append(
            Dataset(traces, r_p=block.r_p, gamma_raman=block.gamma_raman, delta_mhz=block.delta_mhz,
                    name=block.name or f"dataset{i}")
        )
    problem = CalibrationProblem(
        datasets,
        free=tuple(cal.free),
        fixed=dict(cal.fixed),
        shared_gamma_d=cal.shared_gamma_d,
        kappa_scaling=cal.kappa_scaling,
        post_pulse_weight=cal.post_pulse_weight,
        gamma_d_pass=cal.gamma_d_pass,
        n_starts=cal.n_starts,
        seed=cfg.seed,
        threads=cfg.threads or 1,
        max_fev=cal.max_fev,
    )
    report = {"metadata": _metadata(cfg, "calibrate")}
    if cal.mode == "joint":
        fit = joint_fit(problem) if len(datasets) > 1 else fit_model_to_traces(problem)
        report["fit"] = fit.to_dict()
        rows = fit.rows
        fits = [fit] * len(datasets)
    else:
        fits = [fit_model_to_traces(problem.single(i)) for i in range(len(datasets))]
        report["fits"] = [f.to_dict() for f in fits]
        rows = [f.rows[0] for f in fits]
    report["rows"] = rows
    if cal.scaling_analysis:
        kappas = [r["kappa"] for r in rows]
        varkappas = [r["varkappa"] for r in rows]
        errs = [r["varkappa_err"] for r in rows]
        use_errs = errs if all(e > 0 and np.isfinite(e) for e in errs) else None
        report["scaling"] = kappa_scaling(kappas, varkappas, use_errs).to_dict()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "calibration.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    files = [str(path)]
    if cfg.format == "csv":
        rows_path = out / "calibration_rows.csv"
        cols = ["name", "R_p", "Delta_MHz", "kappa", "Gamma", "gamma_D", "varkappa", "kappa_err", "gamma_D_err", "varkappa_err"]
        with open(rows_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in rows:
                fh.write(",".join("" if r[c] is None else (r[c] if isinstance(r[c], str) else f"{r[c]:.12g}") for c in cols) + "\n")
        files.append(str(rows_path))
    return {"files": files}


def cmd_validate(cfg: RunConfig, target=None) -> dict:
    if target:
        cfg.require(*REQUIRED[target])
    return {"valid": True, "config": cfg.model_dump(mode="json"), "config_sha256": cfg.digest()}


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "calibrate": cmd_calibrate}

DOMAIN_ERRORS = (FitError, CalibrationError, IntegrationError, InvariantViolation, FileNotFoundError, ValueError, np.linalg.LinAlgError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(load_config(args.config), args)
        if args.command == "validate-config":
            result = cmd_validate(cfg, args.target)
        else:
            cfg.require(*REQUIRED[args.command])
    except ValidationError as exc:
        _emit_error("config", str(exc))
        return EXIT_USAGE
    except (UsageError, ValueError, FileNotFoundError) as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    if args.command != "validate-config":
        try:
            result = COMMANDS[args.command](cfg)
        except UsageError as exc:
            _emit_error("usage", str(exc))
            return EXIT_USAGE
        except DOMAIN_ERRORS as exc:
            _emit_error(type(exc).__name__, str(exc))
            return EXIT_DOMAIN
    sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
