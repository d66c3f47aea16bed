"""Time-dependent Lindblad master equations on dense Hilbert spaces.

The propagator is an adaptive Dormand-Prince 5(4) pair operating directly on
the density matrix. Any object exposing ``dim`` and ``rhs(t, rho)`` can be
propagated, which lets specialised models supply a cheaper right-hand side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8


class IntegrationError(RuntimeError):
    """The adaptive stepper could not advance (step-size underflow or step budget)."""


class InvariantViolation(RuntimeError):
    """A propagated state left the physical state space beyond tolerance."""


def dissipator(op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[L]rho = L rho L^+ - {L^+ L, rho}/2."""
    op_dag = op.conj().T
    n = op_dag @ op
    return op @ rho @ op_dag - 0.5 * (n @ rho + rho @ n)


@dataclass(frozen=True)
class LindbladSystem:
    """Hamiltonian H(t) (rad/µs) plus jump operators with rates (1/µs)."""

    dim: int
    hamiltonian: Callable[[float], np.ndarray]
    jumps: Sequence[tuple] = ()
    _ops: tuple = field(init=False, repr=False, compare=False)
    _loss: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ops = []
        loss = np.zeros((self.dim, self.dim), dtype=complex)
        for rate, op in self.jumps:
            op = np.asarray(op, dtype=complex)
            if op.shape != (self.dim, self.dim):
                raise ValueError(f"jump operator shape {op.shape} != ({self.dim}, {self.dim})")
            if rate < 0 or not np.isfinite(rate):
                raise ValueError(f"jump rate must be finite and >= 0, got {rate}")
            if rate == 0:
                continue
            ops.append((float(rate), op, op.conj().T))
            loss += rate * (op.conj().T @ op)
        object.__setattr__(self, "_ops", tuple(ops))
        object.__setattr__(self, "_loss", loss)

    @property
    def rates(self) -> list:
        return [float(r) for r, _ in self.jumps]

    def rhs(self, t: float, rho: np.ndarray) -> np.ndarray:
        h_eff = np.asarray(self.hamiltonian(t), dtype=complex) - 0.5j * self._loss
        out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
        for rate, op, op_dag in self._ops:
            out += rate * (op @ rho @ op_dag)
        return out

    def check_hermitian(self, times, tol: float = 1e-12) -> None:
        for t in np.atleast_1d(times):
            h = np.asarray(self.hamiltonian(float(t)))
            dev = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
            if dev > tol:
                raise ValueError(f"H({t}) is not Hermitian (deviation {dev:.2e})")


def rhs(system, rho: np.ndarray, t: float) -> np.ndarray:
    """Lindblad generator applied to ``rho`` at time ``t``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (system.dim, system.dim):
        raise ValueError(f"state shape {rho.shape} does not match system dimension {system.dim}")
    return system.rhs(t, rho)


def pure_state(dim: int, index: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[index, index] = 1.0
    return rho


def density_diagnostics(rho: np.ndarray, positivity: bool = True) -> dict:
    """Deviations from Hermiticity, unit trace and positivity."""
    rho = np.asarray(rho)
    diag = {
        "hermiticity": float(np.max(np.abs(rho - rho.conj().T))),
        "trace_error": float(abs(np.trace(rho) - 1.0)),
    }
    if positivity:
        herm = 0.5 * (rho + rho.conj().T)
        diag["min_eigenvalue"] = float(np.linalg.eigvalsh(herm)[0])
    return diag


def check_density(rho: np.ndarray, positivity: bool = True, where: str = "") -> dict:
    diag = density_diagnostics(rho, positivity=positivity)
    problems = []
    if diag["hermiticity"] > HERMITICITY_TOL:
        problems.append(f"hermiticity deviation {diag['hermiticity']:.3e}")
    if diag["trace_error"] > TRACE_TOL:
        problems.append(f"trace error {diag['trace_error']:.3e}")
    if positivity and diag["min_eigenvalue"] < -POSITIVITY_TOL:
        problems.append(f"negative eigenvalue {diag['min_eigenvalue']:.3e}")
    if problems:
        raise InvariantViolation(f"invalid density matrix{where}: " + "; ".join(problems))
    return diag


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass
class Propagation:
    """States on the requested grid plus integrator statistics.

    ``error_estimate`` is the sum of the accepted local error estimates
    (max-abs entry), a conservative bound on the global error.
    """

    times: np.ndarray
    states: np.ndarray
    error_estimate: float
    n_steps: int
    n_rejected: int
    max_trace_error: float = 0.0
    max_hermiticity: float = 0.0
    min_eigenvalue: float = float("nan")
    observed: Optional[list] = None

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i):
        return self.states[i]


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((np.abs(err) / scale) ** 2)))


def propagate(
    system,
    rho0: np.ndarray,
    grid,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    h0: Optional[float] = None,
    max_step: float = np.inf,
    max_steps: int = 1_000_000,
    check: str = "auto",
    observe: Optional[Callable] = None,
) -> Propagation:
    """Integrate the master equation and return states at the grid points.

    ``check`` selects the invariant checks run at every grid point: ``"full"``
    (trace, Hermiticity, positivity), ``"cheap"`` (no eigenvalues), ``"none"``,
    or ``"auto"`` (full for dim <= 64). If ``observe(t, rho)`` is given its
    results are collected in ``observed`` and states are not stored.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("grid must be a non-empty 1-D array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (system.dim, system.dim):
        raise ValueError(f"initial state shape {rho.shape} != ({system.dim}, {system.dim})")
    if check == "auto":
        check = "full" if system.dim <= 64 else "cheap"

    stats = {"trace": 0.0, "herm": 0.0, "eig": np.inf}

    def record(state, t):
        if check == "none":
            return
        diag = check_density(state, positivity=(check == "full"), where=f" at t={t:.6g}")
        stats["trace"] = max(stats["trace"], diag["trace_error"])
        stats["herm"] = max(stats["herm"], diag["hermiticity"])
        if "min_eigenvalue" in diag:
            stats["eig"] = min(stats["eig"], diag["min_eigenvalue"])

    if observe is None:
        states = np.empty((len(grid), system.dim, system.dim), dtype=complex)
        states[0] = rho
        observed = None
    else:
        states = None
        observed = [observe(grid[0], rho)]
    record(rho, grid[0])

    t = grid[0]
    span = grid[-1] - grid[0]
    h = h0 if h0 is not None else (min(1e-3 * span, max_step) if span > 0 else 1.0)
    k = np.empty((7,) + rho.shape, dtype=complex)
    k[0] = system.rhs(t, rho)
    n_steps = n_rejected = 0
    err_sum = 0.0

    for i in range(1, len(grid)):
        target = grid[i]
        while t < target:
            if n_steps + n_rejected >= max_steps:
                raise IntegrationError(f"step budget of {max_steps} exhausted at t={t:.6g}")
            hit = False
            h_try = min(h, max_step)
            if t + h_try >= target:
                h_try = target - t
                hit = True
            if not hit and h_try < 1e-14 * max(1.0, abs(t)):
                raise IntegrationError(f"step size underflow (h={h_try:.3e}) at t={t:.6g}")
            for s in range(1, 7):
                y = rho + h_try * np.tensordot(_A[s], k[:s], axes=1)
                k[s] = system.rhs(t + _C[s] * h_try, y)
            rho_new = y  # stage 7 is evaluated at the 5th-order solution (FSAL)
            err = h_try * np.tensordot(_E, k, axes=1)
            norm = _error_norm(err, rho, rho_new, rtol, atol)
            if norm <= 1.0:
                t = target if hit else t + h_try
                rho = rho_new
                k[0] = k[6]
                n_steps += 1
                err_sum += float(np.max(np.abs(err)))
                factor = 5.0 if norm == 0 else min(5.0, max(0.2, 0.9 * norm ** -0.2))
                if not hit or factor < 1.0:
                    h = h_try * factor
            else:
                n_rejected += 1
                h = h_try * max(0.2, 0.9 * norm ** -0.2)
        if observed is None:
            states[i] = rho
        else:
            observed.append(observe(target, rho))
        record(rho, target)

    return Propagation(
        times=grid,
        states=states,
        error_estimate=err_sum,
        n_steps=n_steps,
        n_rejected=n_rejected,
        max_trace_error=stats["trace"],
        max_hermiticity=stats["herm"],
        min_eigenvalue=float(stats["eig"]) if np.isfinite(stats["eig"]) else float("nan"),
        observed=observed,
    )


def steady_state_reached(states, window, tol: float, times=None) -> bool:
    """True when no entry of rho changes by more than ``tol`` over the trailing window.

    ``window`` counts states, or is a duration in µs when ``times`` is given.
    """
    states = np.asarray(states)
    if times is not None:
        times = np.asarray(times, dtype=float)
        if window > times[-1] - times[0]:
            raise ValueError("window is longer than the trajectory")
        tail = states[times >= times[-1] - window]
    else:
        window = int(window)
        if window > len(states):
            raise ValueError("window is longer than the trajectory")
        tail = states[-window:]
    if len(tail) < 2:
        return True
    change = np.max(np.abs(tail - tail[-1]))
    return bool(change < tol)


def liouvillian(hamiltonian: np.ndarray, jumps=()) -> np.ndarray:
    """Superoperator matrix acting on row-major ``rho.reshape(-1)``."""
    h = np.asarray(hamiltonian, dtype=complex)
    d = h.shape[0]
    eye = np.eye(d)
    loss = np.zeros((d, d), dtype=complex)
    sup = np.zeros((d * d, d * d), dtype=complex)
    for rate, op in jumps:
        op = np.asarray(op, dtype=complex)
        loss += rate * (op.conj().T @ op)
        sup += rate * np.kron(op, op.conj())
    h_eff = h - 0.5j * loss
    sup += -1j * (np.kron(h_eff, eye) - np.kron(eye, h_eff.conj()))
    return sup
