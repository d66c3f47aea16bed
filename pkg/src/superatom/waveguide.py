"""N emitters coupled to a one-dimensional chiral waveguide, single-excitation sector.

Basis of the (N+1)-dimensional sector: index 0 is the collective ground state
|G>, index j+1 is the state with atom j excited. The probe couples |G> to the
bright state |W> = sum_j |j> / sqrt(N) with matrix element sqrt(kappa) *
alpha(t), alpha = sqrt(R_p). Atoms exchange virtual photons through

    H_exc[l, j] = i kappa / (2N) * sign(k0 (x_l - x_j)),

only |W> decays into the waveguide (rate kappa) and every atom Raman-decays to
|G> at Gamma. The dynamics depends on positions only through their ordering,
so all work is done in the frame where atoms are sorted along k0 * x.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .lindblad import LindbladSystem, Propagation, propagate
from .params import PulseShape
from .traces import PhotonTrace

log = logging.getLogger(__name__)

MAX_DENSITY_ATOMS = 2000
DENSITY_BACKEND_MAX = 200
TRAJ_STEP = 1e-2
TRAJ_CHUNK = 2048


@dataclass(frozen=True)
class ThermalSpec:
    """Atomic motion along the spin wave.

    ``velocity_scale`` is the most probable speed in µm/µs. Velocities are
    drawn from a 1D Gaussian with standard deviation velocity_scale/sqrt(2).
    """

    spin_wavelength: float
    velocity_scale: float

    def __post_init__(self):
        if not self.spin_wavelength > 0:
            raise ValueError("spin_wavelength must be > 0")
        if self.velocity_scale < 0:
            raise ValueError("velocity_scale must be >= 0")

    @classmethod
    def from_fraction(cls, spin_wavelength: float, fraction: float = 0.035) -> "ThermalSpec":
        """Velocity scale given in spin wavelengths per µs."""
        return cls(spin_wavelength, fraction * spin_wavelength)

    @property
    def detuning_std(self) -> float:
        """r.m.s. per-atom detuning 2 k v_rms in rad/µs."""
        return 2.0 * (2.0 * math.pi / self.spin_wavelength) * self.velocity_scale / math.sqrt(2.0)


@dataclass(frozen=True)
class WaveguideConfig:
    n_atoms: int
    kappa: float
    gamma_raman: float = 0.0
    positions: Optional[tuple] = None
    k0: float = 1.0
    r_p: float = 0.0
    detunings: Optional[tuple] = None
    thermal: Optional[ThermalSpec] = None

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError(f"n_atoms must be >= 1, got {self.n_atoms}")
        for name in ("kappa", "gamma_raman", "r_p"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.k0 == 0:
            raise ValueError("k0 must be non-zero")
        if self.positions is not None:
            pos = tuple(float(x) for x in self.positions)
            if len(pos) != self.n_atoms:
                raise ValueError(f"{len(pos)} positions for {self.n_atoms} atoms")
            if len(set(pos)) != len(pos):
                raise ValueError("atom positions must be distinct")
            object.__setattr__(self, "positions", pos)
        if self.detunings is not None:
            det = tuple(float(x) for x in self.detunings)
            if len(det) != self.n_atoms:
                raise ValueError(f"{len(det)} detunings for {self.n_atoms} atoms")
            object.__setattr__(self, "detunings", det)

    @property
    def dim(self) -> int:
        return self.n_atoms + 1

    def position_array(self) -> np.ndarray:
        """Positions in µm; atoms evenly spaced on [0, 1] if none are set."""
        if self.positions is None:
            return np.linspace(0.0, 1.0, self.n_atoms)
        return np.asarray(self.positions)

    def order(self) -> np.ndarray:
        """Atom labels sorted along the propagation direction."""
        return np.argsort(self.k0 * self.position_array(), kind="stable")

    def detuning_array(self) -> np.ndarray:
        if self.detunings is None:
            return np.zeros(self.n_atoms)
        return np.asarray(self.detunings)

    def with_(self, **changes) -> "WaveguideConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("positions", "detunings"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out


def random_positions(n_atoms: int, seed=None) -> tuple:
    """Uniformly random positions in [0, 1) µm."""
    rng = np.random.default_rng(seed)
    return tuple(rng.random(n_atoms))


def build_exchange_position(config: WaveguideConfig) -> np.ndarray:
    """Dense N x N exchange block in the original atom labelling."""
    x = config.k0 * config.position_array()
    n = config.n_atoms
    if len(np.unique(x)) != n:
        raise ValueError("atom positions must be distinct")
    return 1j * config.kappa / (2.0 * n) * np.sign(x[:, None] - x[None, :])


@dataclass
class EigenmodeBasis:
    """Bright state plus the N-1 subradiant eigenmodes of the exchange block.

    ``transform`` has columns (W, C_1, ..., C_{N-1}) in the sorted position
    basis. ``couplings[j-1]`` = <W|H_exc|C_j> and ``energies[j-1]`` =
    <C_j|H_exc|C_j>.
    """

    couplings: np.ndarray
    energies: np.ndarray
    transform: np.ndarray


def build_exchange_eigenmode(n_atoms: int, kappa: float) -> EigenmodeBasis:
    """Closed-form eigenmodes of the exchange block off the bright state.

    In the sorted basis the subradiant modes are plane waves. The phase of each
    mode is fixed so that its coupling to |W> is kappa (i + cot(pi j/N)) / 2N.
    """
    if n_atoms < 2:
        raise ValueError("need at least two atoms")
    n = n_atoms
    j = np.arange(1, n)
    theta = np.pi * j / n
    cot = np.cos(theta) / np.sin(theta)
    energies = -kappa * cot / (2.0 * n)
    couplings = kappa * (1j + cot) / (2.0 * n)
    l = np.arange(n)
    # with this sign convention the plane wave already carries the target phase
    modes = np.exp(-2j * np.pi * np.outer(l, j) / n) / np.sqrt(n)
    transform = np.column_stack([np.full(n, 1.0 / np.sqrt(n)), modes])
    return EigenmodeBasis(couplings=couplings, energies=energies, transform=transform)


def _sign_apply(x: np.ndarray) -> np.ndarray:
    """sum_j sign(l - j) x_j along axis 0 in O(N)."""
    cs = np.cumsum(x, axis=0)
    below = cs - x
    above = cs[-1:] - cs
    return below - above


class _Sector:
    """Sorted-frame operators of the single-excitation sector."""

    def __init__(self, config: WaveguideConfig):
        self.config = config
        self.n = config.n_atoms
        self.perm = config.order()
        self.det = config.detuning_array()[self.perm]
        self.kappa = config.kappa
        self.gamma = config.gamma_raman
        self.sqrt_kn = math.sqrt(config.kappa / self.n)
        self.exchange = 1j * config.kappa / (2.0 * self.n)

    def apply_heff(self, amp, x: np.ndarray) -> np.ndarray:
        """H_eff x for x of shape (N+1, m); ``amp`` is a scalar or one value per column."""
        g = x[:1]
        e = x[1:]
        s = np.sum(e, axis=0, keepdims=True)
        out = np.empty_like(x)
        # drive sqrt(kappa) amp (|W><G| + |G><W|), |W> = sum_j |j>/sqrt(N)
        out[:1] = amp * self.sqrt_kn * s
        ex = self.exchange * _sign_apply(e) if self.n > 1 else np.zeros_like(e)
        ex += self.det[:, None] * e
        ex += amp * self.sqrt_kn * g
        # -i/2 (kappa |W><W| + Gamma P_exc)
        ex -= 0.5j * (self.kappa / self.n * s + self.gamma * e)
        out[1:] = ex
        return out

    def bright(self, x: np.ndarray) -> np.ndarray:
        return np.sum(x[1:], axis=0) / math.sqrt(self.n)

    def position_probs(self, x: np.ndarray) -> np.ndarray:
        """|amplitude|^2 on (G, sorted atoms)."""
        return np.abs(x) ** 2

    def dense_hamiltonian(self, amp: float = 0.0) -> np.ndarray:
        """Hermitian H (sorted frame), dense."""
        n = self.n
        h = np.zeros((n + 1, n + 1), dtype=complex)
        idx = np.arange(n)
        h[1:, 1:] = self.exchange * np.sign(idx[:, None] - idx[None, :])
        h[1:, 1:] += np.diag(self.det)
        h[0, 1:] = h[1:, 0] = amp * self.sqrt_kn
        return h


class _ModeSector:
    """Same sector in the basis (G, W, C_1..C_{N-1}) for configs without detunings.

    The exchange block is then an arrowhead matrix: W couples to every C_j and
    the C_j are diagonal, so H_eff x costs one vector-matrix product.
    """

    def __init__(self, config: WaveguideConfig):
        if config.n_atoms < 2 or np.any(config.detuning_array() != 0):
            raise ValueError("mode basis needs N >= 2 and no detunings")
        self.config = config
        self.n = config.n_atoms
        self.kappa = config.kappa
        self.gamma = config.gamma_raman
        self.sqrt_k = math.sqrt(config.kappa)
        self.basis = build_exchange_eigenmode(self.n, config.kappa)
        self.couplings = self.basis.couplings
        self.diag = (self.basis.energies - 0.5j * self.gamma)[:, None]
        self.back = self.couplings.conj()[:, None]
        self.w_loss = 0.5j * (self.kappa + self.gamma)

    def apply_heff(self, amp, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        g, w, c = x[0], x[1], x[2:]
        out[0] = amp * self.sqrt_k * w
        out[1] = amp * self.sqrt_k * g + self.couplings @ c - self.w_loss * w
        out[2:] = self.back * w + self.diag * c
        return out

    def bright(self, x: np.ndarray) -> np.ndarray:
        return x[1]

    def position_probs(self, x: np.ndarray) -> np.ndarray:
        pos = self.basis.transform @ x[1:]
        return np.vstack([np.abs(x[:1]) ** 2, np.abs(pos) ** 2])


def _trajectory_sector(config: WaveguideConfig):
    if config.n_atoms >= 2 and not np.any(config.detuning_array() != 0):
        return _ModeSector(config)
    return _Sector(config)


def hamiltonian(config: WaveguideConfig, amplitude: float = 0.0) -> np.ndarray:
    """Dense Hermitian Hamiltonian of the sector in the original labelling."""
    n = config.n_atoms
    h = np.zeros((n + 1, n + 1), dtype=complex)
    if n > 1:
        h[1:, 1:] = build_exchange_position(config)
    h[1:, 1:] += np.diag(config.detuning_array())
    h[0, 1:] = h[1:, 0] = amplitude * math.sqrt(config.kappa / n)
    return h


def jump_operators(config: WaveguideConfig) -> list:
    """(rate, operator) pairs: waveguide emission from |W> and per-atom Raman decay."""
    n = config.n_atoms
    ops = []
    bright = np.zeros((n + 1, n + 1), dtype=complex)
    bright[0, 1:] = 1.0 / math.sqrt(n)
    ops.append((config.kappa, bright))
    if config.gamma_raman > 0:
        for j in range(n):
            op = np.zeros((n + 1, n + 1), dtype=complex)
            op[0, j + 1] = 1.0
            ops.append((config.gamma_raman, op))
    return ops


def dense_system(config: WaveguideConfig, shape: PulseShape) -> LindbladSystem:
    """Generic Lindblad system with dense operators (reference implementation)."""
    h0 = hamiltonian(config)
    h1 = hamiltonian(config, 1.0) - h0

    def ham(t):
        return h0 + float(shape.amplitude(t)) * h1

    return LindbladSystem(dim=config.dim, hamiltonian=ham, jumps=jump_operators(config))


@dataclass(frozen=True)
class WaveguideSystem:
    """Structured master equation in the sorted frame, O(N^2) per evaluation."""

    config: WaveguideConfig
    shape: PulseShape
    sector: _Sector = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sector", _Sector(self.config))

    @property
    def dim(self) -> int:
        return self.config.dim

    def rhs(self, t: float, rho: np.ndarray) -> np.ndarray:
        sec = self.sector
        amp = float(self.shape.amplitude(t))
        a = sec.apply_heff(amp, rho)
        out = -1j * (a - a.conj().T)
        e = rho[1:, 1:]
        gain = sec.kappa / sec.n * np.sum(e).real + sec.gamma * np.trace(e).real
        out[0, 0] += gain
        return out


def _with_breakpoints(grid: np.ndarray, shape: PulseShape, tol: float = 1e-9) -> np.ndarray:
    extra = [
        b for b in shape.breakpoints
        if grid[0] < b < grid[-1] and np.min(np.abs(grid - b)) > tol
    ]
    return np.union1d(grid, extra)


def _to_sorted(config: WaveguideConfig, rho: np.ndarray) -> np.ndarray:
    idx = np.concatenate([[0], config.order() + 1])
    return rho[..., idx[:, None], idx[None, :]] if rho.ndim >= 2 else rho[idx]


def _from_sorted(config: WaveguideConfig, rho: np.ndarray) -> np.ndarray:
    idx = np.concatenate([[0], config.order() + 1])
    inv = np.argsort(idx)
    return rho[..., inv[:, None], inv[None, :]]


def propagate_density(
    config: WaveguideConfig,
    shape: PulseShape,
    grid,
    rho0: Optional[np.ndarray] = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    check: str = "auto",
    observe=None,
) -> Propagation:
    """Full master-equation evolution starting from |G> (or ``rho0``).

    States are returned in the original labelling. With ``observe(t, rho)``
    only its results are kept; ``rho`` is then in the sorted frame.
    """
    if config.n_atoms > MAX_DENSITY_ATOMS:
        raise ValueError(
            f"density backend limited to N <= {MAX_DENSITY_ATOMS}, got {config.n_atoms}; "
            "use the trajectory backend"
        )
    dim = config.dim
    if rho0 is None:
        rho0 = np.zeros((dim, dim), dtype=complex)
        rho0[0, 0] = 1.0
    system = WaveguideSystem(config, shape)
    grid = np.asarray(grid, dtype=float)
    # stop exactly at ramp kinks so the step-size control is not fooled
    full = _with_breakpoints(grid, shape)
    sol = propagate(
        system, _to_sorted(config, np.asarray(rho0)), full, rtol=rtol, atol=atol, check=check, observe=observe
    )
    keep = np.isin(full, grid)
    sol.times = full[keep]
    if sol.states is not None:
        sol.states = _from_sorted(config, sol.states[keep])
    else:
        sol.observed = [o for o, k in zip(sol.observed, keep) if k]
    return sol


def waveguide_emission(rho, config: WaveguideConfig, drive_now):
    """Forward photon rate for a density matrix (or a stack of them).

    Same input-output composition as the four-level model with W the
    symmetric bright state: R + kappa P_W + 2 sqrt(kappa R) Im<W|rho|G>.
    """
    rho = np.asarray(rho)
    n = config.n_atoms
    r = np.asarray(drive_now, dtype=float)
    e = rho[..., 1:, 1:]
    p_w = np.sum(e, axis=(-2, -1)).real / n
    rho_wg = np.sum(rho[..., 1:, 0], axis=-1) / math.sqrt(n)
    out = r + config.kappa * p_w + 2.0 * np.sqrt(config.kappa * r) * rho_wg.imag
    return np.maximum(out, 0.0)


@dataclass
class TrajectoryResult:
    """Trajectory averages on the output grid with standard errors of the mean.

    ``populations`` (G followed by the atoms in the original labelling) is only
    recorded for small N.
    """

    times: np.ndarray
    emission: np.ndarray
    emission_err: np.ndarray
    bright_population: np.ndarray
    bright_population_err: np.ndarray
    ground_population: np.ndarray
    ground_population_err: np.ndarray
    n_traj: int
    n_jumps: int = 0
    populations: Optional[np.ndarray] = None
    populations_err: Optional[np.ndarray] = None


def _time_nodes(grid: np.ndarray, shape: PulseShape, max_step: float) -> tuple:
    """Integration nodes covering the grid and ramp kinks; indices of grid points."""
    pts = _with_breakpoints(grid, shape)
    nodes = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(1, int(math.ceil((b - a) / max_step - 1e-9)))
        nodes.append(a + (b - a) * np.arange(1, m + 1) / m)
    nodes = np.concatenate(nodes)
    nodes[-1] = pts[-1]
    where = np.searchsorted(nodes, grid - 1e-12)
    return nodes, where


def _rk4(sec, shape: PulseShape, t, h, psi):
    """One RK4 step of d psi/dt = -i H_eff psi; ``t`` and ``h`` may be per-column arrays."""

    def f(tt, x):
        return -1j * sec.apply_heff(shape.amplitude(tt), x)

    k1 = f(t, psi)
    k2 = f(t + 0.5 * h, psi + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, psi + 0.5 * h * k2)
    k4 = f(t + h, psi + h * k3)
    return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _run_chunk(config, shape, nodes, where, n_traj, seed_seq, with_populations):
    sec = _trajectory_sector(config)
    rng = np.random.default_rng(seed_seq)
    dim = config.dim
    psi = np.zeros((dim, n_traj), dtype=complex)
    psi[0] = 1.0
    threshold = rng.random(n_traj)
    n_grid = len(where)
    sums = {key: np.zeros(n_grid) for key in ("em", "em2", "pw", "pw2", "pg", "pg2", "jumped", "p0")}
    ever = np.zeros(n_traj, dtype=bool)
    if with_populations:
        sums["pop"] = np.zeros((n_grid, dim))
        sums["pop2"] = np.zeros((n_grid, dim))

    def record(k, t):
        norm = np.sum(np.abs(psi) ** 2, axis=0)
        sums["jumped"][k] = np.count_nonzero(ever)
        sums["p0"][k] = np.sum(norm[~ever])
        w = sec.bright(psi)
        pw = np.abs(w) ** 2 / norm
        pg = np.abs(psi[0]) ** 2 / norm
        r = float(shape.rate(t))
        coh = (w * psi[0].conj()).imag / norm
        em = r + sec.kappa * pw + 2.0 * math.sqrt(sec.kappa * r) * coh
        for key, v in (("em", em), ("pw", pw), ("pg", pg)):
            sums[key][k] = np.sum(v)
            sums[key + "2"][k] = np.sum(v**2)
        if with_populations:
            pops = sec.position_probs(psi) / norm
            sums["pop"][k] = np.sum(pops, axis=1)
            sums["pop2"][k] = np.sum(pops**2, axis=1)

    gi = 0
    if where[0] == 0:
        record(0, nodes[0])
        gi = 1
    n_jumps = 0
    for i in range(1, len(nodes)):
        t, h = nodes[i - 1], nodes[i] - nodes[i - 1]
        n_before = np.sum(np.abs(psi) ** 2, axis=0)
        psi = _rk4(sec, shape, t, h, psi)
        n_after = np.sum(np.abs(psi) ** 2, axis=0)
        jumped = np.nonzero(n_after < threshold)[0]
        if len(jumped):
            n_jumps += len(jumped)
            ever[jumped] = True
            # the norm decays roughly exponentially inside a step; interpolate its log
            lb = np.log(n_before[jumped])
            la = np.log(n_after[jumped])
            lr = np.log(threshold[jumped])
            frac = np.clip((lb - lr) / np.maximum(lb - la, 1e-300), 0.0, 1.0)
            t_jump = t + frac * h
            fresh = np.zeros((dim, len(jumped)), dtype=complex)
            fresh[0] = 1.0
            psi[:, jumped] = _rk4(sec, shape, t_jump, nodes[i] - t_jump, fresh)
            threshold[jumped] = rng.random(len(jumped))
        while gi < n_grid and where[gi] == i:
            record(gi, nodes[i])
            gi += 1
    return sums, n_jumps


def propagate_trajectories(
    config: WaveguideConfig,
    shape: PulseShape,
    grid,
    n_traj: int,
    seed=None,
    threads: int = 1,
    max_step: float = TRAJ_STEP,
    chunk: int = TRAJ_CHUNK,
    with_populations="auto",
) -> TrajectoryResult:
    """Monte Carlo wavefunction average starting from |G>.

    Trajectories are split into fixed chunks, each with its own child seed, so
    the result does not depend on ``threads``. Chunk sums are reduced in chunk
    order.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    nodes, where = _time_nodes(grid, shape, max_step)
    if with_populations == "auto":
        with_populations = config.n_atoms <= DENSITY_BACKEND_MAX
    sizes = [min(chunk, n_traj - s) for s in range(0, n_traj, chunk)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(config, shape, nodes, where, m, s, bool(with_populations)) for m, s in zip(sizes, seeds)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: _run_chunk(*job), jobs))
    else:
        parts = [_run_chunk(*job) for job in jobs]
    total = {k: np.zeros_like(v) for k, v in parts[0][0].items()}
    n_jumps = 0
    for sums, jumps in parts:
        n_jumps += jumps
        for k in total:
            total[k] += sums[k]

    # Before the first sampled jump every trajectory is identical and the
    # sample variance is 0. The no-jump norm still gives the jump probability
    # p exactly, so the standard error there is taken as sqrt(p(1-p)/n) times
    # a bound on how much a jumped trajectory can differ.
    unjumped = total["jumped"] == 0
    p_jump = np.clip(1.0 - total["p0"] / n_traj, 0.0, 1.0)
    silent_se = np.where(unjumped, np.sqrt(p_jump * (1.0 - p_jump) / n_traj), 0.0)

    def mean_err(key, scale=1.0):
        m = total[key] / n_traj
        if n_traj < 2:
            return m, np.zeros_like(m)
        var = np.maximum(total[key + "2"] / n_traj - m**2, 0.0) * n_traj / (n_traj - 1)
        se = np.sqrt(var / n_traj)
        return m, np.maximum(se, silent_se.reshape(silent_se.shape + (1,) * (se.ndim - 1)) * scale)

    # no state emits more than (sqrt(R) + sqrt(kappa))^2 into the forward mode
    em_bound = (np.sqrt(shape.rate(grid)) + math.sqrt(config.kappa)) ** 2
    em, em_err = mean_err("em", em_bound)
    pw, pw_err = mean_err("pw")
    pg, pg_err = mean_err("pg")
    out = TrajectoryResult(
        times=grid,
        emission=em,
        emission_err=em_err,
        bright_population=pw,
        bright_population_err=pw_err,
        ground_population=pg,
        ground_population_err=pg_err,
        n_traj=n_traj,
        n_jumps=n_jumps,
    )
    if with_populations:
        pop, pop_err = mean_err("pop")
        # back from the sorted frame to the original labelling
        inv = np.argsort(np.concatenate([[0], config.order() + 1]))
        out.populations, out.populations_err = pop[:, inv], pop_err[:, inv]
    return out


def apply_thermal_detunings(config: WaveguideConfig, seed=None) -> WaveguideConfig:
    """Per-atom detunings 2 (2 pi / lambda) v_j from Gaussian velocities.

    The phase an atom picks up while moving along the spin wave is equivalent
    to a detuning at twice the Doppler shift in the chiral geometry.
    """
    if config.thermal is None:
        raise ValueError("config has no thermal block")
    th = config.thermal
    if th.velocity_scale == 0:
        return config.with_(detunings=tuple(np.zeros(config.n_atoms)))
    rng = np.random.default_rng(seed)
    v = rng.normal(0.0, th.velocity_scale / math.sqrt(2.0), size=config.n_atoms)
    k = 2.0 * math.pi / th.spin_wavelength
    return config.with_(detunings=tuple(2.0 * k * v))


def simulate_waveguide_trace(
    config: WaveguideConfig,
    shape: PulseShape,
    bin_edges,
    backend: str = "auto",
    n_traj: int = 1000,
    seed=None,
    threads: int = 1,
    check: str = "auto",
) -> PhotonTrace:
    """Forward emission at the bin centres for one pulse."""
    edges = np.asarray(bin_edges, dtype=float)
    centers = 0.5 * (edges[1:] + edges[:-1])
    if backend == "auto":
        backend = "density" if config.n_atoms <= DENSITY_BACKEND_MAX else "trajectory"
    t0 = min(centers[0], shape.start_time) if shape.duration > 0 else centers[0]
    grid = centers if t0 >= centers[0] else np.concatenate([[t0], centers])
    meta = {"model": "waveguide", "params": config.to_dict(), "pulse": shape.to_dict(), "backend": backend}
    if backend == "density":
        # emission is permutation invariant, so the sorted-frame state will do
        sol = propagate_density(
            config, shape, grid, check=check,
            observe=lambda t, rho: waveguide_emission(rho, config, shape.rate(t)),
        )
        rates = np.asarray(sol.observed[len(grid) - len(centers):], dtype=float)
        meta["error_estimate"] = sol.error_estimate
        meta["invariants"] = {
            "max_trace_error": sol.max_trace_error,
            "max_hermiticity": sol.max_hermiticity,
            "min_eigenvalue": None if math.isnan(sol.min_eigenvalue) else sol.min_eigenvalue,
        }
    elif backend == "trajectory":
        res = propagate_trajectories(config, shape, grid, n_traj=n_traj, seed=seed, threads=threads)
        rates = np.maximum(res.emission[len(grid) - len(centers):], 0.0)
        meta.update(n_traj=n_traj, seed=seed)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return PhotonTrace(bin_edges=edges, rates=rates, metadata=meta)


def simulate_waveguide_sweep(
    config: WaveguideConfig,
    lengths,
    bin_edges,
    taper_time: float = 0.2,
    end_time: float = 0.0,
    backend: str = "auto",
    n_traj: int = 1000,
    seed=None,
    threads: int = 1,
    check: str = "auto",
) -> list:
    """One trace per pulse length with a fixed end time; child seeds per length."""
    from .analysis import child_seeds

    out = []
    for length, child in zip(lengths, child_seeds(seed, len(lengths))):
        shape = PulseShape.tukey(float(length), config.r_p, taper_time=taper_time, end_time=end_time)
        out.append(
            simulate_waveguide_trace(
                config, shape, bin_edges, backend=backend, n_traj=n_traj, seed=child, threads=threads, check=check
            )
        )
    return out
