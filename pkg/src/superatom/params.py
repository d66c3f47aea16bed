"""Physical parameters, derived model rates and probe pulse shapes.

Unit conventions used throughout the package:

* times in microseconds (µs)
* decay rates in 1/µs
* angular frequencies in rad/µs (a frequency ``f`` in MHz is ``2*pi*f`` rad/µs)
* photon rates in photons/µs
* lengths in µm, wavenumbers in rad/µm, temperatures in µK
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

TWO_PI = 2.0 * math.pi

#: Boltzmann constant (J/K) and the 87Rb mass (kg).
K_B = 1.380649e-23
M_RB87 = 1.443160648e-25


def mhz_to_angular(f_mhz: float) -> float:
    """Convert an ordinary frequency in MHz to rad/µs."""
    return TWO_PI * f_mhz


@dataclass(frozen=True)
class ExperimentParams:
    """Raw laboratory settings of a single superatom experiment."""

    delta: float
    omega_c: float
    gamma_e: float
    g0: float = 0.0
    n_atoms: int = 1
    r_p: float = 0.0
    k_p: Optional[float] = None
    k_c: Optional[float] = None
    temperature: Optional[float] = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not self.omega_c > 0:
            raise ValueError(f"omega_c must be > 0, got {self.omega_c}")
        if not self.gamma_e > 0:
            raise ValueError(f"gamma_e must be > 0, got {self.gamma_e}")
        if self.n_atoms < 1:
            raise ValueError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if self.r_p < 0:
            raise ValueError(f"r_p must be >= 0, got {self.r_p}")

    @classmethod
    def from_mhz(cls, delta_mhz, omega_c_mhz=13.0, gamma_e_mhz=6.0, **kwargs):
        """Build from frequencies in MHz, applying the 2*pi conversion."""
        return cls(
            delta=mhz_to_angular(delta_mhz),
            omega_c=mhz_to_angular(omega_c_mhz),
            gamma_e=mhz_to_angular(gamma_e_mhz),
            **kwargs,
        )

    def spin_wavelength(self) -> float:
        """Wavelength (µm) of the spin wave written by counter-propagating probe and control."""
        if self.k_p is None or self.k_c is None:
            raise ValueError("k_p and k_c are required for the spin wavelength")
        dk = abs(self.k_p - self.k_c)
        if dk == 0:
            raise ValueError("k_p == k_c gives an infinite spin wavelength")
        return TWO_PI / dk

    def most_probable_speed(self, mass: float = M_RB87) -> float:
        """Most probable thermal speed sqrt(2 k_B T / m) in µm/µs."""
        if self.temperature is None:
            raise ValueError("temperature is required")
        # m/s == µm/µs
        return math.sqrt(2.0 * K_B * self.temperature * 1e-6 / mass)


@dataclass(frozen=True)
class EffectiveParams:
    """Rates of the effective four-level superatom model.

    ``varkappa`` is the coherent bright/subradiant coupling, ``gamma_d`` the
    dephasing rate into the dark reservoir. Both are fit parameters.
    """

    kappa: float
    gamma_raman: float = 0.0
    gamma_d: float = 0.0
    varkappa: float = 0.0
    r_p: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "gamma_raman", "gamma_d", "r_p"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if not np.isfinite(self.varkappa):
            raise ValueError("varkappa must be finite")

    @property
    def incoherent_decay(self) -> float:
        """Total decay rate of the bright state, kappa + Gamma + gamma_D."""
        return self.kappa + self.gamma_raman + self.gamma_d

    def with_(self, **changes) -> "EffectiveParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


def raman_decay(params: ExperimentParams) -> float:
    return params.gamma_e * (params.omega_c / (2.0 * params.delta)) ** 2


def collective_coupling(params: ExperimentParams) -> float:
    """kappa = N g0^2 Omega_c^2 / (16 Delta^2)."""
    return params.n_atoms * params.g0**2 * params.omega_c**2 / (16.0 * params.delta**2)


def derive_effective(
    params: ExperimentParams,
    *,
    gamma_raman_override: Optional[float] = None,
    kappa_override: Optional[float] = None,
    varkappa: float = 0.0,
    gamma_d: float = 0.0,
) -> EffectiveParams:
    """Map laboratory settings to effective model rates.

    ``varkappa`` and ``gamma_d`` cannot be derived from the settings; they are
    passed through (default 0). The overrides replace the formula values, e.g.
    by tabulated fit results.
    """
    if params.delta == 0:
        raise ValueError("delta must be non-zero")
    gamma = raman_decay(params) if gamma_raman_override is None else gamma_raman_override
    kappa = collective_coupling(params) if kappa_override is None else kappa_override
    return EffectiveParams(
        kappa=kappa, gamma_raman=gamma, gamma_d=gamma_d, varkappa=varkappa, r_p=params.r_p
    )


def collective_rabi(eff: EffectiveParams, r_p: Optional[float] = None) -> float:
    """Collectively enhanced Rabi frequency 2*sqrt(kappa*R_p) in rad/µs."""
    rate = eff.r_p if r_p is None else r_p
    if eff.kappa < 0 or rate < 0:
        raise ValueError("kappa and r_p must be >= 0")
    return 2.0 * math.sqrt(eff.kappa * rate)


@dataclass(frozen=True)
class PulseShape:
    """Flat-top probe pulse with raised-cosine (Tukey) ramps of fixed length.

    The pulse is non-zero on ``[end_time - duration, end_time]``. A pulse of
    zero duration is allowed and is identically zero.
    """

    duration: float
    peak_rate: float
    taper_time: float = 0.2
    end_time: float = 0.0

    def __post_init__(self):
        if self.peak_rate < 0:
            raise ValueError(f"peak_rate must be >= 0, got {self.peak_rate}")
        if self.duration < 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")
        if self.duration > 0 and not (0 < 2 * self.taper_time <= self.duration * (1 + 1e-12)):
            raise ValueError(
                f"need 0 < 2*taper_time <= duration, got taper_time={self.taper_time}, "
                f"duration={self.duration}"
            )

    @classmethod
    def tukey(cls, duration, peak_rate, taper_time=0.2, end_time=0.0) -> "PulseShape":
        """Like the constructor, but shortens the ramps of pulses shorter than two ramps."""
        taper = min(taper_time, duration / 2.0) if duration > 0 else taper_time
        return cls(duration=duration, peak_rate=peak_rate, taper_time=taper, end_time=end_time)

    @property
    def start_time(self) -> float:
        return self.end_time - self.duration

    @property
    def breakpoints(self) -> tuple:
        """Times where the rate is not smooth: start, end of rise, start of fall, end."""
        if self.duration == 0:
            return ()
        s, e, w = self.start_time, self.end_time, self.taper_time
        return (s, s + w, e - w, e)

    def rate(self, t):
        """Photon rate R_p(t); accepts scalars or arrays."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        if self.duration == 0 or self.peak_rate == 0:
            return out if out.ndim else float(out)
        s, e, w = self.start_time, self.end_time, self.taper_time
        rise = (t >= s) & (t < s + w)
        fall = (t > e - w) & (t <= e)
        flat = (t >= s + w) & (t <= e - w)
        out[flat] = self.peak_rate
        out[rise] = self.peak_rate * np.sin(0.5 * np.pi * (t[rise] - s) / w) ** 2
        out[fall] = self.peak_rate * np.sin(0.5 * np.pi * (e - t[fall]) / w) ** 2
        return out if out.ndim else float(out)

    def amplitude(self, t):
        """Field amplitude sqrt(R_p(t))."""
        return np.sqrt(self.rate(t))

    def is_constant_on(self, t_a: float, t_b: float) -> bool:
        """True if the rate takes a single value on the closed interval [t_a, t_b]."""
        if self.duration == 0 or self.peak_rate == 0:
            return True
        s, e, w = self.start_time, self.end_time, self.taper_time
        if t_b <= s or t_a >= e:
            return True
        return s + w <= t_a and t_b <= e - w

    def to_dict(self) -> dict:
        return asdict(self)


def pulse_rate(shape: PulseShape, t):
    return shape.rate(t)


@dataclass(frozen=True)
class ReferenceSet:
    """One tabulated parameter set of the four-level model."""

    name: str
    r_p: float
    delta_mhz: float
    kappa: float
    gamma_raman: float
    gamma_d: float
    varkappa: float
    measurements: int = 1_000_000

    def effective(self, **changes) -> EffectiveParams:
        eff = EffectiveParams(
            kappa=self.kappa,
            gamma_raman=self.gamma_raman,
            gamma_d=self.gamma_d,
            varkappa=self.varkappa,
            r_p=self.r_p,
        )
        return eff.with_(**changes) if changes else eff

    def experiment(self) -> ExperimentParams:
        return ExperimentParams.from_mhz(self.delta_mhz, r_p=self.r_p)


#: Fitted parameter sets reported for the measured datasets (rates in 1/µs).
REFERENCE_SETS = {
    "d100_r15": ReferenceSet("d100_r15", 15.0, 100.0, 0.46, 0.15, 0.85, 0.31, 1_111_000),
    "d125_r15": ReferenceSet("d125_r15", 15.0, 125.0, 0.32, 0.10, 0.85, 0.32, 621_000),
    "d150_r15": ReferenceSet("d150_r15", 15.0, 150.0, 0.21, 0.064, 0.85, 0.31, 467_000),
    "d100_r6.7": ReferenceSet("d100_r6.7", 6.7, 100.0, 0.47, 0.15, 0.85, 0.34, 377_000),
}

#: Ordered list, same order as REFERENCE_SETS.
REFERENCE_ROWS = list(REFERENCE_SETS.values())

DETECTION_EFFICIENCY = 0.35
BIN_WIDTH = 0.02
THRESHOLD_COUNTS = 50
