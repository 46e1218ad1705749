"""Physical parameters, grids and the background-gas sampler.

Internal units: micrometres and microseconds, with every frequency or
energy an angular frequency in rad/us (hbar = 1). Values that
are tabulated "over 2 pi" in MHz are converted once, when a config is read
(see :mod:`dephtrap.config`).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
HBAR_SI = 1.054571817e-34  # J s
AMU_SI = 1.66053906660e-27  # kg
RB87_MASS_AMU = 86.909180531

#: exponent of the background-Rydberg interaction for each Rydberg state
ETA = {"s": 6, "p": 4}


def mhz_over_2pi(value: float) -> float:
    """Convert a frequency given as f = omega / 2 pi in MHz to rad/us."""
    return TWO_PI * value


def hbar_over_mass(mass_amu: float) -> float:
    """hbar / M in um^2 / us for a particle of the given mass."""
    if mass_amu <= 0:
        raise ValueError("mass must be positive")
    # m^2/s -> um^2/us is a factor 1e12 / 1e6
    return HBAR_SI / (mass_amu * AMU_SI) * 1e6


@dataclass(frozen=True)
class UnitSystem:
    """Unit bookkeeping; only ``hbar_over_mass`` carries a number."""

    hbar_over_mass: float = hbar_over_mass(RB87_MASS_AMU)
    length_unit: str = "um"
    time_unit: str = "us"
    frequency_unit: str = "rad/us"

    def __post_init__(self):
        if not self.hbar_over_mass > 0:
            raise ValueError("hbar_over_mass must be positive")


@dataclass(frozen=True)
class EitParams:
    """Probe/coupling Rabi frequencies, detunings and |e> decay (rad/us)."""

    omega_p: float
    omega_c: float
    delta_p: float = 0.0
    delta_c: float = 0.0
    gamma_p: float = 1.0

    def __post_init__(self):
        if not self.omega_c > 0:
            raise ValueError("omega_c must be positive")
        if not self.gamma_p > 0:
            raise ValueError("gamma_p must be positive")
        if self.omega_p >= self.omega_c:
            logger.warning(
                "omega_p (%g) >= omega_c (%g): outside the weak-probe EIT regime",
                self.omega_p, self.omega_c)

    @property
    def two_photon_detuning(self) -> float:
        return self.delta_p + self.delta_c


@dataclass(frozen=True)
class InteractionParams:
    """Interaction coefficients in rad/us times um^eta.

    c6_us couples |u> of a background atom to an |s> Rydberg atom, c4_up to a
    |p> Rydberg atom, c3_dd is the resonant dipole-dipole exchange between
    |ps> and |sp>.
    """

    c6_us: float
    c4_up: float = 0.0
    c3_dd: float = 0.0

    def coefficient(self, species: str) -> float:
        if species == "s":
            return self.c6_us
        if species == "p":
            return self.c4_up
        raise ValueError(f"unknown Rydberg species {species!r}")


def critical_distance(eit: EitParams, inter: InteractionParams, species: str = "s") -> float:
    """Radius inside which a Rydberg atom in ``species`` breaks EIT.

    d_c = (|C_eta| Gamma_p / Omega_c^2)^(1/eta); zero if the coefficient is 0.
    """
    if eit.omega_c == 0:
        raise ZeroDivisionError("omega_c must be nonzero")
    c = abs(inter.coefficient(species))
    if c == 0:
        return 0.0
    eta = ETA[species]
    return (c * eit.gamma_p / eit.omega_c**2) ** (1.0 / eta)


def coefficient_for_critical_distance(eit: EitParams, d_c: float, species: str) -> float:
    """Inverse of :func:`critical_distance` (magnitude of C_eta)."""
    return d_c ** ETA[species] * eit.omega_c**2 / eit.gamma_p


# ---------------------------------------------------------------------------
# background gas


@dataclass(frozen=True)
class BoxGeometry:
    """Axis-aligned box given by its centre and full side lengths (um)."""

    center: tuple = (0.0, 0.0, 0.0)
    extents: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.center) != 3 or len(self.extents) != 3:
            raise ValueError("box needs three centre coordinates and three extents")
        if any(not e > 0 for e in self.extents):
            raise ValueError("box extents must be positive")

    @property
    def volume(self) -> float:
        """Volume in um^3."""
        return float(np.prod(self.extents))

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center, float) - 0.5 * np.asarray(self.extents, float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center, float) + 0.5 * np.asarray(self.extents, float)

    @classmethod
    def cube(cls, side: float, center=(0.0, 0.0, 0.0)) -> "BoxGeometry":
        return cls(tuple(center), (side, side, side))

    @classmethod
    def tube(cls, length: float, volume: float, center=(0.0, 0.0, 0.0)) -> "BoxGeometry":
        """Square tube along x with the given length and total volume."""
        width = math.sqrt(volume / length)
        return cls(tuple(center), (length, width, width))


UM3_PER_M3 = 1e18


@dataclass(frozen=True)
class BackgroundGas:
    """Static background atom positions (N, 3) in um."""

    positions: np.ndarray
    geometry: BoxGeometry
    density: float  # 1/m^3
    seed: int

    def __len__(self):
        return len(self.positions)

    @property
    def realized_density(self) -> float:
        """Number density of the sample in 1/m^3."""
        return len(self.positions) / self.geometry.volume * UM3_PER_M3

    def subset(self, index) -> "BackgroundGas":
        return BackgroundGas(self.positions[index], self.geometry, self.density, self.seed)

    @classmethod
    def from_positions(cls, positions, geometry: Optional[BoxGeometry] = None) -> "BackgroundGas":
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        if geometry is None:
            lo, hi = positions.min(0), positions.max(0)
            ext = np.maximum(hi - lo, 1e-9)
            geometry = BoxGeometry(tuple(0.5 * (lo + hi)), tuple(ext))
        density = len(positions) / geometry.volume * UM3_PER_M3
        return cls(positions, geometry, density, -1)


def sample_background(geometry: BoxGeometry, density: float, seed: int,
                      count: Optional[int] = None) -> BackgroundGas:
    """Draw i.i.d. uniform positions inside ``geometry``.

    The number of atoms is ``round(density * volume)`` unless ``count`` is
    given. Positions come from numpy's PCG64 generator seeded with ``seed``;
    one ``rng.random((N, 3))`` call fills atoms in order, x then y then z,
    so the result only depends on (geometry, density/count, seed).
    """
    if not density > 0:
        raise ValueError("density must be positive")
    if count is None:
        count = int(round(density * geometry.volume / UM3_PER_M3))
    if count <= 0:
        raise ValueError("background gas would contain no atoms")
    rng = np.random.Generator(np.random.PCG64(seed))
    unit = rng.random((count, 3))
    positions = geometry.lower + unit * np.asarray(geometry.extents, float)
    return BackgroundGas(positions, geometry, density, seed)


# ---------------------------------------------------------------------------
# grids and wavepackets


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid ``x_j = min + j dx`` with n a power of two."""

    min: float
    max: float
    n: int

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two, got {self.n}")
        if not self.max > self.min:
            raise ValueError("grid max must exceed min")

    @property
    def dx(self) -> float:
        return (self.max - self.min) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.min + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        """Wavenumbers in FFT order; |k| <= pi/dx."""
        return 2 * np.pi * np.fft.fftfreq(self.n, self.dx)

    @property
    def k_max(self) -> float:
        return np.pi / self.dx


@dataclass(frozen=True)
class WavepacketSpec:
    center: float
    sigma: float
    surface: str = "repulsive"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.surface not in ("repulsive", "attractive", "bare-state"):
            raise ValueError(f"unknown surface {self.surface!r}")


def gaussian(grid: Grid1D, center: float, sigma: float) -> np.ndarray:
    """psi(x) = exp(-(x-x0)^2 / (2 sigma^2)) / (pi sigma^2)^(1/4) on the grid."""
    x = grid.x
    return np.exp(-(x - center) ** 2 / (2 * sigma**2)) / (np.pi * sigma**2) ** 0.25


def positions_on_axis(x: Sequence[float]) -> np.ndarray:
    """Rydberg positions [x, 0, 0] for each x."""
    x = np.asarray(x, float)
    out = np.zeros(x.shape + (3,))
    out[..., 0] = x
    return out


def dimer_positions(r, center=(0.0, 0.0, 0.0)):
    """Positions of the two dimer atoms at R0 -/+ r e_x / 2."""
    r = np.asarray(r, float)
    c = np.asarray(center, float)
    x1 = np.zeros(r.shape + (3,)) + c
    x2 = x1.copy()
    x1[..., 0] -= r / 2
    x2[..., 0] += r / 2
    return x1, x2


@dataclass(frozen=True)
class PhysicalSetup:
    """Everything the effective-operator machinery needs."""

    eit: EitParams
    inter: InteractionParams
    units: UnitSystem = field(default_factory=UnitSystem)
