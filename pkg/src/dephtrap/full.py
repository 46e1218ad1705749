"""Dense Lindblad dynamics of a Rydberg dimer (or single atom) plus a few
three-level background atoms.

Tensor order is Rydberg sector first, then background atoms in gas order,
each with local basis (|g>, |e>, |u>). The dimer sector is {|pi_1>, |pi_2>}
with |pi_1> = |ps> (atom 1 in |p>). A single Rydberg atom has a trivial
one-dimensional sector in |s>.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .params import EitParams, InteractionParams, dimer_positions

logger = logging.getLogger(__name__)

G, E, U = 0, 1, 2
MAX_DIM = 162


class TraceDriftError(RuntimeError):
    pass


@dataclass(frozen=True)
class LevelScheme:
    n_rydberg_states: int
    n_background: int

    def __post_init__(self):
        if self.n_rydberg_states not in (1, 2):
            raise ValueError("one or two Rydberg states supported")
        if self.n_background < 0:
            raise ValueError("negative background count")
        if self.dim > MAX_DIM:
            raise ValueError(f"Hilbert dimension {self.dim} exceeds dense-solver guard {MAX_DIM}")

    @property
    def dim(self) -> int:
        return self.n_rydberg_states * 3**self.n_background

    def basis_index(self, rydberg: int, levels: Sequence[int]) -> int:
        idx = rydberg
        for lvl in levels:
            idx = 3 * idx + lvl
        return idx


@dataclass(frozen=True)
class OpenSystem:
    """Hamiltonian and jump operators of a finite open system."""

    h: np.ndarray
    jumps: tuple
    scheme: Optional[LevelScheme] = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    def liouvillian(self) -> np.ndarray:
        """Row-major vectorised generator: vec(drho/dt) = S vec(rho)."""
        n = self.dim
        eye = np.eye(n)
        a = sum((l.conj().T @ l for l in self.jumps), np.zeros((n, n), complex))
        h_nh = self.h - 0.5j * a
        s = -1j * np.kron(h_nh, eye) + 1j * np.kron(eye, h_nh.conj())
        for l in self.jumps:
            s = s + np.kron(l, l.conj())
        return s

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        a = sum((l.conj().T @ l for l in self.jumps), np.zeros_like(rho))
        h_nh = self.h - 0.5j * a
        out = -1j * (h_nh @ rho - rho @ h_nh.conj().T)
        for l in self.jumps:
            out += l @ rho @ l.conj().T
        return out


@dataclass
class FullState:
    rho: np.ndarray
    t: float = 0.0

    def check(self, herm_tol=1e-10, trace_tol=1e-8):
        herm = np.max(np.abs(self.rho - self.rho.conj().T))
        tr = np.trace(self.rho).real
        if herm > herm_tol:
            raise ValueError(f"state not Hermitian ({herm:.2e})")
        if abs(tr - 1) > trace_tol:
            raise ValueError(f"state trace {tr!r} deviates from 1")


@dataclass
class FullTrajectory:
    times: np.ndarray
    rhos: np.ndarray  # (n_t, dim, dim)
    system: OpenSystem
    dt: float

    def __len__(self):
        return len(self.times)

    def state(self, i) -> FullState:
        return FullState(self.rhos[i], float(self.times[i]))


def eit_hamiltonian(eit: EitParams) -> np.ndarray:
    """Single background atom ladder in the rotating frame, basis (g, e, u)."""
    h = np.zeros((3, 3))
    h[E, E] = -eit.delta_p
    h[U, U] = -eit.delta_p - eit.delta_c
    h[G, E] = h[E, G] = 0.5 * eit.omega_p
    h[E, U] = h[U, E] = 0.5 * eit.omega_c
    return h


def _embed(op, site, n_bg, n_ryd):
    """Place a 3x3 operator on background site ``site``."""
    left = np.eye(n_ryd * 3**site)
    right = np.eye(3 ** (n_bg - site - 1))
    return np.kron(np.kron(left, op), right)


def rydberg_shifts(rydberg_positions, background_positions, inter: InteractionParams) -> np.ndarray:
    """Shift of |u>_alpha for each Rydberg basis state, shape (n_states, n_bg).

    With one Rydberg atom (in |s>) the single row holds C6/d^6. With two atoms,
    row n puts atom n in |p> and the other in |s>.
    """
    ryd = np.atleast_2d(np.asarray(rydberg_positions, float))
    bg = np.atleast_2d(np.asarray(background_positions, float))
    dist = np.linalg.norm(bg[None, :, :] - ryd[:, None, :], axis=-1)
    if np.any(dist == 0):
        raise ZeroDivisionError("background atom coincides with a Rydberg atom")
    if len(ryd) == 1:
        return inter.c6_us / dist**6
    if len(ryd) != 2:
        raise ValueError("one or two Rydberg atoms supported")
    v = np.empty((2, bg.shape[0]))
    v[0] = inter.c4_up / dist[0] ** 4 + inter.c6_us / dist[1] ** 6
    v[1] = inter.c4_up / dist[1] ** 4 + inter.c6_us / dist[0] ** 6
    return v


def build_hamiltonian(rydberg_positions, background_positions, eit: EitParams,
                      inter: InteractionParams) -> OpenSystem:
    """Assemble H = H_dd + H_EIT + H_int and the |e> decay operators."""
    ryd = np.atleast_2d(np.asarray(rydberg_positions, float))
    bg = np.atleast_2d(np.asarray(background_positions, float)).reshape(-1, 3)
    n_ryd = 1 if len(ryd) == 1 else 2
    scheme = LevelScheme(n_ryd, len(bg))
    dim = scheme.dim
    n_bg = len(bg)

    h = np.zeros((dim, dim), complex)
    if n_ryd == 2:
        r = np.linalg.norm(ryd[1] - ryd[0])
        w = inter.c3_dd / r**3
        h += np.kron(np.array([[0.0, w], [w, 0.0]]), np.eye(3**n_bg))
    h_eit = eit_hamiltonian(eit)
    for a in range(n_bg):
        h += _embed(h_eit, a, n_bg, n_ryd)

    v = rydberg_shifts(ryd, bg, inter)
    pu = np.zeros((3, 3))
    pu[U, U] = 1.0
    for n in range(n_ryd):
        proj = np.zeros((n_ryd, n_ryd))
        proj[n, n] = 1.0
        for a in range(n_bg):
            h += v[n, a] * np.kron(proj, _embed(pu, a, n_bg, 1))

    lower = np.zeros((3, 3))
    lower[G, E] = np.sqrt(eit.gamma_p)
    jumps = tuple(_embed(lower, a, n_bg, n_ryd).astype(complex) for a in range(n_bg))
    return OpenSystem(h, jumps, scheme, {"shifts": v})


def dimer_benchmark_system(r: float, d: float, eit: EitParams, inter: InteractionParams) -> OpenSystem:
    """Dimer of separation r on the x axis with one background atom at
    perpendicular distance d from atom 1."""
    x1, x2 = dimer_positions(r)
    bg = x1 + np.array([0.0, d, 0.0])
    return build_hamiltonian(np.stack([x1, x2]), bg[None, :], eit, inter)


def spectral_bound(system: OpenSystem) -> float:
    rate = sum(np.linalg.norm(l, 2) ** 2 for l in system.jumps)
    return max(np.linalg.norm(system.h, 2), rate)


def default_dt(system: OpenSystem) -> float:
    return 0.1 / spectral_bound(system)


def rk4_step_matrix(s: np.ndarray, dt: float) -> np.ndarray:
    """Transfer matrix of one classical RK4 step for the linear ODE v' = S v."""
    hs = dt * s
    eye = np.eye(s.shape[0], dtype=complex)
    out = eye.copy()
    term = eye
    for j in range(1, 5):
        term = term @ hs / j
        out = out + term
    return out


def evolve_full(state: FullState, system: OpenSystem, t_final: float, dt: Optional[float] = None,
                n_out: int = 100, trace_tol: float = 1e-6) -> FullTrajectory:
    """Fixed-step RK4 integration of the master equation.

    ``n_out`` equally spaced snapshots plus the initial state are returned;
    ``dt`` is reduced so that an integer number of steps separates them. For
    systems small enough, the RK4 step is applied as a precomputed transfer
    matrix raised to the number of steps per snapshot (binary powering); this
    is algebraically the same integrator.
    """
    bound = 0.1 / spectral_bound(system)
    if dt is None:
        dt = bound
    elif dt > bound * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds stability bound {bound:g}")
    interval = t_final / n_out
    steps = max(1, int(np.ceil(interval / dt)))
    dt = interval / steps

    rho = np.array(state.rho, dtype=complex)
    dim = system.dim
    out = np.empty((n_out + 1, dim, dim), complex)
    out[0] = rho
    if dim**2 <= 2916:
        p = np.linalg.matrix_power(rk4_step_matrix(system.liouvillian(), dt), steps)
        v = rho.reshape(-1)
        for i in range(1, n_out + 1):
            v = p @ v
            out[i] = v.reshape(dim, dim)
    else:
        f = system.rhs
        for i in range(1, n_out + 1):
            for _ in range(steps):
                k1 = f(rho)
                k2 = f(rho + 0.5 * dt * k1)
                k3 = f(rho + 0.5 * dt * k2)
                k4 = f(rho + dt * k3)
                rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            out[i] = rho
    traces = np.einsum("tii->t", out).real
    drift = np.max(np.abs(traces - traces[0]))
    if drift > trace_tol:
        raise TraceDriftError(f"trace drift {drift:.2e}; retry with dt <= {dt / 4:.3e}")
    times = state.t + interval * np.arange(n_out + 1)
    return FullTrajectory(times, out, system, dt)


def steady_state(system: OpenSystem) -> np.ndarray:
    """Normalised null vector of the Liouvillian."""
    s = system.liouvillian()
    _, _, vh = np.linalg.svd(s)
    v = vh[-1].conj()
    rho = v.reshape(system.dim, system.dim)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def reduced_background(rho: np.ndarray, scheme: LevelScheme, alpha: int) -> np.ndarray:
    """3x3 reduced state of background atom ``alpha``."""
    shape = [scheme.n_rydberg_states] + [3] * scheme.n_background
    t = rho.reshape(shape + shape)
    k = len(shape)
    keep = 1 + alpha
    letters = "abcdefghijklmn"
    row = list(letters[:k])
    col = list(letters[:k])
    row[keep] = "x"
    col[keep] = "y"
    return np.einsum("".join(row) + "".join(col) + "->xy", t)


def reduced_rydberg(rho: np.ndarray, scheme: LevelScheme) -> np.ndarray:
    n = scheme.n_rydberg_states
    m = 3**scheme.n_background
    return np.einsum("aibi->ab", rho.reshape(n, m, n, m))


def susceptibility(state, system: OpenSystem, alpha: int, eit: EitParams) -> float:
    """chi = (Gamma_p / Omega_p) Im <g| rho_alpha |e>."""
    if eit.omega_p == 0:
        raise ZeroDivisionError("susceptibility undefined for omega_p = 0")
    rho = state.rho if isinstance(state, FullState) else state
    scheme = system.scheme
    if not 0 <= alpha < scheme.n_background:
        raise IndexError(f"background index {alpha} out of range")
    red = reduced_background(rho, scheme, alpha)
    return float(eit.gamma_p / eit.omega_p * red[G, E].imag)


@dataclass(frozen=True)
class RateFit:
    rate: float
    r2: float
    n_used: int
    warning: Optional[str] = None


def fit_dephasing_rate(t, coherence, discard: float = 0.05, floor: float = 1e-3,
                       min_r2: float = 0.9) -> RateFit:
    """Log-linear least squares of |coherence| against t.

    The first ``discard`` fraction of samples is dropped and the fit stops at
    the first sample below ``floor``.
    """
    t = np.asarray(t, float)
    c = np.abs(np.asarray(coherence))
    if len(t) < 10:
        raise ValueError("need at least 10 samples")
    if np.any(c <= 1e-12):
        raise ValueError("coherence moduli must exceed 1e-12")
    start = int(np.floor(discard * len(t)))
    below = np.nonzero(c[start:] < floor)[0]
    stop = start + below[0] if len(below) else len(t)
    if stop - start < 3:
        stop = min(len(t), start + 3)
    tt, yy = t[start:stop], np.log(c[start:stop])
    slope, icpt = np.polyfit(tt, yy, 1)
    resid = yy - (slope * tt + icpt)
    ss_tot = np.sum((yy - yy.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    msg = None
    if r2 < min_r2:
        msg = f"low R^2 = {r2:.3f}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return RateFit(float(-slope), float(r2), int(stop - start), msg)


def dimer_coherence(traj: FullTrajectory) -> np.ndarray:
    """|<pi_1| rho_dimer |pi_2>| at each snapshot."""
    scheme = traj.system.scheme
    if scheme is None:
        return np.abs(traj.rhos[:, 0, 1])
    n, m = scheme.n_rydberg_states, 3**scheme.n_background
    red = np.einsum("taibi->tab", traj.rhos.reshape(-1, n, m, n, m))
    return np.abs(red[:, 0, 1])


def initial_dimer_state(system: OpenSystem, amplitudes=(1 / np.sqrt(2), 1 / np.sqrt(2))) -> FullState:
    """Dimer in the given {pi_1, pi_2} superposition, background in |g...g>."""
    scheme = system.scheme
    psi = np.zeros(scheme.dim, complex)
    for n, amp in enumerate(amplitudes):
        psi[scheme.basis_index(n, [G] * scheme.n_background)] = amp
    return FullState(np.outer(psi, psi.conj()), 0.0)


def effective_dimer_system(h_shift, l_eff, w: float) -> OpenSystem:
    """Two-state open system H_g + h_shift with one effective jump operator."""
    h = np.array([[0.0, w], [w, 0.0]], complex) + h_shift
    return OpenSystem(0.5 * (h + h.conj().T), (np.asarray(l_eff, complex),))


def dephasing_rate(system: OpenSystem, t_final: float, n_out: int = 300) -> RateFit:
    """Fit the decay of dimer coherence from (|pi_1> + |pi_2>)/sqrt 2."""
    if system.scheme is None:
        rho0 = FullState(np.full((2, 2), 0.5, complex))
    else:
        rho0 = initial_dimer_state(system)
    traj = evolve_full(rho0, system, t_final, n_out=n_out)
    coh = np.maximum(dimer_coherence(traj), 1e-300)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit_dephasing_rate(traj.times, coh)


def gamma_map_full(r_list, d_list, eit: EitParams, inter: InteractionParams,
                   t_final: float = 30.0, n_out: int = 300, threads: int = 1):
    """Dephasing rate and R^2 on the (r, d) grid from the exact three-body model."""
    from .parallel import parallel_map

    cells = [(r, d) for r in r_list for d in d_list]

    def one(cell):
        fit = dephasing_rate(dimer_benchmark_system(cell[0], cell[1], eit, inter), t_final, n_out)
        return fit.rate, fit.r2

    res = np.array(parallel_map(one, cells, threads))
    shape = (len(r_list), len(d_list))
    return res[:, 0].reshape(shape), res[:, 1].reshape(shape)
