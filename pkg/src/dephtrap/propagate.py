"""Propagation of motional density matrices.

Single particle: rho(x, x') under

    drho/dt = -i [T, rho] + K(x, x') rho,    K = i dE - gamma / 2

Dimer: four components rho_nm(r, r') (n, m in {1, 2}) under

    drho_nm/dt = -i [T, rho_nm] - i sum_k (W_nk(r) rho_km - rho_nk W_km(r'))
                 + sum_kl (i dE^{nm}_{kl} - gamma^{nm}_{kl}) rho_kl

with W = W(r) sigma_x. T is the spectral kinetic operator hbar k^2 / (2 m),
with m = M for one atom and the reduced mass M / 2 for the dimer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
import scipy.fft
import scipy.linalg

from .params import Grid1D

logger = logging.getLogger(__name__)

S2 = 1 / np.sqrt(2)
PHI_REP = np.array([S2, S2])
PHI_ATT = np.array([S2, -S2])


class NumericalError(RuntimeError):
    pass


@dataclass
class MotionalDensityMatrix:
    data: np.ndarray  # (n, n) or (4, n, n)
    t: float
    grid: Grid1D

    @property
    def is_dimer(self) -> bool:
        return self.data.ndim == 3

    def trace(self) -> float:
        dx = self.grid.dx
        if self.is_dimer:
            return float((np.trace(self.data[0]) + np.trace(self.data[3])).real * dx)
        return float(np.trace(self.data).real * dx)

    def hermiticity_error(self) -> float:
        d = self.data
        if self.is_dimer:
            comp = d.reshape(2, 2, *d.shape[1:])
            return float(np.max(np.abs(comp - np.conj(np.transpose(comp, (1, 0, 3, 2))))))
        return float(np.max(np.abs(d - d.conj().T)))


def kinetic_energy(grid: Grid1D, hbar_over_mass: float, reduced: bool = False) -> np.ndarray:
    """hbar k^2 / (2 m) in rad/us on the FFT-ordered k grid."""
    factor = 1.0 if reduced else 0.5
    return factor * hbar_over_mass * grid.k**2


def kinetic_commutator(rho, tk):
    """-i (T rho - rho T) along the last two axes."""
    left = np.fft.ifft(tk[:, None] * np.fft.fft(rho, axis=-2), axis=-2)
    right = np.fft.ifft(np.fft.fft(rho, axis=-1) * tk[None, :], axis=-1)
    return -1j * (left - right)


@numba.njit(cache=True)
def _combine(right, rho, k_field, use_k):
    n = rho.shape[0]
    out = np.empty_like(rho)
    for i in range(n):
        for j in range(n):
            v = -1j * (np.conj(right[j, i]) - right[i, j])
            if use_k:
                v += k_field[i, j] * rho[i, j]
            out[i, j] = v
    return out


def kinetic_commutator_hermitian(rho, tk, k_field=None):
    """Same as :func:`kinetic_commutator` for a Hermitian (n, n) matrix, plus
    an optional elementwise term ``k_field * rho``.

    Uses T rho = (rho T)^dagger, which halves the number of transforms and
    keeps the kinetic part exactly anti-Hermitian.
    """
    right = scipy.fft.ifft(scipy.fft.fft(rho, axis=1) * tk, axis=1)
    if k_field is None:
        return _combine(right, rho, rho, False)
    return _combine(right, rho, k_field, True)


def kinetic_flow(rho, tk, t):
    """Exact free evolution exp(-i T t) rho exp(i T t) along the last two axes."""
    phase = np.exp(-1j * tk * t)
    a = scipy.fft.ifft(scipy.fft.fft(rho, axis=-2), axis=-1)
    a *= phase[:, None] * phase.conj()[None, :]
    return scipy.fft.fft(scipy.fft.ifft(a, axis=-2), axis=-1)


def mean_kinetic(rho, grid: Grid1D, tk) -> float:
    """Tr(T rho) for a density matrix normalised as sum_x rho(x, x) dx = 1."""
    a = np.fft.ifft(np.fft.fft(rho, axis=0), axis=1)
    return float(np.sum(tk * np.diagonal(a)).real * grid.dx)


# ---------------------------------------------------------------------------
# single particle


def stable_dt_single(grid: Grid1D, hbar_over_mass: float, k_field=None, safety: float = 0.2) -> float:
    """RK4 step from the spectral radius of kinetic plus kernel terms."""
    tmax = float(kinetic_energy(grid, hbar_over_mass).max())
    kmax = 0.0 if k_field is None else float(np.max(np.abs(k_field)))
    return safety * 2.8 / (2 * tmax + kmax)


def step_single(rho, k_field, tk, dt):
    """One RK4 step. ``k_field`` is the elementwise factor i dE - gamma / 2.

    ``rho`` must be Hermitian and ``k_field`` must satisfy
    K(x, x') = K(x', x)*, so every RK4 stage stays Hermitian.
    """
    def f(r):
        return kinetic_commutator_hermitian(r, tk, k_field)

    k1 = f(rho)
    k2 = f(rho + 0.5 * dt * k1)
    k3 = f(rho + 0.5 * dt * k2)
    k4 = f(rho + dt * k3)
    return rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def pure_state(psi) -> np.ndarray:
    psi = np.asarray(psi, complex)
    return np.outer(psi, psi.conj())


@dataclass
class SingleTrajectory:
    times: np.ndarray
    trace: np.ndarray
    peak: np.ndarray
    width: np.ndarray
    kinetic: np.ndarray
    hermiticity: np.ndarray
    densities: np.ndarray  # (n_out, n)
    final: MotionalDensityMatrix
    dt: float
    snapshots: dict = field(default_factory=dict)


def _single_observables(rho, grid, tk):
    dens = np.diagonal(rho).real
    tr = dens.sum() * grid.dx
    x = grid.x
    mu = np.sum(x * dens) * grid.dx / tr
    var = np.sum((x - mu) ** 2 * dens) * grid.dx / tr
    return tr, dens.max(), np.sqrt(var), mean_kinetic(rho, grid, tk), dens


def propagate_single(rho0, grid: Grid1D, hbar_over_mass: float, t_final: float,
                     k_field=None, dt: Optional[float] = None, out_every: float = 10.0,
                     check_every: int = 100, snapshot_times=()) -> SingleTrajectory:
    """RK4 evolution from ``rho0`` to ``t_final`` with observables every
    ``out_every`` microseconds."""
    tk = kinetic_energy(grid, hbar_over_mass)
    bound = stable_dt_single(grid, hbar_over_mass, k_field, safety=1.0)
    if dt is None:
        dt = 0.2 * bound
    if dt > bound:
        raise ValueError(f"dt={dt:g} exceeds RK4 stability bound {bound:g}")
    steps_per_out = max(1, int(np.ceil(out_every / dt)))
    dt = out_every / steps_per_out
    n_out = int(round(t_final / out_every))
    rho = np.array(rho0, complex)
    rows = [_single_observables(rho, grid, tk)]
    herm = [float(np.max(np.abs(rho - rho.conj().T)))]
    snaps = {}
    step = 0
    for i in range(1, n_out + 1):
        for _ in range(steps_per_out):
            rho = step_single(rho, k_field, tk, dt)
            step += 1
            if step % check_every == 0 and not np.isfinite(rho).all():
                raise NumericalError(f"non-finite density matrix at step {step}")
        t = i * out_every
        if not np.isfinite(rho).all():
            raise NumericalError(f"non-finite density matrix at step {step}")
        rows.append(_single_observables(rho, grid, tk))
        herm.append(float(np.max(np.abs(rho - rho.conj().T))))
        for ts in snapshot_times:
            if abs(ts - t) < 0.5 * out_every:
                snaps[ts] = rho.copy()
    times = out_every * np.arange(n_out + 1)
    tr, pk, wd, ke, dens = (np.array(v) for v in zip(*rows))
    return SingleTrajectory(times, tr, pk, wd, ke, np.array(herm), dens,
                            MotionalDensityMatrix(rho, float(times[-1]), grid), dt, snaps)


def plateau_onset(times, peak, rel_tol: float = 0.02) -> Optional[float]:
    """Earliest time after which the peak density stays within ``rel_tol`` of
    its final value; None if it is still changing at the end."""
    times = np.asarray(times)
    peak = np.asarray(peak)
    final = peak[-1]
    dev = np.abs(peak - final) > rel_tol * final
    if not dev.any():
        return float(times[0])
    last = np.nonzero(dev)[0][-1]
    if last >= len(times) - 2:
        return None
    return float(times[last + 1])


# ---------------------------------------------------------------------------
# dimer


def dipole_matrix(w) -> np.ndarray:
    """(n, 2, 2) coupling W(r) sigma_x."""
    w = np.asarray(w, float)
    m = np.zeros(w.shape + (2, 2))
    m[..., 0, 1] = w
    m[..., 1, 0] = w
    return m


def local_generator(w, kernel_gen) -> np.ndarray:
    """(n, n, 4, 4) per-(r, r') generator of the non-kinetic terms.

    ``kernel_gen`` is (4, 4, n, n) with entries i dE - gamma; it may be None.
    """
    n = len(w)
    wm = dipole_matrix(w)
    eye = np.eye(2)
    g = np.zeros((n, n, 4, 4), complex)
    # -i W(r)_{nk} d_{lm} + i d_{nk} W(r')_{lm}, index nm = 2 n + m, kl = 2 k + l
    left = np.einsum("rnk,lm->rnmkl", wm, eye).reshape(n, 4, 4)
    right = np.einsum("nk,slm->snmkl", eye, wm).reshape(n, 4, 4)
    g += -1j * left[:, None, :, :]
    g += 1j * right[None, :, :, :]
    if kernel_gen is not None:
        g += np.transpose(kernel_gen, (2, 3, 0, 1))
    return g


def dimer_rhs(rho, tk, w, kernel_gen):
    """Right-hand side for the (4, n, n) component array."""
    out = kinetic_commutator(rho, tk)
    r4 = rho.reshape(2, 2, *rho.shape[1:])
    wr = w[:, None]
    wc = w[None, :]
    # dipole coupling with W = W sigma_x: W_nk rho_km picks k = 1 - n
    dip = np.empty_like(r4)
    for i in range(2):
        for j in range(2):
            dip[i, j] = -1j * (wr * r4[1 - i, j] - r4[i, 1 - j] * wc)
    out += dip.reshape(rho.shape)
    if kernel_gen is not None:
        out += np.einsum("abrs,brs->ars", kernel_gen, rho)
    return out


def step_dimer(rho, tk, w, kernel_gen, dt):
    """One classical RK4 step of the dimer equation."""
    if rho.shape[0] != 4 or (kernel_gen is not None and kernel_gen.shape[:2] != (4, 4)):
        raise ValueError("component shape mismatch")
    k1 = dimer_rhs(rho, tk, w, kernel_gen)
    k2 = dimer_rhs(rho + 0.5 * dt * k1, tk, w, kernel_gen)
    k3 = dimer_rhs(rho + 0.5 * dt * k2, tk, w, kernel_gen)
    k4 = dimer_rhs(rho + dt * k3, tk, w, kernel_gen)
    return rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


@numba.njit(cache=True)
def _apply_local(local, rho, mask):
    """out[:, r, s] = local[r, s] @ rho[:, r, s] * mask[r] * mask[s].

    Also returns the trace sum_r (out_11 + out_22)(r, r) before masking.
    """
    n = rho.shape[1]
    out = np.empty_like(rho)
    before = 0.0
    for r in range(n):
        for s in range(n):
            m = mask[r] * mask[s]
            for a in range(4):
                acc = 0j
                for b in range(4):
                    acc += local[r, s, a, b] * rho[b, r, s]
                if r == s and (a == 0 or a == 3):
                    before += acc.real
                out[a, r, s] = acc * m
    return out, before


class SplitStepDimer:
    """Strang splitting: half kinetic flow, exact local flow, half kinetic flow.

    The local flow exp(G(r, r') dt) is computed once per (r, r') with a
    batched matrix exponential; the kinetic flow is exact in k-space.
    Consecutive half kinetic flows are merged by :meth:`advance`.
    """

    def __init__(self, grid: Grid1D, tk, w, kernel_gen, dt: float, absorb=None, chunk: int = 8192):
        self.grid, self.tk, self.dt = grid, tk, dt
        n = grid.n
        g = local_generator(w, kernel_gen).reshape(-1, 4, 4) * dt
        prop = np.empty_like(g)
        for s in range(0, len(g), chunk):
            prop[s:s + chunk] = scipy.linalg.expm(g[s:s + chunk])
        self.local = prop.reshape(n, n, 4, 4)
        # per-step factor m(r) applied as m(r) m(r')
        self.absorb = np.ones(n) if absorb is None else np.asarray(absorb, float)
        self.absorbed = 0.0

    def step(self, rho):
        return self.advance(rho, 1)

    def advance(self, rho, n_steps: int):
        """``n_steps`` Strang steps; absorbed norm is accumulated."""
        rho = kinetic_flow(rho, self.tk, 0.5 * self.dt)
        for i in range(n_steps):
            rho, before = _apply_local(self.local, rho, self.absorb)
            self.absorbed += before * self.grid.dx - _trace(rho, self.grid)
            rho = kinetic_flow(rho, self.tk, self.dt if i < n_steps - 1 else 0.5 * self.dt)
        return rho


def absorbing_profile(grid: Grid1D, rate: float, fraction: float = 0.1) -> np.ndarray:
    """Absorption rate eta(r): zero inside, sin^2 ramp to ``rate`` over the
    outer ``fraction`` of the grid at both ends."""
    x = grid.x
    width = fraction * (grid.max - grid.min)
    lo = np.clip((grid.min + width - x) / width, 0, 1)
    hi = np.clip((x - (grid.max - width)) / width, 0, 1)
    return rate * np.sin(0.5 * np.pi * np.maximum(lo, hi)) ** 2


def absorbing_boundary(rho, mask, grid: Grid1D):
    """Multiply by mask(x) mask(x') and return (rho, absorbed trace)."""
    m2 = mask[:, None] * mask[None, :]
    before = _trace(rho, grid)
    rho = rho * m2
    return rho, before - _trace(rho, grid)


def _trace(rho, grid):
    if rho.ndim == 3:
        return float((np.trace(rho[0]) + np.trace(rho[3])).real * grid.dx)
    return float(np.trace(rho).real * grid.dx)


@dataclass
class SurfaceDensities:
    r: np.ndarray
    n_rep: np.ndarray
    n_att: np.ndarray
    p_rep: float
    p_att: float
    n_rep_literal: Optional[np.ndarray] = None
    n_att_literal: Optional[np.ndarray] = None


def surface_densities(rho, grid: Grid1D, literal: bool = False) -> SurfaceDensities:
    """Populations on the repulsive and attractive surfaces.

    The primary form is diagonal in r: n_rep(r) = <phi_rep| rho(r, r) |phi_rep>.
    With ``literal`` the r'-integrated variant is also returned (complex).
    """
    d = np.stack([np.diagonal(c) for c in rho])  # (4, n)
    s = 0.5 * (d[0] + d[3])
    c = 0.5 * (d[1] + d[2])
    n_rep = (s + c).real
    n_att = (s - c).real
    dx = grid.dx
    out = SurfaceDensities(grid.x, n_rep, n_att, float(n_rep.sum() * dx), float(n_att.sum() * dx))
    if literal:
        integ = rho.sum(axis=2) * dx
        out.n_rep_literal = 0.5 * (integ[0] + integ[3] + integ[1] + integ[2])
        out.n_att_literal = 0.5 * (integ[0] + integ[3] - integ[1] - integ[2])
    return out


def dimer_initial_state(grid: Grid1D, center: float, sigma: float, surface: str = "repulsive"):
    from .params import gaussian

    psi = gaussian(grid, center, sigma)
    # unit trace on the grid even when the tails are clipped
    psi = psi / np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
    phi = {"repulsive": PHI_REP, "attractive": PHI_ATT, "bare-state": np.array([1.0, 0.0])}[surface]
    rho = np.einsum("n,m,r,s->nmrs", phi, phi.conj(), psi, psi.conj())
    return rho.reshape(4, grid.n, grid.n).astype(complex)


@dataclass
class DimerTrajectory:
    times: np.ndarray
    trace: np.ndarray
    p_rep: np.ndarray
    p_att: np.ndarray
    mean_r_rep: np.ndarray
    absorbed: np.ndarray
    hermiticity: np.ndarray
    n_rep: np.ndarray  # (n_out, n)
    n_att: np.ndarray
    grid: Grid1D
    final: np.ndarray
    dt: float
    # max |n_rep(literal) - n_rep(diagonal)| / max n_rep at each output
    literal_gap: Optional[np.ndarray] = None


class UnderResolvedError(NumericalError):
    """The grid cannot represent the momenta the dynamics will reach."""


def required_wavenumber(grid: Grid1D, hbar_over_mass: float, potential, start: float,
                        reduced: bool = True, interior: float = 0.1) -> float:
    """Largest classical wavenumber reached when released at rest at ``start``.

    Energy conservation on ``potential`` (rad/us, sampled on the grid) gives
    k(r) = sqrt((U(start) - U(r)) / c) with T = c k^2. Only the region
    outside the absorbing layers (outer ``interior`` fraction) is considered.
    """
    x = grid.x
    u = np.asarray(potential, float)
    width = interior * (grid.max - grid.min)
    sel = (x >= grid.min + width) & (x <= grid.max - width)
    c = hbar_over_mass if reduced else 0.5 * hbar_over_mass
    e0 = float(np.interp(start, x, u))
    return float(np.sqrt(np.max(np.clip(e0 - u[sel], 0.0, None)) / c))


def nyquist_wavenumber(grid: Grid1D) -> float:
    return float(np.pi / grid.dx)


def propagate_dimer(rho0, grid: Grid1D, tk, w, kernel_gen, t_final: float, dt: float,
                    out_every: float = 0.5, absorb_rate: float = 20.0,
                    absorb_fraction: float = 0.1) -> DimerTrajectory:
    """Split-step evolution with an absorbing boundary and per-output observables."""
    steps_per_out = max(1, int(np.ceil(out_every / dt)))
    dt = out_every / steps_per_out
    n_out = int(round(t_final / out_every))
    eta = absorbing_profile(grid, absorb_rate, absorb_fraction)
    mask = np.exp(-0.5 * eta * dt)
    prop = SplitStepDimer(grid, tk, w, kernel_gen, dt, absorb=mask)
    rho = np.array(rho0, complex)
    rec = []

    def record(rho):
        sd = surface_densities(rho, grid, literal=True)
        gap = np.max(np.abs(sd.n_rep_literal - sd.n_rep)) / max(np.max(sd.n_rep), 1e-300)
        mr = float(np.sum(grid.x * sd.n_rep) / max(np.sum(sd.n_rep), 1e-300))
        m = MotionalDensityMatrix(rho, 0.0, grid)
        rec.append((m.trace(), sd.p_rep, sd.p_att, mr, prop.absorbed, m.hermiticity_error(),
                    sd.n_rep, sd.n_att, gap))

    record(rho)
    for i in range(n_out):
        rho = prop.advance(rho, steps_per_out)
        if not np.isfinite(rho).all():
            raise NumericalError(f"non-finite dimer state after output {i + 1}")
        record(rho)
    cols = list(zip(*rec))
    times = out_every * np.arange(n_out + 1)
    return DimerTrajectory(times, np.array(cols[0]), np.array(cols[1]), np.array(cols[2]),
                           np.array(cols[3]), np.array(cols[4]), np.array(cols[5]),
                           np.array(cols[6]), np.array(cols[7]), grid, rho, dt,
                           np.array(cols[8]))


def analysis_index(traj: DimerTrajectory, r_boundary: float) -> int:
    """Output index of the inner turning point of the reflected packet.

    Uses <r> of the repulsive density restricted to r < r_boundary: the first
    local minimum after its first local maximum. Falls back to the last
    sample when no turning point occurs.
    """
    sel = traj.grid.x < r_boundary
    w = traj.n_rep[:, sel]
    mr = np.sum(w * traj.grid.x[sel], axis=1) / np.maximum(np.sum(w, axis=1), 1e-300)
    v = np.diff(mr)
    seen_max = False
    for i in range(1, len(v)):
        if not seen_max and v[i - 1] > 0 >= v[i]:
            seen_max = True
        elif seen_max and v[i - 1] < 0 <= v[i]:
            return i
    return len(mr) - 1


def reflection_probability(traj: DimerTrajectory, r_boundary: float, index: Optional[int] = None,
                           t_min: float = 0.0):
    """P_rep integrated over r < r_boundary at the analysis time.

    Returns (probability, time).
    """
    if traj.times[-1] < t_min:
        raise ValueError(f"trajectory ends at {traj.times[-1]} < {t_min}")
    i = analysis_index(traj, r_boundary) if index is None else index
    sel = traj.grid.x < r_boundary
    return float(traj.n_rep[i, sel].sum() * traj.grid.dx), float(traj.times[i])
