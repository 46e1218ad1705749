"""Dephasing and disorder kernels summed over a static background gas.

Single particle, for rho(x, x'):

    drho/dt = ... + (i dE(x, x') - gamma(x, x') / 2) rho
    gamma   = sum_a |l_a(x) - l_a(x')|^2
    dE'     = h~(x') - h~(x),       h~ = sum_a h_a + V_ext
    dE''    = sum_a Im[l_a(x) l_a(x')*]

Dimer, for components rho_nm(r, r') with n, m in {1, 2}:

    drho_nm/dt = ... + sum_kl (i dE^{nm}_{kl} - gamma^{nm}_{kl}) rho_kl

with K = C + K_h, gamma = -Re K and dE = Im K, where

    C^{nm}_{kl}(r, r') = sum_a l_nk(r) l_ml(r')* - 1/2 d_lm A_nk(r) - 1/2 d_nk A_lm(r')
    A = sum_a l^dagger l
    K_h^{nm}_{kl}(r, r') = -i H_nk(r) d_lm + i d_nk H_lm(r')

and H = sum_a h_shift. The dipole coupling W(r) is applied by the propagator.
Component arrays are stored as [nm, kl, r, r'] with nm = 2 n + m (zero based).
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numba
import numpy as np

from .effective import (closed_form_single, dimer_operators_batch, dimer_shifts, find_resonances,
                        resolvent_strength, single_atom_potential)
from .params import BackgroundGas, EitParams, Grid1D, InteractionParams, TWO_PI
from .parallel import parallel_map, single_threaded_blas

logger = logging.getLogger(__name__)

COMPONENTS = ((0, 0), (0, 1), (1, 0), (1, 1))


# ---------------------------------------------------------------------------
# single particle


@numba.njit(cache=True, parallel=False)
def _pair_sums(lr, li):
    """gamma and sum Im[l(x) l(x')*] with a fixed summation order.

    Only i < j is evaluated; the mirror entries are copies, which makes the
    zero diagonal and the (anti)symmetry exact.
    """
    n, m = lr.shape
    gam = np.zeros((n, n))
    imc = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            g = 0.0
            p = 0.0
            for a in range(m):
                dr = lr[i, a] - lr[j, a]
                di = li[i, a] - li[j, a]
                g += dr * dr + di * di
                p += li[i, a] * lr[j, a] - lr[i, a] * li[j, a]
            gam[i, j] = g
            gam[j, i] = g
            imc[i, j] = p
            imc[j, i] = -p
    return gam, imc


@dataclass(frozen=True)
class ExternalPotential:
    """Even polynomial a + b x^2 + c x^4 + d x^6 + e x^8 (rad/us, x in um).

    Outside ``window`` the polynomial is held at its value on the window edge
    so that the high powers cannot run away on wide grids.
    """

    coefficients: tuple
    window: float = np.inf
    residual: float = 0.0

    def __call__(self, x):
        xc = np.clip(np.asarray(x, float), -self.window, self.window)
        return sum(c * xc ** (2 * j) for j, c in enumerate(self.coefficients))

    @property
    def coefficients_mhz_over_2pi(self) -> tuple:
        return tuple(c / TWO_PI for c in self.coefficients)


def fit_vext(x, h_eff, window: Optional[float] = None, powers=(0, 2, 4, 6, 8),
             max_cond: float = 1e12) -> ExternalPotential:
    """Least-squares even polynomial fit of ``-h_eff`` on ``|x| <= window``.

    The basis is built in the scaled variable u = x / x_max so the design
    matrix stays well conditioned; coefficients are converted back to powers
    of x afterwards. ``residual`` is the RMS of V_ext + h_eff over the fitted
    samples.
    """
    x = np.asarray(x, float)
    h_eff = np.asarray(h_eff, float)
    sel = np.ones_like(x, bool) if window is None else np.abs(x) <= window
    if sel.sum() < 50:
        raise ValueError("need at least 50 samples inside the fit window")
    xs, ys = x[sel], -h_eff[sel]
    scale = np.max(np.abs(xs))
    for u_scale in (scale, 1.0):
        design = np.stack([(xs / u_scale) ** p for p in powers], axis=1)
        if np.linalg.cond(design) < max_cond:
            break
    else:
        raise np.linalg.LinAlgError("ill-conditioned V_ext fit")
    coef_u, *_ = np.linalg.lstsq(design, ys, rcond=None)
    coef = tuple(float(c / u_scale**p) for c, p in zip(coef_u, powers))
    win = np.inf if window is None else float(window)
    pot = ExternalPotential(coef, win)
    resid = float(np.sqrt(np.mean((pot(xs) - ys) ** 2)))
    return ExternalPotential(coef, win, resid)


@dataclass
class KernelSet1:
    grid: Grid1D
    gamma: np.ndarray
    delta_e_prime: np.ndarray
    delta_e_dblprime: np.ndarray
    h_eff: np.ndarray  # sum over the gas, without V_ext
    vext: Optional[ExternalPotential] = None
    meta: dict = field(default_factory=dict)

    @property
    def delta_e(self) -> np.ndarray:
        return self.delta_e_prime + self.delta_e_dblprime

    def generator(self, dephasing=True, disorder=True) -> np.ndarray:
        """Elementwise factor K in drho/dt = kinetic + K rho."""
        k = np.zeros(self.gamma.shape, complex)
        if disorder:
            k += 1j * self.delta_e
        if dephasing:
            k -= 0.5 * self.gamma
        return k

    def check(self):
        g = self.gamma
        problems = []
        if np.any(np.diag(g) != 0):
            problems.append("gamma diagonal nonzero")
        if np.any(g < 0):
            problems.append("gamma negative")
        if np.any(g != g.T):
            problems.append("gamma not symmetric")
        if np.any(self.delta_e_prime != -self.delta_e_prime.T):
            problems.append("dE' not antisymmetric")
        if np.any(self.delta_e_dblprime != -self.delta_e_dblprime.T):
            problems.append("dE'' not antisymmetric")
        if problems:
            raise AssertionError("; ".join(problems))


def single_operators(x, gas: BackgroundGas, eit: EitParams, inter: InteractionParams):
    """h(x, alpha) and l(x, alpha) of shape (n_x, N_bg)."""
    return closed_form_single(single_atom_potential(x, gas.positions, inter), eit)


def build_kernels_single(gas: BackgroundGas, grid: Grid1D, eit: EitParams,
                         inter: InteractionParams, vext: Union[None, str, ExternalPotential] = "fit",
                         vext_window: float = 2.0) -> KernelSet1:
    """Kernels for one Rydberg atom moving along x.

    ``vext="fit"`` fits the compensation potential to the gas-induced h_eff on
    ``|x| <= vext_window``; pass an :class:`ExternalPotential` to use given
    coefficients or ``None`` to leave h_eff uncompensated.
    """
    x = grid.x
    h, ell = single_operators(x, gas, eit, inter)
    h_sum = h.sum(axis=1)
    lr = np.ascontiguousarray(ell.real)
    li = np.ascontiguousarray(ell.imag)
    gamma, imc = _pair_sums(lr, li)
    if isinstance(vext, str):
        if vext != "fit":
            raise ValueError(f"unknown vext mode {vext!r}")
        vext = fit_vext(x, h_sum, vext_window)
    h_tot = h_sum + (vext(x) if vext is not None else 0.0)
    de1 = h_tot[None, :] - h_tot[:, None]
    meta = {"n_background": len(gas), "seed": gas.seed}
    return KernelSet1(grid, gamma, de1, imc, h_sum, vext, meta)


def inspect_slice(ks: KernelSet1, eps: float = 0.15):
    """gamma(x, x + eps) by linear interpolation along x'."""
    x = ks.grid.x
    xp = x + eps
    ok = xp <= x[-1]
    out = np.empty(ok.sum())
    for i in np.nonzero(ok)[0]:
        out[i] = np.interp(xp[i], x, ks.gamma[i])
    return x[ok], out


# ---------------------------------------------------------------------------
# dimer


@dataclass(frozen=True)
class ResonanceMask:
    """Radial window in which effective operators are frozen to their value
    at the upper edge."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("mask window needs hi > lo")

    def apply(self, r):
        r = np.asarray(r, float)
        return np.where((r >= self.lo) & (r <= self.hi), self.hi, r)


def resonance_radii(eit: EitParams, inter: InteractionParams, r, probe_shift: float = 0.1) -> list:
    """Radii where (H_NH - E_l) comes close to singular.

    A weakly shifted atom (|u> shift ``probe_shift * Omega_c`` next to one
    dimer atom only) breaks the exchange symmetry that otherwise hides the
    crossing of 2W(r) with the EIT dressed states; peaks of the resolvent
    along ``r`` are returned.
    """
    r = np.asarray(r, float)
    w = inter.c3_dd / r**3
    strength = resolvent_strength(probe_shift * eit.omega_c, 0.0, w, eit)
    return find_resonances(r, strength, prominence=3.0)


def default_mask(eit: EitParams, inter: InteractionParams, grid: Grid1D,
                 half_width: float = 0.5) -> Optional[ResonanceMask]:
    fine = np.linspace(max(grid.min, 0.5), grid.max, 4000)
    radii = resonance_radii(eit, inter, fine)
    if not radii:
        return None
    # the two exchange sectors give neighbouring peaks; centre on their midpoint
    near = [x for x in radii if radii[-1] - x < 2 * half_width]
    rc = 0.5 * (near[0] + near[-1])
    return ResonanceMask(rc - half_width, rc + half_width)


def dimer_operator_grid(r, gas: BackgroundGas, eit: EitParams, inter: InteractionParams,
                        mask: Optional[ResonanceMask] = None, center=(0.0, 0.0, 0.0),
                        chunk: int = 32):
    """(h_shift, l) of shape (n_r, N_bg, 2, 2) with the mask applied."""
    r = np.asarray(r, float)
    r_eval = mask.apply(r) if mask is not None else r
    n_bg = len(gas)
    h = np.empty((len(r), n_bg, 2, 2), complex)
    ell = np.empty((len(r), n_bg, 2, 2), complex)
    for s in range(0, len(r), chunk):
        rr = r_eval[s:s + chunk]
        v1, v2 = dimer_shifts(rr, gas.positions, inter, center)
        w = (inter.c3_dd / rr**3)[:, None]
        where = np.broadcast_to(rr[:, None], v1.shape)
        h[s:s + chunk], ell[s:s + chunk] = dimer_operators_batch(v1, v2, w, eit, where=where)
    return h, ell


def _tiled_gram(mat, tile: int = 256, threads=None):
    """mat @ mat^H computed on fixed row tiles; identical for any ``threads``."""
    n = mat.shape[0]
    out = np.empty((n, n), complex)
    rhs = np.ascontiguousarray(mat.conj().T)
    starts = list(range(0, n, tile))

    def one(s):
        out[s:s + tile] = mat[s:s + tile] @ rhs

    parallel_map(one, starts, threads)
    return 0.5 * (out + out.conj().T)


@dataclass
class KernelSet2:
    grid: Grid1D
    gamma: np.ndarray  # (4, 4, n, n), [nm, kl, r, r']
    delta_e: np.ndarray  # (4, 4, n, n)
    o_tensor: Optional[np.ndarray]
    h_sum: np.ndarray  # (n, 2, 2) background-induced shift
    c3: float
    mask: Optional[ResonanceMask] = None
    meta: dict = field(default_factory=dict)

    @property
    def w(self) -> np.ndarray:
        return self.c3 / self.grid.x**3

    def diagonal(self, nm=1, kl=1) -> np.ndarray:
        return np.diagonal(self.gamma[nm, kl]).copy()

    def coherence_decay(self) -> np.ndarray:
        """kappa(r): decay rate of rho_12 for the repulsive state, i.e. the
        sum over kl of gamma^{12}_{kl}(r, r) weighted by rho_kl = 1/2."""
        return np.diagonal(self.gamma[1].sum(axis=0)).copy()

    def component_scale(self) -> np.ndarray:
        """(4, 4) array of max |gamma^{nm}_{kl}(r, r')| over the grid."""
        return np.abs(self.gamma).max(axis=(2, 3))

    def dominant_pattern(self, rel: float = 0.1) -> np.ndarray:
        """0/1 mask of components whose scale reaches ``rel`` times the
        largest component."""
        scale = self.component_scale()
        return (scale >= rel * scale.max()).astype(float)

    def generator(self, disorder=True, dephasing=True, dominant_only=False) -> np.ndarray:
        """Complex coefficient array i dE - gamma, shape (4, 4, n, n)."""
        g = self.gamma.copy() if dephasing else np.zeros_like(self.gamma)
        if dominant_only and dephasing:
            g *= self.dominant_pattern()[:, :, None, None]
        out = -g.astype(complex)
        if disorder:
            out += 1j * self.delta_e
        return out


_SURFACE_BASIS = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)  # columns: rep, att


def surface_diagonal_part(ops) -> np.ndarray:
    """Keep only the rep/rep and att/att entries of 2x2 operators given in the
    pi basis (trailing axes)."""
    u = _SURFACE_BASIS
    m = u.T @ ops @ u
    m[..., 0, 1] = 0.0
    m[..., 1, 0] = 0.0
    return u @ m @ u.T


def build_kernels_dimer(gas: BackgroundGas, grid: Grid1D, eit: EitParams, inter: InteractionParams,
                        mask: Union[None, str, ResonanceMask] = "auto", center=(0.0, 0.0, 0.0),
                        threads=None, keep_o: bool = True,
                        surface_diagonal: bool = False) -> KernelSet2:
    """Assemble the dimer kernel tensors on the (r, r') grid.

    With ``surface_diagonal`` every jump operator is first reduced to its
    diagonal part in the repulsive/attractive basis, which removes incoherent
    transfer between the two surfaces while keeping the model in Lindblad
    form.
    """
    if isinstance(mask, str):
        if mask != "auto":
            raise ValueError(f"unknown mask mode {mask!r}")
        mask = default_mask(eit, inter, grid)
    r = grid.x
    n = grid.n
    h, ell = dimer_operator_grid(r, gas, eit, inter, mask, center)
    if surface_diagonal:
        ell = surface_diagonal_part(ell)
    with single_threaded_blas():
        h_sum = h.sum(axis=1)
        a = np.einsum("rajn,rajk->rnk", ell.conj(), ell)
    a = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    h_sum = 0.5 * (h_sum + np.conj(np.swapaxes(h_sum, -1, -2)))
    # rows indexed by (nk, r); columns by background atom
    stack = np.ascontiguousarray(np.transpose(ell, (2, 3, 0, 1)).reshape(4 * n, len(gas)))
    with single_threaded_blas():
        gram = _tiled_gram(stack, threads=threads).reshape(2, 2, n, 2, 2, n)
    del stack
    # gram[n, k, r, m, l, r'] = sum_a l_nk(r) l_ml(r')*
    c = np.empty((2, 2, 2, 2, n, n), complex)  # [n, m, k, l, r, r']
    for i, j in np.ndindex(2, 2):
        for k, l in np.ndindex(2, 2):
            blk = gram[i, k, :, j, l, :].copy()
            if l == j:
                blk -= 0.5 * a[:, i, k][:, None]
            if i == k:
                blk -= 0.5 * a[:, l, j][None, :]
            c[i, j, k, l] = blk
    del gram
    o = -np.conj(c).reshape(4, 4, n, n)
    del c
    gamma = o.real.copy()
    de = o.imag.copy()
    # coherent part -i[h, rho]; a complex Hermitian h also feeds the real part
    for i, j in np.ndindex(2, 2):
        for k, l in np.ndindex(2, 2):
            if l == j:
                de[2 * i + j, 2 * k + l] -= h_sum[:, i, k].real[:, None]
                gamma[2 * i + j, 2 * k + l] -= h_sum[:, i, k].imag[:, None]
            if i == k:
                de[2 * i + j, 2 * k + l] += h_sum[None, :, l, j].real
                gamma[2 * i + j, 2 * k + l] += h_sum[None, :, l, j].imag
    meta = {"n_background": len(gas), "seed": gas.seed,
            "w_over_gamma_max": float(np.max(np.abs(inter.c3_dd / r**3)) / eit.gamma_p),
            "mask": None if mask is None else [mask.lo, mask.hi],
            "surface_diagonal": bool(surface_diagonal)}
    return KernelSet2(grid, gamma, de, o if keep_o else None, h_sum, inter.c3_dd, mask, meta)


def coherence_decay(ell) -> np.ndarray:
    """Local decay rate of the pi_1/pi_2 coherence of the repulsive state.

    ``ell`` has shape (n_r, N_bg, 2, 2). Returns
    kappa(r) = -2 Re <pi_1| sum_a D[l_a](|rep><rep|) |pi_2>, the rate at
    which the background learns which dimer atom carries the p excitation.
    Jump operators proportional to sigma_x commute with the dipole coupling
    and drop out, unlike in the single component gamma^{12}_{12}(r, r).
    """
    rho = np.full((2, 2), 0.5)
    lr = np.einsum("rank,kl->ranl", ell, rho)
    jump = np.einsum("ranl,raml->rnm", lr, ell.conj())
    a = np.einsum("rajn,rajk->rnk", ell.conj(), ell)
    anti = a @ rho + rho @ a
    d = jump - 0.5 * anti
    return -2.0 * d[:, 0, 1].real


def diagonal_profile(r, gas: BackgroundGas, eit: EitParams, inter: InteractionParams,
                     mask: Union[None, str, ResonanceMask] = "auto", center=(0.0, 0.0, 0.0),
                     grid: Optional[Grid1D] = None, component: bool = False):
    """Coherence decay rate kappa(r) along the diagonal, without building the
    full tensor. With ``component`` the single entry gamma^{12}_{12}(r, r)
    is returned instead."""
    r = np.asarray(r, float)
    if isinstance(mask, str):
        g = grid or Grid1D(float(r.min()), float(r.max()) + (r[1] - r[0]), 2 ** int(np.ceil(np.log2(len(r)))))
        mask = default_mask(eit, inter, g)
    _, ell = dimer_operator_grid(r, gas, eit, inter, mask, center)
    if not component:
        return coherence_decay(ell)
    a = np.einsum("rajn,rajk->rnk", ell.conj(), ell).real
    cross = np.sum(ell[:, :, 0, 0] * ell[:, :, 1, 1].conj(), axis=1).real
    return 0.5 * (a[:, 0, 0] + a[:, 1, 1]) - cross


def detect_rc(source, threshold: float = 0.1, r=None) -> float:
    """Largest radius below which the decay profile stays under
    ``threshold`` times its maximum (linear interpolation at the crossing).

    ``source`` is a KernelSet2 (its kappa diagonal is used) or a profile
    sampled on ``r``.
    """
    if isinstance(source, KernelSet2):
        r = source.grid.x
        prof = source.coherence_decay()
    else:
        prof = np.asarray(source, float)
        if r is None:
            raise ValueError("profile needs its r grid")
        r = np.asarray(r, float)
    peak = float(np.max(prof))
    if not peak > 0:
        raise ValueError("no dephasing peak found")
    level = threshold * peak
    above = np.nonzero(prof >= level)[0]
    i = int(above[0])
    if i == 0:
        raise ValueError("profile exceeds the threshold at the inner grid edge")
    x0, x1, y0, y1 = r[i - 1], r[i], prof[i - 1], prof[i]
    return float(x0 + (level - y0) * (x1 - x0) / (y1 - y0))


# ---------------------------------------------------------------------------
# disk cache


def _config_digest(meta: dict) -> str:
    return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()


def save_kernels(path, ks: Union[KernelSet1, KernelSet2], header: Optional[dict] = None) -> Path:
    """Write arrays to ``path`` (npz) and a JSON sidecar ``path.json``."""
    path = Path(path)
    g = ks.grid
    side = {"grid": [g.min, g.max, g.n], "meta": ks.meta, "header": header or {}}
    if isinstance(ks, KernelSet1):
        side["kind"] = "single"
        arrays = dict(gamma=ks.gamma, delta_e_prime=ks.delta_e_prime,
                      delta_e_dblprime=ks.delta_e_dblprime, h_eff=ks.h_eff)
        if ks.vext is not None:
            side["vext"] = {"coefficients": list(ks.vext.coefficients), "window": ks.vext.window,
                            "residual": ks.vext.residual}
    else:
        side["kind"] = "dimer"
        side["c3"] = ks.c3
        side["mask"] = None if ks.mask is None else [ks.mask.lo, ks.mask.hi]
        arrays = dict(gamma=ks.gamma, delta_e=ks.delta_e, h_sum=ks.h_sum)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    side["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=float))
    return path


def load_kernels(path) -> Union[KernelSet1, KernelSet2]:
    path = Path(path)
    side = json.loads(Path(str(path) + ".json").read_text())
    data = np.load(path)
    grid = Grid1D(*side["grid"])
    if side["kind"] == "single":
        vext = None
        if "vext" in side:
            v = side["vext"]
            vext = ExternalPotential(tuple(v["coefficients"]), v["window"], v["residual"])
        return KernelSet1(grid, data["gamma"], data["delta_e_prime"], data["delta_e_dblprime"],
                          data["h_eff"], vext, side["meta"])
    mask = None if side["mask"] is None else ResonanceMask(*side["mask"])
    return KernelSet2(grid, data["gamma"], data["delta_e"], None, data["h_sum"], side["c3"], mask,
                      side["meta"])
