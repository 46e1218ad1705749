"""Adiabatic elimination of a background atom's {e, u} sector.

For one background atom alpha and N Rydberg atoms the excited sector is
spanned by {|e>, |u>} x {|pi_n>}; basis order is all |e, pi_n> first, then
all |u, pi_n>. The ground sector is |g> x {|pi_n>} with Hamiltonian H_g given
by the dipole-dipole couplings. With the eigen-decomposition
H_g = sum_l E_l P_l and the probe coupling V_+ = (Omega_p/2)|e><g| x 1,

    H_eff = -1/2 [V_- sum_l (H_NH - E_l)^-1 V_+ P_l + h.c.] + H_g
    L_eff = sqrt(Gamma_p) |g><e| sum_l (H_NH - E_l)^-1 V_+ P_l

which are N x N matrices over {|pi_n>}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import EitParams, InteractionParams, dimer_positions


class NearResonanceError(ArithmeticError):
    """(H_NH - E_l) is numerically singular."""

    def __init__(self, message, energy=None, where=None):
        super().__init__(message)
        self.energy = energy
        self.where = where


#: relative size of |(H_NH - E_l)^-1| beyond which a solve is rejected
RESONANCE_GUARD = 1e10


@dataclass(frozen=True)
class GroundEigenbasis:
    energies: np.ndarray  # (N,)
    vectors: np.ndarray  # columns are |phi_l> in the {pi_n} basis

    @property
    def projectors(self) -> np.ndarray:
        v = self.vectors
        return np.einsum("il,jl->lij", v, v.conj())


@dataclass(frozen=True)
class EffectiveAtomOperators:
    """Effective operators of one background atom for one Rydberg configuration.

    ``h_eff`` includes the ground-sector Hamiltonian ``h_g``; the background
    contribution alone is ``h_shift``.
    """

    h_eff: np.ndarray
    l_eff: np.ndarray
    h_g: np.ndarray

    @property
    def h_shift(self) -> np.ndarray:
        return self.h_eff - self.h_g


def ground_eigenbasis(h_g) -> GroundEigenbasis:
    h_g = np.asarray(h_g)
    energies, vectors = np.linalg.eigh(h_g)
    return GroundEigenbasis(energies, vectors)


def dimer_ground_hamiltonian(w: float) -> np.ndarray:
    return np.array([[0.0, w], [w, 0.0]])


def dimer_eigenbasis(w: float) -> GroundEigenbasis:
    """Eigenbasis of [[0, W], [W, 0]]: E = -W, +W with (pi1 -/+ pi2)/sqrt 2."""
    s = 1 / np.sqrt(2)
    return GroundEigenbasis(np.array([-w, w]), np.array([[s, s], [-s, s]]))


def non_hermitian_block(v_shift, h_g, eit: EitParams) -> np.ndarray:
    """H_NH for one background atom, a 2N x 2N complex matrix.

    ``v_shift[n]`` is the interaction energy of |u, pi_n>; detunings and the
    -i Gamma_p / 2 of |e> are added here.
    """
    v_shift = np.atleast_1d(np.asarray(v_shift, float))
    h_g = np.atleast_2d(np.asarray(h_g))
    n = len(v_shift)
    h = np.zeros((2 * n, 2 * n), complex)
    eye = np.eye(n)
    h[:n, :n] = h_g + (-eit.delta_p - 0.5j * eit.gamma_p) * eye
    h[n:, n:] = h_g + np.diag(v_shift - eit.delta_p - eit.delta_c)
    h[:n, n:] = 0.5 * eit.omega_c * eye
    h[n:, :n] = 0.5 * eit.omega_c * eye
    return h


def _check_solution(z, scale, energy=None, where=None):
    bad = ~np.isfinite(z).all(axis=-1) | (np.abs(z).max(axis=-1) * scale > RESONANCE_GUARD)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        e = None if energy is None else np.asarray(energy)[tuple(idx)] if np.ndim(energy) else energy
        raise NearResonanceError(
            f"(H_NH - E_l) is near singular (E_l = {e})", energy=e,
            where=None if where is None else np.asarray(where)[tuple(idx)] if np.ndim(where) else where)


def effective_operators(v_shift, h_g, eit: EitParams) -> EffectiveAtomOperators:
    """Generic effective operators for N Rydberg atoms and one background atom."""
    h_g = np.atleast_2d(np.asarray(h_g, float))
    n = h_g.shape[0]
    basis = ground_eigenbasis(h_g)
    h_nh = non_hermitian_block(v_shift, h_g, eit)
    scale = max(eit.gamma_p, eit.omega_c)
    # excitation amplitudes sum_l (H_NH - E_l)^-1 V_+ P_l restricted to the |e> rows
    y = np.zeros((n, n), complex)
    for energy, phi in zip(basis.energies, basis.vectors.T):
        rhs = np.concatenate([phi, np.zeros(n)]).astype(complex)
        try:
            z = np.linalg.solve(h_nh - energy * np.eye(2 * n), rhs)
        except np.linalg.LinAlgError as exc:
            raise NearResonanceError(f"singular H_NH - E_l at E_l = {energy}", energy=energy) from exc
        _check_solution(z, scale, energy)
        y += np.outer(z[:n], phi.conj())
    x = (0.5 * eit.omega_p) ** 2 * y
    h_eff = -0.5 * (x + x.conj().T) + h_g
    l_eff = np.sqrt(eit.gamma_p) * 0.5 * eit.omega_p * y
    return EffectiveAtomOperators(h_eff, l_eff, h_g)


def closed_form_single(v, eit: EitParams):
    """Single Rydberg atom: (h_eff, l_eff) for interaction energy ``v`` of |u>.

    Vectorised over ``v``. Uses V~ = V - Delta_p - Delta_c,
    Omega~_c^2 = Omega_c^2 + 4 V~ Delta_p and Gamma~_p = Gamma_p - 2i Delta_p.
    """
    v = np.asarray(v, float)
    dp = eit.delta_p
    vt = v - dp - eit.delta_c
    oc2 = eit.omega_c**2 + 4 * vt * dp
    gt = eit.gamma_p - 2j * dp
    den_h = oc2**2 + 4 * vt**2 * (abs(gt) ** 2 - 4 * dp**2)
    den_l = 2 * vt * gt - 1j * eit.omega_c**2
    if np.any(den_h == 0) or np.any(den_l == 0):
        raise NearResonanceError("vanishing denominator in single-atom closed form")
    h = eit.omega_p**2 * oc2 * vt / den_h
    ell = 2j * vt * np.sqrt(eit.gamma_p) * eit.omega_p / den_l
    return h, ell


def single_atom_potential(x, positions, inter: InteractionParams) -> np.ndarray:
    """V^(us) of a Rydberg atom at (x, 0, 0) for every background atom.

    Returns shape ``x.shape + (N_bg,)``.
    """
    x = np.asarray(x, float)
    pos = np.asarray(positions, float)
    d2 = (x[..., None] - pos[:, 0]) ** 2 + pos[:, 1] ** 2 + pos[:, 2] ** 2
    if np.any(d2 == 0):
        raise ZeroDivisionError("background atom coincides with the Rydberg atom")
    return inter.c6_us / d2**3


def single_atom_operators(x, positions, eit: EitParams, inter: InteractionParams):
    """(h, l) arrays of shape ``x.shape + (N_bg,)`` from the closed forms."""
    return closed_form_single(single_atom_potential(x, positions, inter), eit)


def dimer_shifts(r, positions, inter: InteractionParams, center=(0.0, 0.0, 0.0)):
    """Interaction energies of |u> for each dimer state.

    State pi_1 = |ps> puts atom 1 (at R0 - r/2) in |p>, pi_2 = |sp> atom 2.
    Returns (v1, v2) with shape ``r.shape + (N_bg,)``.
    """
    x1, x2 = dimer_positions(r, center)
    pos = np.asarray(positions, float)
    d1 = np.sum((x1[..., None, :] - pos) ** 2, axis=-1)
    d2 = np.sum((x2[..., None, :] - pos) ** 2, axis=-1)
    if np.any(d1 == 0) or np.any(d2 == 0):
        raise ZeroDivisionError("background atom coincides with a dimer atom")
    c6, c4 = inter.c6_us, inter.c4_up
    v1 = c4 / d1**2 + c6 / d2**3
    v2 = c4 / d2**2 + c6 / d1**3
    return v1, v2


def _dimer_solve(v1, v2, w, eit: EitParams):
    """Solutions z_l = (H_NH - E_l)^-1 [phi_l; 0] for the dimer, batched.

    Returns ``(z, phis)`` with z of shape ``shape + (4, 2)`` (column l) and
    the dipole eigenvectors stacked as rows of ``phis``.
    """
    v1, v2, w = np.broadcast_arrays(np.asarray(v1, float), np.asarray(v2, float),
                                    np.asarray(w, float))
    shape = v1.shape
    h = np.zeros(shape + (4, 4), complex)
    de = -eit.delta_p - 0.5j * eit.gamma_p
    du = -eit.delta_p - eit.delta_c
    h[..., 0, 0] = de
    h[..., 1, 1] = de
    h[..., 2, 2] = v1 + du
    h[..., 3, 3] = v2 + du
    h[..., 0, 1] = h[..., 1, 0] = w
    h[..., 2, 3] = h[..., 3, 2] = w
    half_c = 0.5 * eit.omega_c
    h[..., 0, 2] = h[..., 2, 0] = half_c
    h[..., 1, 3] = h[..., 3, 1] = half_c

    s = 1 / np.sqrt(2)
    phis = np.array([[s, -s], [s, s]])  # E = -W, +W
    energies = (-w, w)
    eye = np.eye(4)
    z = np.empty(shape + (4, 2), complex)
    for col, energy in enumerate(energies):
        rhs = np.zeros(shape + (4, 1), complex)
        rhs[..., 0, 0], rhs[..., 1, 0] = phis[col]
        z[..., :, col] = np.linalg.solve(h - energy[..., None, None] * eye, rhs)[..., 0]
    return z, phis


def dimer_operators_batch(v1, v2, w, eit: EitParams, where=None):
    """Vectorised N=2 effective operators.

    ``v1``, ``v2`` and ``w`` broadcast together. Returns ``(h_shift, l_eff)``
    with two trailing 2x2 axes; ``h_shift`` excludes H_g. Two 4x4 solves per
    configuration, one per dipole eigenstate.
    """
    z, phis = _dimer_solve(v1, v2, w, eit)
    shape = z.shape[:-2]
    _check_solution(np.moveaxis(z, -1, -2).reshape(shape + (8,)),
                    max(eit.gamma_p, eit.omega_c), where=where)
    # y = sum_l z_e,l phi_l^dagger
    y = np.einsum("...il,lj->...ij", z[..., :2, :], phis)
    x = (0.5 * eit.omega_p) ** 2 * y
    h_shift = -0.5 * (x + np.conj(np.swapaxes(x, -1, -2)))
    l_eff = np.sqrt(eit.gamma_p) * 0.5 * eit.omega_p * y
    return h_shift, l_eff


def resolvent_strength(v1, v2, w, eit: EitParams) -> np.ndarray:
    """Largest |<e, pi_n| (H_NH - E_l)^-1 |e, phi_l>| per configuration."""
    z, _ = _dimer_solve(v1, v2, w, eit)
    return np.abs(z[..., :2, :]).max(axis=(-1, -2))


def dimer_effective_operators(r, position, eit: EitParams, inter: InteractionParams,
                              center=(0.0, 0.0, 0.0)) -> EffectiveAtomOperators:
    """Generic (non-batched) effective operators of one atom next to a dimer."""
    v1, v2 = dimer_shifts(np.asarray(r, float), np.atleast_2d(position), inter, center)
    w = inter.c3_dd / float(r) ** 3
    return effective_operators([v1[0], v2[0]], dimer_ground_hamiltonian(w), eit)


def resolvent_scan(r, position, eit: EitParams, inter: InteractionParams,
                   center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Largest |(H_NH - E_l)^-1 V_+ phi_l| entry along ``r`` for one atom.

    Peaks mark near-resonances of the elimination.
    """
    r = np.asarray(r, float)
    v1, v2 = dimer_shifts(r, np.atleast_2d(position), inter, center)
    w = inter.c3_dd / r**3
    out = np.empty(len(r))
    for i in range(len(r)):
        h_g = dimer_ground_hamiltonian(w[i])
        h_nh = non_hermitian_block([v1[i, 0], v2[i, 0]], h_g, eit)
        basis = dimer_eigenbasis(w[i])
        best = 0.0
        for energy, phi in zip(basis.energies, basis.vectors.T):
            z = np.linalg.solve(h_nh - energy * np.eye(4), np.concatenate([phi, [0, 0]]))
            best = max(best, np.abs(z[:2]).max())
        out[i] = best
    return out


def find_resonances(r, strength, prominence: float = 3.0) -> list:
    """Interior local maxima of ``strength`` exceeding ``prominence`` x median."""
    r = np.asarray(r, float)
    s = np.asarray(strength, float)
    med = np.median(s)
    peaks = []
    for i in range(1, len(s) - 1):
        if s[i] >= s[i - 1] and s[i] > s[i + 1] and s[i] > prominence * med:
            peaks.append(float(r[i]))
    return peaks
