import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import solve_ivp

from dephtrap.kernels import build_kernels_dimer, build_kernels_single
from dephtrap.params import BoxGeometry, Grid1D, gaussian, sample_background
from dephtrap.propagate import (
    DimerTrajectory,
    SplitStepDimer,
    absorbing_profile,
    dimer_initial_state,
    kinetic_commutator,
    kinetic_commutator_hermitian,
    kinetic_energy,
    kinetic_flow,
    mean_kinetic,
    nyquist_wavenumber,
    plateau_onset,
    propagate_dimer,
    propagate_single,
    pure_state,
    reflection_probability,
    required_wavenumber,
    step_dimer,
    surface_densities,
)
from dephtrap.scenarios import free_width

HOM = 7.3074e-4


def _spectral_hamiltonian(grid, hom, potential, reduced):
    """Dense position-space H = T + U with T built from the DFT matrix."""
    n = grid.n
    f = np.fft.fft(np.eye(n), axis=0)
    t = np.fft.ifft(kinetic_energy(grid, hom, reduced)[:, None] * f, axis=0)
    return t + np.diag(potential)


def test_kinetic_flow_matches_matrix_exponential(rng):
    grid = Grid1D(-2.0, 2.0, 32)
    tk = kinetic_energy(grid, 0.05)
    rho = pure_state(gaussian(grid, 0.2, 0.3))
    u = scipy.linalg.expm(-1j * _spectral_hamiltonian(grid, 0.05, np.zeros(32), False) * 0.7)
    assert np.allclose(kinetic_flow(rho, tk, 0.7), u @ rho @ u.conj().T, atol=1e-12)


def test_hermitian_commutator_agrees_with_generic(rng):
    grid = Grid1D(-2.0, 2.0, 32)
    tk = kinetic_energy(grid, 0.05)
    a = rng.normal(size=(32, 32)) + 1j * rng.normal(size=(32, 32))
    rho = a + a.conj().T
    assert np.allclose(kinetic_commutator_hermitian(rho, tk), kinetic_commutator(rho, tk))


def test_free_gaussian_width_and_norm():
    grid = Grid1D(-6.0, 6.0, 128)
    rho0 = pure_state(gaussian(grid, 0.0, 0.4))
    tr = propagate_single(rho0, grid, HOM, 200.0, out_every=50.0)
    assert tr.width[-1] == pytest.approx(free_width(0.4, 200.0, HOM), rel=1e-6)
    assert np.max(np.abs(tr.trace - 1)) < 1e-12
    # free kinetic energy is conserved
    assert np.ptp(tr.kinetic) < 1e-10 * tr.kinetic[0]


def test_kinetic_energy_of_gaussian():
    grid = Grid1D(-6.0, 6.0, 256)
    rho = pure_state(gaussian(grid, 0.0, 0.4))
    # <p^2> / 2M = hbar^2 / (4 M sigma^2)
    assert mean_kinetic(rho, grid, kinetic_energy(grid, HOM)) == pytest.approx(HOM / (4 * 0.16), rel=1e-10)


def test_dephasing_conserves_trace_and_hermiticity(single_cfg):
    gas = sample_background(BoxGeometry.cube(1.5), 2.96e21, seed=2)
    grid = Grid1D(-3.0, 3.0, 64)
    ks = build_kernels_single(gas, grid, single_cfg.eit(), single_cfg.interactions(), vext_window=3.0)
    tr = propagate_single(pure_state(gaussian(grid, 0.0, 0.4)), grid, HOM, 20.0, ks.generator(),
                          out_every=5.0)
    assert np.max(np.abs(tr.trace - 1)) < 1e-10
    assert tr.hermiticity.max() == 0.0


def test_rk4_step_bound_enforced():
    grid = Grid1D(-6.0, 6.0, 128)
    with pytest.raises(ValueError):
        propagate_single(pure_state(gaussian(grid, 0, 0.4)), grid, HOM, 10.0, dt=100.0)


def test_plateau_onset_synthetic():
    t = np.arange(0, 500.0, 10.0)
    peak = np.minimum(1.0 + t / 100.0, 4.0)
    assert plateau_onset(t, peak, rel_tol=0.02) == pytest.approx(300.0)
    assert plateau_onset(t, 1.0 + t) is None


def test_repulsive_surface_matches_scalar_propagator():
    """Without kernels the repulsive surface sees the scalar potential +W(r)."""
    grid = Grid1D(3.0, 13.0, 64)
    hom, c3, t = 0.05, 2500.0, 0.6
    w = c3 / grid.x**3
    tk = kinetic_energy(grid, hom, reduced=True)
    rho0 = dimer_initial_state(grid, 5.5, 0.4, "repulsive")
    prop = SplitStepDimer(grid, tk, w, None, 0.002)
    rho = prop.advance(rho0, 300)
    u = scipy.linalg.expm(-1j * _spectral_hamiltonian(grid, hom, w, True) * t)
    psi = u @ gaussian(grid, 5.5, 0.4)
    sd = surface_densities(rho, grid)
    assert np.max(np.abs(sd.n_rep - np.abs(psi) ** 2)) < 1e-4 * np.max(np.abs(psi) ** 2)
    assert sd.p_att < 1e-12


def test_split_step_agrees_with_rk4_including_kernels(small_tube_gas, dimer_eit, bench_inter):
    grid = Grid1D(7.0, 11.0, 16)
    ks = build_kernels_dimer(small_tube_gas, grid, dimer_eit, bench_inter, mask=None)
    gen = ks.generator()
    tk = kinetic_energy(grid, 0.02, reduced=True)
    rho0 = dimer_initial_state(grid, 9.0, 0.4, "bare-state")
    dt, n = 1e-3, 200
    prop = SplitStepDimer(grid, tk, ks.w, gen, dt)
    a = prop.advance(rho0, n)
    b = rho0.copy()
    for _ in range(n):
        b = step_dimer(b, tk, ks.w, gen, dt)
    assert np.max(np.abs(a - b)) < 1e-4 * np.max(np.abs(b))


def test_absorbed_norm_is_accounted():
    grid = Grid1D(3.0, 13.0, 128)
    hom = 0.05
    tk = kinetic_energy(grid, hom, reduced=True)
    rho0 = dimer_initial_state(grid, 6.0, 0.4)
    traj = propagate_dimer(rho0, grid, tk, 4000.0 / grid.x**3, None, 6.5, 0.005, out_every=0.5)
    assert isinstance(traj, DimerTrajectory)
    assert traj.absorbed[-1] > 0.01
    assert np.allclose(traj.trace + traj.absorbed, 1.0, atol=1e-10)


def test_absorbing_profile_shape():
    grid = Grid1D(2.0, 18.0, 512)
    eta = absorbing_profile(grid, 20.0, 0.1)
    inner = (grid.x > 3.6) & (grid.x < 16.4)
    assert np.all(eta[inner] == 0) and eta.max() <= 20.0 and eta[0] == pytest.approx(20.0)


def test_ehrenfest_motion_on_repulsive_surface():
    """<r>(t) follows the classical trajectory of mass M / 2 on +C3 / r^3."""
    grid = Grid1D(3.0, 15.0, 128)
    hom, c3 = 0.05, 2500.0
    tk = kinetic_energy(grid, hom, reduced=True)
    traj = propagate_dimer(dimer_initial_state(grid, 5.5, 0.4), grid, tk, c3 / grid.x**3, None,
                           2.0, 0.002, out_every=0.5, absorb_rate=0.0)

    def rhs(t, y):
        # r'' = -2 (hbar / M) dU/dr for the reduced mass
        return [y[1], 2 * hom * 3 * c3 / y[0] ** 4]

    sol = solve_ivp(rhs, (0, 2.0), [5.5, 0.0], t_eval=traj.times, rtol=1e-10)
    assert np.allclose(traj.mean_r_rep, sol.y[0], rtol=0.02)
    assert traj.mean_r_rep[-1] - 5.5 > 1.0


def test_required_wavenumber_from_energy_conservation():
    grid = Grid1D(2.0, 18.0, 512)
    u = 100.0 / grid.x**3
    k = required_wavenumber(grid, HOM, u, 5.5)
    interior = grid.x <= grid.max - 1.6
    expected = np.sqrt((100.0 / 5.5**3 - u[interior].min()) / HOM)
    assert k == pytest.approx(expected, rel=1e-3)
    assert nyquist_wavenumber(grid) == pytest.approx(np.pi / grid.dx)


def test_reflection_probability_on_synthetic_trajectory():
    grid = Grid1D(2.0, 18.0, 64)
    times = np.arange(6) * 1.0
    centers = [5.0, 6.0, 7.0, 6.5, 6.0, 6.2]
    n_rep = np.array([np.exp(-(grid.x - c) ** 2) / np.sqrt(np.pi) for c in centers])
    traj = DimerTrajectory(times, np.ones(6), np.ones(6), np.zeros(6), np.array(centers), np.zeros(6),
                           np.zeros(6), n_rep, np.zeros_like(n_rep), grid, None, 0.1)
    p, t = reflection_probability(traj, 10.0)
    assert t == 4.0
    assert p == pytest.approx(1.0, rel=1e-3)
