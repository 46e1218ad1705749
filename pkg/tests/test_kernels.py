import numpy as np
import pytest
from hypothesis import given, strategies as st

from dephtrap.kernels import (
    ExternalPotential,
    KernelSet2,
    ResonanceMask,
    _tiled_gram,
    build_kernels_dimer,
    build_kernels_single,
    coherence_decay,
    default_mask,
    detect_rc,
    diagonal_profile,
    dimer_operator_grid,
    fit_vext,
    inspect_slice,
    load_kernels,
    resonance_radii,
    save_kernels,
    single_operators,
    surface_diagonal_part,
)
from dephtrap.params import BoxGeometry, Grid1D, sample_background


@pytest.fixture(scope="module")
def single_setup(single_cfg):
    gas = sample_background(BoxGeometry.cube(1.5), 2.96e20, seed=5)
    return gas, Grid1D(-3.0, 3.0, 64), single_cfg.eit(), single_cfg.interactions()


@pytest.fixture(scope="module")
def dimer_small(small_tube_gas, dimer_eit, bench_inter):
    grid = Grid1D(6.0, 14.0, 16)
    ks = build_kernels_dimer(small_tube_gas, grid, dimer_eit, bench_inter, mask=None)
    return ks, small_tube_gas, grid


@given(st.integers(0, 10_000))
def test_single_kernel_identities_hold_exactly(seed):
    from dephtrap.config import preset

    cfg = preset("single-well")
    gas = sample_background(BoxGeometry.cube(1.5), 2.96e20, seed=seed)
    ks = build_kernels_single(gas, Grid1D(-3.0, 3.0, 32), cfg.eit(), cfg.interactions(), vext=None)
    ks.check()


def test_single_kernels_match_pairwise_oracle(single_setup):
    gas, grid, eit, inter = single_setup
    ks = build_kernels_single(gas, grid, eit, inter, vext=None)
    h, ell = single_operators(grid.x, gas, eit, inter)
    diff = ell[:, None, :] - ell[None, :, :]
    gamma = np.sum(np.abs(diff) ** 2, axis=-1)
    imc = np.sum((ell[:, None, :] * ell[None, :, :].conj()).imag, axis=-1)
    hs = h.sum(axis=1)
    assert np.allclose(ks.gamma, gamma, rtol=1e-12, atol=1e-12 * gamma.max())
    assert np.allclose(ks.delta_e_dblprime, imc, rtol=1e-12, atol=1e-12 * np.abs(imc).max())
    assert np.allclose(ks.delta_e_prime, hs[None, :] - hs[:, None])


def test_generator_is_hermitian_compatible(single_setup):
    gas, grid, eit, inter = single_setup
    k = build_kernels_single(gas, grid, eit, inter, vext_window=3.0).generator()
    # K(x, x') = K(x', x)* keeps the RK4 stages Hermitian
    assert np.array_equal(k, k.T.conj())


def test_vext_fit_cancels_even_potential():
    x = np.linspace(-3, 3, 301)
    target = -(0.3 + 0.05 * x**2 - 0.002 * x**4)
    pot = fit_vext(x, target, window=2.0)
    sel = np.abs(x) <= 2.0
    assert np.max(np.abs(pot(x[sel]) + target[sel])) < 1e-10
    assert pot.residual < 1e-10


def test_external_potential_clamped_outside_window():
    pot = ExternalPotential((0.0, 1.0), window=1.0)
    assert pot(5.0) == pot(1.0) == 1.0


def test_inspect_slice_on_smooth_kernel(single_setup):
    gas, grid, eit, inter = single_setup
    ks = build_kernels_single(gas, grid, eit, inter, vext=None)
    x, g = inspect_slice(ks, eps=grid.dx)
    assert np.allclose(g, np.diagonal(ks.gamma, offset=1)[: len(g)])


def _direct_lindblad(h, ell, rho, i, j):
    """Kernel part of d rho(r_i, r_j) / dt from the jump operators."""
    r = rho[:, :, i, j]
    out = np.zeros((2, 2), complex)
    a_i = sum(l.conj().T @ l for l in ell[i])
    a_j = sum(l.conj().T @ l for l in ell[j])
    for li, lj in zip(ell[i], ell[j]):
        out += li @ r @ lj.conj().T
    out -= 0.5 * (a_i @ r + r @ a_j)
    hi, hj = h[i].sum(axis=0), h[j].sum(axis=0)
    out += -1j * (hi @ r - r @ hj)
    return out


def test_dimer_kernels_reproduce_lindblad_action(dimer_small, dimer_eit, bench_inter, rng):
    ks, gas, grid = dimer_small
    n = grid.n
    h, ell = dimer_operator_grid(grid.x, gas, dimer_eit, bench_inter)
    rho = rng.normal(size=(2, 2, n, n)) + 1j * rng.normal(size=(2, 2, n, n))
    gen = ks.generator()
    got = np.einsum("abij,bij->aij", gen, rho.reshape(4, n, n)).reshape(2, 2, n, n)
    for i, j in [(0, 0), (3, 11), (15, 2), (7, 7)]:
        ref = _direct_lindblad(h, ell, rho, i, j)
        assert np.allclose(got[:, :, i, j], ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_dimer_kernel_generator_preserves_hermiticity_and_local_trace(dimer_small, rng):
    ks, _, grid = dimer_small
    n = grid.n
    a = rng.normal(size=(2, 2, n, n)) + 1j * rng.normal(size=(2, 2, n, n))
    rho = a + np.conj(np.transpose(a, (1, 0, 3, 2)))
    d = np.einsum("abij,bij->aij", ks.generator(), rho.reshape(4, n, n)).reshape(2, 2, n, n)
    assert np.allclose(d, np.conj(np.transpose(d, (1, 0, 3, 2))), atol=1e-10 * np.abs(d).max())
    # the background cannot change the local population at r = r'
    diag_trace = np.einsum("nnii->i", d)
    assert np.allclose(diag_trace, 0.0, atol=1e-10 * np.abs(d).max())


def test_coherence_decay_matches_kernel_diagonal(dimer_small, dimer_eit, bench_inter):
    ks, gas, grid = dimer_small
    _, ell = dimer_operator_grid(grid.x, gas, dimer_eit, bench_inter)
    assert np.allclose(ks.coherence_decay(), coherence_decay(ell), rtol=1e-10)
    prof = diagonal_profile(grid.x, gas, dimer_eit, bench_inter, mask=None)
    assert np.allclose(prof, coherence_decay(ell))


def test_coherence_decay_ignores_exchange_symmetric_jumps():
    # a jump operator proportional to sigma_x commutes with the dipole coupling
    ell = np.zeros((1, 1, 2, 2), complex)
    ell[0, 0] = [[0, 1], [1, 0]]
    assert coherence_decay(ell)[0] == pytest.approx(0.0, abs=1e-15)
    ell[0, 0] = [[1, 0], [0, -1]]
    assert coherence_decay(ell)[0] == pytest.approx(2.0)


def test_dominant_pattern_and_scale(dimer_small):
    ks, _, _ = dimer_small
    pat = ks.dominant_pattern()
    scale = ks.component_scale()
    assert pat.shape == (4, 4)
    assert pat[np.unravel_index(np.argmax(scale), scale.shape)] == 1.0
    masked = ks.generator(dominant_only=True)
    assert np.all(masked[pat == 0].real == 0)


def test_surface_diagonal_part_is_a_projection(rng):
    ops = rng.normal(size=(5, 2, 2)) + 1j * rng.normal(size=(5, 2, 2))
    once = surface_diagonal_part(ops)
    assert np.allclose(surface_diagonal_part(once), once)
    u = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    in_surface = u.T @ once @ u
    assert np.allclose(in_surface[:, 0, 1], 0) and np.allclose(in_surface[:, 1, 0], 0)


def test_tiled_gram_independent_of_threads(rng):
    m = rng.normal(size=(300, 50)) + 1j * rng.normal(size=(300, 50))
    a = _tiled_gram(m, tile=64, threads=1)
    b = _tiled_gram(m, tile=64, threads=4)
    assert np.array_equal(a, b)
    assert np.allclose(a, m @ m.conj().T)


def test_resonance_radii_sit_at_exchange_crossing(dimer_eit, bench_inter):
    r_res = (4 * bench_inter.c3_dd / dimer_eit.omega_c) ** (1 / 3)
    radii = resonance_radii(dimer_eit, bench_inter, np.linspace(2, 10, 4000))
    assert radii and all(abs(x - r_res) < 0.2 for x in radii)
    mask = default_mask(dimer_eit, bench_inter, Grid1D(2.0, 18.0, 512))
    assert mask.lo < r_res < mask.hi


def test_mask_freezes_operators():
    m = ResonanceMask(4.0, 5.0)
    assert np.array_equal(m.apply([3.0, 4.5, 6.0]), [3.0, 5.0, 6.0])
    with pytest.raises(ValueError):
        ResonanceMask(5.0, 4.0)


@pytest.mark.parametrize("threshold", [0.1, 0.3])
def test_detect_rc_on_synthetic_profile(threshold):
    r = np.linspace(2, 20, 1801)
    prof = 1.0 / (1 + np.exp(-(r - 8.0) / 0.5))
    expected = 8.0 + 0.5 * np.log(threshold / (1 - threshold))
    assert detect_rc(prof, threshold, r) == pytest.approx(expected, abs=1e-3)


def test_detect_rc_rejects_profile_active_at_inner_edge():
    r = np.linspace(2, 10, 50)
    with pytest.raises(ValueError):
        detect_rc(np.ones_like(r), 0.1, r)


def test_kernel_cache_round_trip(tmp_path, dimer_small, single_setup):
    ks, _, _ = dimer_small
    path = save_kernels(tmp_path / "k2.npz", ks, {"note": "test"})
    back = load_kernels(path)
    assert isinstance(back, KernelSet2)
    assert np.array_equal(back.gamma, ks.gamma) and np.array_equal(back.delta_e, ks.delta_e)
    assert back.c3 == ks.c3
    gas, grid, eit, inter = single_setup
    k1 = build_kernels_single(gas, grid, eit, inter, vext_window=3.0)
    back1 = load_kernels(save_kernels(tmp_path / "k1.npz", k1))
    assert np.array_equal(back1.gamma, k1.gamma)
    assert back1.vext.coefficients == k1.vext.coefficients
