import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from bsslab.kernels import (CovModel, Gamma, KernelSpec, c_alpha, c_hurst, kernel_l2_mass,
                            whittle_matern)
from bsslab.noise_sim import (Constant, ExpOU, Ramp, SimGrid, TruncationError, aggregate,
                              bss_terms, certified_grid, certify, drive, dump_paths, evaluate,
                              make_brownian, make_sigma, mvn_terms, simulate_b_tilde,
                              simulate_bss, simulate_exact_gaussian, simulate_fbm,
                              simulate_vmfbm, simulate_x_vmvp, weights_at)


def mc_close(x, target, k=3.0):
    x = np.asarray(x, float)
    se = x.std(ddof=1) / math.sqrt(x.size)
    return abs(x.mean() - target) <= k * se


# --------------------------------------------------------------------------
# grid and noise
# --------------------------------------------------------------------------

def test_grid_basics():
    g = SimGrid.uniform(0.25, 2.0, 1.0)
    assert (g.n_future, g.n_past, g.T, g.T_trunc) == (8, 4, 2.0, 1.0)
    assert g.edges[g.origin] == 0.0 and g.edges[-1] == 2.0
    with pytest.raises(ValueError):
        SimGrid(0.0, 4, 0)


def test_certified_grid_depth_and_far_cells():
    spec = KernelSpec(0.25, Gamma(1.0))
    g = certified_grid(2 ** -6, 1.0, kernels=[spec])
    certify(g, kernels=[spec])
    shallow = SimGrid.uniform(2 ** -6, 1.0, 0.5)
    with pytest.raises(TruncationError):
        certify(shallow, kernels=[spec])
    deep = certified_grid(2 ** -6, 1.0, alphas=[-0.3])
    assert deep.n_far > 0 and np.all(np.diff(deep.edges) > 0)
    certify(deep, alphas=[-0.3])


def test_brownian_variance_and_determinism():
    g = SimGrid.uniform(1e-3, 1000.0, 0.0)
    dB = make_brownian(g, seed=5)
    assert dB.size == 10 ** 6
    assert abs(dB.var() / 1e-3 - 1) < 0.01
    assert np.array_equal(dB, make_brownian(g, seed=5))
    n = dB.size // 2
    rho = np.corrcoef(dB[:n], dB[n:])[0, 1]
    assert abs(rho) < 3 / math.sqrt(n)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 6), st.integers(1, 4))
def test_replication_subsets_regenerate(seed, first, n):
    g = SimGrid.uniform(0.125, 1.0, 0.5)
    full = make_brownian(g, seed, 12)
    part = make_brownian(g, seed, n, first_index=first)
    assert np.array_equal(full[first:first + n], part)


def test_constant_and_ramp_sigma():
    g = SimGrid.uniform(0.25, 1.0, 1.0)
    assert np.all(make_sigma(Constant(1.0), g, 0) == 1.0)
    r = make_sigma(Ramp(1.0, 2.0), g, 0)
    assert np.allclose(r, 1.0 + 2.0 * np.maximum(g.edges[:-1], 0))


@pytest.mark.parametrize("independent", [True, False])
def test_expou_second_moment(independent):
    g = SimGrid.uniform(0.05, 1.0, 1.0)
    m = ExpOU(2.0, independent)
    s = make_sigma(m, g, 3, n_paths=20000)
    assert mc_close(s[:, -1] ** 2, m.second_moment)
    assert mc_close(s[:, 0] ** 2, m.second_moment)


def test_expou_dependent_is_adapted():
    g = SimGrid.uniform(0.1, 1.0, 0.5)
    inc = make_brownian(g, 1, 1)
    s = make_sigma(ExpOU(1.0, False), g, 1, 1, increments=inc)
    k = 8
    inc2 = inc.copy()
    inc2[0, k] += 1.0
    s2 = make_sigma(ExpOU(1.0, False), g, 1, 1, increments=inc2)
    assert np.array_equal(s[0, :k + 1], s2[0, :k + 1])
    assert not np.array_equal(s[0, k + 1:], s2[0, k + 1:])


def test_expou_shifted_marginal():
    g = SimGrid.uniform(0.05, 2.0, 0.0)
    s = make_sigma(ExpOU(1.0, False), g, 11, n_paths=4000)
    assert sps.ks_2samp(s[:2000, 2], s[2000:, 30]).pvalue >= 0.01


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [-0.3, 0.25])
def test_fft_and_direct_weights_agree(alpha):
    spec = KernelSpec(alpha, Gamma(1.0))
    g = certified_grid(2 ** -4, 1.0, kernels=[spec], alphas=[alpha], far_ratio=1.2)
    eye = np.eye(g.n_cells)
    for terms in (bss_terms(spec), mvn_terms()):
        W = evaluate(g, alpha, terms, eye, "all")   # column j = weights for edge j
        for j in (g.origin, g.origin + 5, g.n_cells):
            assert np.allclose(W[:, j], weights_at(g, alpha, terms, j), atol=1e-13, rtol=1e-12)


@pytest.mark.parametrize("alpha", [-0.3, 0.25])
def test_discrete_isometry_first_order(alpha):
    # left-point smooth factor: variance deficit ~ lam * dt, halving with dt
    spec = KernelSpec(alpha, Gamma(1.0))
    errs = []
    for dt in (2 ** -5, 2 ** -6, 2 ** -7):
        g = certified_grid(dt, 1.0, kernels=[spec])
        w = weights_at(g, alpha, bss_terms(spec), g.n_cells)
        errs.append(1.0 - float(np.sum(w ** 2 * g.widths)) / kernel_l2_mass(spec))
        assert 0 < errs[-1] <= 1.2 * dt
    assert 1.8 < errs[0] / errs[1] < 2.2 and 1.8 < errs[1] / errs[2] < 2.2


# --------------------------------------------------------------------------
# processes
# --------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [-0.3, 0.25])
def test_bss_variance_and_lag(alpha):
    spec = KernelSpec(alpha, Gamma(1.0))
    g = certified_grid(2 ** -7, 1.0, kernels=[spec])
    y = simulate_bss(spec, 1.0, g, seed=2, n_paths=6000)
    m = CovModel.for_gamma_kernel(spec)
    assert mc_close(y[:, -1] ** 2, whittle_matern(m, 0.0))
    assert mc_close(y[:, 0] * y[:, -1], whittle_matern(m, 1.0))


def test_bss_zero_sigma():
    spec = KernelSpec(0.25, Gamma(1.0))
    g = certified_grid(2 ** -5, 1.0, kernels=[spec])
    assert np.all(simulate_bss(spec, 0.0, g, seed=1) == 0.0)


def test_bss_requires_certified_grid():
    spec = KernelSpec(0.25, Gamma(1.0))
    with pytest.raises(TruncationError):
        simulate_bss(spec, 1.0, SimGrid.uniform(0.1, 1.0, 0.5), seed=0)


def test_x_vmvp_properties():
    a = 0.25
    g = certified_grid(2 ** -6, 1.0, alphas=[a])
    x = simulate_x_vmvp(a, 1.0, g, seed=4, n_paths=6000)
    assert np.all(x[:, 0] == 0.0)
    assert mc_close(x[:, -1] ** 2, c_alpha(a))


def test_x_without_past_is_b_tilde():
    a = -0.3
    g = certified_grid(2 ** -6, 1.0, alphas=[a])
    nz = drive(g, Constant(1.0), 3, 4)
    nz.increments[:, : g.origin] = 0.0
    x = simulate_x_vmvp(a, None, g, noise=nz)
    b = simulate_b_tilde(a, None, g, noise=nz)
    assert np.allclose(x, b, atol=1e-13)


def test_fbm_half_is_brownian():
    g = SimGrid.uniform(2 ** -6, 1.0, 0.0)
    nz = drive(g, Constant(1.0), 9, 3)
    b = simulate_fbm(0.5, g, noise=nz)
    cs = np.concatenate([np.zeros((3, 1)), np.cumsum(nz.increments, axis=1)], axis=1)
    assert np.array_equal(b, cs)


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_fbm_variance_and_scaling(H):
    g = certified_grid(2 ** -7, 1.0, alphas=[H - 0.5])
    b = simulate_fbm(H, g, seed=6, n_paths=4000)
    assert mc_close(b[:, -1] ** 2, c_hurst(H))
    lags = np.array([1, 2, 4, 8, 16])
    m = [np.mean((b[:, k:] - b[:, :-k]) ** 2) for k in lags]
    slope = np.polyfit(np.log(lags), np.log(m), 1)[0]
    assert abs(slope - 2 * H) <= 0.05


def test_vmfbm_split_and_reduction():
    H = 0.3
    g = certified_grid(2 ** -6, 1.0, alphas=[H - 0.5])
    nz = drive(g, ExpOU(1.0, False), 2, 3)
    vm = simulate_vmfbm(H, None, g, noise=nz)
    assert np.max(np.abs(vm.bh - vm.direct)) <= 1e-12 * max(1.0, np.abs(vm.bh).max())
    assert np.all(vm.a == 0.0)
    unit = drive(g, Constant(1.0), 2, 3)
    assert np.array_equal(simulate_vmfbm(H, None, g, noise=unit).bh,
                          simulate_fbm(H, g, noise=unit))


def test_simulation_is_deterministic():
    spec = KernelSpec(-0.3, Gamma(1.0))
    g = certified_grid(2 ** -6, 1.0, kernels=[spec])
    a = simulate_bss(spec, ExpOU(1.0, False), g, seed=17, n_paths=3)
    b = simulate_bss(spec, ExpOU(1.0, False), g, seed=17, n_paths=3)
    assert np.array_equal(a, b)


def test_exact_gaussian_white_noise():
    g = SimGrid.uniform(1.0, 2047.0, 0.0)
    x = simulate_exact_gaussian(lambda h: (np.asarray(h) == 0).astype(float), g, seed=1)
    assert sps.kstest(x, "norm").pvalue >= 0.01


def test_exact_gaussian_matches_matern_and_bss():
    spec = KernelSpec(0.25, Gamma(1.0))
    m = CovModel.for_gamma_kernel(spec)
    dt = 0.125
    g = SimGrid.uniform(dt, 4.0, 0.0)
    x = simulate_exact_gaussian(lambda h: whittle_matern(m, h), g, seed=3, n_paths=10000)
    gb = certified_grid(2 ** -9, 4.0, kernels=[spec])
    y = simulate_bss(spec, 1.0, gb, seed=4, n_paths=10000)[:, ::2 ** 6]
    for k in range(6):
        px, py = x[:, 0] * x[:, k], y[:, 0] * y[:, k]
        assert mc_close(px, whittle_matern(m, k * dt))
        se = math.sqrt(px.var() / px.size + py.var() / py.size)
        assert abs(px.mean() - py.mean()) <= 3 * se


def test_aggregate_preserves_path():
    g = certified_grid(2 ** -6, 1.0, alphas=[-0.3], far_ratio=1.1)
    nz = drive(g, ExpOU(1.0, False), 1, 2)
    for merge in (False, True):
        c = aggregate(nz, merge_far=merge)
        assert c.grid.dt == 2 * g.dt and c.grid.depth == g.depth
        assert np.allclose(c.increments.sum(axis=1), nz.increments.sum(axis=1), atol=1e-12)
        assert set(c.grid.edges).issubset(set(g.edges))
    assert aggregate(nz, merge_far=True).grid.n_far < g.n_far


@pytest.mark.parametrize("wide", [True, False])
def test_dump_paths(tmp_path, wide):
    t = np.linspace(0, 1, 5)
    files = dump_paths(tmp_path, t, {"Y": t ** 2, "X": -t}, wide=wide)
    text = files[0].read_text().splitlines()
    assert text[0] == ("t,Y,X" if wide else "t,value")
    assert len(text) == 6
    assert float(text[3].split(",")[1]) == (0.25 if wide else 0.25)
