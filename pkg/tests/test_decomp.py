import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsslab.decomp import (AssumptionError, check_membership_shifted_L, compute_u_processes,
                           compute_yx, corollary_split, decompose, ftc_orders,
                           increment_exponent, verify_ftc)
from bsslab.kernels import Gamma, KernelSpec, Power
from bsslab.noise_sim import Constant, DrivenPaths, certified_grid, drive

GAMMA = KernelSpec(0.25, Gamma(1.0))


@pytest.fixture(scope="module")
def coarse():
    g = certified_grid(2 ** -5, 1.0, kernels=[GAMMA], alphas=[0.25])
    nz = drive(g, Constant(1.0), 1, 12)
    return nz, decompose(GAMMA, nz)


def test_exact_identities(coarse):
    _, r = coarse
    for key in ("identity_V", "identity_U", "reconstruction"):
        assert r.diagnostics[key] <= 1e-12, key
    assert np.allclose(r.V, r.YX - r.Y)


def test_u3_is_derivative_of_U3(coarse):
    # U3 is smooth in t, so a central difference matches u3 to O(dt^2)
    nz, r = coarse
    dt = r.dt
    fd = (r.U3[:, 2:] - r.U3[:, :-2]) / (2 * dt)
    assert np.abs(fd - r.u3[:, 1:-1]).max() <= 0.2 * dt ** 2 * max(1.0, np.abs(r.u3).max())


def test_u_processes_match_decompose(coarse):
    nz, r = coarse
    u1, u2, u3, U1, U2, U3 = compute_u_processes(GAMMA, None, nz)
    for a, b in ((u1, r.u1), (u2, r.u2), (u3, r.u3), (U1, r.U1), (U2, r.U2), (U3, r.U3)):
        assert np.array_equal(a, b)
    assert np.array_equal(compute_yx(GAMMA, None, nz), r.YX)


def test_u2_two_routes_converge():
    gaps = []
    for dt in (2 ** -4, 2 ** -6):
        g = certified_grid(dt, 1.0, kernels=[GAMMA], alphas=[0.25])
        gaps.append(decompose(GAMMA, drive(g, Constant(1.0), 2, 6)).diagnostics["u2_dual"])
    assert gaps[1] < 0.4 * gaps[0]


def test_ftc_first_order(coarse):
    nz, _ = coarse
    orders, fine, _ = ftc_orders(GAMMA, nz)
    assert orders["u1"] >= 0.9 and orders["u2"] >= 0.9 and orders["u3"] >= 0.9
    assert fine.max_residual["u3"] < fine.max_residual["u1"]


def test_verify_ftc_ladder(coarse):
    _, r = coarse
    rep = verify_ftc(r, ladder=(0.5, 1.0))
    assert np.allclose(rep.t, [0.5, 1.0])
    assert rep.residuals["u1"].shape == (12, 2)


def test_path_regularity(coarse):
    _, r = coarse
    assert increment_exponent(r.V, r.dt) >= 1.8
    assert increment_exponent(r.Y, r.dt) < 1.8


def test_past_free_noise():
    # with no noise before 0, U3 vanishes and the fBm part equals X
    g = certified_grid(2 ** -4, 1.0, kernels=[GAMMA], alphas=[0.25])
    nz = drive(g, Constant(1.0), 3, 4)
    inc = nz.increments.copy()
    inc[:, : g.origin] = 0.0
    nz0 = DrivenPaths(g, inc, nz.sigma, nz.seed)
    r = decompose(GAMMA, nz0)
    assert np.all(r.U3 == 0) and np.all(r.u3 == 0)
    assert np.allclose(r.A, 0.0) and np.allclose(r.B, r.X, atol=1e-12)


@settings(max_examples=6, deadline=None)
@given(st.floats(0.1, 5.0))
def test_scaling_in_sigma(c):
    g = certified_grid(2 ** -3, 1.0, kernels=[GAMMA], alphas=[0.25])
    r1 = decompose(GAMMA, drive(g, Constant(1.0), 7, 2))
    rc = decompose(GAMMA, drive(g, Constant(c), 7, 2))
    for name in ("Y", "V", "u1", "u2", "u3", "U"):
        a, b = getattr(rc, name), c * getattr(r1, name)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-10 * np.abs(b).max()), name


def test_corollary_split_defaults(coarse):
    nz, r = coarse
    B, A, U = corollary_split(GAMMA, nz)
    assert np.allclose(U, r.U) and np.allclose(B, r.B)


def test_assumption_gate():
    bad = KernelSpec(0.25, Power(1.0), 1.6)
    g = certified_grid(2 ** -3, 1.0, alphas=[0.25])
    nz = drive(g, Constant(1.0), 0, 1)
    with pytest.raises(AssumptionError):
        decompose(bad, nz)
    with pytest.raises(AssumptionError):
        compute_yx(bad, None, nz)


def test_shifted_L_membership():
    assert all(rep.in_H for rep in check_membership_shifted_L(GAMMA))
    reps = check_membership_shifted_L(KernelSpec(0.25, Power(1.0), 2.0), times=(0.0,))
    assert reps[0].in_H is True


def test_increment_exponent_on_brownian():
    rng = np.random.default_rng(0)
    dt = 1e-3
    W = np.cumsum(rng.standard_normal((200, 2000)) * math.sqrt(dt), axis=1)
    assert increment_exponent(W, dt) == pytest.approx(1.0, abs=0.05)
