import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bsslab.noise_sim import (Constant, SimGrid, certified_grid, drive, evaluate, mvn_terms)
from bsslab.wiener import (FubiniField, IntegrandSpec, MembershipError, QuadratureError,
                           QuadratureSpec, check_fubini_conditions, check_ls_conditions,
                           compute_ell, ell_asymptotic_fit, fractional_ou, kk_operator,
                           kk_operator_vec, langevin_solve, lebesgue_stieltjes,
                           membership_check, wiener_integral, wiener_path)


def mvn(alpha, t, s):
    pos = lambda x: max(x, 0.0) ** alpha if x > 0 else 0.0
    return pos(t - s) - pos(-s)


def exp_operator_series(lam, alpha, t, s, terms=80):
    # e^{-lam x} [K(t,s) + alpha sum_n lam^n x^{n+alpha} / (n! (n+alpha))]
    x = t - s
    acc = 0.0
    term = 1.0
    for n in range(1, terms):
        term *= lam * x / n
        acc += term / (n + alpha)
    return math.exp(-lam * x) * (mvn(alpha, t, s) + alpha * x ** alpha * acc)


# --------------------------------------------------------------------------
# the operator
# --------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [-0.3, 0.25])
@pytest.mark.parametrize("t,s", [(1.0, 0.5), (1.0, -2.0), (0.0, -0.01), (2.0, -30.0)])
def test_constant_integrand_gives_kernel(alpha, t, s):
    f = IntegrandSpec.constant(2.5)
    assert kk_operator(f, alpha, t, s) == pytest.approx(2.5 * mvn(alpha, t, s), rel=1e-10,
                                                        abs=1e-13)


@pytest.mark.parametrize("alpha", [-0.4, -0.1, 0.3])
@pytest.mark.parametrize("t,s", [(0.0, -0.3), (1.0, 0.2), (1.5, -4.0)])
def test_exp_operator_series(alpha, t, s):
    lam = 0.8
    d, st_ = kk_operator(IntegrandSpec.exp(lam, t), alpha, t, s, return_both=True)
    ref = exp_operator_series(lam, alpha, t, s)
    assert d == pytest.approx(ref, rel=1e-9, abs=1e-12)
    assert st_ == pytest.approx(ref, rel=1e-8, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(1e-3, 50.0))
def test_dual_forms_agree_power_tail(t, gap):
    f = IntegrandSpec.power_tail(1.0, 0.25, t)
    d, s_ = kk_operator(f, 0.25, t, t - gap, return_both=True)
    assert abs(d - s_) <= 1e-8 * (1 + abs(d))


def test_vectorised_operator_matches_quadrature():
    f = IntegrandSpec.power_tail(0.7, -0.2, 1.0)
    s = np.array([-300.0, -5.0, -0.4, 0.0, 0.3, 0.999])
    ref = np.array([kk_operator(f, -0.2, 1.0, x) for x in s])
    assert np.allclose(kk_operator_vec(f, -0.2, 1.0, s), ref, rtol=1e-8, atol=1e-12)


def test_operator_rejects_s_at_or_after_t():
    f = IntegrandSpec.constant()
    for s in (1.0, 1.5):
        with pytest.raises(ValueError):
            kk_operator(f, 0.25, 1.0, s)


def test_disagreement_raises():
    # a derivative that does not belong to f breaks the integration by parts
    f = IntegrandSpec.custom(lambda s: np.exp(np.asarray(s, float)),
                             lambda s: 2 * np.exp(np.asarray(s, float)))
    with pytest.raises(QuadratureError, match="disagree"):
        kk_operator(f, 0.25, 0.0, -1.0)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(rtol=0.0)


# --------------------------------------------------------------------------
# integrals on simulated noise
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def noise25():
    g = certified_grid(2 ** -6, 1.0, alphas=[0.25])
    return drive(g, Constant(1.0), 11, 8)


def test_unit_integrand_reproduces_x(noise25):
    nz = noise25
    g = nz.grid
    X = evaluate(g, 0.25, mvn_terms(), nz.xi, "future")
    for t in (0.5, 1.0):
        W = wiener_integral(IntegrandSpec.constant(1.0), 0.25, None, nz, t=t)
        # far cells: lag and past atoms near 1e2 cancel against increments near 1e5
        assert np.allclose(W, X[:, int(round(t / g.dt))], rtol=0, atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_linearity(a, b):
    g = SimGrid.uniform(2 ** -4, 1.0, 4.0)
    nz = drive(g, Constant(1.0), 5, 3)
    f1, f2 = IntegrandSpec.exp(1.0, 1.0), IntegrandSpec.power_tail(1.0, 0.25, 1.0)
    mix = IntegrandSpec.custom(lambda s: a * f1.f(s) + b * f2.f(s),
                               lambda s: a * f1.df(s) + b * f2.df(s))
    lhs = wiener_integral(mix, 0.25, None, nz, t=1.0, check=False)
    rhs = a * wiener_integral(f1, 0.25, None, nz, t=1.0, check=False) + \
        b * wiener_integral(f2, 0.25, None, nz, t=1.0, check=False)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def test_wiener_path_matches_pointwise(noise25):
    nz = noise25
    f = IntegrandSpec.exp(1.5)
    path = wiener_path(f, 0.25, nz)
    for t in (0.25, 1.0):
        j = int(round(t / nz.grid.dt))
        w = wiener_integral(f.at(t), 0.25, None, nz, t=t, check=False)
        assert np.allclose(path[:, j], w, rtol=1e-9, atol=1e-9)


def test_derivative_and_stieltjes_routes_converge():
    # both routes target the same integral; the gap shrinks with the mesh
    gaps = []
    for dt in (2 ** -4, 2 ** -6):
        g = certified_grid(dt, 0.5, alphas=[0.25])
        nz = drive(g, Constant(1.0), 2, 200)
        f = IntegrandSpec.exp(1.0, 0.5)
        a = wiener_integral(f, 0.25, None, nz, t=0.5, form="derivative", check=False)
        b = wiener_integral(f, 0.25, None, nz, t=0.5, form="stieltjes", check=False)
        gaps.append(np.sqrt(np.mean((a - b) ** 2)))
    assert gaps[1] < gaps[0]


def test_isometry_monte_carlo():
    alpha, lam = 0.25, 1.0
    f = IntegrandSpec.exp(lam, 0.0)
    g = certified_grid(2 ** -7, 0.125, alphas=[alpha])
    nz = drive(g, Constant(1.0), 17, 4000)
    W = wiener_integral(f, alpha, None, nz, t=0.0)
    sq = lambda s: kk_operator(f, alpha, 0.0, s) ** 2
    target = integrate.quad(sq, -1.0, 0.0, limit=200)[0] + \
        integrate.quad(sq, -np.inf, -1.0, limit=200)[0]
    m = np.mean(W ** 2)
    se = np.std(W ** 2, ddof=1) / math.sqrt(W.size)
    assert abs(m - target) <= 4 * se + 0.02 * target


def test_membership_error_raised():
    g = SimGrid.uniform(0.25, 1.0, 2.0)
    nz = drive(g, Constant(1.0), 0, 2)
    bad = IntegrandSpec.custom(lambda s: np.abs(np.asarray(s, float)) ** 0.4,
                               lambda s: -0.4 * np.abs(np.asarray(s, float)) ** -0.6)
    with pytest.raises(MembershipError):
        wiener_integral(bad, 0.25, None, nz, t=0.0)


def test_lebesgue_stieltjes_constant_is_exact(noise25):
    nz = noise25
    g = nz.grid
    Xall = evaluate(g, 0.25, mvn_terms(), nz.xi, "all")
    out = lebesgue_stieltjes(IntegrandSpec.constant(3.0), Xall, g, 1.0, alpha=0.25)
    assert np.allclose(out, 3.0 * Xall[:, -1], rtol=1e-14, atol=1e-14)


def test_lebesgue_stieltjes_rejects_divergent():
    g = SimGrid.uniform(0.25, 1.0, 1.0)
    a = 0.25
    df = lambda s: np.abs(np.asarray(s, float)) ** -(a + 1.5)
    f = IntegrandSpec.custom(df, df)
    with pytest.raises(MembershipError):
        lebesgue_stieltjes(f, np.zeros(g.edges.size), g, 1.0, alpha=a)


# --------------------------------------------------------------------------
# membership and LS conditions
# --------------------------------------------------------------------------

def test_membership_verdicts():
    assert membership_check(IntegrandSpec.exp(1.0), 0.25, 0.0).in_H is True
    rep = membership_check(IntegrandSpec.power_tail(1.0, 0.25), 0.25, 0.0)
    assert rep.in_H is True and rep.tail_exponent_fit < -1
    bad = IntegrandSpec.custom(lambda s: np.abs(np.asarray(s, float)) ** 0.4,
                               lambda s: -0.4 * np.abs(np.asarray(s, float)) ** -0.6)
    rep = membership_check(bad, 0.25, 0.0)
    assert rep.in_H is False and rep.tail_exponent_fit > -1


@pytest.mark.parametrize("alpha", [-0.3, 0.25])
def test_ls_conditions(alpha):
    assert check_ls_conditions(IntegrandSpec.exp(1.0), alpha, 0.0).converges
    assert check_ls_conditions(IntegrandSpec.power_tail(1.0, alpha), alpha, 0.0).converges
    df = lambda s: np.abs(np.asarray(s, float)) ** -(alpha + 1.5)
    rep = check_ls_conditions(IntegrandSpec.custom(df, df), alpha, 0.0)
    assert not rep.converges and rep.tail_exponent == pytest.approx(-1.0, abs=1e-6)


# --------------------------------------------------------------------------
# Langevin and fractional OU
# --------------------------------------------------------------------------

def test_langevin_closed_form_vs_wiener_and_residual():
    lam, a = 1.3, 0.25
    ratios = []
    for dt in (2 ** -5, 2 ** -7):
        g = certified_grid(dt, 1.0, alphas=[a])
        nz = drive(g, Constant(1.0), 4, 6)
        sol = langevin_solve(lam, a, None, nz)
        for t in (0.5, 1.0):
            zw = wiener_integral(IntegrandSpec.exp(lam, t), a, None, nz, t=t,
                                 form="stieltjes", check=False)
            assert np.max(np.abs(zw - sol.Z[:, int(round(t / dt))])) <= 1e-10
        ratios.append(sol.residual.max() / dt)
    assert max(ratios) / min(ratios) <= 2.0


def test_langevin_zero_noise():
    g = SimGrid.uniform(0.1, 1.0, 2.0)
    nz = drive(g, Constant(0.0), 0, 2)
    sol = langevin_solve(1.0, 0.25, None, nz)
    assert np.all(sol.Z == 0) and np.all(sol.xi0 == 0)
    with pytest.raises(ValueError):
        langevin_solve(0.0, 0.25, None, nz)


def test_fractional_ou_half_is_classical():
    lam, dt = 1.0, 0.01
    g = SimGrid.uniform(dt, 0.5, 12.0)
    nz = drive(g, Constant(1.0), 9, 4000)
    Z = fractional_ou(lam, 0.5, None, nz).Z[:, -1]
    v = Z ** 2
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - 1 / (2 * lam)) <= 4 * se + 2 * lam * dt / (2 * lam)


def test_fractional_ou_split():
    g = certified_grid(2 ** -5, 1.0, alphas=[-0.2])
    nz = drive(g, Constant(1.0), 3, 3)
    res = fractional_ou(0.7, 0.3, None, nz)
    assert np.allclose(res.Z, res.wiener_part + res.U)
    # U decays deterministically in t
    assert np.allclose(res.U[:, -1], res.U[:, 0] * math.exp(-0.7), rtol=1e-12)
    with pytest.raises(ValueError):
        fractional_ou(0.7, 1.0, None, nz)


# --------------------------------------------------------------------------
# l_t and Fubini
# --------------------------------------------------------------------------

def test_ell_zero_integrand():
    assert compute_ell(lambda r: 0.0, 0.25, 1.0, -5.0) == 0.0


def test_ell_against_direct_quadrature():
    f = lambda r: (1 + abs(r)) ** -2
    a, t, s = 0.25, 1.0, -3.0
    g = lambda r: ((r - s) ** a - (-s) ** a) * f(r)
    ref = integrate.quad(g, s, t, points=[0.0], limit=200, epsrel=1e-12)[0]
    assert compute_ell(f, a, t, s) == pytest.approx(ref, rel=1e-9)


def test_ell_asymptotics():
    a = 0.25
    fit = ell_asymptotic_fit(lambda r: (1 + abs(r)) ** -2, a, 1.0)
    assert fit.remainder_exponent <= a - 1 + 0.05
    assert fit.ell2_exponent < -1


def test_fubini_closed_form():
    H, t = 0.3, 1.0
    fld = FubiniField(lambda u, s: (u - s) ** (H - 1.5), (0.0, t), lambda u: 0.0)
    rep = check_fubini_conditions(fld)
    assert rep.converges
    assert rep.value == pytest.approx(t ** H / (H * math.sqrt(2 - 2 * H)), rel=1e-5)


def test_fubini_compact_support():
    fld = FubiniField(lambda u, s: 1.0, (0.0, 2.0), lambda u: 0.0, s_lo=-1.0, mode="l1")
    rep = check_fubini_conditions(fld)
    assert rep.converges and rep.value == pytest.approx(2.0, rel=1e-8)


def test_fubini_divergent_window_values_grow():
    fld = FubiniField(lambda u, s: 1.0 / (1.0 + abs(s)), (0.0, 1.0), lambda u: 0.0,
                      mode="l1")
    rep = check_fubini_conditions(fld)
    assert not rep.converges and np.all(np.diff(rep.window_values) > 0)
