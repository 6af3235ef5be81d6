"""
Wiener-type integrals with respect to the Volterra process X.

The operator

    (K f)(t,s) = f(s) K(t,s) + int_s^t [f(u) - f(s)] dK/du(u,s) du

turns a deterministic integrand into a kernel against ``sigma dB``.  By
integration by parts it also equals ``f(t)K(t,s) - int_s^t K(u,s) df(u)``;
:func:`kk_operator` evaluates both and insists they agree.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, signal, special

from .kernels import KernelSpec, eval_mvn_kernel
from .noise_sim import (DrivenPaths, SimGrid, _const, _dense, _lag_weights,
                        _past_atoms, evaluate, mvn_terms, weights_at)


class QuadratureError(RuntimeError):
    pass


class MembershipError(ValueError):
    pass


# --------------------------------------------------------------------------
# integrands
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    rtol: float = 1e-10
    atol: float = 1e-13
    max_panels: int = 400

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.max_panels > 0):
            raise ValueError("tolerances and panel count must be positive")


@dataclass(frozen=True)
class IntegrandSpec:
    """A deterministic integrand ``f`` on ``(-inf, t]``.

    Use the constructors.  Stationary families (``f(s) = g(t - s)``)
    carry ``g`` and ``dg`` so whole paths can be evaluated by convolution.
    """

    f: Callable
    df: Callable
    family: str = "custom"
    tail_exponent: float = math.nan
    t: float | None = None
    g: Callable | None = None
    dg: Callable | None = None
    params: dict = field(default_factory=dict, compare=False)

    @classmethod
    def constant(cls, c: float = 1.0) -> "IntegrandSpec":
        return cls(_const(c), _const(0.0), "constant", 0.0, None, _const(c), _const(0.0),
                   {"c": c})

    @classmethod
    def exp(cls, lam: float, t: float = 0.0) -> "IntegrandSpec":
        """``f_{t,lam}(s) = exp(-lam (t - s))``."""
        if not lam > 0:
            raise ValueError("lam must be positive")
        g = lambda x: np.exp(-lam * np.asarray(x, float))
        dg = lambda x: -lam * np.exp(-lam * np.asarray(x, float))
        return cls(lambda s: g(t - np.asarray(s, float)),
                   lambda s: -dg(t - np.asarray(s, float)),
                   "exp", -math.inf, t, g, dg, {"lam": lam})

    @classmethod
    def power_tail(cls, beta: float, alpha: float, t: float = 0.0) -> "IntegrandSpec":
        """``f_{t,beta,alpha}(s) = (1 + t - s)^(-(alpha+beta))``."""
        k = alpha + beta
        g = lambda x: (1.0 + np.asarray(x, float)) ** (-k)
        dg = lambda x: -k * (1.0 + np.asarray(x, float)) ** (-k - 1)
        return cls(lambda s: g(t - np.asarray(s, float)),
                   lambda s: -dg(t - np.asarray(s, float)),
                   "power_tail", -k, t, g, dg, {"beta": beta, "alpha": alpha})

    @classmethod
    def shifted_L(cls, spec: KernelSpec, t: float = 0.0) -> "IntegrandSpec":
        """``f(s) = L(t - s)``."""
        g, dg = spec.L, spec.dL
        return cls(lambda s: g(t - np.asarray(s, float)),
                   lambda s: -dg(t - np.asarray(s, float)),
                   "shifted_L", -spec.tail_zeta + 1.0, t, g, dg, {"spec": spec})

    @classmethod
    def custom(cls, f: Callable, df: Callable, tail_exponent: float = math.nan,
               t: float | None = None) -> "IntegrandSpec":
        return cls(f, df, "custom", tail_exponent, t)

    def at(self, t: float) -> "IntegrandSpec":
        """Re-anchor a stationary family at a new time ``t``."""
        if self.g is None:
            return self
        g, dg = self.g, self.dg
        return IntegrandSpec(lambda s: g(t - np.asarray(s, float)),
                             lambda s: -dg(t - np.asarray(s, float)),
                             self.family, self.tail_exponent, t, g, dg, self.params)


# --------------------------------------------------------------------------
# the operator
# --------------------------------------------------------------------------

_GL = np.polynomial.legendre.leggauss(12)


def _panel_levels(xmax: float) -> int:
    return int(np.clip(math.ceil(math.log2(max(xmax, 1e-300) / 1e-6)), 8, 60))


def kk_remainder(f: Callable, alpha: float, t, s, levels: int | None = None):
    """``alpha * int_s^t [f(u) - f(s)] (u - s)^(alpha-1) du`` (vectorised).

    Panels are geometric toward both ends of ``[s, t]``.  The panel touching
    ``u = s`` uses Gauss-Jacobi with weight ``v^alpha`` on the smooth
    quotient ``[f(s+v) - f(s)] / v``; every other panel is 12-point
    Gauss-Legendre.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    t, s = np.broadcast_arrays(t, s)
    x = t - s
    if np.any(x <= 0):
        raise ValueError("kk_remainder needs s < t")
    if alpha == 0.0:
        return np.zeros(x.shape)
    K = levels if levels is not None else _panel_levels(float(x.max()))
    fs = np.asarray(f(s), dtype=float)
    xs, ws = _GL
    xe, se, te, fe = x[..., None], s[..., None], t[..., None], fs[..., None]
    total = np.zeros(x.shape)

    # first panel: v in [0, x 2^-K]
    gj_x, gj_w = special.roots_jacobi(12, 0.0, alpha)
    a = xe * 2.0 ** (-K)
    v = a * (gj_x + 1.0) / 2.0
    h = (np.asarray(f(se + v), float) - fe) / v
    total += alpha * ((a[..., 0] / 2.0) ** (alpha + 1)) * (h * gj_w).sum(-1)

    def panel_v(lo, hi):
        # lo, hi are fractions of x measured from s
        v = xe * (lo + (hi - lo) * (xs + 1.0) / 2.0)
        val = (np.asarray(f(se + v), float) - fe) * v ** (alpha - 1.0)
        return alpha * (xe[..., 0] * (hi - lo) / 2.0) * (val * ws).sum(-1)

    def panel_w(lo, hi):
        # lo, hi are fractions of x measured back from t
        w = xe * (lo + (hi - lo) * (xs + 1.0) / 2.0)
        v = xe - w
        val = (np.asarray(f(te - w), float) - fe) * v ** (alpha - 1.0)
        return alpha * (xe[..., 0] * (hi - lo) / 2.0) * (val * ws).sum(-1)

    for k in range(K, 1, -1):
        total += panel_v(2.0 ** (-k), 2.0 ** (-k + 1))
    for k in range(1, K + 1):
        total += panel_w(2.0 ** (-k - 1), 2.0 ** (-k))
    total += panel_w(0.0, 2.0 ** (-K - 1))
    return total


class LagRemainder:
    """``R(x) = alpha int_0^x [g(x-v) - g(x)] v^(alpha-1) dv`` as a callable.

    This is the remainder part of the operator for ``f(s) = g(t - s)``,
    which depends on ``x = t - s`` only.
    """

    def __init__(self, g: Callable, alpha: float):
        self.g = g
        self.alpha = alpha

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return np.zeros(x.shape)
        flat = x.ravel()
        out = np.empty_like(flat)
        g = self.g
        # f(u) = g(-u) with t = 0 and s = -x
        f = lambda u: g(-np.asarray(u, float))
        step = 4096
        for i in range(0, flat.size, step):
            xi = flat[i:i + step]
            out[i:i + step] = kk_remainder(f, self.alpha, 0.0, -xi)
        return out.reshape(x.shape)


def _quad(fn, a, b, quad: QuadratureSpec, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err, info = integrate.quad(fn, a, b, epsabs=quad.atol, epsrel=quad.rtol,
                                            limit=quad.max_panels, full_output=1, **kw)[:3]
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{a}, {b}] did not converge: {exc}") \
                from None
    return val, err, info.get("last", 0)


def _breakpoints(a: float, b: float) -> list:
    """Points at distances ``2^k`` from both ends of ``[a, b]``."""
    d = b - a
    if d <= 1.0:
        return []
    return sorted({p for k in range(int(math.log2(d)) + 1)
                   for p in (b - 2.0 ** k, a + 2.0 ** k) if a < p < b})


def _stieltjes_part(f: IntegrandSpec, alpha: float, s: float, t: float,
                    quad: QuadratureSpec) -> float:
    """``int_s^t (u - s)^alpha f'(u) du``.

    The weight is only singular at ``s``, so it is used on a short first
    panel; the rest gets geometric breakpoints toward both ends so that
    mass concentrated near either end is not missed on long intervals.
    """
    x = t - s
    h = min(1.0, x)
    total = _quad(lambda u: float(f.df(u)), s, s + h, quad, weight="alg",
                  wvar=(alpha, 0.0))[0]
    if x <= h:
        return total
    a = s + h
    pts = _breakpoints(a, t)
    lo = a
    for hi in pts + [t]:
        total += _quad(lambda u: (u - s) ** alpha * float(f.df(u)), lo, hi, quad)[0]
        lo = hi
    return total


def kk_operator(f: IntegrandSpec, alpha: float, t: float, s: float,
                quad: QuadratureSpec = QuadratureSpec(), agree_tol: float = 1e-8,
                return_both: bool = False):
    """Evaluate ``(K f)(t, s)`` in derivative and Stieltjes form.

    Raises
    ------
    QuadratureError
        If either quadrature fails or the two forms differ by more than
        ``agree_tol`` (relative to ``1 + |value|``).
    """
    t, s = float(t), float(s)
    if not s < t:
        raise ValueError("kk_operator needs s < t")
    Kts = float(eval_mvn_kernel(alpha, t, s))
    fs, ft = float(f.f(s)), float(f.f(t))
    x = t - s
    # derivative form, u = s + x y^p removes the endpoint singularity
    if alpha == 0.0:
        deriv = fs * Kts
    else:
        p = 1.0 / (alpha + 1.0)

        def integrand(y):
            if y == 0.0:
                return alpha * p * x ** (alpha + 1) * float(f.df(s))
            u = s + x * y ** p
            return alpha * p * x ** alpha * (float(f.f(u)) - fs) * y ** (p * alpha - 1.0)

        ys = [((u - s) / x) ** (alpha + 1.0) for u in _breakpoints(s, t)]
        r = 0.0
        lo = 0.0
        for hi in ys + [1.0]:
            if hi > lo:
                r += _quad(integrand, lo, hi, quad)[0]
            lo = hi
        deriv = fs * Kts + r
    # Stieltjes form: f(t)K(t,s) - int_s^t K(u,s) f'(u) du
    j1 = _stieltjes_part(f, alpha, s, t, quad)
    past = (-s) ** alpha if s < 0 else 0.0
    stielt = ft * Kts - (j1 - past * (ft - fs))
    if abs(deriv - stielt) > agree_tol * (1.0 + abs(deriv)):
        raise QuadratureError(
            f"operator forms disagree at (t={t}, s={s}): {deriv!r} vs {stielt!r}")
    return (deriv, stielt) if return_both else deriv


def kk_operator_vec(f: IntegrandSpec, alpha: float, t: float, s) -> np.ndarray:
    """Vectorised derivative form on many ``s`` (panel rule, no dual check)."""
    s = np.asarray(s, dtype=float)
    return f.f(s) * eval_mvn_kernel(alpha, t, s) + kk_remainder(f.f, alpha, t, s)


# --------------------------------------------------------------------------
# integrals on simulated noise
# --------------------------------------------------------------------------

def _edge_index(grid: SimGrid, t: float) -> int:
    e = grid.edges
    j = int(np.argmin(np.abs(e - t)))
    if not math.isclose(e[j], t, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"t={t} is not a grid edge")
    return j


def operator_weights(f: IntegrandSpec, alpha: float, grid: SimGrid, t: float) -> np.ndarray:
    """Cell weights of ``(K f)(t, .)`` with the grid's atom convention."""
    j = _edge_index(grid, t)
    sc = grid.coef_points[:j]
    fk = np.asarray(f.f(sc), dtype=float)
    lag = weights_at(grid, alpha, [("lag", _const(1.0))], j)[:j]
    past = _past_atoms(grid, alpha)[:j]
    w = np.zeros(grid.n_cells)
    w[:j] = fk * (lag - past) + kk_remainder(f.f, alpha, grid.edges[j], sc)
    return w


def wiener_integral(f: IntegrandSpec, alpha: float, sigma, noise: DrivenPaths,
                    grid: SimGrid | None = None, t: float = 0.0,
                    form: str = "derivative", check: bool = True) -> np.ndarray:
    """``int_{-inf}^t f(s) dX_s`` computed from the driving noise.

    Parameters
    ----------
    form : {"derivative", "stieltjes"}
        ``"derivative"`` uses the operator in derivative form on each
        cell; ``"stieltjes"`` uses ``f(t)K(t,s) - sum K(t_i,s) df_i`` with
        the grid's Riemann increments of ``f``.
    check : bool
        Run :func:`membership_check` first.

    Returns one value per path.  ``sigma`` is accepted for signature
    symmetry; the volatility is taken from ``noise``.
    """
    grid = grid or noise.grid
    if check:
        rep = membership_check(f, alpha, t)
        if rep.in_H is False:
            raise MembershipError(f"integrand not in H_t (tail exponent "
                                  f"{rep.tail_exponent_fit:.3g})")
    if form == "derivative":
        w = operator_weights(f, alpha, grid, t)
    elif form == "stieltjes":
        w = stieltjes_weights(f, alpha, grid, t)
    else:
        raise ValueError("form must be 'derivative' or 'stieltjes'")
    return noise.xi @ w


def adjoint_weights(grid: SimGrid, alpha: float, terms, c: np.ndarray) -> np.ndarray:
    """``sum_i c_i W(t_i, k)`` over all edges ``i`` for every cell ``k``."""
    nf, nu = grid.n_far, grid.n_uniform
    out = np.zeros(grid.n_cells)
    cu = c[nf:]
    w0, w1 = _lag_weights(grid, alpha, terms)
    # uniform edges onto uniform cells: W = w0[i-k] (+ w1[i-k] P_k)
    corr = signal.fftconvolve(cu, w0[::-1])  # index (i-k) shift
    out[nf:] += corr[nu: nu + nu]
    if w1 is not None:
        P = _past_atoms(grid, alpha)[nf:]
        corr1 = signal.fftconvolve(cu, w1[::-1])
        out[nf:] += P * corr1[nu: nu + nu]
    if nf:
        Wf = _dense(grid, alpha, terms, grid.edges[nf:], np.arange(nf))
        out[:nf] += cu @ Wf
        Wff = _dense(grid, alpha, terms, grid.edges[:nf], np.arange(nf))
        out[:nf] += c[:nf] @ Wff
    return out


def stieltjes_weights(f: IntegrandSpec, alpha: float, grid: SimGrid, t: float) -> np.ndarray:
    """Cell weights of the Stieltjes sum in :func:`lebesgue_stieltjes`."""
    j = _edge_index(grid, t)
    e = grid.edges
    fe = np.asarray(f.f(e[: j + 1]), dtype=float)
    c = np.zeros(e.size)
    c[:j] = -np.diff(fe)
    c[j] += fe[j]
    c[0] -= fe[0]
    return adjoint_weights(grid, alpha, mvn_terms(), c)


def lebesgue_stieltjes(f: IntegrandSpec, x_path: np.ndarray, grid: SimGrid,
                       t: float, alpha: float | None = None,
                       check: bool = True) -> np.ndarray:
    """``f(t) X_t - sum X_{t_k} (f(t_{k+1}) - f(t_k))`` on the X path.

    ``x_path`` holds X on all grid edges (``where="all"``).  On a grid
    truncated at ``t_0`` the simulated X is constant before ``t_0``, so the
    boundary term ``-f(t_0) X_{t_0}`` is included; it vanishes as
    ``t_0 -> -inf``.
    """
    if check and alpha is not None:
        rep = check_ls_conditions(f, alpha, t)
        if not rep.converges:
            raise MembershipError("Lebesgue-Stieltjes condition fails: " + rep.details)
    j = _edge_index(grid, t)
    x = np.atleast_2d(x_path)
    if x.shape[-1] != grid.edges.size:
        raise ValueError("x_path must hold X on every grid edge")
    fe = np.asarray(f.f(grid.edges[: j + 1]), dtype=float)
    out = fe[j] * x[:, j] - fe[0] * x[:, 0] - x[:, :j] @ np.diff(fe)
    return out if np.ndim(x_path) == 2 else out[0]


def wiener_path(f: IntegrandSpec, alpha: float, noise: DrivenPaths,
                where: str = "future") -> np.ndarray:
    """``t -> int_{-inf}^t g(t-s) dX_s`` for a stationary family."""
    if f.g is None:
        raise ValueError("wiener_path needs a stationary integrand family")
    g = f.g
    terms = [("lag", g), ("past", lambda x: -np.asarray(g(x), float)),
             ("one", LagRemainder(g, alpha))]
    return evaluate(noise.grid, alpha, terms, noise.xi, where)


# --------------------------------------------------------------------------
# checkers
# --------------------------------------------------------------------------

@dataclass
class TailFit:
    exponent: float
    r2: float
    confident: bool


def fit_tail(x: np.ndarray, y: np.ndarray, min_points: int = 12,
             r2_min: float = 0.99) -> TailFit:
    """Least-squares slope of ``log|y|`` on ``log|x|``."""
    x, y = np.abs(np.asarray(x, float)), np.abs(np.asarray(y, float))
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < min_points:
        return TailFit(-math.inf if ok.sum() == 0 else math.nan, math.nan, False)
    lx, ly = np.log(x[ok]), np.log(y[ok])
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss = ((ly - ly.mean()) ** 2).sum()
    r2 = 1.0 - ((ly - pred) ** 2).sum() / ss if ss > 0 else 1.0
    return TailFit(float(coef[0]), float(r2), bool(r2 >= r2_min))


@dataclass
class MembershipReport:
    in_H: bool | None
    tail_exponent_fit: float
    r2: float
    partial_integrals: np.ndarray
    windows: np.ndarray
    analytic_ok: bool | None = None
    details: str = ""


def membership_check(f: IntegrandSpec, alpha: float, t: float,
                     s_range=(1e2, 1e5), n_points: int = 16) -> MembershipReport:
    """Decide ``f in H_t`` from the tail of ``s -> (K f)(t,s)^2``.

    The squared operator is evaluated on ``n_points`` log-spaced
    ``s in -[s_range]``; a fitted decay exponent below ``-1`` (with
    ``R^2 >= 0.99``) means the tail integral converges.  ``in_H`` is
    ``None`` when the fit is inconclusive.
    """
    s = -np.geomspace(s_range[0], s_range[1], n_points) + min(t, 0.0)
    vals = kk_operator_vec(f, alpha, t, s) ** 2
    fit = fit_tail(s - t, vals)
    # partial integrals over growing windows [-S, t]
    windows = np.geomspace(10.0, s_range[1], 5)
    parts = []
    for S in windows:
        grid_s = -np.geomspace(1e-6, S, 400)[::-1] + min(t, 0.0)
        v = kk_operator_vec(f, alpha, t, grid_s) ** 2
        parts.append(integrate.trapezoid(v, grid_s))
    parts = np.asarray(parts)
    analytic = None
    details = []
    if f.family == "shifted_L":
        spec = f.params["spec"]
        analytic = spec.tail_zeta > alpha + 1.5
        if not analytic:
            details.append("zeta <= alpha + 3/2")
    if fit.exponent == -math.inf:
        in_H = True
    elif not fit.confident:
        in_H = None
        details.append(f"inconclusive fit (R^2={fit.r2:.3f})")
    else:
        in_H = fit.exponent < -1.0
    if analytic is False:
        in_H = False
    return MembershipReport(in_H, fit.exponent, fit.r2, parts, windows, analytic,
                            "; ".join(details))


@dataclass
class LSReport:
    converges: bool
    tail_exponent: float
    r2: float
    partial_integrals: np.ndarray
    details: str = ""


def check_ls_conditions(f: IntegrandSpec, alpha: float, t: float,
                        s_range=(1e2, 1e6), n_points: int = 16,
                        margin: float = 0.02) -> LSReport:
    """Check ``int |s|^(alpha+1/2) |f'(s)| ds < inf`` at ``-inf``.

    The integrand's decay exponent is fitted on log-spaced ``|s|``; the
    verdict is "converges" when it lies below ``-1 - margin``.  An exact
    ``|s|^-1`` integrand (logarithmic divergence) therefore fails.
    """
    s = -np.geomspace(s_range[0], s_range[1], n_points)
    vals = np.abs(s) ** (alpha + 0.5) * np.abs(np.asarray(f.df(s), float))
    fit = fit_tail(s, vals)
    windows = np.geomspace(10.0, s_range[1], 6)
    parts = []
    for S in windows:
        y = np.linspace(0.0, math.log(S), 2000)
        u = -np.exp(y)
        v = np.abs(u) ** (alpha + 0.5) * np.abs(np.asarray(f.df(u), float)) * np.exp(y)
        parts.append(integrate.trapezoid(v, y))
    if vals[-1] == 0 or np.all(vals == 0):
        # underflow: faster than any power
        return LSReport(True, -math.inf, 1.0, np.asarray(parts), "")
    ok = fit.confident and fit.exponent < -1.0 - margin
    details = "" if ok else f"integrand tail exponent {fit.exponent:.4f} (R^2 {fit.r2:.4f})"
    return LSReport(bool(ok), fit.exponent, fit.r2, np.asarray(parts), details)


# --------------------------------------------------------------------------
# Langevin and fractional OU
# --------------------------------------------------------------------------

@dataclass
class LangevinResult:
    t: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    xi0: np.ndarray
    residual: np.ndarray  # max_t |Z - xi - X + lam int_0^t Z|


def langevin_solve(lam: float, alpha: float, sigma, noise: DrivenPaths,
                   grid: SimGrid | None = None) -> LangevinResult:
    """Solve ``Z_t = xi + X_t - lam int_0^t Z_s ds`` pathwise.

    ``Z_t = X_t - sum_{t_k < t} X_{t_k} [e^{-lam(t - t_{k+1})} - e^{-lam(t - t_k)}]``,
    the Riemann-Stieltjes form of ``X_t - lam int e^{-lam(t-s)} X_s ds``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    grid = grid or noise.grid
    e = grid.edges
    X = evaluate(grid, alpha, mvn_terms(), noise.xi, "all")
    o = grid.origin
    X[:, o] = 0.0
    # D_j = e^{-lam t_j} C_j with C_j = sum_{k<j} X_k (e^{lam t_{k+1}} - e^{lam t_k});
    # past terms are bounded since t <= 0 there
    inc = np.diff(np.exp(lam * e[: o + 1]))
    D0 = X[:, :o] @ inc
    # D_{j+1} = q D_j + (1 - q) X_j on the uniform future edges
    q = math.exp(-lam * grid.dt)
    Xf = X[:, o:]
    D = signal.lfilter([0.0, 1.0 - q], [1.0, -q], Xf, axis=1,
                       zi=D0[:, None])[0]
    Zf = Xf - D
    xi0 = Zf[:, 0].copy()
    dt = grid.dt
    integ = np.concatenate([np.zeros((Zf.shape[0], 1)),
                            np.cumsum(0.5 * dt * (Zf[:, 1:] + Zf[:, :-1]), axis=1)], axis=1)
    res = np.abs(Zf - xi0[:, None] - Xf + lam * integ).max(axis=1)
    return LangevinResult(grid.times("future"), Zf, Xf, xi0, res)


@dataclass
class FracOUResult:
    t: np.ndarray
    Z: np.ndarray
    wiener_part: np.ndarray
    U: np.ndarray


def fractional_ou(lam: float, H: float, sigma, noise: DrivenPaths,
                  grid: SimGrid | None = None) -> FracOUResult:
    """Fractional OU ``Z^H_t = int e^{-lam(t-s)} dB^{H,sigma}_s``.

    ``Z^H = int f_{t,lam} dX + U`` with
    ``U_t = sum_{t_k<0} e^{-lam(t - t_k)} (-t_k)^{H-1/2} sigma dB_k``.
    """
    if not 0 < H < 1:
        raise ValueError("H must lie in (0, 1)")
    grid = grid or noise.grid
    alpha = H - 0.5
    f = IntegrandSpec.exp(lam)
    W = wiener_path(f, alpha, noise, "future")
    P = _past_atoms(grid, alpha) if alpha != 0 else (grid.edges[1:] <= 0).astype(float)
    t = grid.times("future")
    sc = grid.coef_points
    # exp(-lam (t - s)) = exp(-lam t) * exp(lam s); s <= 0 keeps it bounded
    base = noise.xi @ (P * np.exp(lam * np.minimum(sc, 0.0)))
    U = base[:, None] * np.exp(-lam * t)[None, :]
    return FracOUResult(t, W + U, W, U)


# --------------------------------------------------------------------------
# l_t asymptotics
# --------------------------------------------------------------------------

def compute_ell(f: Callable, alpha: float, t: float, s: float,
                quad: QuadratureSpec = QuadratureSpec(1e-12, 1e-300, 400)) -> float:
    """``l_t(s) = int_s^t [(r-s)_+^alpha - (-s)_+^alpha] f(r) dr``."""
    t, s = float(t), float(s)
    if not s < t:
        raise ValueError("compute_ell needs s < t")
    if s >= 0:
        return _quad(lambda r: float(f(r)), s, t, quad, weight="alg",
                     wvar=(alpha, 0.0))[0]
    m = -s
    # (r-s)^a - (-s)^a = m^a expm1(a log1p(r/m)), accurate near r = 0
    g = lambda r: m ** alpha * math.expm1(alpha * math.log1p(r / m)) * float(f(r)) \
        if r > s else -m ** alpha * float(f(r))
    pts = [p for p in (s + 1.0, -1.0) if s < p < 0]
    left = _quad(g, s, 0.0, quad, points=pts or None)[0]
    right = _quad(g, 0.0, t, quad)[0] if t > 0 else 0.0
    return left + right


def _ell_lead(f: Callable, alpha: float, s: float,
              quad: QuadratureSpec = QuadratureSpec(1e-12, 1e-300, 400)) -> float:
    """``|s|^(alpha+1) int_0^1 [(1-r)^alpha - 1] f(s r) dr``."""
    m = -s
    g = lambda r: math.expm1(alpha * math.log1p(-r)) * float(f(s * r)) if r < 1 else \
        -float(f(s))
    pts = [p for p in (1.0 / m, 10.0 / m, 100.0 / m) if p < 1]
    return m ** (alpha + 1) * _quad(g, 0.0, 1.0, quad, points=pts or None)[0]


@dataclass
class EllFit:
    remainder_exponent: float
    remainder_r2: float
    ell2_exponent: float
    ell2_r2: float
    s: np.ndarray
    ell: np.ndarray
    remainder: np.ndarray


def ell_asymptotic_fit(f: Callable, alpha: float, t: float,
                       s_range=(1e2, 1e4), n_points: int = 16) -> EllFit:
    """Fit the decay of ``l_t(s) - lead(s)`` and of ``l_t(s)^2`` at ``-inf``."""
    s = -np.geomspace(s_range[0], s_range[1], n_points)
    ell = np.array([compute_ell(f, alpha, t, si) for si in s])
    lead = np.array([_ell_lead(f, alpha, si) for si in s])
    rem = ell - lead
    f1 = fit_tail(s, rem)
    f2 = fit_tail(s, ell ** 2)
    return EllFit(f1.exponent, f1.r2, f2.exponent, f2.r2, s, ell, rem)


# --------------------------------------------------------------------------
# stochastic Fubini conditions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FubiniField:
    """Integrand ``psi(u, s)`` for the Fubini checks.

    ``mode="l2"`` evaluates ``int (int psi(u,s)^2 ds)^(1/2) du``;
    ``mode="l1"`` evaluates ``int int |psi(u,s)| ds du``.  The inner
    integral runs over ``s in (s_lo, s_hi(u))`` and is truncated at
    ``-S`` for the window ``S``.
    """

    psi: Callable[[float, float], float]
    u_range: tuple
    s_hi: Callable[[float], float]
    s_lo: float = -math.inf
    mode: str = "l2"


@dataclass
class FubiniReport:
    converges: bool
    value: float
    window_values: np.ndarray
    windows: np.ndarray


def check_fubini_conditions(field_spec: FubiniField, grid: SimGrid | None = None,
                            windows=(1e1, 1e2, 1e3, 1e4, 1e5, 1e6),
                            rtol: float = 1e-4) -> FubiniReport:
    """Evaluate a Fubini-type integrability condition on growing windows.

    Converges when the last two window values agree to ``rtol``.
    """
    u0, u1 = field_spec.u_range
    quad = QuadratureSpec(1e-10, 1e-14, 400)

    def inner(u, S):
        hi = float(field_spec.s_hi(u))
        lo = max(field_spec.s_lo, -S)
        if hi <= lo:
            return 0.0
        if field_spec.mode == "l2":
            fn = lambda s: float(field_spec.psi(u, s)) ** 2
        else:
            fn = lambda s: abs(float(field_spec.psi(u, s)))
        # integrate in log distance from the upper end to cope with tails
        d = hi - lo

        def g(y):
            r = math.exp(y)
            return fn(hi - r) * r
        val = _quad(g, math.log(d) - 40.0, math.log(d), quad)[0]
        return math.sqrt(val) if field_spec.mode == "l2" else val

    vals = []
    for S in windows:
        vals.append(_quad(lambda u: inner(u, S), u0, u1, quad)[0])
    vals = np.asarray(vals)
    conv = bool(abs(vals[-1] - vals[-2]) <= rtol * max(abs(vals[-1]), 1e-300))
    return FubiniReport(conv, float(vals[-1]), vals, np.asarray(windows, float))
