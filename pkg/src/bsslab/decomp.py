"""
Pathwise decomposition of a BSS process into a rough Volterra part and a
smooth remainder.

With ``X`` the Volterra process of the Mandelbrot-Van Ness kernel and
``Y^X_t = int L(t-s) dX_s``, the difference ``V = Y^X - Y`` has absolutely
continuous paths.  It splits as ``V = U1 + U2 + U3`` where

* ``U1 = int [L(0) - L(t-s)] K(t,s) sigma dB``,
* ``U2 = Y^X - L(0) X``,
* ``U3 = -int_{s<0} L(t-s) (-s)^alpha sigma dB``,

each with a density ``u^i``.  All paths are linear functionals of the same
noise, built from the kernel descriptions below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, check_assumption1
from .noise_sim import (DrivenPaths, aggregate, certify, evaluate, mvn_terms,
                        simulate_vmfbm)
from .wiener import IntegrandSpec, LagRemainder, membership_check


class AssumptionError(ValueError):
    pass


def _require(spec: KernelSpec) -> None:
    rep = check_assumption1(spec)
    if not rep.passes:
        raise AssumptionError("kernel fails the decay assumption: " + rep.details)


def _neg(c):
    return lambda x: -np.asarray(c(x), dtype=float)


def _diff_L0(spec):
    L0 = spec.L0
    return lambda x: L0 - np.asarray(spec.L(x), dtype=float)


def _quotient(spec):
    # alpha [L(0) - L(x)] / x, finite as x -> 0
    L0, a = spec.L0, spec.alpha
    d0 = float(spec.dL(0.0))

    def g(x):
        x = np.asarray(x, dtype=float)
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, a * (L0 - spec.L(safe)) / safe, -a * d0)
    return g


def kernel_terms(spec: KernelSpec) -> dict:
    """Atom descriptions of every process in the decomposition."""
    L, dL = spec.L, spec.dL
    RL = LagRemainder(L, spec.alpha)
    RdL = LagRemainder(dL, spec.alpha)
    d = _diff_L0(spec)
    return {
        "Y": [("lag", L)],
        "X": mvn_terms(),
        "YX": [("lag", L), ("past", _neg(L)), ("one", RL)],
        "U1": [("lag", d), ("past", _neg(d))],
        "U2": [("lag", _neg(d)), ("past", d), ("one", RL)],
        "U3": [("past", _neg(L))],
        "u1": [("lag", _neg(dL)), ("past", dL), ("lag", _quotient(spec))],
        "u2": [("lag", dL), ("past", _neg(dL)), ("one", RdL)],
        "u3": [("past", _neg(dL))],
    }


@dataclass
class DecompositionResult:
    """Paths on the future grid ``[0, T]``, one row per path."""

    t: np.ndarray
    Y: np.ndarray
    YX: np.ndarray
    V: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    U3: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    u2_direct: np.ndarray
    X: np.ndarray
    B: np.ndarray
    A: np.ndarray
    U: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


def compute_yx(spec: KernelSpec, sigma, noise: DrivenPaths, grid=None,
               check: bool = True) -> np.ndarray:
    """``Y^X_t = int L(t-s) dX_s`` on the future grid."""
    if check:
        _require(spec)
    g = grid or noise.grid
    return evaluate(g, spec.alpha, kernel_terms(spec)["YX"], noise.xi, "future")


def _u2_direct(spec: KernelSpec, noise: DrivenPaths, X_all: np.ndarray) -> np.ndarray:
    """``L'(0) X_t + sum_i L''(t - t_i) X_{t_i} w_i`` (left-point Riemann)."""
    g = noise.grid
    w = X_all[:, :-1] * g.widths[None, :]
    s = evaluate(g, spec.alpha, [("one", spec.d2L)], w, "future")
    # evaluate() applies alpha-atoms only to lag/past kinds, so "one" is plain
    return float(spec.dL(0.0)) * X_all[:, g.origin:] + s


def compute_u_processes(spec: KernelSpec, sigma, noise: DrivenPaths, grid=None,
                        check: bool = True):
    """Return ``(u1, u2, u3, U1, U2, U3)`` on the future grid."""
    if check:
        _require(spec)
    g = grid or noise.grid
    kt = kernel_terms(spec)
    ev = lambda name: evaluate(g, spec.alpha, kt[name], noise.xi, "future")
    return ev("u1"), ev("u2"), ev("u3"), ev("U1"), ev("U2"), ev("U3")


def decompose(spec: KernelSpec, noise: DrivenPaths, check: bool = True) -> DecompositionResult:
    """Every path of the decomposition plus its exact-identity residuals."""
    if check:
        _require(spec)
        certify(noise.grid, kernels=[spec], alphas=[spec.alpha])
    g = noise.grid
    a = spec.alpha
    kt = kernel_terms(spec)
    ev = lambda name, where="future": evaluate(g, a, kt[name], noise.xi, where)
    Y, YX = ev("Y"), ev("YX")
    X_all = ev("X", "all")
    X_all[:, g.origin] = 0.0
    X = X_all[:, g.origin:]
    U1, U2, U3 = ev("U1"), ev("U2"), ev("U3")
    u1, u2, u3 = ev("u1"), ev("u2"), ev("u3")
    u2d = _u2_direct(spec, noise, X_all)
    V = YX - Y
    B, A, U = corollary_split(spec, noise, Y=Y, U=-(U1 + U3))
    scale = max(float(np.abs(Y).max()), 1e-300)
    diag = {
        "identity_V": float(np.abs(V - (U1 + U2 + U3)).max()) / scale,
        "identity_U": float(np.abs(U - (Y - spec.L0 * X)).max()) / scale,
        "reconstruction": float(np.abs(Y - spec.L0 * B - U - spec.L0 * A).max()) / scale,
        "u2_dual": float(np.sqrt(np.mean((u2 - u2d) ** 2))),
    }
    return DecompositionResult(g.times("future"), Y, YX, V, U1, U2, U3, u1, u2, u3, u2d,
                               X, B, A, U, diag)


def corollary_split(spec: KernelSpec, noise: DrivenPaths, Y=None, U=None):
    """``Y = L(0) B^{H,sigma} + U + L(0) A`` on ``[0, T]``.

    ``B^{H,sigma}`` is the volatility modulated fBm with ``H = alpha + 1/2``
    (simulated through its own split ``X - A``), ``A`` vanishes on
    ``t >= 0`` and ``U = -(U1 + U3)`` comes from the decomposition kernels.
    Returns ``(B, A, U)``.
    """
    g = noise.grid
    a = spec.alpha
    if Y is None:
        Y = evaluate(g, a, [("lag", spec.L)], noise.xi, "future")
    if U is None:
        kt = kernel_terms(spec)
        U = -(evaluate(g, a, kt["U1"], noise.xi, "future")
              + evaluate(g, a, kt["U3"], noise.xi, "future"))
    vm = simulate_vmfbm(a + 0.5, None, g, noise=noise)
    return vm.bh, vm.a, U


# --------------------------------------------------------------------------
# fundamental theorem checks
# --------------------------------------------------------------------------

@dataclass
class FTCReport:
    t: np.ndarray
    residuals: dict      # name -> (n_paths, len(t)) absolute residuals
    max_residual: dict   # name -> RMS over paths of the max over t
    identity_V: float


def _trapz_cum(u: np.ndarray, dt: float) -> np.ndarray:
    c = np.cumsum(0.5 * dt * (u[:, 1:] + u[:, :-1]), axis=1)
    return np.concatenate([np.zeros((u.shape[0], 1)), c], axis=1)


def verify_ftc(result: DecompositionResult, grid=None, ladder=(0.25, 0.5, 0.75, 1.0)) -> FTCReport:
    """``|int_0^t u^i - (U^i_t - U^i_0)|`` on a ladder of fractions of ``T``."""
    dt = result.dt
    n = result.t.size - 1
    idx = np.array([int(round(f * n)) for f in ladder])
    res, mx = {}, {}
    for i in (1, 2, 3):
        u = getattr(result, f"u{i}")
        U = getattr(result, f"U{i}")
        r = np.abs(_trapz_cum(u, dt)[:, idx] - (U[:, idx] - U[:, [0]]))
        res[f"u{i}"] = r
        mx[f"u{i}"] = float(np.sqrt(np.mean(r.max(axis=1) ** 2)))
    return FTCReport(result.t[idx], res, mx, result.diagnostics.get("identity_V", math.nan))


def ftc_orders(spec: KernelSpec, noise: DrivenPaths, check: bool = True):
    """FTC residuals on the noise's mesh and on one coarsening.

    Returns ``(orders, fine_report, coarse_report)`` where ``orders[name]``
    is ``log2(coarse / fine)``.
    """
    fine = verify_ftc(decompose(spec, noise, check))
    coarse = verify_ftc(decompose(spec, aggregate(noise, merge_far=True), check))
    orders = {k: math.log2(coarse.max_residual[k] / fine.max_residual[k])
              if fine.max_residual[k] > 0 else math.inf for k in fine.max_residual}
    return orders, fine, coarse


def increment_exponent(paths: np.ndarray, dt: float, lags=(1, 2, 4, 8, 16, 32)) -> float:
    """Slope of ``log E|P_{t+h} - P_t|^2`` against ``log h``."""
    m = [np.mean((paths[:, k:] - paths[:, :-k]) ** 2) for k in lags]
    return float(np.polyfit(np.log(np.asarray(lags) * dt), np.log(m), 1)[0])


def check_membership_shifted_L(spec: KernelSpec, times=(0.0, 0.5, 1.0)) -> list:
    """``L(t - .)`` membership reports at the given times."""
    return [membership_check(IntegrandSpec.shifted_L(spec, t), spec.alpha, t) for t in times]
