"""
Ito formulas for BSS paths.

For ``alpha > 0`` the pathwise formula ``f(Y_T) = f(Y_0) + int f'(Y) dY``
is checked through left-point Young sums on dyadic meshes.  For the pure
Volterra process ``B~_t = int_0^t (t-s)^alpha dB_s`` the Malliavin version
adds a trace term, which is deterministic quadrature given the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import KernelSpec, kernel_l2_mass


@dataclass(frozen=True)
class SmoothFn:
    """``f`` with two derivatives and a growth certificate.

    The certificate claims ``max(|f|, |f'|, |f''|)(x) <= c exp(zeta x^2)``.
    """

    f: Callable
    df: Callable
    d2f: Callable
    c: float = 1.0
    zeta: float = 0.0
    name: str = "custom"

    @classmethod
    def identity(cls) -> "SmoothFn":
        return cls(lambda x: np.asarray(x, float), lambda x: np.ones_like(np.asarray(x, float)),
                   lambda x: np.zeros_like(np.asarray(x, float)), 1.0, 0.25, "identity")

    @classmethod
    def square(cls) -> "SmoothFn":
        return cls(lambda x: np.asarray(x, float) ** 2, lambda x: 2.0 * np.asarray(x, float),
                   lambda x: np.full(np.shape(x), 2.0), 2.0, 0.25, "square")

    @classmethod
    def cosine(cls) -> "SmoothFn":
        return cls(np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), 1.0, 0.0, "cosine")

    def certify(self, sample, mass: float | None = None) -> tuple[bool, str]:
        """Check the bound on ``sample`` and, given the kernel mass, that
        ``zeta < 1 / (4 mass)``."""
        x = np.asarray(sample, dtype=float).ravel()
        with np.errstate(over="ignore"):
            env = self.c * np.exp(self.zeta * x * x)
        worst = np.maximum.reduce([np.abs(self.f(x)), np.abs(self.df(x)),
                                   np.abs(np.broadcast_to(self.d2f(x), x.shape))])
        if np.any(worst > env * (1 + 1e-12)):
            return False, "growth bound violated on the sample range"
        if mass is not None and not self.zeta < 1.0 / (4.0 * mass):
            return False, f"zeta={self.zeta} not below 1/(4*mass)={1 / (4 * mass):.4g}"
        return True, ""


class GrowthError(ValueError):
    pass


def young_threshold(alpha: float) -> float:
    """Hoelder order needed of ``f'``: ``1/(alpha + 1/2) - 1``."""
    return 1.0 / (alpha + 0.5) - 1.0


def young_integral(Z_path: np.ndarray, Y_path: np.ndarray, level: int) -> np.ndarray:
    """Left-point sum ``sum Z_{t_i} (Y_{t_{i+1}} - Y_{t_i})`` on mesh level ``level``.

    Paths hold ``2^L + 1`` points; level ``l`` uses every ``2^(L-l)``-th one.
    """
    Z = np.asarray(Z_path, dtype=float)
    Y = np.asarray(Y_path, dtype=float)
    n = Y.shape[-1] - 1
    L = int(round(math.log2(n)))
    if 2 ** L != n or not 0 <= level <= L:
        raise ValueError("need 2^L + 1 points and 0 <= level <= L")
    s = 2 ** (L - level)
    z, y = Z[..., ::s], Y[..., ::s]
    a, b = y[..., :-1], y[..., 1:]
    # two-sum: d + e == b - a exactly, so the sum telescopes without roundoff
    d = b - a
    bv = d + a
    av = d - bv
    e = (b - bv) + (-a - av)
    zl = z[..., :-1]
    terms = np.concatenate([zl * d, zl * e], axis=-1)
    flat = terms.reshape(-1, terms.shape[-1])
    out = np.array([math.fsum(r) for r in flat])
    return out.reshape(terms.shape[:-1]) if terms.ndim > 1 else float(out[0])


def ito_young_verify(f: SmoothFn, Y_path: np.ndarray, levels, mass: float | None = None,
                     alpha: float | None = None) -> np.ndarray:
    """Residuals ``|f(Y_T) - f(Y_0) - sum f'(Y) dY|`` per level.

    Returns an array of shape ``(len(levels),) + batch``.
    """
    if alpha is not None and not alpha > 0:
        raise ValueError("the pathwise formula needs alpha > 0")
    ok, why = f.certify(Y_path, mass)
    if not ok:
        raise GrowthError(why)
    Y = np.asarray(Y_path, dtype=float)
    lhs = f.f(Y[..., -1]) - f.f(Y[..., 0])
    dfY = f.df(Y)
    return np.array([np.abs(lhs - young_integral(dfY, Y, l)) for l in levels])


def _check_alpha(alpha: float) -> None:
    if not alpha > 0:
        raise ValueError("the trace formula is only available for alpha > 0")


def trace_term(f: SmoothFn, Y_path: np.ndarray, alpha: float, T: float) -> np.ndarray:
    """``alpha int_0^T int_s^T f''(Y_u) (u - s)^(2 alpha - 1) du ds``.

    The ``s`` integral is done first, exactly, giving
    ``1/2 int_0^T f''(Y_u) u^(2 alpha) du``; that is integrated with
    ``f''(Y)`` linear on each cell and the weight ``u^(2 alpha)`` exact.
    """
    _check_alpha(alpha)
    Y = np.asarray(Y_path, dtype=float)
    n = Y.shape[-1] - 1
    u = np.linspace(0.0, T, n + 1)
    g = np.broadcast_to(f.d2f(Y), Y.shape)
    q = 2.0 * alpha
    a, b = u[:-1], u[1:]
    h = b - a
    # moments of u^q on [a, b]: M0 = int u^q, M1 = int u^q (u - a) / h
    M0 = (b ** (q + 1) - a ** (q + 1)) / (q + 1)
    M1 = ((b ** (q + 2) - a ** (q + 2)) / (q + 2) - a * M0) / h
    w_left = M0 - M1
    w_right = M1
    total = np.sum(g[..., :-1] * w_left + g[..., 1:] * w_right, axis=-1)
    return 0.5 * total


def trace_term_direct(d2f_const: float, alpha: float, T: float) -> float:
    """Double integral for a constant ``f''`` by nested quadrature (oracle)."""
    from scipy import integrate

    _check_alpha(alpha)
    inner = lambda s: integrate.quad(lambda v: 1.0, 0.0, T - s, weight="alg",
                                     wvar=(2 * alpha - 1, 0.0))[0]
    return alpha * d2f_const * integrate.quad(inner, 0.0, T)[0]


def skorohod_via_residual(f: SmoothFn, Y_path: np.ndarray, alpha: float,
                          T: float) -> np.ndarray:
    """``f(Y_T) - f(Y_0) - trace``: the implied Skorohod integral of ``f'(Y)``."""
    Y = np.asarray(Y_path, dtype=float)
    return f.f(Y[..., -1]) - f.f(Y[..., 0]) - trace_term(f, Y, alpha, T)


def kernel_mass(spec: KernelSpec) -> float:
    """``int phi^2`` for the growth certificate."""
    return kernel_l2_mass(spec)
