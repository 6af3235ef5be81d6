"""
Kernel evaluators for Brownian semistationary and Volterra processes.

The BSS kernel is ``phi(x) = L(x) * x**alpha`` for ``x > 0`` with ``L``
slowly varying at zero.  Three families of ``L`` are supported:

    Gamma(lam)     L(x) = lam**(alpha+1) / Gamma(alpha+1) * exp(-lam*x)
    Power(beta)    L(x) = (1 + x)**(-(alpha+beta))
    Custom(...)    user supplied L, L', L'' and tail exponent zeta0

The Mandelbrot-Van Ness kernel ``K(t,s) = (t-s)_+^alpha - (-s)_+^alpha``
and the Whittle-Matern covariance live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import integrate, special

ArrayLike = Union[float, np.ndarray]


def validate_alpha(alpha: float) -> float:
    a = float(alpha)
    if not np.isfinite(a) or a == 0.0 or abs(a) >= 0.5:
        raise ValueError("alpha must lie in (-1/2,0)∪(0,1/2)")
    return a


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Gamma:
    """Exponential damping, ``L(x) = lam^(alpha+1)/Gamma(alpha+1) e^(-lam x)``."""

    lam: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise ValueError("Gamma family needs lam > 0")


@dataclass(frozen=True)
class Power:
    """Power damping, ``L(x) = (1+x)^(-(alpha+beta))``."""

    beta: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0.5 and np.isfinite(self.beta)):
            raise ValueError("Power family needs beta > 1/2")


@dataclass(frozen=True)
class Custom:
    """User supplied ``L`` with its first two derivatives.

    Parameters
    ----------
    L, dL, d2L : callable
        Vectorised evaluators on ``x >= 0``.
    zeta0 : float
        Claimed polynomial decay exponent of ``L'``.
    """

    L: Callable[[np.ndarray], np.ndarray]
    dL: Callable[[np.ndarray], np.ndarray]
    d2L: Callable[[np.ndarray], np.ndarray]
    zeta0: float = math.inf


Family = Union[Gamma, Power, Custom]


@dataclass(frozen=True)
class KernelSpec:
    """The pair ``(alpha, L)``.

    Parameters
    ----------
    alpha : float
        Roughness index in ``(-1/2, 0) U (0, 1/2)``.
    family : Gamma, Power or Custom
        The slowly varying factor.
    zeta0 : float, optional
        Tail exponent used for the decay condition on ``L'``.  Defaults to
        ``inf`` for Gamma, the midpoint of ``(alpha+3/2, alpha+beta+1)``
        for Power and ``family.zeta0`` for Custom.
    """

    alpha: float
    family: Family = field(default_factory=Gamma)
    zeta0: float | None = None

    def __post_init__(self):
        validate_alpha(self.alpha)
        if not isinstance(self.family, (Gamma, Power, Custom)):
            raise TypeError("family must be Gamma, Power or Custom")
        L0 = float(np.asarray(self.L(np.array([0.0])))[0])
        if not np.isfinite(L0) or L0 == 0.0:
            raise ValueError("L(0) must be finite and nonzero")

    # evaluators ---------------------------------------------------------

    def L(self, x):
        x = np.asarray(x, dtype=float)
        fam = self.family
        if isinstance(fam, Gamma):
            c = fam.lam ** (self.alpha + 1) / math.gamma(self.alpha + 1)
            return c * np.exp(-fam.lam * x)
        if isinstance(fam, Power):
            return (1.0 + x) ** (-(self.alpha + fam.beta))
        return np.asarray(fam.L(x), dtype=float)

    def dL(self, x):
        x = np.asarray(x, dtype=float)
        fam = self.family
        if isinstance(fam, Gamma):
            return -fam.lam * self.L(x)
        if isinstance(fam, Power):
            k = self.alpha + fam.beta
            return -k * (1.0 + x) ** (-(k + 1))
        return np.asarray(fam.dL(x), dtype=float)

    def d2L(self, x):
        x = np.asarray(x, dtype=float)
        fam = self.family
        if isinstance(fam, Gamma):
            return fam.lam ** 2 * self.L(x)
        if isinstance(fam, Power):
            k = self.alpha + fam.beta
            return k * (k + 1) * (1.0 + x) ** (-(k + 2))
        return np.asarray(fam.d2L(x), dtype=float)

    @property
    def L0(self) -> float:
        return float(self.L(0.0))

    @property
    def tail_zeta(self) -> float:
        if self.zeta0 is not None:
            return float(self.zeta0)
        fam = self.family
        if isinstance(fam, Gamma):
            return math.inf
        if isinstance(fam, Power):
            # any value in the open window (alpha+3/2, alpha+beta+1) works
            return self.alpha + 1.25 + 0.5 * fam.beta
        return float(fam.zeta0)

    def phi(self, x):
        return eval_phi(self, x)


def eval_phi(spec: KernelSpec, x: ArrayLike) -> ArrayLike:
    """Evaluate ``phi_alpha(x) = L(x) x^alpha`` for ``x > 0``.

    Raises
    ------
    ValueError
        If any ``x <= 0``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise ValueError("phi is only defined for x > 0")
    out = spec.L(xa) * xa ** spec.alpha
    return float(out) if out.ndim == 0 else out


def eval_L_derivatives(spec: KernelSpec, x: ArrayLike):
    """Return ``(L(x), L'(x), L''(x))`` for ``x >= 0``."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("L is evaluated on x >= 0")
    vals = (spec.L(xa), spec.dL(xa), spec.d2L(xa))
    if xa.ndim == 0:
        return tuple(float(v) for v in vals)
    return vals


# --------------------------------------------------------------------------
# Assumption 1
# --------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    passes: bool
    fitted_zeta: float
    window: tuple
    fit_dL: float
    fit_d2L: float
    zeta0: float
    details: str = ""


def _tail_slope(fn, s):
    """Local decay exponent of ``|fn|`` at the far end of ``s``.

    Returns ``-inf`` when the values underflow (super-polynomial decay).
    """
    v = np.abs(np.asarray(fn(s), dtype=float))
    tail = slice(len(s) - 4, len(s))
    if np.any(v[tail] == 0) or not np.all(np.isfinite(v)):
        return -math.inf
    ls, lv = np.log(s[tail]), np.log(v[tail])
    slope = np.polyfit(ls, lv, 1)[0]
    # exponential decay shows up as a steep, still steepening slope
    if slope < -50:
        return -math.inf
    return float(slope)


def check_assumption1(spec: KernelSpec, s_min: float = 10.0,
                      s_max: float = 1e4, n: int = 64) -> AssumptionReport:
    """Numerically check the smoothness and decay condition on ``L``.

    Decay exponents of ``L'`` and ``L''`` are fitted on a log-spaced grid
    in ``[s_min, s_max]``.  The admissible window for ``zeta0`` is
    ``(alpha + 3/2, min(-fit_dL, -fit_d2L - 1))``.  The report passes when
    the window is nonempty and contains the spec's ``zeta0`` (if finite).
    """
    s = np.geomspace(s_min, s_max, n)
    a = spec.alpha
    if spec.L0 == 0:
        return AssumptionReport(False, math.nan, (math.nan, math.nan),
                                math.nan, math.nan, math.nan, "L(0) = 0")
    k1 = _tail_slope(spec.dL, s)
    k2 = _tail_slope(spec.d2L, s)
    lo = a + 1.5
    hi = min(-k1, -k2 - 1.0)
    z = spec.tail_zeta
    details = []
    ok = hi > lo
    if not ok:
        details.append(f"empty window ({lo:.4g}, {hi:.4g})")
    if math.isfinite(z):
        if not (lo < z < hi):
            ok = False
            details.append(f"zeta0={z:.4g} outside ({lo:.4g}, {hi:.4g})")
        fitted = z
    else:
        fitted = hi
    if isinstance(spec.family, Power):
        # Power: the analytic window is open at the top
        hi = min(hi, a + spec.family.beta + 1.0)
    return AssumptionReport(bool(ok), float(fitted), (lo, hi), k1, k2, z,
                            "; ".join(details))


# --------------------------------------------------------------------------
# Mandelbrot-Van Ness kernel
# --------------------------------------------------------------------------

def eval_mvn_kernel(alpha: float, t: ArrayLike, s: ArrayLike) -> ArrayLike:
    """``K(t,s) = [(t-s)_+^alpha - (-s)_+^alpha] 1{t > s}``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    t, s = np.broadcast_arrays(t, s)
    m = t > s
    lag = np.where(m, t - s, 1.0)
    past = np.where(s < 0, -s, 1.0)
    out = np.where(m, lag ** alpha - np.where(s < 0, past ** alpha, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def eval_mvn_dt(alpha: float, t: ArrayLike, s: ArrayLike) -> ArrayLike:
    """``dK/dt (t,s) = alpha (t-s)^(alpha-1)`` for ``s < t``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t <= s):
        raise ValueError("dK/dt is singular at t = s; use cell quadrature")
    out = alpha * (t - s) ** (alpha - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def c_alpha(alpha: float) -> float:
    """``int_0^inf ((1+x)^a - x^a)^2 dx + 1/(2a+1)``.

    This is the constant in ``int K(t,s)^2 ds = c_alpha t^(2 alpha + 1)``.
    Also valid at ``alpha = 0`` (value 1).
    """
    a = float(alpha)
    if not -0.5 < a < 0.5:
        raise ValueError("c_alpha needs alpha in (-1/2, 1/2)")
    if a == 0.0:
        return 1.0

    def g(x):
        # (1+x)^a - x^a without cancellation for large x
        return x ** a * np.expm1(a * np.log1p(1.0 / x))

    head = integrate.quad(lambda x: g(x) ** 2, 0.0, 1.0, limit=200,
                          epsabs=0, epsrel=1e-12)[0]
    # tail in log variable: integrand ~ a^2 x^(2a-2)
    tail = integrate.quad(lambda y: g(math.exp(y)) ** 2 * math.exp(y), 0.0, 80.0,
                          limit=400, epsabs=0, epsrel=1e-12)[0]
    far = a * a * math.exp(80.0 * (2 * a - 1)) / (1 - 2 * a)
    return head + tail + far + 1.0 / (2 * a + 1)


def c_hurst(H: float) -> float:
    """Variance of the Mandelbrot-Van Ness fBm at time one (squared integrand)."""
    if not 0 < H < 1:
        raise ValueError("H must lie in (0, 1)")
    return c_alpha(H - 0.5)


def mvn_mass(alpha: float, t: float) -> float:
    """``int_{-inf}^t K(t,s)^2 ds = c_alpha t^(2 alpha + 1)`` for ``t >= 0``."""
    return c_alpha(alpha) * float(t) ** (2 * alpha + 1)


def mvn_tail_mass(alpha: float, t: float, depth: float) -> float:
    """``int_{-inf}^{-depth} K(t,s)^2 ds`` by quadrature in ``log(-s)``."""
    a = float(alpha)
    if a == 0.0 or t <= 0:
        return 0.0

    def g(y):
        x = math.exp(y)
        return (x ** a * math.expm1(a * math.log1p(t / x))) ** 2 * x

    y0 = math.log(depth)
    y1 = y0 + 60.0
    v = integrate.quad(g, y0, y1, limit=400, epsabs=0, epsrel=1e-10)[0]
    far = (a * t) ** 2 * math.exp(y1 * (2 * a - 1)) / (1 - 2 * a)
    return v + far


# --------------------------------------------------------------------------
# Bessel K and Whittle-Matern
# --------------------------------------------------------------------------

def bessel_k(nu: float, u: ArrayLike, rtol: float = 1e-15) -> ArrayLike:
    """Modified Bessel function of the second kind for ``u > 0``.

    Uses ``K_nu(u) = int_0^inf exp(-u cosh t) cosh(nu t) dt``.  The
    integrand is analytic and decays double exponentially, so the plain
    trapezoidal rule converges geometrically; the step is halved until the
    relative change drops below ``rtol``.
    """
    ua = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(~(ua > 0)):
        raise ValueError("bessel_k needs u > 0")
    nu = abs(float(nu))
    out = np.empty_like(ua)
    for i, x in enumerate(ua):
        # upper limit where exp(-x cosh t) cosh(nu t) < 1e-300 relative
        tmax = math.acosh(max(1.0, (745.0 + nu * 40.0) / x))
        tmax = max(tmax, 1.0)
        h = tmax / 16.0
        prev = None
        for _ in range(14):
            t = np.arange(0.0, tmax + h, h)
            f = np.exp(-x * np.cosh(t) + nu * t) * 0.5
            f += np.exp(-x * np.cosh(t) - nu * t) * 0.5
            val = h * (f.sum() - 0.5 * f[0])
            if prev is not None and abs(val - prev) <= rtol * abs(val):
                break
            prev = val
            h *= 0.5
        out[i] = val
    return float(out[0]) if np.ndim(u) == 0 else out


@dataclass(frozen=True)
class CovModel:
    """Whittle-Matern covariance model.

    ``C(h) = scale * 2^(1/2-nu) / Gamma(nu+1/2) * (lam|h|)^nu K_nu(lam|h|)``.
    """

    nu: float
    lam: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.lam > 0 and self.scale > 0):
            raise ValueError("CovModel needs nu, lam, scale > 0")

    @classmethod
    def for_gamma_kernel(cls, spec: KernelSpec, var_sigma: float = 1.0) -> "CovModel":
        """Model whose values are the autocovariance of a Gamma-kernel BSS.

        With ``phi(x) = lam^(a+1)/Gamma(a+1) e^(-lam x) x^a`` the causal
        covariance integral equals the formula above with
        ``scale = var_sigma * lam / sqrt(2 pi)``.
        """
        if not isinstance(spec.family, Gamma):
            raise ValueError("Whittle-Matern form needs the Gamma family")
        lam = spec.family.lam
        return cls(nu=spec.alpha + 0.5, lam=lam,
                   scale=var_sigma * lam / math.sqrt(2.0 * math.pi))


def whittle_matern(model: CovModel, h: ArrayLike) -> ArrayLike:
    """Evaluate the Whittle-Matern covariance at lag(s) ``h``."""
    ha = np.abs(np.atleast_1d(np.asarray(h, dtype=float)))
    nu = model.nu
    pref = model.scale * 2.0 ** (0.5 - nu) / math.gamma(nu + 0.5)
    out = np.empty_like(ha)
    zero = ha == 0
    # (u)^nu K_nu(u) -> 2^(nu-1) Gamma(nu) as u -> 0
    out[zero] = pref * 2.0 ** (nu - 1.0) * math.gamma(nu)
    if np.any(~zero):
        u = model.lam * ha[~zero]
        out[~zero] = pref * u ** nu * bessel_k(nu, u)
    return float(out[0]) if np.ndim(h) == 0 else out


# --------------------------------------------------------------------------
# BSS autocovariance
# --------------------------------------------------------------------------

def _power_tail(fn, x0, head, rtol=1e-10, grow=10.0, max_decades=40):
    """Integrate ``fn`` on ``[x0, inf)`` in log variable until the
    power-law tail bound falls below ``rtol * head``."""
    total = 0.0
    a = x0
    for _ in range(max_decades):
        b = a * grow
        total += integrate.quad(lambda y: fn(math.exp(y)) * math.exp(y),
                                math.log(a), math.log(b), limit=200,
                                epsabs=0, epsrel=1e-12)[0]
        fb, fb2 = fn(b), fn(b * 1.1)
        if fb == 0 or fb2 == 0:
            return total
        q = -math.log(fb2 / fb) / math.log(1.1)
        if q > 1.0:
            bound = b * fb / (q - 1.0)
            if abs(bound) < rtol * abs(head + total):
                return total + bound
            # far out the pure power law is accurate to O(1/b) relative
            if b >= 1e8 and abs(bound) * 1e2 / b < rtol * abs(head + total):
                return total + bound
        a = b
    raise ValueError("kernel L2 integral does not converge (tail too heavy)")


def kernel_l2_mass(spec: KernelSpec) -> float:
    """``int_0^inf phi(x)^2 dx``."""
    return autocov_bss(spec, 0.0, 1.0)


def autocov_bss(spec: KernelSpec, h: float, var_sigma: float = 1.0) -> float:
    """``E(sigma_0^2) int_0^inf phi(s) phi(s+h) ds``.

    The singular first panel ``[0, 1]`` uses an algebraic-weight rule so the
    ``x^alpha`` (or ``x^(2 alpha)``) factor is integrated exactly; the tail
    is integrated in ``log x`` with a certified power-law remainder.
    """
    h = float(h)
    if h < 0:
        raise ValueError("lag must be nonnegative")
    a = spec.alpha
    L = spec.L
    first = 1.0 if h == 0 else min(1.0, h)

    def f(x):
        return float(spec.L(x)) * x ** a * float(eval_phi(spec, x + h)) if h > 0 \
            else float(L(x)) ** 2 * x ** (2 * a)

    if h == 0:
        head = integrate.quad(lambda x: float(L(x)) ** 2, 0.0, first, weight="alg",
                              wvar=(2 * a, 0.0), epsabs=0, epsrel=1e-12)[0]
    else:
        head = integrate.quad(lambda x: float(L(x)) * float(eval_phi(spec, x + h)),
                              0.0, first, weight="alg", wvar=(a, 0.0),
                              epsabs=0, epsrel=1e-12)[0]
    mid_end = max(first, 1.0)
    if mid_end > first:
        head += integrate.quad(f, first, mid_end, epsabs=0, epsrel=1e-12)[0]
    tail = _power_tail(f, mid_end, head)
    return var_sigma * (head + tail)


def phi_tail_mass(spec: KernelSpec, depth: float) -> float:
    """``int_depth^inf phi(x)^2 dx``."""
    a = spec.alpha

    def f(x):
        return float(spec.L(x)) ** 2 * x ** (2 * a)

    return _power_tail(f, depth, kernel_l2_mass(spec))
