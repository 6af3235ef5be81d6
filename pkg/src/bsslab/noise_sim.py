"""
Shared-noise simulation of BSS, Volterra and fractional processes.

Every process is a discretised Wiener-type sum

    Z_t = sum_{cells k before t} W(t, k) * sigma_k * dB_k

over one set of Brownian increments ``dB_k``.  Kernels are written as
linear combinations of three "atoms":

    ("lag",  c)   c(t - s) * (t - s)^alpha
    ("past", c)   c(t - s) * (-s)_+^alpha
    ("one",  c)   c(t - s)

On each cell the power factors are replaced by their cell RMS (which
matches the cell variance of the singular factor exactly) and the smooth
coefficient ``c`` is taken at the cell's coefficient point (left edge
on the uniform part, midpoint on the geometric far-past part).  Because
the rule is linear in the coefficients, linear identities between
kernels hold exactly between the simulated paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import signal

from .kernels import (KernelSpec, c_alpha, kernel_l2_mass, mvn_tail_mass,
                      phi_tail_mass)

Term = tuple  # (kind, coefficient callable)


class TruncationError(ValueError):
    """Raised when the grid is too shallow for the requested kernel."""


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimGrid:
    """Time grid on ``[-depth, T]``.

    Parameters
    ----------
    dt : float
        Step of the uniform part.
    n_future : int
        Number of uniform cells on ``[0, T]``.
    n_past : int
        Number of uniform cells on ``[-n_past*dt, 0]``.
    far_edges : tuple of float
        Optional increasing edges of a geometric far-past extension.  The
        last entry must equal ``-n_past*dt``.
    tol_trunc : float
        Truncation tolerance the grid was certified for.
    """

    dt: float
    n_future: int
    n_past: int
    far_edges: tuple = ()
    tol_trunc: float = 1e-3

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_future < 1 or self.n_past < 0:
            raise ValueError("need n_future >= 1 and n_past >= 0")
        if self.far_edges:
            fe = np.asarray(self.far_edges, dtype=float)
            if np.any(np.diff(fe) <= 0):
                raise ValueError("far_edges must be increasing")
            if not math.isclose(fe[-1], -self.n_past * self.dt, rel_tol=1e-12):
                raise ValueError("far_edges must end at -n_past*dt")

    @classmethod
    def uniform(cls, dt: float, T: float, T_trunc: float, tol_trunc: float = 1e-3):
        return cls(dt, int(round(T / dt)), int(math.ceil(T_trunc / dt - 1e-9)),
                   (), tol_trunc)

    @property
    def T(self) -> float:
        return self.n_future * self.dt

    @property
    def T_trunc(self) -> float:
        return self.n_past * self.dt

    @property
    def n_far(self) -> int:
        return max(len(self.far_edges) - 1, 0)

    @property
    def n_uniform(self) -> int:
        return self.n_past + self.n_future

    @property
    def n_cells(self) -> int:
        return self.n_far + self.n_uniform

    @property
    def origin(self) -> int:
        """Edge index of ``t = 0``."""
        return self.n_far + self.n_past

    @property
    def depth(self) -> float:
        return float(-self.edges[0])

    @cached_property
    def edges(self) -> np.ndarray:
        uni = np.arange(-self.n_past, self.n_future + 1) * self.dt
        if self.n_far:
            return np.concatenate([np.asarray(self.far_edges[:-1], float), uni])
        return uni

    @cached_property
    def widths(self) -> np.ndarray:
        w = np.full(self.n_cells, self.dt)
        if self.n_far:
            w[: self.n_far] = np.diff(np.asarray(self.far_edges, float))
        return w

    @cached_property
    def coef_points(self) -> np.ndarray:
        e = self.edges
        cp = e[:-1].copy()
        if self.n_far:
            cp[: self.n_far] = 0.5 * (e[: self.n_far] + e[1: self.n_far + 1])
        return cp

    def times(self, where: str = "future") -> np.ndarray:
        return self.edges[self._edge_slice(where)]

    def _edge_slice(self, where: str) -> slice:
        if where == "future":
            return slice(self.origin, None)
        if where == "uniform":
            return slice(self.n_far, None)
        if where == "all":
            return slice(0, None)
        raise ValueError(f"unknown edge set {where!r}")

    def refine(self) -> "SimGrid":
        """Same domain with the uniform step halved."""
        return SimGrid(self.dt / 2, 2 * self.n_future, 2 * self.n_past,
                       self.far_edges, self.tol_trunc)

    def coarsen(self, merge_far: bool = False) -> "SimGrid":
        """Double the uniform step; optionally merge far cells in pairs."""
        if self.n_future % 2 or self.n_past % 2:
            raise ValueError("cannot coarsen an odd grid")
        far = self.far_edges
        if merge_far and self.n_far:
            far = tuple(float(self.far_edges[i]) for i in _far_merge_edges(self.n_far))
        return SimGrid(self.dt * 2, self.n_future // 2, self.n_past // 2,
                       far, self.tol_trunc)


def _far_merge_edges(n_far: int) -> np.ndarray:
    """Indices of far edges kept when cells are merged in pairs from the
    near end; an unpaired deepest cell is kept as is."""
    keep = np.arange(n_far, -1, -2)[::-1]
    if keep[0] != 0:
        keep = np.concatenate([[0], keep])
    return keep


def _depth_for(rel_tail: Callable[[float], float], tol2: float,
               start: float, max_depth: float) -> float:
    d = start
    while rel_tail(d) >= tol2:
        d *= 2.0
        if d > max_depth:
            raise TruncationError(
                f"tail L2 mass still {rel_tail(max_depth):.3g} of total at depth "
                f"{max_depth:.3g}; tolerance^2 = {tol2:.3g}")
    lo, hi = d / 2, d
    for _ in range(30):
        mid = math.sqrt(lo * hi)
        if rel_tail(mid) < tol2:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1.01:
            break
    return hi


def required_depth(T: float, kernels: Sequence[KernelSpec] = (),
                   alphas: Sequence[float] = (), tol_trunc: float = 1e-3,
                   max_depth: float = 1e15) -> float:
    """Smallest depth whose tail L2 mass is below ``tol_trunc**2`` of the
    total for every listed BSS kernel and Volterra kernel (at horizon T)."""
    tol2 = tol_trunc ** 2
    depth = 0.0
    for spec in kernels:
        total = kernel_l2_mass(spec)
        depth = max(depth, _depth_for(lambda d: phi_tail_mass(spec, d) / total,
                                      tol2, 1.0, max_depth))
    for a in alphas:
        if a == 0:
            continue
        total = c_alpha(a) * T ** (2 * a + 1)
        depth = max(depth, _depth_for(lambda d: mvn_tail_mass(a, T, d) / total,
                                      tol2, 1.0, max_depth))
    return depth


def certified_grid(dt: float, T: float, kernels: Sequence[KernelSpec] = (),
                   alphas: Sequence[float] = (), tol_trunc: float = 1e-3,
                   near_depth: float = 16.0, far_ratio: float = 1.03,
                   min_past: float = 0.0, max_depth: float = 1e15) -> SimGrid:
    """Build a grid whose truncation depth is certified for the kernels.

    The uniform past covers ``max(min_past, min(depth, near_depth))``;
    anything deeper is covered by geometric cells of ratio ``far_ratio``.
    """
    depth = max(required_depth(T, kernels, alphas, tol_trunc, max_depth), min_past)
    n_future = int(round(T / dt))
    if not math.isclose(n_future * dt, T, rel_tol=1e-9):
        raise ValueError("T must be a multiple of dt")
    near = depth if depth <= max(near_depth, min_past) else max(near_depth, min_past)
    n_past = int(math.ceil(near / dt - 1e-9))
    near = n_past * dt
    far = ()
    if depth > near * (1 + 1e-12):
        n = int(math.ceil(math.log(depth / near) / math.log(far_ratio)))
        e = -near * far_ratio ** np.arange(n, -1, -1)
        e[-1] = -near
        far = tuple(float(v) for v in e)
    return SimGrid(dt, n_future, n_past, far, tol_trunc)


def certify(grid: SimGrid, kernels: Sequence[KernelSpec] = (),
            alphas: Sequence[float] = ()) -> None:
    """Raise :class:`TruncationError` unless the grid depth is sufficient."""
    tol2 = grid.tol_trunc ** 2
    d = grid.depth
    for spec in kernels:
        r = phi_tail_mass(spec, d) / kernel_l2_mass(spec) if d > 0 else 1.0
        if not r < tol2:
            raise TruncationError(
                f"truncation depth {d:.4g} leaves tail fraction {r:.3g} >= {tol2:.3g}")
    for a in alphas:
        if a == 0:
            continue
        r = mvn_tail_mass(a, grid.T, d) / (c_alpha(a) * grid.T ** (2 * a + 1)) \
            if d > 0 else 1.0
        if not r < tol2:
            raise TruncationError(
                f"truncation depth {d:.4g} leaves Volterra tail fraction {r:.3g}")


# --------------------------------------------------------------------------
# noise and volatility
# --------------------------------------------------------------------------

def replication_seed(seed: int, index: int) -> int:
    """Per-replication seed ``seed XOR index``."""
    return int(seed) ^ int(index)


def _rows(seed, n_paths, first_index=0):
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a nonnegative integer")
    n = 1 if n_paths is None else int(n_paths)
    return [replication_seed(seed, first_index + i) for i in range(n)]


def make_brownian(grid: SimGrid, seed: int, n_paths: int | None = None,
                  first_index: int = 0) -> np.ndarray:
    """Centered Gaussian increments with variance equal to the cell width.

    Row ``i`` is generated from ``seed ^ (first_index + i)`` so any subset of
    replications can be regenerated independently.
    """
    sd = np.sqrt(grid.widths)
    out = np.empty((1 if n_paths is None else n_paths, grid.n_cells))
    for i, r in enumerate(_rows(seed, n_paths, first_index)):
        out[i] = np.random.default_rng(r).standard_normal(grid.n_cells) * sd
    return out[0] if n_paths is None else out


@dataclass(frozen=True)
class Constant:
    c: float = 1.0


@dataclass(frozen=True)
class ExpOU:
    """``sigma = exp(V)`` with ``V`` a stationary OU, ``Var V = 1/(2 theta)``.

    With ``independent=False`` the OU is driven by the same Brownian
    increments as the process, and sigma on a cell only sees increments
    of earlier cells.
    """

    theta: float = 1.0
    independent: bool = True

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    @property
    def second_moment(self) -> float:
        return math.exp(1.0 / self.theta)


@dataclass(frozen=True)
class Ramp:
    """Nonstationary negative control, ``sigma_s = level + slope * max(s, 0)``."""

    level: float = 1.0
    slope: float = 1.0


SigmaModel = Constant | ExpOU | Ramp


def make_sigma(model, grid: SimGrid, seed: int, n_paths: int | None = None,
               increments: np.ndarray | None = None,
               first_index: int = 0) -> np.ndarray:
    """Left-point volatility values, one per cell."""
    shape = (grid.n_cells,) if n_paths is None else (n_paths, grid.n_cells)
    if isinstance(model, Constant):
        return np.full(shape, float(model.c))
    if isinstance(model, Ramp):
        s = np.maximum(grid.edges[:-1], 0.0)
        return np.broadcast_to(model.level + model.slope * s, shape).copy()
    if not isinstance(model, ExpOU):
        raise TypeError(f"unknown sigma model {model!r}")
    th = model.theta
    w = grid.widths
    decay = np.exp(-th * w)
    if model.independent:
        scale = np.sqrt(-np.expm1(-2 * th * w) / (2 * th))
    else:
        scale = np.sqrt(-np.expm1(-2 * th * w) / (2 * th * w))
        if increments is None:
            increments = make_brownian(grid, seed, n_paths, first_index)
        increments = np.atleast_2d(increments)
    rows = _rows(seed, n_paths, first_index)
    v0 = np.empty(len(rows))
    shocks = np.empty((len(rows), grid.n_cells))
    for i, r in enumerate(rows):
        rng = np.random.default_rng([r, 1])
        v0[i] = rng.standard_normal() / math.sqrt(2 * th)
        if model.independent:
            shocks[i] = scale * rng.standard_normal(grid.n_cells)
        else:
            shocks[i] = scale * increments[i]
    # V at the left edge of cell k uses shocks of cells < k only
    v = np.empty_like(shocks)
    v[:, 0] = v0
    nf = grid.n_far
    for k in range(1, min(nf + 1, grid.n_cells)):
        v[:, k] = decay[k - 1] * v[:, k - 1] + shocks[:, k - 1]
    if grid.n_cells > nf + 1:
        d = math.exp(-th * grid.dt)
        u = np.concatenate([v[:, nf:nf + 1], shocks[:, nf:-1]], axis=1)
        v[:, nf:] = signal.lfilter([1.0], [1.0, -d], u, axis=1)
    out = np.exp(v)
    return out[0] if n_paths is None else out


@dataclass
class DrivenPaths:
    """One or more realisations of ``(dB, sigma)`` plus derived paths.

    ``increments`` and ``sigma`` have shape ``(n_paths, n_cells)``.
    """

    grid: SimGrid
    increments: np.ndarray
    sigma: np.ndarray
    seed: int | None = None
    paths: dict = field(default_factory=dict)

    @property
    def xi(self) -> np.ndarray:
        return self.sigma * self.increments

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]


def drive(grid: SimGrid, sigma_model=Constant(1.0), seed: int = 0,
          n_paths: int = 1, first_index: int = 0) -> DrivenPaths:
    """Generate shared Brownian increments and the volatility path."""
    inc = make_brownian(grid, seed, n_paths, first_index)
    sig = make_sigma(sigma_model, grid, seed, n_paths, increments=inc,
                     first_index=first_index)
    return DrivenPaths(grid, inc, sig, seed)


def aggregate(noise: DrivenPaths, merge_far: bool = False) -> DrivenPaths:
    """Same Brownian path on the grid with doubled step.

    Increments of paired cells are summed; sigma keeps the left value.
    With ``merge_far`` the geometric far cells are paired as well.
    """
    g = noise.grid
    nf = g.n_far
    cg = g.coarsen(merge_far)
    inc_u = noise.increments[:, nf:]
    sig_u = noise.sigma[:, nf:]
    inc_f = noise.increments[:, :nf]
    sig_f = noise.sigma[:, :nf]
    if merge_far and nf:
        starts = _far_merge_edges(nf)[:-1]
        inc_f = np.add.reduceat(inc_f, starts, axis=1)
        sig_f = sig_f[:, starts]
    inc = np.concatenate([inc_f, inc_u[:, 0::2] + inc_u[:, 1::2]], axis=1)
    sig = np.concatenate([sig_f, sig_u[:, 0::2]], axis=1)
    return DrivenPaths(cg, inc, sig, noise.seed)


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------

def rms_power(lo, hi, a: float):
    """RMS of ``x^a`` over ``[lo, hi]`` with ``0 <= lo < hi``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    q = 2.0 * a + 1.0
    w = hi - lo
    safe = np.where(lo > 0, lo, 1.0)
    inner = np.where(lo > 0,
                     safe ** q * np.expm1(q * np.log1p(w / safe)) / (q * w),
                     hi ** (2 * a) / q)
    return np.sqrt(inner)


def _coef(c, x):
    return np.broadcast_to(np.asarray(c(x), dtype=float), np.shape(x))


def _past_atoms(grid: SimGrid, alpha: float) -> np.ndarray:
    e = grid.edges
    lo, hi = e[:-1], e[1:]
    past = hi <= 0
    out = np.zeros(grid.n_cells)
    out[past] = rms_power(-hi[past], -lo[past], alpha)
    return out


def _rms_shift_diff(a, b, t, alpha: float):
    """``rms(x^alpha on [a+t, b+t]) - rms(x^alpha on [a, b])`` for ``a > 0``.

    Computed without forming the two (nearly equal) atoms separately.
    """
    q = 2.0 * alpha + 1.0
    w = b - a
    # (x+t)^q - x^q = x^q expm1(q log1p(t/x))
    with np.errstate(divide="ignore", invalid="ignore"):
        # t = -a gives log1p(-1) = -inf and the exact value -a^q; a = 0 rows are discarded
        eb = b ** q * np.expm1(q * np.log1p(t / b))
        ea = a ** q * np.expm1(q * np.log1p(t / a))
    d2 = (eb - ea) / (q * w)
    r1 = rms_power(a + t, b + t, alpha)
    r2 = rms_power(a, b, alpha)
    return d2 / (r1 + r2)


def _dense(grid: SimGrid, alpha: float, terms, t: np.ndarray,
           cells: np.ndarray) -> np.ndarray:
    """Weight matrix ``W[t_i, cell_k]`` (zero for cells not before t_i).

    Lag and past coefficients are combined as
    ``CL (lag - past) + (CL + CP) past`` so the cancellation between the two
    atoms of a deep cell is done analytically.
    """
    e = grid.edges
    lo, hi = e[cells][None, :], e[cells + 1][None, :]
    sc = grid.coef_points[cells][None, :]
    tt = t[:, None]
    before = hi <= tt + 1e-14 * np.maximum(1.0, np.abs(tt))
    x = np.where(before, tt - sc, 1.0)
    W = np.zeros((t.size, cells.size))
    CL = np.zeros_like(W)
    CP = np.zeros_like(W)
    has_lag = has_past = False
    for kind, c in terms:
        cx = _coef(c, x)
        if kind == "lag":
            CL = CL + cx
            has_lag = True
        elif kind == "past":
            CP = CP + cx
            has_past = True
        elif kind == "one":
            W += cx
        else:
            raise ValueError(f"unknown atom {kind!r}")
    if has_lag or has_past:
        past = hi <= 0
        a = np.where(before & past, -hi, 1.0)
        b = np.where(before & past, -lo, 2.0)
        past_atom = np.where(past, rms_power(a, b, alpha), 0.0)
        if has_lag:
            lag_atom = rms_power(np.where(before, tt - hi, 0.0),
                                 np.where(before, tt - lo, 1.0), alpha)
            deep = past & before & (a > 0)
            diff = np.where(deep, _rms_shift_diff(a, b, np.where(deep, tt, 0.0), alpha),
                            lag_atom - past_atom)
            W += CL * diff + (CL + CP) * past_atom
        else:
            W += CP * past_atom
    return np.where(before, W, 0.0)


def weights_at(grid: SimGrid, alpha: float, terms, j: int) -> np.ndarray:
    """Weight vector over all cells for the value at edge index ``j``.

    Direct (non-FFT) route; used by single-time integrals and as an
    independent check of :func:`evaluate`.
    """
    cells = np.arange(grid.n_cells)
    t = np.array([grid.edges[j]])
    W = _dense(grid, alpha, terms, t, cells)[0]
    W[j:] = 0.0
    return W


_DENSE_BUDGET = 1 << 22


def _lag_weights(grid: SimGrid, alpha: float, terms):
    M = grid.n_uniform
    m = np.arange(1, M + 1)
    dt = grid.dt
    x = m * dt
    rms = rms_power((m - 1) * dt, m * dt, alpha)
    w0 = np.zeros(M + 1)
    w1 = np.zeros(M + 1)
    has_past = False
    for kind, c in terms:
        cx = _coef(c, x)
        if kind == "lag":
            w0[1:] += cx * rms
        elif kind == "one":
            w0[1:] += cx
        elif kind == "past":
            w1[1:] += cx
            has_past = True
        else:
            raise ValueError(f"unknown atom {kind!r}")
    return w0, (w1 if has_past else None)


def evaluate(grid: SimGrid, alpha: float, terms, xi: np.ndarray,
             where: str = "future", chunk: int = 512) -> np.ndarray:
    """Evaluate a kernel sum on grid edges for every row of ``xi``.

    Parameters
    ----------
    grid : SimGrid
    alpha : float
        Exponent of the power atoms.
    terms : list of (kind, callable)
        Kernel description, see module docstring.
    xi : ndarray, shape (n_paths, n_cells)
        ``sigma_k * dB_k``.
    where : {"future", "uniform", "all"}
        Which edges to return.
    """
    xi = np.atleast_2d(xi)
    nf, nu = grid.n_far, grid.n_uniform
    w0, w1 = _lag_weights(grid, alpha, terms)
    P = _past_atoms(grid, alpha)[nf:] if w1 is not None else None
    start = {"future": grid.n_past, "uniform": 0, "all": 0}[where]
    u_times = grid.edges[nf + start:]
    out = np.empty((xi.shape[0], u_times.size + (nf if where == "all" else 0)))
    off = nf if where == "all" else 0
    for a in range(0, xi.shape[0], chunk):
        xu = xi[a:a + chunk, nf:]
        val = signal.fftconvolve(xu, w0[None, :], axes=-1)[:, start:nu + 1]
        if w1 is not None:
            val += signal.fftconvolve(xu * P[None, :], w1[None, :], axes=-1)[:, start:nu + 1]
        out[a:a + chunk, off:] = val
    if nf:
        # far cells enter through dense blocks, built a slab of times at a time
        cells = np.arange(nf)
        xf = xi[:, :nf]
        rows = max(1, _DENSE_BUDGET // nf)
        for b in range(0, u_times.size, rows):
            Wf = _dense(grid, alpha, terms, u_times[b:b + rows], cells)
            out[:, off + b: off + b + Wf.shape[0]] += xf @ Wf.T
        if where == "all":
            for b in range(0, nf, rows):
                Wff = _dense(grid, alpha, terms, grid.edges[b:min(b + rows, nf)], cells)
                out[:, b: b + Wff.shape[0]] = xf @ Wff.T
    return out


# kernel descriptions --------------------------------------------------------

def _const(v):
    return lambda x: np.full(np.shape(x), float(v))


def bss_terms(spec: KernelSpec):
    return [("lag", spec.L)]


def mvn_terms(coef: float = 1.0):
    return [("lag", _const(coef)), ("past", _const(-coef))]


# --------------------------------------------------------------------------
# processes
# --------------------------------------------------------------------------

def _noise(grid, sigma, seed, n_paths, noise):
    if noise is not None:
        return noise
    if isinstance(sigma, (Constant, ExpOU, Ramp)):
        return drive(grid, sigma, seed, 1 if n_paths is None else n_paths)
    if sigma is None:
        return drive(grid, Constant(1.0), seed, 1 if n_paths is None else n_paths)
    # a float means a constant volatility
    return drive(grid, Constant(float(sigma)), seed, 1 if n_paths is None else n_paths)


def _shape(arr, n_paths, noise):
    return arr[0] if (n_paths is None and noise is None) else arr


def simulate_bss(spec: KernelSpec, sigma, grid: SimGrid, seed: int | None = None,
                 n_paths: int | None = None, noise: DrivenPaths | None = None,
                 where: str = "future") -> np.ndarray:
    """Simulate ``Y_t = int phi(t-s) sigma_s dB_s`` on the grid edges."""
    nz = _noise(grid, sigma, seed, n_paths, noise)
    certify(nz.grid, kernels=[spec])
    y = evaluate(nz.grid, spec.alpha, bss_terms(spec), nz.xi, where)
    return _shape(y, n_paths, noise)


def simulate_x_vmvp(alpha: float, sigma, grid: SimGrid, seed: int | None = None,
                    n_paths: int | None = None, noise: DrivenPaths | None = None,
                    where: str = "future") -> np.ndarray:
    """Simulate the Volterra process with Mandelbrot-Van Ness kernel.

    ``X_0 = 0`` exactly.
    """
    nz = _noise(grid, sigma, seed, n_paths, noise)
    certify(nz.grid, alphas=[alpha])
    x = _x_from_noise(nz, alpha, where)
    return _shape(x, n_paths, noise)


def _x_from_noise(nz: DrivenPaths, alpha: float, where: str) -> np.ndarray:
    g = nz.grid
    if alpha == 0.0:
        # K(t,s) = 1{0 <= s < t}: exact cumulative sum
        cs = np.concatenate([np.zeros((nz.n_paths, 1)), np.cumsum(nz.xi, axis=1)], axis=1)
        x = cs - cs[:, [g.origin]]
        x[:, : g.origin] = 0.0
        return x[:, g._edge_slice(where)]
    x = evaluate(g, alpha, mvn_terms(), nz.xi, where)
    sl = g._edge_slice(where)
    o = g.origin - (sl.start or 0)
    x[:, o] = 0.0  # both atoms cancel exactly at t = 0
    return x


def simulate_fbm(H: float, grid: SimGrid, seed: int | None = None,
                 n_paths: int | None = None, noise: DrivenPaths | None = None) -> np.ndarray:
    """Mandelbrot-Van Ness fBm on ``[0, T]`` from the shared noise.

    The volatility in ``noise`` is ignored (sigma = 1).
    """
    if not 0 < H < 1:
        raise ValueError("H must lie in (0, 1)")
    nz = noise if noise is not None else drive(grid, Constant(1.0), seed,
                                               1 if n_paths is None else n_paths)
    unit = DrivenPaths(nz.grid, nz.increments, np.ones_like(nz.increments), nz.seed)
    a = H - 0.5
    if a != 0:
        certify(nz.grid, alphas=[a])
    # same route as simulate_vmfbm so both agree bit for bit
    b = _x_from_noise(unit, a, "all")[:, nz.grid.origin:]
    return _shape(b, n_paths, noise)


@dataclass
class VmfbmPaths:
    """``bh = x - a`` with ``direct`` the independently summed vmfBm."""

    bh: np.ndarray
    x: np.ndarray
    a: np.ndarray
    direct: np.ndarray


def simulate_vmfbm(H: float, sigma, grid: SimGrid, seed: int | None = None,
                   n_paths: int | None = None, noise: DrivenPaths | None = None,
                   where: str = "future"):
    """Volatility modulated fBm and its split ``B^{H,sigma} = X - A``.

    Returns
    -------
    VmfbmPaths
        ``bh = X - A`` with ``A_t = int_{t^0}^0 (-s)^{H-1/2} sigma_s dB_s``
        (zero for t >= 0), plus ``direct``, the vmfBm kernel summed
        directly as a lag sum minus the full past sum.
    """
    if not 0 < H < 1:
        raise ValueError("H must lie in (0, 1)")
    nz = _noise(grid, sigma, seed, n_paths, noise)
    a = H - 0.5
    g = nz.grid
    if a != 0:
        certify(g, alphas=[a])
    x = _x_from_noise(nz, a, "all")
    past = _past_atoms(g, a) * nz.xi
    # A at edge j: sum of past atoms over cells with left edge in [t_j, 0)
    tail = np.cumsum(past[:, ::-1], axis=1)[:, ::-1]
    A = np.concatenate([tail, np.zeros((nz.n_paths, 1))], axis=1)
    A[:, g.origin:] = 0.0
    # direct route: lag sum minus the full past sum, separately evaluated
    lag_only = evaluate(g, a, [("lag", _const(1.0))], nz.xi, "all") if a != 0 else \
        np.concatenate([np.zeros((nz.n_paths, 1)), np.cumsum(nz.xi, axis=1)], axis=1)
    direct = lag_only - past.sum(axis=1, keepdims=True)
    bh = x - A
    sl = g._edge_slice(where)
    out = [bh[:, sl], x[:, sl], A[:, sl], direct[:, sl]]
    if n_paths is None and noise is None:
        out = [o[0] for o in out]
    return VmfbmPaths(*out)


def simulate_b_tilde(alpha: float, sigma, grid: SimGrid, seed: int | None = None,
                     n_paths: int | None = None,
                     noise: DrivenPaths | None = None) -> np.ndarray:
    """``int_0^t (t-s)^alpha sigma_s dB_s`` on ``[0, T]`` (no past)."""
    nz = _noise(grid, sigma, seed, n_paths, noise)
    g = nz.grid
    xi = nz.xi.copy()
    xi[:, : g.origin] = 0.0
    y = evaluate(g, alpha, [("lag", _const(1.0))], xi, "future")
    return _shape(y, n_paths, noise)


def simulate_exact_gaussian(cov: Callable[[np.ndarray], np.ndarray], grid: SimGrid,
                            seed: int, n_paths: int | None = None,
                            max_doublings: int = 8, eig_tol: float = 1e-8) -> np.ndarray:
    """Stationary Gaussian path on ``[0, T]`` by circulant embedding.

    The covariance sequence at lags ``0..n`` is embedded in a circulant of
    size ``m >= 2n``; ``m`` is doubled until the smallest eigenvalue is at
    least ``-eig_tol * gamma(0)``, then negative eigenvalues are clipped.
    """
    n = grid.n_future + 1
    m = 1 << int(math.ceil(math.log2(2 * (n - 1)))) if n > 1 else 2
    for _ in range(max_doublings + 1):
        lags = np.arange(m // 2 + 1) * grid.dt
        c = np.asarray(cov(lags), dtype=float)
        row = np.concatenate([c, c[-2:0:-1]])
        lam = np.fft.rfft(row).real
        lam = np.concatenate([lam, lam[-2:0:-1]])
        if lam.min() >= -eig_tol * abs(c[0]):
            break
        m *= 2
    else:
        raise ValueError(f"circulant embedding failed: min eigenvalue {lam.min():.3g}")
    lam = np.clip(lam, 0.0, None)
    sq = np.sqrt(lam / m)
    rows = _rows(seed, n_paths)
    out = np.empty((len(rows), n))
    for i, r in enumerate(rows):
        rng = np.random.default_rng([r, 2])
        z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        out[i] = np.fft.fft(sq * z).real[:n]
    return out[0] if n_paths is None else out


def dump_paths(out_dir, t, paths: dict, wide: bool = True, replication: int = 0) -> list:
    """Write paths as CSV: one wide ``t,<name>,...`` file, or one ``t,value``
    file per process.  Returns the written file paths."""
    from pathlib import Path

    from .csvio import csv_text, write_atomic

    out = Path(out_dir)
    cols = {k: np.asarray(v, dtype=float) for k, v in paths.items()}
    for k, v in cols.items():
        if v.shape != np.shape(t):
            raise ValueError(f"path {k!r} has shape {v.shape}, expected {np.shape(t)}")
    if wide:
        f = out / f"paths_{replication}.csv"
        write_atomic(f, csv_text(("t", *cols), zip(t, *cols.values())))
        return [f]
    files = []
    for k, v in cols.items():
        f = out / f"{k}_{replication}.csv"
        write_atomic(f, csv_text(("t", "value"), zip(t, v)))
        files.append(f)
    return files
