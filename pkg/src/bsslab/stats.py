"""
Monte Carlo estimators and hypothesis checks.

Accumulators keep exact partial sums (Shewchuk expansions, the algorithm
behind :func:`math.fsum`), so merged ensembles report bit-identical
estimates whatever the order or grouping of the merges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .kernels import KernelSpec, Gamma, Power, autocov_bss


# --------------------------------------------------------------------------
# exact accumulation
# --------------------------------------------------------------------------

def _grow(partials: list, x: float) -> None:
    # Shewchuk's grow-expansion: partials stays a nonoverlapping exact sum
    i = 0
    for y in partials:
        if abs(x) < abs(y):
            x, y = y, x
        hi = x + y
        lo = y - (hi - x)
        if lo:
            partials[i] = lo
            i += 1
        x = hi
    partials[i:] = [x]


class ExactSum:
    """Exact running sums of a fixed-length vector."""

    def __init__(self, size: int):
        self.partials = [[] for _ in range(size)]

    def add(self, values) -> None:
        for p, v in zip(self.partials, np.asarray(values, dtype=float).ravel()):
            _grow(p, float(v))

    def add_many(self, rows) -> None:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        for j, p in enumerate(self.partials):
            for v in rows[:, j]:
                _grow(p, float(v))

    def merge(self, other: "ExactSum") -> None:
        for p, q in zip(self.partials, other.partials):
            for v in q:
                _grow(p, v)

    def value(self) -> np.ndarray:
        return np.array([math.fsum(p) for p in self.partials])


@dataclass
class MCEnsemble:
    """Mergeable per-statistic sums and sums of squares.

    Each named statistic is a vector with one entry per lag (or scale);
    every path contributes one value per entry.
    """

    n_paths: int = 0
    sums: dict = field(default_factory=dict)
    sumsq: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, name: str, per_path: np.ndarray) -> None:
        """Add ``per_path`` of shape ``(n, k)``; ``n`` must match across names."""
        x = np.atleast_2d(np.asarray(per_path, dtype=float))
        if name not in self.sums:
            self.sums[name] = ExactSum(x.shape[1])
            self.sumsq[name] = ExactSum(x.shape[1])
        self.sums[name].add_many(x)
        self.sumsq[name].add_many(x * x)

    def count(self, n: int) -> None:
        self.n_paths += int(n)

    def merge(self, other: "MCEnsemble") -> "MCEnsemble":
        for name in other.sums:
            if name not in self.sums:
                k = len(other.sums[name].partials)
                self.sums[name] = ExactSum(k)
                self.sumsq[name] = ExactSum(k)
            self.sums[name].merge(other.sums[name])
            self.sumsq[name].merge(other.sumsq[name])
        self.n_paths += other.n_paths
        for k, v in other.meta.items():
            self.meta.setdefault(k, v)
        return self

    def mean(self, name: str) -> np.ndarray:
        return self.sums[name].value() / self.n_paths

    def se(self, name: str) -> np.ndarray:
        n = self.n_paths
        if n < 2:
            return np.full(len(self.sums[name].partials), np.inf)
        m = self.mean(name)
        var = (self.sumsq[name].value() / n - m * m) * n / (n - 1)
        return np.sqrt(np.maximum(var, 0.0) / n)


# --------------------------------------------------------------------------
# autocovariance
# --------------------------------------------------------------------------

def autocov_products(paths: np.ndarray, lag_steps, window: slice | None = None) -> np.ndarray:
    """Per-path window averages of ``Y_t Y_{t+lag}``, shape ``(n, len(lags))``.

    The process is centred by construction, so no mean is removed.
    """
    p = np.atleast_2d(paths)
    n = p.shape[1]
    out = np.empty((p.shape[0], len(lag_steps)))
    for j, k in enumerate(lag_steps):
        if k >= n:
            raise ValueError(f"lag of {k} steps is beyond the horizon")
        a, b = p[:, : n - k], p[:, k:]
        if window is not None:
            a, b = a[:, window], b[:, window]
        out[:, j] = (a * b).mean(axis=1)
    return out


def autocov_ensemble(paths: np.ndarray, dt: float, lags, window=None) -> MCEnsemble:
    steps = [int(round(h / dt)) for h in lags]
    for h, k in zip(lags, steps):
        if not math.isclose(k * dt, h, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"lag {h} is not on the grid")
    ens = MCEnsemble()
    ens.add("autocov", autocov_products(paths, steps, window))
    ens.count(np.atleast_2d(paths).shape[0])
    ens.meta["lags"] = tuple(float(h) for h in lags)
    return ens


def empirical_autocov(ensemble: MCEnsemble, lag: float):
    """``(estimate, standard_error)`` at ``lag`` from an autocov ensemble."""
    lags = ensemble.meta.get("lags", ())
    for j, h in enumerate(lags):
        if math.isclose(h, lag, rel_tol=1e-9, abs_tol=1e-12):
            return float(ensemble.mean("autocov")[j]), float(ensemble.se("autocov")[j])
    raise ValueError(f"lag {lag} beyond the accumulated lags {lags}")


# --------------------------------------------------------------------------
# stationarity
# --------------------------------------------------------------------------

@dataclass
class StationarityResult:
    p_values: np.ndarray
    cov_distance: float
    passes: bool


def stationarity_test(sample_0: np.ndarray, sample_h: np.ndarray,
                      level: float = 0.01) -> StationarityResult:
    """Two-sample KS per probe plus a relative covariance distance.

    ``sample_0`` and ``sample_h`` have shape ``(n_paths, n_probes)``.
    """
    a = np.atleast_2d(sample_0)
    b = np.atleast_2d(sample_h)
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples must have the same probes")
    p = np.array([sps.ks_2samp(a[:, j], b[:, j]).pvalue for j in range(a.shape[1])])
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    dist = float(np.linalg.norm(np.atleast_2d(ca - cb)) /
                 max(np.linalg.norm(np.atleast_2d(ca)), 1e-300))
    return StationarityResult(p, dist, bool(np.all(p >= level)))


# --------------------------------------------------------------------------
# roughness and scaling
# --------------------------------------------------------------------------

@dataclass
class LinearFit:
    slope: float
    intercept: float
    slope_se: float
    r2: float


def loglog_fit(x, y) -> LinearFit:
    """Ordinary least squares of ``log y`` on ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    r = sps.linregress(lx, ly)
    return LinearFit(float(r.slope), float(r.intercept), float(r.stderr), float(r.rvalue ** 2))


@dataclass
class RoughnessResult:
    alpha_hat: float
    ci: tuple
    slope: float
    r2: float
    inconclusive: bool
    scales: np.ndarray
    moments: np.ndarray


def roughness_estimate(paths: np.ndarray, dt: float, n_scales: int = 6,
                       r2_min: float = 0.95, z: float = 1.96) -> RoughnessResult:
    """Variogram roughness: ``alpha_hat = (slope - 1) / 2``.

    Mean squared increments at lags ``dt * 2^k``, ``k < n_scales``, are
    regressed on the lag in log-log scale.  With several paths the CI comes
    from the spread of per-path slopes; a single path uses the regression
    standard error.
    """
    p = np.atleast_2d(np.asarray(paths, dtype=float))
    if p.shape[1] - 1 < 2 ** (n_scales - 1) * 2:
        raise ValueError("need at least 6 dyadic scales with room for increments")
    ks = 2 ** np.arange(n_scales)
    per_path = np.stack([np.mean((p[:, k:] - p[:, :-k]) ** 2, axis=1) for k in ks], axis=1)
    scales = ks * dt
    moments = per_path.mean(axis=0)
    fit = loglog_fit(scales, moments)
    if p.shape[0] >= 2:
        lx = np.log(scales)
        slopes = np.polyfit(lx, np.log(per_path).T, 1)[0]
        half = z * slopes.std(ddof=1) / math.sqrt(p.shape[0])
    else:
        half = z * fit.slope_se
    a = (fit.slope - 1.0) / 2.0
    return RoughnessResult(a, (a - half / 2, a + half / 2), fit.slope, fit.r2,
                           fit.r2 < r2_min, scales, moments)


@dataclass
class MemoryFit:
    slope: float
    ci: tuple
    r2: float
    short_memory: bool
    lags: np.ndarray
    values: np.ndarray
    local_slopes: np.ndarray


def memory_tail_fit(spec: KernelSpec, lags=None, var_sigma: float = 1.0,
                    z: float = 1.96) -> MemoryFit:
    """Log-log slope of the exact autocovariance at large lags.

    For the Gamma family the covariance underflows or its local slope keeps
    steepening; that is reported as ``short_memory``.
    """
    if lags is None:
        lags = np.geomspace(50.0, 5000.0, 16) if isinstance(spec.family, Power) \
            else np.geomspace(1.0, 100.0, 16)
    lags = np.asarray(lags, dtype=float)
    if isinstance(spec.family, Power) and lags.max() / lags.min() < 100 * (1 - 1e-9):
        raise ValueError("lags must span at least two decades")
    vals = np.array([autocov_bss(spec, h, var_sigma) for h in lags])
    pos = vals > 0
    local = np.full(lags.size - 1, -np.inf)
    ok = pos[:-1] & pos[1:]
    local[ok] = np.diff(np.log(vals))[ok] / np.diff(np.log(lags))[ok]
    if pos.sum() >= 3:
        fit = loglog_fit(lags[pos], vals[pos])
        slope, se, r2 = fit.slope, fit.slope_se, fit.r2
    else:
        slope, se, r2 = -math.inf, math.nan, math.nan
    # short memory: no stable power law, the local slope keeps falling
    finite = local[np.isfinite(local)]
    short = bool(pos.sum() < lags.size or
                 (finite.size >= 4 and finite[-1] < finite[0] - 1.0 and finite[-1] < -5.0))
    return MemoryFit(slope, (slope - z * se, slope + z * se), r2, short, lags, vals, local)


# --------------------------------------------------------------------------
# p-variation
# --------------------------------------------------------------------------

def p_variation_ladder(path: np.ndarray, p: float, levels: int) -> np.ndarray:
    """``sum |dY|^p`` on dyadic meshes, coarsest to finest.

    ``path`` holds ``2^L + 1`` equally spaced values; the finest mesh is the
    path's own and the coarsest uses steps of ``2^levels`` points.
    """
    y = np.asarray(path, dtype=float)
    n = y.shape[-1] - 1
    strides = [2 ** k for k in range(levels, -1, -1)]
    if levels > math.log2(n) + 1e-9 or 2 ** int(round(math.log2(n))) != n:
        raise ValueError("need 2^L + 1 points with levels <= L")
    return np.array([np.sum(np.abs(np.diff(y[..., ::s], axis=-1)) ** p, axis=-1)
                     for s in strides])


def p_variation_sup(path: np.ndarray, p: float) -> float:
    """Supremum of ``sum |dY|^p`` over all partitions drawn from the grid.

    Dynamic programme ``best[j] = max_{i<j} best[i] + |y_j - y_i|^p``.
    """
    y = np.asarray(path, dtype=float)
    best = np.zeros(y.size)
    for j in range(1, y.size):
        best[j] = np.max(best[:j] + np.abs(y[j] - y[:j]) ** p)
    return float(best[-1])


def p_variation_sup_ladder(path: np.ndarray, p: float, levels: int) -> np.ndarray:
    """:func:`p_variation_sup` on the dyadic sub-grids, coarsest to finest."""
    y = np.asarray(path, dtype=float)
    n = y.size - 1
    if levels > math.log2(n) + 1e-9 or 2 ** int(round(math.log2(n))) != n:
        raise ValueError("need 2^L + 1 points with levels <= L")
    return np.array([p_variation_sup(y[:: 2 ** k], p) for k in range(levels, -1, -1)])


def qv_slope(paths: np.ndarray, dt: float, levels: int = 4) -> LinearFit:
    """Slope of mean realised quadratic variation against the mesh."""
    p = np.atleast_2d(paths)
    qv = np.array([p_variation_ladder(row, 2.0, levels) for row in p]).mean(axis=0)
    meshes = dt * 2.0 ** np.arange(levels, -1, -1)
    return loglog_fit(meshes, qv)
