"""
Experiment suites driven by :class:`~bsslab.config.ExperimentConfig`.

Each suite returns check rows plus named tables.  Replications are cut
into fixed-size blocks (``run.chunk`` paths); block ``b`` always holds the
same replication indices, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import decomp, ito, stats, wiener
from .config import ExperimentConfig
from .kernels import (CovModel, Gamma, KernelSpec, Power, autocov_bss, check_assumption1,
                      whittle_matern)
from .noise_sim import (Constant, ExpOU, Ramp, SimGrid, aggregate, certified_grid, drive,
                        simulate_b_tilde, simulate_bss)


@dataclass
class Row:
    check_id: str
    estimate: float
    target: float
    tolerance: float
    passed: bool


@dataclass
class ExperimentReport:
    experiment: str
    rows: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    seed: int = 0
    config_echo: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows)


def _var_sigma(model) -> float:
    if isinstance(model, Constant):
        return model.c ** 2
    if isinstance(model, ExpOU):
        return model.second_moment
    raise ValueError("the covariance target needs a stationary sigma model")


def _blocks(n: int, chunk: int):
    return [(i, min(chunk, n - i)) for i in range(0, n, chunk)]


def fan_out(cfg: ExperimentConfig, threads: int, work, n_paths: int | None = None,
            offset: int = 0) -> np.ndarray:
    """Run ``work(first_index, n)`` on every block and stack the results."""
    blocks = _blocks(cfg.n_paths if n_paths is None else n_paths, cfg.chunk)
    blocks = [(offset + a, n) for a, n in blocks]
    if threads <= 1:
        parts = [work(a, n) for a, n in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda b: work(*b), blocks))
    return np.concatenate(parts, axis=0)


def _grid(cfg: ExperimentConfig, kernels=(), alphas=(), T=None) -> SimGrid:
    T = cfg.T if T is None else T
    g = certified_grid(cfg.dt, T, kernels=kernels, alphas=alphas, tol_trunc=cfg.tol_trunc,
                       far_ratio=cfg.far_ratio, min_past=cfg.T_trunc or 0.0)
    return g


def _within(est, se, target, k):
    return abs(est - target) <= k * se


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

def run_covariance(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    spec = cfg.kernel
    rep = ExperimentReport("covariance")
    T = max(cfg.T, max(cfg.lags) + cfg.dt)
    g = _grid(cfg, kernels=[spec], T=T)
    steps = [int(round(h / cfg.dt)) for h in cfg.lags]

    def work(first, n):
        nz = drive(g, cfg.sigma, cfg.seed, n, first)
        y = simulate_bss(spec, None, g, noise=nz)
        return stats.autocov_products(y, steps)

    per_path = fan_out(cfg, threads, work)
    ens = stats.MCEnsemble()
    ens.add("autocov", per_path)
    ens.count(per_path.shape[0])
    ens.meta["lags"] = tuple(cfg.lags)
    vs = _var_sigma(cfg.sigma)
    k = cfg.tolerances["se_mult"]
    table = []
    for h in cfg.lags:
        est, se = stats.empirical_autocov(ens, h)
        if isinstance(spec.family, Gamma):
            target = float(whittle_matern(CovModel.for_gamma_kernel(spec, vs), h))
        else:
            target = autocov_bss(spec, h, vs)
        ok = _within(est, se, target, k)
        rep.rows.append(Row(f"autocov_lag_{h:g}", est, target, k * se, ok))
        table.append((h, est, se, target, int(ok)))
    rep.tables["covariance"] = (("lag", "estimate", "se", "target", "pass"), table)
    return rep


def run_stationarity(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    spec = cfg.kernel
    rep = ExperimentReport("stationarity")
    probes = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
    T = probes[-1] + cfg.shift
    n_T = math.ceil(T / cfg.dt - 1e-9)
    g = _grid(cfg, kernels=[spec], T=n_T * cfg.dt)
    idx0 = np.rint(probes / cfg.dt).astype(int)
    idxh = np.rint((probes + cfg.shift) / cfg.dt).astype(int)

    def sampler(idx):
        def work(first, n):
            nz = drive(g, cfg.sigma, cfg.seed, n, first)
            return simulate_bss(spec, None, g, noise=nz)[:, idx]
        return work

    a = fan_out(cfg, threads, sampler(idx0))
    # the shifted ensemble uses a disjoint block of replication indices
    b = fan_out(cfg, threads, sampler(idxh), offset=cfg.n_paths)
    res = stats.stationarity_test(a, b, cfg.tolerances["ks_level"])
    lvl = cfg.tolerances["ks_level"]
    table = []
    for t, p in zip(probes, res.p_values):
        rep.rows.append(Row(f"ks_t{t:g}", float(p), lvl, lvl, bool(p >= lvl)))
        table.append((t, t + cfg.shift, float(p), int(p >= lvl)))
    rep.tables["stationarity"] = (("t", "t_shifted", "ks_p", "pass"), table)
    rep.tables["stationarity_cov"] = (("cov_distance",), [(res.cov_distance,)])
    return rep


def run_decomposition(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    spec = cfg.kernel
    rep = ExperimentReport("decomposition")
    a1 = check_assumption1(spec)
    lo, hi = a1.window
    rep.rows.append(Row("assumption_window", a1.fitted_zeta, lo, hi - lo, a1.passes))
    if not a1.passes:
        return rep
    try:
        return _decomposition_body(cfg, threads, rep)
    except Exception as exc:  # keep the assumption row
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        rep.rows.append(Row(f"error: {msg}", math.nan, math.nan, math.nan, False))
        return rep


def _decomposition_body(cfg: ExperimentConfig, threads: int, rep: ExperimentReport):
    spec = cfg.kernel
    g = _grid(cfg, kernels=[spec], alphas=[spec.alpha])
    tol = cfg.tolerances

    def work(first, n):
        nz = drive(g, cfg.sigma, cfg.seed, n, first)
        fine = decomp.decompose(spec, nz)
        coarse = decomp.decompose(spec, aggregate(nz, merge_far=True))
        ff, fc = decomp.verify_ftc(fine), decomp.verify_ftc(coarse)
        cols = [ff.residuals[f"u{i}"].max(axis=1) for i in (1, 2, 3)]
        cols += [fc.residuals[f"u{i}"].max(axis=1) for i in (1, 2, 3)]
        cols.append(np.full(n, fine.diagnostics["identity_V"]))
        cols.append(np.full(n, fine.diagnostics["reconstruction"]))
        return np.column_stack(cols), fine

    blocks = _blocks(cfg.n_paths, cfg.chunk)
    if threads <= 1:
        outs = [work(a, n) for a, n in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(lambda b: work(*b), blocks))
    stats_ = np.concatenate([o[0] for o in outs])
    V = np.concatenate([o[1].V for o in outs])
    Y = np.concatenate([o[1].Y for o in outs])
    first = outs[0][1]
    rms = lambda c: float(np.sqrt(np.mean(stats_[:, c] ** 2)))
    for i in range(3):
        order = math.log2(rms(3 + i) / rms(i))
        rep.rows.append(Row(f"ftc_order_u{i + 1}", order, 1.0, tol["ftc_order"],
                            order >= tol["ftc_order"]))
    ev, ey = decomp.increment_exponent(V, g.dt), decomp.increment_exponent(Y, g.dt)
    rep.rows.append(Row("exponent_V", ev, 2.0, tol["smooth_exponent"], ev >= tol["smooth_exponent"]))
    ty = 2 * spec.alpha + 1
    rep.rows.append(Row("exponent_Y", ey, ty, tol["slope"], abs(ey - ty) <= tol["slope"]))
    idv, rec = float(stats_[:, 6].max()), float(stats_[:, 7].max())
    rep.rows.append(Row("identity_V", idv, 0.0, tol["identity"], idv <= tol["identity"]))
    rep.rows.append(Row("reconstruction", rec, 0.0, tol["identity"], rec <= tol["identity"]))
    rep.tables["decomposition_paths"] = (
        ("t", "Y", "YX", "V", "u1", "u2", "u3"),
        list(zip(first.t, first.Y[0], first.YX[0], first.V[0], first.u1[0], first.u2[0],
                 first.u3[0])))
    qv = [float(np.mean(np.sum(np.diff(Y[:, ::s], axis=1) ** 2, axis=1))) for s in (2, 1)]
    p = 1.0 / (spec.alpha + 0.5) + 0.5
    pv = [float(np.mean(np.sum(np.abs(np.diff(Y[:, ::s], axis=1)) ** p, axis=1))) for s in (2, 1)]
    rep.tables["diagnostics"] = (
        ("mesh", "residual_u1", "residual_u2", "residual_u3", "qv", "pvar_p"),
        [(2 * g.dt, rms(3), rms(4), rms(5), qv[0], pv[0]),
         (g.dt, rms(0), rms(1), rms(2), qv[1], pv[1])])
    return rep


def run_langevin(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    alpha = cfg.kernel.alpha if cfg.kernel else cfg.alphas[0]
    rep = ExperimentReport("langevin")
    g = _grid(cfg, alphas=[alpha])
    lam = cfg.lam
    checks = [g.T / 2, g.T]

    def work(first, n):
        nz = drive(g, cfg.sigma, cfg.seed, n, first)
        sol = wiener.langevin_solve(lam, alpha, None, nz)
        cols = [sol.residual / g.dt]
        for t in checks:
            j = int(round(t / g.dt))
            zw = wiener.wiener_integral(wiener.IntegrandSpec.exp(lam, t), alpha, None, nz,
                                        t=t, form="stieltjes", check=False)
            cols.append(np.abs(zw - sol.Z[:, j]))
        return np.column_stack(cols)

    out = fan_out(cfg, threads, work)
    C = out[:, 0]
    halves = np.array_split(C, 2)
    spread = float(max(h.max() for h in halves) / max(min(h.max() for h in halves), 1e-300))
    rep.rows.append(Row("residual_over_dt_max", float(C.max()), 0.0, math.inf, bool(np.isfinite(C.max()))))
    rep.rows.append(Row("residual_constant_stability", spread, 1.0, 2.0, spread <= 2.0))
    agree = float(out[:, 1:].max())
    rep.rows.append(Row("closed_form_vs_wiener", agree, 0.0, cfg.tolerances["agree"],
                        agree <= cfg.tolerances["agree"]))
    rep.tables["langevin"] = (("path", "residual_over_dt", "agree_mid", "agree_end"),
                              [(i, *map(float, r)) for i, r in enumerate(out)])
    return rep


def run_wiener_equiv(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    from .noise_sim import evaluate, mvn_terms

    alpha = cfg.kernel.alpha if cfg.kernel else cfg.alphas[0]
    rep = ExperimentReport("wiener_equiv")
    beta = cfg.betas[0]
    fine = certified_grid(cfg.dt / 4, cfg.T, alphas=[alpha], tol_trunc=cfg.tol_trunc,
                          far_ratio=cfg.far_ratio ** 0.25)
    t = fine.T
    integrands = {"exp": wiener.IntegrandSpec.exp(cfg.lam, t),
                  "power_tail": wiener.IntegrandSpec.power_tail(beta, alpha, t)}
    nz = drive(fine, cfg.sigma, cfg.seed, cfg.n_paths)
    levels = [nz]
    for _ in range(2):
        levels.append(aggregate(levels[-1], merge_far=True))
    X = {}
    for lv in levels:
        x = evaluate(lv.grid, alpha, mvn_terms(), lv.xi, "all")
        x[:, lv.grid.origin] = 0.0
        X[lv.grid.dt] = x
    target = min(1.0, alpha + 0.5)
    table = []
    for name, f in integrands.items():
        errs = []
        for lv in levels[::-1]:
            d = wiener.wiener_integral(f, alpha, None, lv, t=t)
            ls = wiener.lebesgue_stieltjes(f, X[lv.grid.dt], lv.grid, t, alpha=alpha)
            e = float(np.sqrt(np.mean((d - ls) ** 2)))
            errs.append(e)
            table.append((name, lv.grid.dt, e))
        order = math.log2(errs[0] / errs[-1]) / 2.0
        rep.rows.append(Row(f"order_{name}", order, target, 0.0, order >= target))
    rep.tables["wiener_equiv"] = (("integrand", "dt", "rms_difference"), table)
    return rep


def run_roughness(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    spec = cfg.kernel
    rep = ExperimentReport("roughness")
    g = _grid(cfg, kernels=[spec])

    def work(first, n):
        nz = drive(g, cfg.sigma, cfg.seed, n, first)
        return simulate_bss(spec, None, g, noise=nz)

    Y = fan_out(cfg, threads, work)
    r = stats.roughness_estimate(Y, g.dt)
    tol = cfg.tolerances["roughness"]
    ok = abs(r.alpha_hat - spec.alpha) <= tol and not r.inconclusive
    rep.rows.append(Row("alpha_hat", r.alpha_hat, spec.alpha, tol, ok))
    rep.tables["roughness"] = (("scale", "moment", "slope", "alpha_hat"),
                               [(s, m, r.slope, r.alpha_hat) for s, m in zip(r.scales, r.moments)])
    return rep


def run_pvariation(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    spec = cfg.kernel
    rep = ExperimentReport("pvariation")
    g = _grid(cfg, kernels=[spec])
    tol = cfg.tolerances

    def work(first, n):
        nz = drive(g, cfg.sigma, cfg.seed, n, first)
        return simulate_bss(spec, None, g, noise=nz)

    Y = fan_out(cfg, threads, work)
    a = spec.alpha
    fit = stats.qv_slope(Y, g.dt, cfg.levels)
    rep.rows.append(Row("qv_slope", fit.slope, 2 * a, tol["slope"],
                        abs(fit.slope - 2 * a) <= tol["slope"]))
    table = []
    for label, p in (("stable", 1 / (a + 0.5) + 0.5), ("growing", 1 / (a + 0.5) - 0.5)):
        lad = np.mean([stats.p_variation_ladder(y, p, cfg.levels) for y in Y], axis=0)
        ratios = lad[1:] / lad[:-1]
        for k, r in enumerate(ratios):
            if label == "stable":
                ok = tol["pvar_low"] <= r <= tol["pvar_high"]
                rep.rows.append(Row(f"pvar_stable_p{p:.3g}_step{k}", r, 1.0,
                                    tol["pvar_high"] - 1.0, ok))
            else:
                ok = r >= tol["pvar_growth"]
                rep.rows.append(Row(f"pvar_growth_p{p:.3g}_step{k}", r, tol["pvar_growth"],
                                    0.0, ok))
        table += [(label, p, g.dt * 2 ** (cfg.levels - k), v) for k, v in enumerate(lad)]
    rep.tables["pvariation"] = (("kind", "p", "mesh", "mean_sum"), table)
    # supplementary: supremum over partitions from each sub-grid (not gated)
    sup = []
    for label, p in (("stable", 1 / (a + 0.5) + 0.5), ("growing", 1 / (a + 0.5) - 0.5)):
        lad = np.mean([stats.p_variation_sup_ladder(y, p, cfg.levels) for y in Y[:5]], axis=0)
        sup += [(label, p, g.dt * 2 ** (cfg.levels - k), v) for k, v in enumerate(lad)]
    rep.tables["pvariation_sup"] = (("kind", "p", "mesh", "mean_sup"), sup)
    return rep


def run_ito_young(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    spec = cfg.kernel
    rep = ExperimentReport("ito_young")
    if not spec.alpha > 0:
        raise ValueError("ito_young needs kernel.alpha > 0")
    g = _grid(cfg, kernels=[spec])
    L = int(round(math.log2(g.n_future)))
    levels = list(range(L - cfg.levels + 1, L + 1))
    mass = ito.kernel_mass(spec)

    def work(first, n):
        nz = drive(g, cfg.sigma, cfg.seed, n, first)
        y = simulate_bss(spec, None, g, noise=nz)
        r2 = ito.ito_young_verify(ito.SmoothFn.square(), y, levels, mass, spec.alpha)
        r1 = ito.ito_young_verify(ito.SmoothFn.identity(), y, levels, mass, spec.alpha)
        return np.column_stack([r2.T, r1.max(axis=0), y[:, -1] ** 2])

    out = fan_out(cfg, threads, work)
    k = len(levels)
    mean = out[:, :k].mean(axis=0)
    tol = cfg.tolerances
    for i in range(k - 1):
        d = mean[i] / mean[i + 1]
        rep.rows.append(Row(f"decay_level{levels[i + 1]}", d, tol["young_decay"], 0.0,
                            d >= tol["young_decay"]))
    sd = float(np.std(out[:, -1], ddof=1))
    rep.rows.append(Row("final_over_sd", mean[-1] / sd, 0.0, tol["young_final"],
                        mean[-1] / sd <= tol["young_final"]))
    ident = float(out[:, k].max())
    rep.rows.append(Row("identity_residual", ident, 0.0, 0.0, ident == 0.0))
    rep.tables["ito_young"] = (("level", "residual"), list(zip(levels, mean)))
    return rep


def run_ito_malliavin(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    alpha = cfg.kernel.alpha if cfg.kernel else 0.3
    rep = ExperimentReport("ito_malliavin")
    T = cfg.T
    g = SimGrid.uniform(cfg.dt, T, 0.0)
    sq = ito.SmoothFn.square()

    def work(first, n):
        nz = drive(g, Constant(1.0), cfg.seed, n, first)
        b = simulate_b_tilde(alpha, None, g, noise=nz)
        return np.column_stack([ito.trace_term(sq, b, alpha, T),
                                ito.skorohod_via_residual(sq, b, alpha, T)])

    out = fan_out(cfg, threads, work)
    target = T ** (2 * alpha + 1) / (2 * alpha + 1)
    tr = float(np.abs(out[:, 0] - target).max())
    rep.rows.append(Row("trace_vs_analytic", tr, 0.0, cfg.tolerances["trace"],
                        tr <= cfg.tolerances["trace"]))
    m, se = float(out[:, 1].mean()), float(out[:, 1].std(ddof=1) / math.sqrt(out.shape[0]))
    k = cfg.tolerances["se_mult"]
    rep.rows.append(Row("skorohod_mean", m, 0.0, k * se, abs(m) <= k * se))
    rep.tables["ito_malliavin"] = (("n_paths", "mean", "se", "target"),
                                   [(out.shape[0], m, se, 0.0)])
    return rep


def run_memory_tail(cfg: ExperimentConfig, threads: int) -> ExperimentReport:
    rep = ExperimentReport("memory_tail")
    alpha = cfg.kernel.alpha if cfg.kernel else 0.2
    tol = cfg.tolerances["slope"]
    table = []
    for beta in cfg.betas:
        spec = KernelSpec(alpha, Power(beta))
        fit = stats.memory_tail_fit(spec)
        target = 1 - 2 * beta if beta < 1 else -beta
        rep.rows.append(Row(f"power_beta_{beta:g}", fit.slope, target, tol,
                            abs(fit.slope - target) <= tol))
        table += [(f"power_{beta:g}", h, v) for h, v in zip(fit.lags, fit.values)]
    gfit = stats.memory_tail_fit(KernelSpec(alpha, Gamma(1.0)))
    rep.rows.append(Row("gamma_short_memory", float(gfit.local_slopes[-1]), -math.inf, 0.0,
                        gfit.short_memory))
    rep.tables["memory_tail"] = (("kernel", "lag", "autocov"), table)
    return rep


SUITES = {
    "covariance": run_covariance,
    "stationarity": run_stationarity,
    "decomposition": run_decomposition,
    "langevin": run_langevin,
    "wiener_equiv": run_wiener_equiv,
    "roughness": run_roughness,
    "pvariation": run_pvariation,
    "ito_young": run_ito_young,
    "ito_malliavin": run_ito_malliavin,
    "memory_tail": run_memory_tail,
}

DESCRIPTIONS = {
    "covariance": "sample autocovariance against the closed form",
    "stationarity": "KS test of shifted marginals",
    "decomposition": "smooth remainder, FTC residuals and exact identities",
    "langevin": "Langevin residual and closed form against the Wiener integral",
    "wiener_equiv": "Wiener integral against the Stieltjes integral over mesh halvings",
    "roughness": "variogram estimate of alpha",
    "pvariation": "quadratic variation slope and p-variation ladders",
    "ito_young": "pathwise Ito formula through Young sums",
    "ito_malliavin": "trace term and zero-mean Skorohod residual",
    "memory_tail": "power-law tail of the autocovariance",
}


def run(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    import time

    t0 = time.perf_counter()
    rep = SUITES[cfg.experiment](cfg, threads)
    rep.seed = cfg.seed
    rep.config_echo = cfg.echo()
    rep.wall_clock = time.perf_counter() - t0
    return rep
