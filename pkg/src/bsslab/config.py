"""
Line-oriented experiment configuration.

::

    experiment = covariance
    seed = 7
    kernel.family = gamma
    kernel.alpha = 0.25
    kernel.lambda = 1.0
    grid.dt = 0.001953125   # comments run to end of line

Every problem is collected (with its line number) before anything runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .kernels import Gamma, KernelSpec, Power, validate_alpha
from .noise_sim import Constant, ExpOU, Ramp

EXPERIMENTS = ("covariance", "stationarity", "decomposition", "langevin", "wiener_equiv",
               "roughness", "pvariation", "ito_young", "ito_malliavin", "memory_tail")

DEFAULT_TOLERANCES = {
    "se_mult": 3.0,        # Monte Carlo checks: |estimate - target| <= se_mult * SE
    "slope": 0.1,          # fitted exponents
    "roughness": 0.05,     # variogram estimate of alpha
    "ks_level": 0.01,      # stationarity KS level
    "ftc_order": 0.9,      # FTC residual order under one halving
    "smooth_exponent": 1.8,
    "pvar_low": 0.8,
    "pvar_high": 1.25,
    "pvar_growth": 1.5,
    "young_decay": 1.3,
    "young_final": 0.05,
    "identity": 1e-10,
    "agree": 1e-10,
    "trace": 1e-6,
}


class ConfigError(ValueError):
    """All problems found in a configuration, one per line of the message."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _float(v):
    return float(v)


def _int(v):
    if any(c in v for c in ".eE") and float(v) != int(float(v)):
        raise ValueError
    return int(float(v)) if any(c in v for c in ".eE") else int(v, 0)


def _bool(v):
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError


def _floats(v):
    return tuple(float(x) for x in v.replace(",", " ").split())


def _str(v):
    if not v:
        raise ValueError
    return v


SCHEMA = {
    "experiment": (_str, "name"),
    "seed": (_int, "integer"),
    "n_paths": (_int, "integer"),
    "out_dir": (_str, "path"),
    "threads": (_int, "integer"),
    "kernel.family": (_str, "gamma|power"),
    "kernel.alpha": (_float, "real"),
    "kernel.lambda": (_float, "real"),
    "kernel.beta": (_float, "real"),
    "kernel.zeta0": (_float, "real"),
    "sigma.model": (_str, "constant|exp_ou|ramp"),
    "sigma.c": (_float, "real"),
    "sigma.theta": (_float, "real"),
    "sigma.independent": (_bool, "boolean"),
    "sigma.level": (_float, "real"),
    "sigma.slope": (_float, "real"),
    "grid.dt": (_float, "real"),
    "grid.T": (_float, "real"),
    "grid.T_trunc": (_float, "real"),
    "grid.tol_trunc": (_float, "real"),
    "grid.far_ratio": (_float, "real"),
    "run.lags": (_floats, "list of reals"),
    "run.shift": (_float, "real"),
    "run.lambda": (_float, "real"),
    "run.levels": (_int, "integer"),
    "run.betas": (_floats, "list of reals"),
    "run.alphas": (_floats, "list of reals"),
    "run.chunk": (_int, "integer"),
}
SCHEMA.update({f"tol.{k}": (_float, "real") for k in DEFAULT_TOLERANCES})


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    n_paths: int = 1000
    out_dir: str = "out"
    threads: int | None = None
    kernel: KernelSpec | None = None
    sigma: object = field(default_factory=lambda: Constant(1.0))
    dt: float = 2.0 ** -9
    T: float = 2.0
    T_trunc: float | None = None
    tol_trunc: float = 1e-3
    far_ratio: float = 1.03
    lags: tuple = (0.0, 0.25, 1.0, 2.0)
    shift: float = 0.7
    lam: float = 1.0
    levels: int = 6
    betas: tuple = (0.8, 1.5)
    alphas: tuple = (-0.3, 0.25)
    chunk: int = 256
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    raw: dict = field(default_factory=dict)

    def echo(self) -> list:
        """``key = value`` lines of the parsed input, sorted."""
        return [f"{k} = {v}" for k, v in sorted(self.raw.items())]


def _lines(text: str):
    for no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if body:
            yield no, body


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    errors = []
    values, where = {}, {}
    for no, body in _lines(text):
        if "=" not in body:
            errors.append(f"line {no}: expected 'key = value'")
            continue
        key, val = (p.strip() for p in body.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"line {no}: unknown key '{key}'")
            continue
        if key in values:
            errors.append(f"line {no}: duplicate key '{key}' (first on line {where[key]})")
            continue
        conv, kind = SCHEMA[key]
        try:
            values[key] = conv(val)
        except (ValueError, TypeError):
            errors.append(f"line {no}: {key} expects {kind}, got '{val}'")
            continue
        where[key] = no

    def err(key, msg):
        ln = where.get(key)
        errors.append(f"line {ln}: {msg}" if ln else msg)

    cfg = ExperimentConfig(experiment=values.get("experiment", ""))
    cfg.raw = {k: values[k] for k in values}
    if "experiment" not in values:
        errors.append("missing key 'experiment'")
    elif values["experiment"] not in EXPERIMENTS:
        err("experiment", f"unknown experiment '{values['experiment']}'")

    for key, attr in (("seed", "seed"), ("n_paths", "n_paths"), ("out_dir", "out_dir"),
                      ("threads", "threads"), ("grid.dt", "dt"), ("grid.T", "T"),
                      ("grid.T_trunc", "T_trunc"), ("grid.tol_trunc", "tol_trunc"),
                      ("grid.far_ratio", "far_ratio"), ("run.lags", "lags"),
                      ("run.shift", "shift"), ("run.lambda", "lam"), ("run.levels", "levels"),
                      ("run.betas", "betas"), ("run.alphas", "alphas"), ("run.chunk", "chunk")):
        if key in values:
            setattr(cfg, attr, values[key])
    for k in DEFAULT_TOLERANCES:
        if f"tol.{k}" in values:
            cfg.tolerances[k] = values[f"tol.{k}"]
            if not values[f"tol.{k}"] > 0:
                err(f"tol.{k}", f"tol.{k} must be positive")

    # numeric invariants
    checks = [("seed", lambda v: v >= 0, "seed must be nonnegative"),
              ("n_paths", lambda v: v >= 2, "n_paths must be at least 2"),
              ("threads", lambda v: v >= 1, "threads must be at least 1"),
              ("grid.dt", lambda v: v > 0, "grid.dt must be positive"),
              ("grid.T", lambda v: v > 0, "grid.T must be positive"),
              ("grid.T_trunc", lambda v: v >= 0, "grid.T_trunc must be nonnegative"),
              ("grid.tol_trunc", lambda v: 0 < v < 1, "grid.tol_trunc must lie in (0, 1)"),
              ("grid.far_ratio", lambda v: v > 1, "grid.far_ratio must exceed 1"),
              ("run.lags", lambda v: len(v) > 0 and all(h >= 0 for h in v),
               "run.lags must be nonnegative"),
              ("run.lambda", lambda v: v > 0, "run.lambda must be positive"),
              ("run.levels", lambda v: v >= 1, "run.levels must be at least 1"),
              ("run.chunk", lambda v: v >= 1, "run.chunk must be at least 1"),
              ("run.betas", lambda v: all(b > 0.5 for b in v), "run.betas must exceed 1/2"),
              ("run.shift", lambda v: v >= 0, "run.shift must be nonnegative")]
    for key, ok, msg in checks:
        if key in values and not ok(values[key]):
            err(key, msg)
    if "run.alphas" in values:
        for a in values["run.alphas"]:
            try:
                validate_alpha(a)
            except ValueError as exc:
                err("run.alphas", str(exc))
    if "grid.dt" in values and "grid.T" in values and values["grid.dt"] > 0:
        n = values["grid.T"] / values["grid.dt"]
        if not math.isclose(n, round(n), rel_tol=1e-9):
            err("grid.T", "grid.T must be a multiple of grid.dt")

    # kernel
    fam = values.get("kernel.family")
    if fam is not None or "kernel.alpha" in values:
        alpha = values.get("kernel.alpha")
        if alpha is None:
            errors.append("missing key 'kernel.alpha'")
        else:
            try:
                validate_alpha(alpha)
            except ValueError as exc:
                err("kernel.alpha", str(exc))
                alpha = None
        family = None
        if fam is None or fam == "gamma":
            lam = values.get("kernel.lambda", 1.0)
            if not lam > 0:
                err("kernel.lambda", "kernel.lambda must be positive")
            else:
                family = Gamma(lam)
        elif fam == "power":
            if "kernel.beta" not in values:
                err("kernel.family", "kernel.family = power needs 'kernel.beta'")
            elif not values["kernel.beta"] > 0.5:
                err("kernel.beta", "kernel.beta must exceed 1/2")
            else:
                family = Power(values["kernel.beta"])
        else:
            err("kernel.family", f"unknown kernel family '{fam}'")
        if alpha is not None and family is not None:
            try:
                cfg.kernel = KernelSpec(alpha, family, values.get("kernel.zeta0"))
            except ValueError as exc:
                err("kernel.alpha", str(exc))

    # volatility
    model = values.get("sigma.model", "constant")
    if model == "constant":
        c = values.get("sigma.c", 1.0)
        cfg.sigma = Constant(c)
    elif model == "exp_ou":
        th = values.get("sigma.theta", 1.0)
        if not th > 0:
            err("sigma.theta", "sigma.theta must be positive")
        else:
            cfg.sigma = ExpOU(th, values.get("sigma.independent", False))
    elif model == "ramp":
        cfg.sigma = Ramp(values.get("sigma.level", 1.0), values.get("sigma.slope", 0.5))
    else:
        err("sigma.model", f"unknown sigma model '{model}'")

    needs_kernel = {"covariance", "decomposition", "roughness", "pvariation", "ito_young",
                    "stationarity"}
    if cfg.experiment in needs_kernel and cfg.kernel is None and \
            "kernel.alpha" not in values and "kernel.family" not in values:
        errors.append(f"experiment '{cfg.experiment}' needs kernel.alpha")
    if errors:
        raise ConfigError(errors)
    return cfg
