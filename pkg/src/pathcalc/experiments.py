"""Experiment runners behind ``pathcalc run``.

Each runner returns an :class:`ExperimentResult`: the CSV header and rows
plus a list of named checks. Row order is fixed by ``(seed, level, t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .errors import DomainViolation, EvaluationFailure, GenerationFailure, InvalidArgument, PathcalcError
from .functionals import change_of_variables_decomposition, continuous_average, discrete_average, endpoint_power
from .hedging import builtin_options, replicate_cf, replication_tolerance, strategy_equality_check
from .paths import LINEAR, SampledPath, make_dyadic_scheme, quadratic_variation
from .processes import (
    GeneratorConfig,
    _identity,
    hill_estimator,
    sample_brownian,
    sample_jump_sizes,
    sample_model_path,
    sample_z,
)

SCHEMAS = {
    "replicate": ("seed", "level", "mesh", "checkpoint_t", "target", "initial", "follmer_wealth", "error"),
    "qv-convergence": ("seed", "level", "mesh", "t", "qv_estimate"),
    "strategy-compare": ("seed", "level", "node_t", "cf_value", "bsv_value", "abs_diff"),
    "cov-decompose": ("seed", "level", "term", "value", "residual"),
    "tails": ("alpha", "n_jumps", "hill_k", "hill_estimate"),
    "generate": ("t", "value"),
}


class RunFailure(PathcalcError):
    """Generation or evaluation failed inside an experiment."""

    def __init__(self, message, seed=None, level=None, node=None):
        loc = ", ".join(f"{k}={v}" for k, v in (("seed", seed), ("level", level), ("node", node)) if v is not None)
        super().__init__(f"{message} ({loc})" if loc else message)
        self.seed, self.level, self.node = seed, level, node


@dataclass
class ExperimentResult:
    header: tuple
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)  # (name, passed, detail)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


def _one(x):
    return 1.0


def scheme_of(cfg: ExperimentConfig):
    return make_dyadic_scheme(cfg["scheme.T"], cfg["scheme.n_levels"], cfg["scheme.base_k"])


def generator_of(cfg: ExperimentConfig, seed: int, scheme=None) -> GeneratorConfig:
    fr = cfg["generator.f_range"]
    return GeneratorConfig(
        seed=seed,
        scheme=scheme_of(cfg) if scheme is None else scheme,
        hurst=cfg["generator.hurst"],
        theta=cfg["generator.theta"],
        lam=cfg["generator.lam"],
        alpha=cfg["generator.alpha"],
        eps=cfg["generator.eps"],
        sigma_mix=cfg["generator.sigma_mix"],
        mu=cfg["generator.mu"],
        s0=cfg["generator.s0"],
        sigma=_identity if cfg["generator.sigma"] == "lognormal" else _one,
        z_kind=cfg["generator.z_kind"],
        fbm_method=cfg["generator.fbm_method"],
        f_range=None if fr == "auto" else float(fr),
        f_step=cfg["generator.f_step"],
    )


def make_path(cfg: ExperimentConfig, seed: int, scheme=None) -> SampledPath:
    gen = generator_of(cfg, seed, scheme)
    kind = cfg["generator.path"]
    try:
        if kind == "identity":
            return SampledPath(gen.grid, gen.grid.copy(), LINEAR)
        if kind == "brownian":
            return sample_brownian(gen)
        if kind == "z":
            z = sample_z(gen)
            if z is None:
                raise InvalidArgument("generator.path=z needs generator.z_kind other than none")
            return z
        return sample_model_path(gen)
    except (GenerationFailure, DomainViolation) as exc:
        raise RunFailure(f"path generation failed: {exc}", seed=seed) from exc


def seeds_of(cfg: ExperimentConfig) -> range:
    m = cfg["ensemble.master_seed"]
    return range(m, m + cfg["ensemble.seeds"])


def _guard(fn, seed, level):
    try:
        return fn()
    except EvaluationFailure as exc:
        raise RunFailure(f"evaluation failed: {exc}", seed=seed, level=level, node=exc.t) from exc
    except DomainViolation as exc:
        raise RunFailure(f"domain violation: {exc}", seed=seed, level=level, node=exc.where) from exc


def _median_decreasing(per_level: np.ndarray) -> bool:
    med = np.median(per_level, axis=0)
    return bool(np.all(np.diff(med) < 0))


# ---------------------------------------------------------------------------


def run_qv(cfg: ExperimentConfig) -> ExperimentResult:
    scheme = scheme_of(cfg)
    t = cfg["qv.t"]
    res = ExperimentResult(SCHEMAS["qv-convergence"])
    table = []
    for seed in seeds_of(cfg):
        path = make_path(cfg, seed, scheme)
        row = []
        for lv in range(scheme.n_levels):
            q = quadratic_variation(path, scheme, lv, t)
            res.rows.append((seed, lv, scheme.mesh(lv), t, q))
            row.append(q)
        table.append(row)
    table = np.array(table)
    expect = cfg["qv.expect"]
    if expect == "auto":
        expect = {"identity": "mesh", "brownian": "unit", "z": "decreasing"}.get(cfg["generator.path"], "none")
    meshes = np.array([scheme.mesh(lv) for lv in range(scheme.n_levels)])
    if expect == "mesh":
        gap = float(np.max(np.abs(table - meshes * t)))
        res.checks.append(("qv equals mesh * t", gap <= 1e-12 * max(1.0, t), f"max gap {gap:.3g}"))
    elif expect == "unit":
        n = table.shape[0]
        ok, worst = n > 1, 0.0
        if ok:
            se = table.std(axis=0, ddof=1) / math.sqrt(n)
            z = np.abs(table.mean(axis=0) - t) / se
            worst = float(z.max())
            ok = bool(np.all(z <= 3.0))
        res.checks.append(("qv mean within 3 SE of t", ok, f"max |z| {worst:.3g}"))
    elif expect == "decreasing":
        res.checks.append(("median qv decreasing across levels", _median_decreasing(table), ""))
    return res


def _option(cfg: ExperimentConfig):
    name = cfg["option.name"]
    T = cfg["scheme.T"]
    lib = builtin_options()
    if name == "continuous-average":
        return lib[name](T)
    if name == "discrete-average":
        return lib[name](T, cfg["option.N"])
    if name == "geometric-asian":
        return lib[name](cfg["option.K"], T, cfg["option.vol"])
    return lib[name](1.0, T)


def run_replicate(cfg: ExperimentConfig) -> ExperimentResult:
    scheme = scheme_of(cfg)
    T = scheme.horizon
    opt = _option(cfg)
    cps = (T,) if cfg["replicate.checkpoints"] == "terminal" else None
    res = ExperimentResult(SCHEMAS["replicate"])
    finals, targets = [], []
    for seed in seeds_of(cfg):
        path = make_path(cfg, seed, scheme)
        rep = _guard(
            lambda: replicate_cf(opt.price, path, scheme, checkpoints=cps, derivative_mode=cfg["option.derivative"]),
            seed,
            None,
        )
        for lv in rep.levels:
            err = lv.error
            for k, c in enumerate(lv.checkpoints):
                res.rows.append((seed, lv.level, lv.mesh, float(c), float(lv.target[k]), lv.initial,
                                 float(lv.follmer_wealth[k]), float(err[k])))
        finals.append(np.abs(rep.final_errors))
        targets.append(rep.levels[-1].target[-1])
    finals = np.array(finals)
    frac = float(np.mean(finals[:, -1] < finals[:, 0]))
    res.checks.append((
        "finest error below coarsest error",
        frac >= cfg["replicate.min_fraction"],
        f"fraction {frac:.3f} (need {cfg['replicate.min_fraction']})",
    ))
    res.checks.append(("median error decreasing across levels", _median_decreasing(finals), ""))
    med = float(np.median(finals[:, -1]))
    tol = replication_tolerance(float(np.median(np.abs(targets))), cfg["replicate.rel_tol"], cfg["replicate.abs_tol"])
    res.checks.append(("finest median error within tolerance", med <= tol, f"median {med:.3g}, tolerance {tol:.3g}"))
    return res


def run_strategy(cfg: ExperimentConfig) -> ExperimentResult:
    scheme = scheme_of(cfg)
    lv = cfg["strategy.level"]
    lv = lv + scheme.n_levels if lv < 0 else lv
    if not 0 <= lv < scheme.n_levels:
        raise InvalidArgument(f"strategy.level {cfg['strategy.level']} out of range")
    opt = _option(cfg)
    if opt.bsv is None:
        raise InvalidArgument(f"option {opt.name} has no BSV hedge")
    F = opt.functional
    rtol, atol = cfg["strategy.rtol"], cfg["strategy.atol"]
    res = ExperimentResult(SCHEMAS["strategy-compare"])
    worst = 0.0
    ok = True
    for seed in seeds_of(cfg):
        path = make_path(cfg, seed, scheme)
        rep = _guard(lambda: strategy_equality_check(F, opt.bsv, path, scheme, lv, cfg["option.derivative"]), seed, lv)
        d = rep.abs_diff
        for k, t in enumerate(rep.node_t):
            res.rows.append((seed, lv, float(t), float(rep.cf_values[k]), float(rep.bsv_values[k]), float(d[k])))
        ok &= bool(np.all(d <= rtol * np.abs(rep.bsv_values) + atol))
        worst = max(worst, rep.max_node_diff)
    res.checks.append(("node values agree", ok, f"max abs diff {worst:.3g}"))
    return res


def _cov_functional(cfg: ExperimentConfig):
    T = cfg["scheme.T"]
    name = cfg["functional.name"]
    if name == "x2":
        return endpoint_power(2, T)
    if name == "continuous-average":
        return continuous_average(T)
    return discrete_average(T, cfg["option.N"])


def run_cov(cfg: ExperimentConfig) -> ExperimentResult:
    scheme = scheme_of(cfg)
    F = _cov_functional(cfg)
    res = ExperimentResult(SCHEMAS["cov-decompose"])
    ends = []
    for seed in seeds_of(cfg):
        path = make_path(cfg, seed, scheme)
        rep = _guard(lambda: change_of_variables_decomposition(F, path, scheme, scheme.horizon), seed, None)
        for lv in rep.levels:
            for term, value in lv.terms().items():
                res.rows.append((seed, lv.level, term, value, lv.residual))
        r = np.abs(rep.residuals)
        ends.append((r[0], r[-1]))
    ends = np.array(ends)
    frac = float(np.mean(ends[:, 1] < ends[:, 0]))
    res.checks.append((
        "finest residual below coarsest residual",
        frac >= cfg["cov.min_fraction"],
        f"fraction {frac:.3f} (need {cfg['cov.min_fraction']})",
    ))
    return res


def run_tails(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(SCHEMAS["tails"])
    n = cfg["tails.n_jumps"]
    kraw = cfg["tails.hill_k"]
    k = max(1, n // 10) if kraw == "auto" else int(kraw)
    if k >= n:
        raise InvalidArgument("tails.hill_k must be below tails.n_jumps")
    for j, a in enumerate(cfg["tails.alphas"]):
        x = sample_jump_sizes(cfg["ensemble.master_seed"] + j, a, n)
        est = hill_estimator(x, k)
        res.rows.append((a, n, k, est))
        rel = abs(est - a) / a
        res.checks.append((f"hill estimate for alpha={a!r}", rel <= cfg["tails.rel_tol"], f"estimate {est:.6g}"))
    return res


def run_generate(cfg: ExperimentConfig) -> ExperimentResult:
    seed = cfg["ensemble.master_seed"]
    path = make_path(cfg, seed)
    res = ExperimentResult(SCHEMAS["generate"])
    res.rows.extend(zip(path.grid.tolist(), path.values.tolist()))
    res.checks.append(("values finite", bool(np.all(np.isfinite(path.values))), ""))
    return res


RUNNERS = {
    "qv-convergence": run_qv,
    "replicate": run_replicate,
    "strategy-compare": run_strategy,
    "cov-decompose": run_cov,
    "tails": run_tails,
    "generate": run_generate,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg["experiment"]](cfg)
