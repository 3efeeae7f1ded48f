"""Flat ``key=value`` experiment configuration with dotted sections.

Example::

    experiment = replicate
    scheme.n_levels = 5
    generator.z_kind = fbm
    generator.hurst = 0.75

Blank lines and lines starting with ``#`` are ignored. Unknown keys are
rejected. :meth:`ExperimentConfig.serialize` writes every key (defaults
included) in sorted order, and parsing that text gives back an equal
config.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .errors import InvalidArgument

EXPERIMENTS = ("qv-convergence", "replicate", "strategy-compare", "cov-decompose", "tails", "generate")
FORMAT_VERSION = 1


class ConfigError(InvalidArgument):
    """Invalid configuration; ``line`` and ``key`` locate the problem when known."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


# --- value types ------------------------------------------------------------


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s: str) -> int:
    return int(s)


def _str(s: str) -> str:
    if not s:
        raise ValueError("must not be empty")
    return s


def _floats(s: str) -> tuple:
    vals = tuple(_float(p) for p in s.split(",") if p.strip())
    if not vals:
        raise ValueError("need at least one number")
    return vals


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _positive(v):
    if not v > 0:
        raise ValueError("must be positive")


def _non_negative(v):
    if v < 0:
        raise ValueError("must be non-negative")


def _choice(*opts):
    def check(v):
        if v not in opts:
            raise ValueError(f"must be one of {', '.join(opts)}")

    return check


def _open_unit(v):
    if not 0 < v < 1:
        raise ValueError("must lie in (0, 1)")


def _auto_or_positive(v):
    if v != "auto":
        _positive(_float(v))


def _auto_or_count(v):
    if v != "auto" and not int(v) >= 1:
        raise ValueError("must be 'auto' or a positive integer")


def _all_positive(v):
    if not all(x > 0 for x in v):
        raise ValueError("all values must be positive")


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: object
    check: Callable | None = None
    doc: str = ""


SCHEMA: dict[str, Key] = {
    "experiment": Key(_str, "replicate", _choice(*EXPERIMENTS), "experiment family"),
    "format_version": Key(_int, FORMAT_VERSION, _choice(FORMAT_VERSION), "output format version"),
    "scheme.T": Key(_float, 1.0, _positive, "horizon T"),
    "scheme.n_levels": Key(_int, 5, _positive, "number of dyadic levels"),
    "scheme.base_k": Key(_int, 256, _positive, "intervals at the coarsest level"),
    "ensemble.seeds": Key(_int, 10, _positive, "number of seeds; seed i is master_seed + i"),
    "ensemble.master_seed": Key(_int, 0, _non_negative, "first seed"),
    "generator.path": Key(
        _str, "model", _choice("model", "brownian", "z", "identity"),
        "model: f_sigma(eps W + sigma_mix Z + mu t); brownian: W; z: the zero-QV component; identity: x(u)=u",
    ),
    "generator.z_kind": Key(_str, "fbm", _choice("none", "fbm", "fou", "icp", "sicp"), "zero-QV component"),
    "generator.hurst": Key(_float, 0.75, _open_unit, "Hurst index (fbm, fou)"),
    "generator.theta": Key(_float, 1.0, _positive, "fOU mean reversion"),
    "generator.lam": Key(_float, 5.0, _positive, "Poisson jump rate (icp, sicp)"),
    "generator.alpha": Key(_float, 3.0, _positive, "Pareto tail index (icp, sicp)"),
    "generator.eps": Key(_float, 0.2, _positive, "weight of W"),
    "generator.sigma_mix": Key(_float, 0.2, _positive, "weight of Z"),
    "generator.mu": Key(_float, 0.0, None, "drift of the driver"),
    "generator.s0": Key(_float, 1.0, None, "initial value f_sigma(0)"),
    "generator.sigma": Key(_str, "lognormal", _choice("lognormal", "normal"), "sigma(x) = x or sigma(x) = 1"),
    "generator.fbm_method": Key(_str, "circulant", _choice("circulant", "cholesky"), "fBm synthesis"),
    "generator.f_range": Key(_str, "auto", _auto_or_positive, "half-width of the f_sigma table"),
    "generator.f_step": Key(_float, 1e-3, _positive, "step of the f_sigma table"),
    "option.name": Key(
        _str, "continuous-average", _choice("continuous-average", "discrete-average", "geometric-asian", "constant"),
        "option (replicate, strategy-compare)",
    ),
    "option.N": Key(_int, 12, _positive, "averaging intervals of the discrete average"),
    "option.K": Key(_float, 1.0, _positive, "strike of the geometric Asian call"),
    "option.vol": Key(_float, 0.2, _positive, "Black-Scholes volatility of the geometric Asian call"),
    "option.derivative": Key(_str, "analytic", _choice("analytic", "finite-difference"), "CF derivative mode"),
    "functional.name": Key(
        _str, "x2", _choice("x2", "continuous-average", "discrete-average"), "functional for cov-decompose"
    ),
    "replicate.checkpoints": Key(_str, "quarters", _choice("quarters", "terminal"), "checkpoint set"),
    "replicate.rel_tol": Key(_float, 1e-3, _positive, "relative replication tolerance"),
    "replicate.abs_tol": Key(_float, 1e-4, _positive, "absolute replication tolerance floor"),
    "replicate.min_fraction": Key(_float, 0.9, _positive, "fraction of seeds that must improve"),
    "strategy.level": Key(_int, -1, None, "level of the comparison; negative counts from the finest"),
    "strategy.rtol": Key(_float, 1e-3, _positive, "relative node tolerance"),
    "strategy.atol": Key(_float, 1e-6, _positive, "absolute node tolerance"),
    "cov.min_fraction": Key(_float, 0.9, _positive, "fraction of seeds whose residual must shrink"),
    "qv.t": Key(_float, 1.0, _positive, "time up to which QV is summed"),
    "qv.expect": Key(
        _str, "auto", _choice("auto", "none", "mesh", "unit", "decreasing"),
        "assertion: QV = T*mesh, QV mean = t within 3 SE, or medians decreasing",
    ),
    "tails.alphas": Key(_floats, (1.5, 3.0), _all_positive, "tail indices"),
    "tails.n_jumps": Key(_int, 100_000, _positive, "jump sizes per tail index"),
    "tails.hill_k": Key(_str, "auto", _auto_or_count, "order statistics used by the Hill estimator"),
    "tails.rel_tol": Key(_float, 0.15, _positive, "relative tolerance of the Hill estimate"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {k: spec.default for k, spec in SCHEMA.items()}
        for k, v in self.values.items():
            if k not in SCHEMA:
                raise ConfigError("unknown key", key=k)
            full[k] = v
        object.__setattr__(self, "values", full)
        _cross_check(full)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, pairs: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        merged.update(pairs)
        return ExperimentConfig(merged)

    def serialize(self) -> str:
        return "".join(f"{k}={_fmt(self.values[k])}\n" for k in sorted(self.values))


def _cross_check(v: dict) -> None:
    if v["generator.z_kind"] == "sicp" and v["generator.alpha"] <= 2:
        raise ConfigError("sicp needs generator.alpha > 2", key="generator.alpha")
    if v["scheme.base_k"] * 2 ** (v["scheme.n_levels"] - 1) > 2**22:
        raise ConfigError("finest level exceeds 2**22 intervals", key="scheme.n_levels")
    if v["ensemble.master_seed"] + v["ensemble.seeds"] >= 2**63:
        raise ConfigError("seeds overflow", key="ensemble.master_seed")
    for k in ("replicate.min_fraction", "cov.min_fraction"):
        if v[k] > 1:
            raise ConfigError("must not exceed 1", key=k)
    if v["qv.t"] > v["scheme.T"]:
        raise ConfigError("must not exceed scheme.T", key="qv.t")


def parse_value(key: str, raw: str, line: int | None = None):
    if key not in SCHEMA:
        raise ConfigError("unknown key", line=line, key=key)
    spec = SCHEMA[key]
    try:
        val = spec.parse(raw.strip())
        if spec.check is not None:
            spec.check(val)
    except ValueError as exc:
        raise ConfigError(f"invalid value {raw.strip()!r}: {exc}", line=line, key=key) from None
    return val


def parse_pairs(lines, start_line: int = 1, numbered: bool = True) -> dict:
    out = {}
    for n, text in enumerate(lines, start=start_line):
        s = text.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError("expected key=value", line=n if numbered else None)
        key, raw = (p.strip() for p in s.split("=", 1))
        out[key] = parse_value(key, raw, n if numbered else None)
    return out


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig(parse_pairs(text.splitlines()))


def schema_doc() -> str:
    rows = [f"{k} (default {_fmt(s.default)}): {s.doc}" for k, s in SCHEMA.items()]
    return "\n".join(rows) + "\n"
