"""Seeded path generators: Brownian motion, zero-QV processes and mixed models.

Every generator is a pure function of a :class:`GeneratorConfig`. Paths are
sampled on the grid of ``cfg.scheme`` at ``cfg.level`` (the finest level by
default) and returned as linearly interpolated :class:`SampledPath` objects.

Random streams are derived from the master seed with
``numpy.random.SeedSequence(seed, spawn_key=(k,))``:

* ``k = 0``: the Brownian driver ``W``
* ``k = 1``: the zero-QV component ``Z``
* ``k = 2``: standalone jump-size samples (tail experiments)

so changing ``z_kind`` never changes ``W`` at a fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import linalg, signal
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainViolation, GenerationFailure, InvalidArgument
from .paths import LINEAR, PartitionScheme, SampledPath

W_STREAM, Z_STREAM, JUMP_STREAM = 0, 1, 2
Z_KINDS = ("none", "fbm", "fou", "icp", "sicp")
FBM_METHODS = ("circulant", "cholesky")
CHOLESKY_MAX_STEPS = 2**10


def _identity(x):
    return x


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters shared by all generators.

    Parameters
    ----------
    seed : master seed (non-negative, < 2**64)
    scheme, level : sampling grid; ``level=None`` means the finest level
    hurst, theta : fBm / fOU parameters
    lam, alpha : Poisson rate and Pareto tail index of the jumps
    eps, sigma_mix, mu : mixed-model weights, driver ``eps*W + sigma_mix*Z + mu*t``
    sigma, s0 : volatility function and initial value defining ``f_sigma``
    z_kind : one of ``none, fbm, fou, icp, sicp``
    f_range, f_step : half-width and step of the ``f_sigma`` table
    """

    seed: int
    scheme: PartitionScheme
    level: int | None = None
    hurst: float = 0.75
    theta: float = 1.0
    lam: float = 5.0
    alpha: float = 3.0
    eps: float = 0.2
    sigma_mix: float = 0.2
    mu: float = 0.0
    s0: float = 1.0
    sigma: Callable[[float], float] = field(default=_identity, compare=False)
    z_kind: str = "none"
    fbm_method: str = "circulant"
    f_range: float | None = None
    f_step: float = 1e-3

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise InvalidArgument(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        if self.level is None:
            object.__setattr__(self, "level", self.scheme.n_levels - 1)
        if not 0 <= self.level < self.scheme.n_levels:
            raise InvalidArgument(f"level {self.level} out of range")
        if not 0.0 < self.hurst < 1.0:
            raise InvalidArgument(f"hurst must lie in (0, 1), got {self.hurst}")
        for name in ("theta", "lam", "alpha", "eps", "sigma_mix", "f_step"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive, got {getattr(self, name)}")
        if self.f_range is not None and not self.f_range > 0:
            raise InvalidArgument(f"f_range must be positive, got {self.f_range}")
        if self.z_kind not in Z_KINDS:
            raise InvalidArgument(f"z_kind must be one of {Z_KINDS}, got {self.z_kind!r}")
        if self.fbm_method not in FBM_METHODS:
            raise InvalidArgument(f"fbm_method must be one of {FBM_METHODS}, got {self.fbm_method!r}")
        if self.z_kind == "sicp" and self.alpha <= 2:
            raise InvalidArgument(_SICP_MSG.format(self.alpha))
        if not math.isfinite(self.mu) or not math.isfinite(self.s0):
            raise InvalidArgument("mu and s0 must be finite")

    @property
    def grid(self) -> np.ndarray:
        return self.scheme.grid(self.level)

    @property
    def horizon(self) -> float:
        return self.scheme.horizon


_SICP_MSG = (
    "the scaled integrated compound Poisson process needs alpha > 2, got {}; "
    "for alpha <= 2 the jumps have infinite variance and no covariance structure exists"
)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(stream,))))


def _uniform_step(grid: np.ndarray) -> float:
    dt = np.diff(grid)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise InvalidArgument("fractional generators need a uniform grid")
    return float(dt[0])


# ---------------------------------------------------------------------------
# Brownian motion and fractional processes
# ---------------------------------------------------------------------------


def brownian_increments(cfg: GeneratorConfig) -> np.ndarray:
    rng = _rng(cfg.seed, W_STREAM)
    return rng.standard_normal(cfg.grid.size - 1) * np.sqrt(np.diff(cfg.grid))


def sample_brownian(cfg: GeneratorConfig) -> SampledPath:
    """Standard Brownian motion with ``W(0) = 0``."""
    return SampledPath(cfg.grid, np.concatenate(([0.0], np.cumsum(brownian_increments(cfg)))), LINEAR)


def fgn_autocovariance(hurst: float, n: int) -> np.ndarray:
    """Autocovariance ``c(k)``, ``k = 0..n-1``, of unit-step fractional Gaussian noise."""
    k = np.arange(n, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


def _fgn_circulant(hurst: float, n: int, rng: np.random.Generator) -> np.ndarray:
    c = fgn_autocovariance(hurst, n + 1)
    row = np.concatenate((c, c[-2:0:-1]))  # length 2n
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        raise GenerationFailure(f"circulant embedding has a negative eigenvalue ({lam.min():.3g})")
    lam = np.clip(lam, 0.0, None)
    m = row.size
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return np.fft.fft(np.sqrt(lam / m) * z)[:n].real


def _fgn_cholesky(hurst: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if n > CHOLESKY_MAX_STEPS:
        raise GenerationFailure(f"covariance factorization is limited to {CHOLESKY_MAX_STEPS} steps, got {n}")
    cov = linalg.toeplitz(fgn_autocovariance(hurst, n))
    try:
        L = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise GenerationFailure(f"covariance factorization failed: {exc}") from exc
    return L @ rng.standard_normal(n)


def fbm_increments(cfg: GeneratorConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Increments of fractional Brownian motion on the (uniform) config grid."""
    dt = _uniform_step(cfg.grid)
    n = cfg.grid.size - 1
    rng = _rng(cfg.seed, Z_STREAM) if rng is None else rng
    if cfg.fbm_method == "cholesky":
        x = _fgn_cholesky(cfg.hurst, n, rng)
    else:
        try:
            x = _fgn_circulant(cfg.hurst, n, rng)
        except GenerationFailure:
            x = _fgn_cholesky(cfg.hurst, n, _rng(cfg.seed, Z_STREAM))
    return x * dt**cfg.hurst


def sample_fbm(cfg: GeneratorConfig) -> SampledPath:
    """Fractional Brownian motion with Hurst index ``cfg.hurst``."""
    return SampledPath(cfg.grid, np.concatenate(([0.0], np.cumsum(fbm_increments(cfg)))), LINEAR)


def sample_fou(cfg: GeneratorConfig) -> SampledPath:
    """Fractional Ornstein-Uhlenbeck process by Euler steps, ``X(0) = 0``.

    ``X_{k+1} = (1 - theta*dt) X_k + dB^H_k``, driven by the same increments
    that :func:`sample_fbm` would use for this config.
    """
    dt = _uniform_step(cfg.grid)
    db = fbm_increments(cfg)
    x = signal.lfilter([1.0], [1.0, -(1.0 - cfg.theta * dt)], db)
    return SampledPath(cfg.grid, np.concatenate(([0.0], x)), LINEAR)


# ---------------------------------------------------------------------------
# Integrated compound Poisson processes
# ---------------------------------------------------------------------------


def pareto_sizes(rng: np.random.Generator, alpha: float, n: int) -> np.ndarray:
    """Samples with ``P(U >= x) = x**-alpha`` for ``x >= 1``."""
    v = 1.0 - rng.random(n)  # in (0, 1]
    return v ** (-1.0 / alpha)


def icp_jumps(cfg: GeneratorConfig, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sorted jump times on ``[0, T]`` and their Pareto sizes."""
    rng = _rng(cfg.seed, Z_STREAM) if rng is None else rng
    T = cfg.horizon
    n = rng.poisson(cfg.lam * T)
    times = np.sort(rng.random(n) * T)
    return times, pareto_sizes(rng, cfg.alpha, n)


def integrated_jumps(grid: np.ndarray, times: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """``Z(t) = sum_k U_k (t - tau_k)^+`` evaluated exactly at the grid points."""
    a = np.concatenate(([0.0], np.cumsum(sizes)))
    b = np.concatenate(([0.0], np.cumsum(sizes * times)))
    j = np.searchsorted(times, grid, side="right")
    return np.maximum(grid * a[j] - b[j], 0.0)


def sample_icp(cfg: GeneratorConfig) -> SampledPath:
    """Integrated compound Poisson process with Pareto jumps."""
    times, sizes = icp_jumps(cfg)
    return SampledPath(cfg.grid, integrated_jumps(cfg.grid, times, sizes), LINEAR)


def sample_sicp(cfg: GeneratorConfig) -> SampledPath:
    """``exp(-t)`` times the integrated compound Poisson process; needs ``alpha > 2``."""
    if cfg.alpha <= 2:
        raise InvalidArgument(_SICP_MSG.format(cfg.alpha))
    z = sample_icp(cfg)
    return SampledPath(cfg.grid, np.exp(-cfg.grid) * z.values, LINEAR)


def sample_jump_sizes(seed: int, alpha: float, n: int) -> np.ndarray:
    """``n`` Pareto jump sizes from the generator used by :func:`icp_jumps`."""
    if not alpha > 0:
        raise InvalidArgument(f"alpha must be positive, got {alpha}")
    return pareto_sizes(_rng(seed, JUMP_STREAM), alpha, n)


def hill_estimator(x: np.ndarray, k: int | None = None) -> float:
    """Hill estimate of the tail index from the ``k`` largest samples.

    ``1/alpha = (1/k) sum_{i<k} log(X_(i) / X_(k))`` with ``X_(0) >= X_(1) >= ...``.
    ``k`` defaults to a tenth of the sample.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if k is None:
        k = max(1, n // 10)
    if not 1 <= k < n:
        raise InvalidArgument(f"need 1 <= k < n, got k={k}, n={n}")
    if np.any(x <= 0):
        raise InvalidArgument("Hill estimator needs positive samples")
    top = np.sort(x)[::-1][: k + 1]
    return 1.0 / float(np.mean(np.log(top[:k] / top[k])))


# ---------------------------------------------------------------------------
# f_sigma and mixed models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FSigmaTable:
    """Tabulated solution of ``f' = sigma(f)``, ``f(0) = s0`` on ``[-half_width, half_width]``."""

    x: np.ndarray
    f: np.ndarray
    df: np.ndarray
    _spline: CubicHermiteSpline = field(repr=False, compare=False)

    @property
    def half_width(self) -> float:
        return float(self.x[-1])

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        bad = np.abs(u) > self.half_width
        if np.any(bad):
            where = float(np.ravel(u)[np.argmax(np.ravel(bad))])
            raise DomainViolation(
                f"driver value {where:.6g} outside the f_sigma table [-{self.half_width}, {self.half_width}]",
                where=where,
            )
        out = self._spline(u)
        return float(out) if out.ndim == 0 else out

    def derivative(self, u):
        return self._spline(np.asarray(u, dtype=float), 1)


def _rk4_march(sigma, y0, h, n):
    y = np.empty(n + 1)
    y[0] = y0
    for k in range(n):
        yk = y[k]
        k1 = sigma(yk)
        k2 = sigma(yk + 0.5 * h * k1)
        k3 = sigma(yk + 0.5 * h * k2)
        k4 = sigma(yk + h * k3)
        y[k + 1] = yk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(y[k + 1]):
            raise DomainViolation(f"f_sigma blows up near x={(k + 1) * h:.6g}", where=(k + 1) * h)
    return y


def f_sigma_solve(
    sigma: Callable[[float], float],
    s0: float,
    half_width: float,
    step: float = 1e-3,
    state_space: tuple | None = None,
) -> FSigmaTable:
    """Solve ``f' = sigma(f)``, ``f(0) = s0`` by classical RK4 in both directions from 0.

    The grid is ``x_k = k*step`` for ``|x_k| <= half_width`` (rounded up to a
    whole step). Between grid points the table is a cubic Hermite spline with
    slopes ``sigma(f)``.
    """
    if not (half_width > 0 and step > 0):
        raise InvalidArgument("half_width and step must be positive")
    n = int(math.ceil(half_width / step - 1e-9))
    with np.errstate(over="raise", invalid="raise"):
        try:
            up = _rk4_march(sigma, float(s0), step, n)
            down = _rk4_march(sigma, float(s0), -step, n)
        except FloatingPointError as exc:
            raise DomainViolation(f"f_sigma blows up inside the grid: {exc}") from exc
    x = np.arange(-n, n + 1) * step
    f = np.concatenate((down[::-1], up[1:]))
    if state_space is not None:
        lo, hi = state_space
        out = (f <= lo) | (f >= hi)
        if np.any(out):
            where = float(x[np.argmax(out)] if f[0] > lo and f[0] < hi else x[0])
            raise DomainViolation(f"f_sigma leaves the state space ({lo}, {hi}) near x={where:.6g}", where=where)
    df = np.array([float(sigma(v)) for v in f])
    if not np.all(np.isfinite(df)):
        raise DomainViolation("sigma is not finite along the f_sigma solution")
    return FSigmaTable(x, f, df, CubicHermiteSpline(x, f, df))


@lru_cache(maxsize=32)
def _cached_table(sigma, s0, half_width, step):
    return f_sigma_solve(sigma, s0, half_width, step)


def default_f_range(cfg: GeneratorConfig) -> float:
    return 6.0 * cfg.eps * math.sqrt(cfg.horizon) + abs(cfg.mu) * cfg.horizon + 2.0


def sample_z(cfg: GeneratorConfig) -> SampledPath | None:
    if cfg.z_kind == "none":
        return None
    return {"fbm": sample_fbm, "fou": sample_fou, "icp": sample_icp, "sicp": sample_sicp}[cfg.z_kind](cfg)


def sample_driver(cfg: GeneratorConfig, z_scale: float = 1.0) -> SampledPath:
    """``eps*W(t) + z_scale*sigma_mix*Z(t) + mu*t`` on the config grid."""
    g = cfg.grid
    v = cfg.eps * sample_brownian(cfg).values + cfg.mu * g
    z = sample_z(cfg)
    if z is not None and z_scale != 0:
        v = v + z_scale * cfg.sigma_mix * z.values
    return SampledPath(g, v, LINEAR)


def sample_model_path(cfg: GeneratorConfig, z_scale: float = 1.0) -> SampledPath:
    """``S(t) = f_sigma(eps*W(t) + sigma_mix*Z(t) + mu*t)`` with ``S(0) = s0``.

    ``z_scale`` multiplies the zero-QV component; it exists for experiments
    that vary the component at a fixed Brownian driver.
    """
    half = cfg.f_range if cfg.f_range is not None else default_f_range(cfg)
    table = _cached_table(cfg.sigma, float(cfg.s0), float(half), float(cfg.f_step))
    d = sample_driver(cfg, z_scale)
    return SampledPath(d.grid, table(d.values), LINEAR)


def black_scholes_config(seed: int, scheme: PartitionScheme, vol: float, s0: float = 1.0, **kw) -> GeneratorConfig:
    """Zero-rate Black-Scholes paths ``s0*exp(vol*W - vol**2 t/2)``."""
    return GeneratorConfig(seed=seed, scheme=scheme, eps=vol, mu=-0.5 * vol * vol, s0=s0, z_kind="none", **kw)


def with_seed(cfg: GeneratorConfig, seed: int) -> GeneratorConfig:
    return replace(cfg, seed=seed)
