"""Wealth processes, robust replication and strategy comparison.

Two node conventions appear throughout:

* forward: a strategy is evaluated on the raw path ``x_{t_i}`` and held over
  ``[t_i, t_{i+1}]``;
* Föllmer: a CF strategy ``∇_x F`` is evaluated on ``x^n_{t_i-}``, the
  pre-limit of the piecewise-constant approximation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import EvaluationFailure, InvalidArgument, NotReplicating, PathcalcError
from .functionals import (
    NonAnticipativeFunctional,
    constant_functional,
    continuous_average,
    discrete_average,
    discrete_average_price,
    vertical_derivative_fd,
    averaging_dates,
)
from .paths import (
    LINEAR,
    PartitionScheme,
    PathSlice,
    SampledPath,
    convergence_slope,
    follmer_nodes,
    piecewise_constant_approx,
    pre_limit,
    restrict,
)
from .strategies import BSVStrategy, HindsightFactor

ANALYTIC, FINITE_DIFFERENCE = "analytic", "finite-difference"


def quarter_checkpoints(T: float) -> tuple:
    return (0.25 * T, 0.5 * T, 0.75 * T, T)


def replication_tolerance(F_T: float, rel: float = 1e-3, floor: float = 1e-4) -> float:
    """Pass threshold ``max(rel*|F_T|, floor)`` for a replication error."""
    return max(rel * abs(F_T), floor)


@dataclass(frozen=True)
class CFStrategy:
    """The strategy ``∇_x F`` of a functional, evaluated on Föllmer nodes."""

    functional: NonAnticipativeFunctional
    derivative_mode: str = ANALYTIC

    def __post_init__(self):
        if self.derivative_mode not in (ANALYTIC, FINITE_DIFFERENCE):
            raise InvalidArgument(f"unknown derivative mode {self.derivative_mode!r}")

    @property
    def _target(self) -> NonAnticipativeFunctional:
        if self.derivative_mode == FINITE_DIFFERENCE:
            return _fd_only(self.functional)
        return self.functional

    def __call__(self, t: float, s: PathSlice) -> float:
        return self._target.vertical_derivative(t, s)

    def nodes(self, path: SampledPath, scheme: PartitionScheme, level: int, t: float):
        return follmer_nodes(self._target, path, scheme, level, t)


def _fd_only(F: NonAnticipativeFunctional) -> NonAnticipativeFunctional:
    return NonAnticipativeFunctional(F.func, F.horizon, state_space=F.state_space, tags=F.tags, name=F.name)


def forward_nodes(strategy: Callable, path: SampledPath, scheme: PartitionScheme, level: int, t: float):
    """Strategy values on ``x_{t_i}`` at nodes with ``t_{i+1} <= t``, plus the increments."""
    g = scheme.nodes(level, t)
    x = path(g)
    nodes = g[:-1]
    vals = np.empty(nodes.size)
    for i, ti in enumerate(nodes):
        try:
            v = float(strategy(float(ti), restrict(path, float(ti))))
        except PathcalcError:
            raise
        except (ArithmeticError, ValueError) as exc:
            raise EvaluationFailure(f"strategy failed at t={ti}: {exc}", t=float(ti)) from exc
        if not math.isfinite(v):
            raise EvaluationFailure(f"strategy is not finite at t={ti}", t=float(ti))
        vals[i] = v
    return nodes, vals, np.diff(x)


def _cumulative(vals: np.ndarray, dx: np.ndarray) -> np.ndarray:
    # Neumaier-compensated partial sums keep telescoping identities at round-off
    out = np.empty(vals.size + 1)
    out[0] = 0.0
    s = c = 0.0
    for k, term in enumerate((vals * dx).tolist()):
        u = s + term
        if abs(s) >= abs(term):
            c += (s - u) + term
        else:
            c += (term - u) + s
        s = u
        out[k + 1] = s + c
    return out


def wealth_process(strategy, path: SampledPath, scheme: PartitionScheme, level: int, v0: float) -> SampledPath:
    """``V(t_j) = v0 + Σ_{i<j} Φ_i Δx_i`` at every grid point of the level.

    CF strategies use Föllmer nodes; any other strategy (BSV or a plain
    callable on ``(t, slice)``) uses forward nodes.
    """
    T = scheme.horizon
    if isinstance(strategy, CFStrategy):
        _, vals, dx = strategy.nodes(path, scheme, level, T)
    else:
        _, vals, dx = forward_nodes(strategy, path, scheme, level, T)
    return SampledPath(scheme.grid(level), v0 + _cumulative(vals, dx), LINEAR)


# ---------------------------------------------------------------------------
# Robust replication
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationLevel:
    level: int
    mesh: float
    checkpoints: np.ndarray
    target: np.ndarray
    initial: float
    follmer_wealth: np.ndarray
    wealth_min: float

    @property
    def error(self) -> np.ndarray:
        return self.target - self.initial - self.follmer_wealth

    @property
    def final_error(self) -> float:
        return float(self.error[-1])

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.error)))


@dataclass(frozen=True)
class ReplicationReport:
    levels: tuple
    nds_bound: float | None = None

    @property
    def meshes(self) -> np.ndarray:
        return np.array([lv.mesh for lv in self.levels])

    @property
    def final_errors(self) -> np.ndarray:
        return np.array([lv.final_error for lv in self.levels])

    @property
    def slope(self) -> float:
        return convergence_slope(self.meshes, np.abs(self.final_errors))

    @property
    def nds_ok(self) -> bool | None:
        if self.nds_bound is None:
            return None
        return all(lv.wealth_min >= -self.nds_bound for lv in self.levels)

    def passed(self, rel: float = 1e-3, floor: float = 1e-4) -> bool:
        fine = self.levels[-1]
        return abs(fine.final_error) <= replication_tolerance(fine.target[-1], rel, floor)


def replicate_cf(
    F: NonAnticipativeFunctional,
    path: SampledPath,
    scheme: PartitionScheme,
    levels: Sequence[int] | None = None,
    checkpoints: Sequence[float] | None = None,
    derivative_mode: str = ANALYTIC,
    nds_bound: float | None = None,
) -> ReplicationReport:
    """Compare ``F_t(x_t) - F_0(x_0)`` with the Föllmer wealth of ``∇_x F`` at checkpoints.

    The wealth at a checkpoint ``c`` sums the nodes with ``t_{i+1} <= c``.
    ``wealth_min`` is the minimum over the level grid of ``F_0 + Föllmer wealth``.
    """
    T = scheme.horizon
    cps = np.asarray(quarter_checkpoints(T) if checkpoints is None else checkpoints, dtype=float)
    if np.any(cps <= 0) or np.any(cps > T) or np.any(np.diff(cps) <= 0):
        raise InvalidArgument("checkpoints must be increasing in (0, T]")
    levels = range(scheme.n_levels) if levels is None else levels
    strat = CFStrategy(F, derivative_mode)
    F0 = F.at(path, 0.0)
    targets = np.array([F.at(path, float(c)) for c in cps])
    out = []
    for lv in levels:
        _, vals, dx = strat.nodes(path, scheme, lv, T)
        cum = _cumulative(vals, dx)
        g = scheme.grid(lv)
        idx = np.searchsorted(g, cps + 1e-12 * max(1.0, T), side="right") - 1
        out.append(
            ReplicationLevel(
                level=lv,
                mesh=scheme.mesh(lv),
                checkpoints=cps,
                target=targets,
                initial=F0,
                follmer_wealth=cum[idx],
                wealth_min=float(np.min(F0 + cum)),
            )
        )
    return ReplicationReport(tuple(out), nds_bound)


# ---------------------------------------------------------------------------
# Strategy equality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EqualityReport:
    node_t: np.ndarray
    cf_values: np.ndarray
    bsv_values: np.ndarray
    bsv_forward_values: np.ndarray
    cf_wealth: np.ndarray
    bsv_wealth: np.ndarray
    common_wealth_diff: float
    checkpoints: np.ndarray

    @property
    def abs_diff(self) -> np.ndarray:
        return np.abs(self.cf_values - self.bsv_values)

    @property
    def max_node_diff(self) -> float:
        return float(np.max(self.abs_diff)) if self.abs_diff.size else 0.0

    def max_rel_node_diff(self, floor: float = 1e-6) -> float:
        """``max |cf - bsv| / (|bsv| + floor)`` over the nodes."""
        if not self.abs_diff.size:
            return 0.0
        return float(np.max(self.abs_diff / (np.abs(self.bsv_values) + floor)))

    @property
    def wealth_diff(self) -> float:
        """Largest checkpoint gap between the Föllmer CF wealth and the forward BSV wealth."""
        return float(np.max(np.abs(self.cf_wealth - self.bsv_wealth)))


def strategy_equality_check(
    F: NonAnticipativeFunctional,
    phi: BSVStrategy,
    path: SampledPath,
    scheme: PartitionScheme,
    level: int,
    derivative_mode: str = ANALYTIC,
    checkpoints: Sequence[float] | None = None,
) -> EqualityReport:
    """Compare ``∇_x F`` with a BSV strategy node by node and as wealth.

    ``bsv_values`` evaluates ``phi`` on the same pre-limit slices as the CF
    values (common convention); ``bsv_forward_values`` evaluates it on the raw
    path. ``cf_wealth`` and ``bsv_wealth`` are the per-convention cumulative
    integrals at the checkpoints.
    """
    T = scheme.horizon
    cps = np.asarray(quarter_checkpoints(T) if checkpoints is None else checkpoints, dtype=float)
    cf = CFStrategy(F, derivative_mode)
    nodes, cf_vals, dx = cf.nodes(path, scheme, level, T)
    xn = piecewise_constant_approx(path, scheme, level)
    common = np.array([phi(float(t), pre_limit(restrict(xn, float(t)))) for t in nodes])
    _, fwd, _ = forward_nodes(phi, path, scheme, level, T)
    g = scheme.grid(level)
    idx = np.searchsorted(g, cps + 1e-12 * max(1.0, T), side="right") - 1
    cf_w = _cumulative(cf_vals, dx)
    bsv_w = _cumulative(fwd, dx)
    common_w = _cumulative(common, dx)
    return EqualityReport(
        node_t=nodes,
        cf_values=cf_vals,
        bsv_values=common,
        bsv_forward_values=fwd,
        cf_wealth=cf_w[idx],
        bsv_wealth=bsv_w[idx],
        common_wealth_diff=float(np.max(np.abs(cf_w - common_w)[idx])),
        checkpoints=cps,
    )


# ---------------------------------------------------------------------------
# Geometric Asian call in the zero-rate Black-Scholes model
# ---------------------------------------------------------------------------


def _asian_moments(t, spot, G, T, vol):
    tau = T - t
    m = (G + tau * math.log(spot) - 0.25 * vol * vol * tau * tau) / T
    v = vol * vol * tau**3 / (3.0 * T * T)
    return tau, m, v


def geometric_asian_value_and_hedge(
    t: float, spot: float, G: float, K: float, T: float, vol: float
) -> tuple[float, float]:
    """Value and spot-delta of the call on ``exp((1/T) ∫_0^T log S ds)`` with strike ``K``.

    Given ``G = ∫_0^t log S ds`` the remaining integral is Gaussian, so
    ``log`` of the geometric mean is ``N(m, v)`` with
    ``m = (G + τ log S - vol² τ²/4)/T`` and ``v = vol² τ³/(3T²)``, ``τ = T - t``.
    """
    if not (spot > 0 and K > 0 and vol > 0 and T > 0):
        raise InvalidArgument("spot, K, vol and T must be positive")
    if not 0 <= t < T:
        raise InvalidArgument(f"need 0 <= t < T, got t={t}, T={T}")
    tau, m, v = _asian_moments(t, spot, G, T, vol)
    sd = math.sqrt(v)
    d2 = (m - math.log(K)) / sd
    d1 = d2 + sd
    fwd = math.exp(m + 0.5 * v)
    value = fwd * ndtr(d1) - K * ndtr(d2)
    hedge = fwd * ndtr(d1) * tau / (T * spot)
    return float(value), float(hedge)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    value_se: float
    hedge: float
    hedge_se: float
    n_paths: int


def geometric_asian_mc_oracle(
    t: float,
    spot: float,
    G: float,
    K: float,
    T: float,
    vol: float,
    n_paths: int = 10**6,
    n_steps: int = 16,
    bump: float = 1e-4,
    seed: int = 0,
    chunk: int = 100_000,
) -> MonteCarloEstimate:
    """Monte Carlo value and delta of the geometric Asian call.

    The time integral of the Brownian path over each step is sampled exactly
    (trapezoid of the endpoints plus an independent ``N(0, Δ³/12)`` term).
    The delta is a central difference in spot with relative bump ``bump`` on
    common random numbers: bumping spot by ``(1 ± bump)`` scales the average
    by ``(1 ± bump)^{τ/T}``.
    """
    tau = T - t
    dt = tau / n_steps
    rng = np.random.Generator(np.random.PCG64(seed))
    pay, dlt = [], []
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        dw = rng.standard_normal((m, n_steps)) * math.sqrt(dt)
        w = np.cumsum(dw, axis=1)
        w_prev = np.hstack((np.zeros((m, 1)), w[:, :-1]))
        area = (0.5 * dt * (w_prev + w)).sum(axis=1)
        area += rng.standard_normal(m) * math.sqrt(dt**3 / 12.0) * math.sqrt(n_steps)
        rest = tau * math.log(spot) + vol * area - 0.25 * vol * vol * tau * tau
        avg = np.exp((G + rest) / T)
        up = avg * (1.0 + bump) ** (tau / T)
        dn = avg * (1.0 - bump) ** (tau / T)
        pay.append(np.maximum(avg - K, 0.0))
        dlt.append((np.maximum(up - K, 0.0) - np.maximum(dn - K, 0.0)) / (2.0 * bump * spot))
        done += m
    pay = np.concatenate(pay)
    dlt = np.concatenate(dlt)
    n = pay.size
    return MonteCarloEstimate(
        value=float(pay.mean()),
        value_se=float(pay.std(ddof=1) / math.sqrt(n)),
        hedge=float(dlt.mean()),
        hedge_se=float(dlt.std(ddof=1) / math.sqrt(n)),
        n_paths=n,
    )


def log_integral_factor() -> HindsightFactor:
    """``g(t, S_t) = ∫_0^t log S(s) ds``."""
    return HindsightFactor(lambda t, s: s.integral(np.log), name="integral of log S")


def geometric_asian_functional(K: float, T: float, vol: float) -> NonAnticipativeFunctional:
    """Value functional ``F_t(S_t) = C(t, S(t), ∫_0^t log S ds)``; derivatives by finite differences."""

    def value(t, s):
        if t >= T:
            return max(math.exp(s.integral(np.log) / T) - K, 0.0)
        return geometric_asian_value_and_hedge(t, s.endpoint, s.integral(np.log), K, T, vol)[0]

    return NonAnticipativeFunctional(value, T, state_space=(0.0, math.inf), name="geometric-asian")


def geometric_asian_strategy(K: float, T: float, vol: float) -> BSVStrategy:
    def phi(t, x, g):
        if t >= T:
            return 0.0
        return geometric_asian_value_and_hedge(t, x, g, K, T, vol)[1]

    return BSVStrategy(phi, (log_integral_factor(),), horizon=T, name="geometric-asian hedge")


# ---------------------------------------------------------------------------
# Extended vertical derivative
# ---------------------------------------------------------------------------


def extended_vertical_derivative(
    Y_builder: Callable[[SampledPath], SampledPath],
    phi,
    path: SampledPath,
    scheme: PartitionScheme,
    level: int,
    checkpoints: Sequence[float] | None = None,
    tol: float | None = None,
) -> SampledPath:
    """Return the hedge path ``t_j ↦ φ(t_j, x_{t_j})`` once it is certified to replicate ``Y``.

    The certificate requires ``|Y(c) - Y(0) - ∫_0^c φ dx| <= tol`` at every
    checkpoint, with the forward integral on the given level and
    ``tol = max(1e-3 |Y(T)|, 1e-4)`` by default. It checks replication along
    this path only.
    """
    T = scheme.horizon
    cps = quarter_checkpoints(T) if checkpoints is None else tuple(checkpoints)
    Y = Y_builder(path)
    if tol is None:
        tol = replication_tolerance(float(Y(T)))
    C = float(Y(0.0))
    nodes, vals, dx = forward_nodes(phi, path, scheme, level, T)
    cum = _cumulative(vals, dx)
    g = scheme.grid(level)
    for c in cps:
        j = int(np.searchsorted(g, c + 1e-12 * max(1.0, T), side="right")) - 1
        err = float(Y(float(g[j])) - C - cum[j])
        if abs(err) > tol:
            raise NotReplicating(
                f"strategy does not replicate at t={g[j]} (error {err:.3g}, tolerance {tol:.3g})",
                checkpoint=float(g[j]),
                error=err,
            )
    last = float(phi(T, restrict(path, T)))
    return SampledPath(g, np.append(vals, last), LINEAR)


def functional_path(F: NonAnticipativeFunctional) -> Callable[[SampledPath], SampledPath]:
    """``path ↦ (t ↦ F_t(x_t))`` sampled on the path's own grid."""

    def build(path: SampledPath) -> SampledPath:
        return SampledPath(path.grid, np.array([F.at(path, float(t)) for t in path.grid]), LINEAR)

    return build


# ---------------------------------------------------------------------------
# Option library
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptionEntry:
    """A path-dependent claim with its value functional and hedges.

    ``functional`` is the claim's own functional, ``price`` the functional
    that replicates it (``𝒟 = 0``), and ``bsv`` a BSV-form hedge when one is
    known in closed form.
    """

    name: str
    functional: NonAnticipativeFunctional
    price: NonAnticipativeFunctional
    bsv: BSVStrategy | None = None


def continuous_average_option(T: float = 1.0) -> OptionEntry:
    F = continuous_average(T)
    phi = BSVStrategy(lambda t, x: (T - t) / T, horizon=T, dphi_dx=lambda t, x: 0.0, name="(T-t)/T")
    return OptionEntry("continuous-average", F, F, phi)


def discrete_average_hedge(T: float, N: int) -> BSVStrategy:
    """``∇_x`` of the discrete-average functional: ``(t - t_{i-1}) / ((N+1) Δ)`` on ``(t_{i-1}, t_i]``."""
    d = averaging_dates(T, N)

    def phi(t, x):
        i = max(1, min(int(np.searchsorted(d, t, side="left")), N))
        return (t - d[i - 1]) / ((N + 1) * (d[i] - d[i - 1]))

    return BSVStrategy(phi, horizon=T, dphi_dx=lambda t, x: 0.0, name="discrete-average hedge")


def discrete_average_option(T: float = 1.0, N: int = 12) -> OptionEntry:
    return OptionEntry(
        "discrete-average", discrete_average(T, N), discrete_average_price(T, N), discrete_average_hedge(T, N)
    )


def geometric_asian_option(K: float = 1.0, T: float = 1.0, vol: float = 0.2) -> OptionEntry:
    F = geometric_asian_functional(K, T, vol)
    return OptionEntry("geometric-asian", F, F, geometric_asian_strategy(K, T, vol))


def builtin_options() -> dict:
    """Constructors for the library options, keyed by name."""
    return {
        "continuous-average": continuous_average_option,
        "discrete-average": discrete_average_option,
        "geometric-asian": geometric_asian_option,
        "constant": lambda c=1.0, T=1.0: OptionEntry(
            "constant", constant_functional(c, T), constant_functional(c, T), BSVStrategy(lambda t, x: 0.0, horizon=T)
        ),
    }
