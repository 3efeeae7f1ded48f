"""Sampled paths, partition schemes and the pathwise sums built on them.

A path is stored as samples on a grid together with an interpolation rule:

* ``LINEAR``: continuous, linear between grid points.
* ``FORWARD_STEP``: the piecewise-constant approximation used by the Föllmer
  integral. On ``[t_j, t_{j+1})`` the path carries the *next* sample
  ``x(t_{j+1})`` and at the last grid point it carries ``x(T)``. The sample
  at ``t_0`` is not a value of the path on ``[0, T]``; it is kept as the
  pre-initial value ``x(0-)`` and is what :meth:`SampledPath.left_limit`
  returns at ``0``.

Path surgery (restriction, horizontal extension, vertical perturbation and
the pre-limit path) produces :class:`PathSlice` objects, which never copy the
underlying samples.

All limits along a refining partition sequence are represented as sequences
indexed by the level of a :class:`PartitionScheme`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainViolation, EvaluationFailure, InvalidArgument, OutOfRange, PathcalcError

LINEAR = "linear"
FORWARD_STEP = "forward-step"
INTERPOLATIONS = (LINEAR, FORWARD_STEP)


def _time_tol(horizon: float) -> float:
    return 1e-12 * max(1.0, abs(horizon))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Partition schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PartitionScheme:
    """A refining sequence of partitions of ``[0, horizon]``."""

    horizon: float
    levels: tuple

    def __post_init__(self):
        if not (self.horizon > 0):
            raise InvalidArgument(f"horizon must be positive, got {self.horizon}")
        if len(self.levels) == 0:
            raise InvalidArgument("a partition scheme needs at least one level")
        grids = tuple(_frozen(g) for g in self.levels)
        tol = _time_tol(self.horizon)
        prev_mesh = math.inf
        for i, g in enumerate(grids):
            if g.ndim != 1 or g.size < 2:
                raise InvalidArgument(f"level {i} must contain at least two points")
            if g[0] != 0.0 or abs(g[-1] - self.horizon) > tol:
                raise InvalidArgument(f"level {i} must start at 0 and end at {self.horizon}")
            steps = np.diff(g)
            if np.any(steps <= 0):
                raise InvalidArgument(f"level {i} is not strictly increasing")
            mesh = float(steps.max())
            if not mesh < prev_mesh:
                raise InvalidArgument("mesh must strictly decrease across levels")
            prev_mesh = mesh
        object.__setattr__(self, "levels", grids)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def grid(self, level: int) -> np.ndarray:
        if not (0 <= level < len(self.levels)):
            raise InvalidArgument(f"level {level} out of range [0, {len(self.levels) - 1}]")
        return self.levels[level]

    def mesh(self, level: int) -> float:
        return float(np.diff(self.grid(level)).max())

    def nodes(self, level: int, t: float) -> np.ndarray:
        """Grid points of ``level`` lying in ``[0, t]``."""
        g = self.grid(level)
        if t < -_time_tol(self.horizon) or t > self.horizon + _time_tol(self.horizon):
            raise OutOfRange(f"t={t} outside [0, {self.horizon}]")
        return g[g <= t + _time_tol(self.horizon)]


def make_dyadic_scheme(T: float, n_levels: int, base_k: int) -> PartitionScheme:
    """Uniform grids with ``base_k * 2**i`` intervals on ``[0, T]``, ``i < n_levels``."""
    if not (T > 0):
        raise InvalidArgument(f"T must be positive, got {T}")
    if n_levels < 1 or base_k < 1:
        raise InvalidArgument("n_levels and base_k must be at least 1")
    levels = []
    for i in range(n_levels):
        k = base_k * 2**i
        g = np.arange(k + 1, dtype=float) * (T / k)
        g[-1] = T
        levels.append(g)
    return PartitionScheme(float(T), tuple(levels))


# ---------------------------------------------------------------------------
# Sampled paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampledPath:
    """Samples of a path on ``grid`` with a declared interpolation rule."""

    grid: np.ndarray
    values: np.ndarray
    interpolation: str = LINEAR

    def __post_init__(self):
        grid = _frozen(self.grid)
        values = _frozen(self.values)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 1:
            raise InvalidArgument("grid and values must be 1-d arrays of equal positive length")
        if grid[0] != 0.0:
            raise InvalidArgument("grid must start at 0")
        if np.any(np.diff(grid) <= 0):
            raise InvalidArgument("grid must be strictly increasing")
        if self.interpolation not in INTERPOLATIONS:
            raise InvalidArgument(f"unknown interpolation {self.interpolation!r}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def t_end(self) -> float:
        return float(self.grid[-1])

    def _check(self, u):
        t_end = float(self.grid[-1])
        tol = _time_tol(t_end)
        if isinstance(u, (float, int)) or np.ndim(u) == 0:
            u = float(u)
            if u < -tol or u > t_end + tol:
                raise OutOfRange(f"evaluation time {u} outside [0, {t_end}]")
            return min(max(u, 0.0), t_end)
        u = np.asarray(u, dtype=float)
        if not u.size:
            return u
        lo, hi = u.min(), u.max()
        if lo < -tol or hi > t_end + tol:
            raise OutOfRange(f"evaluation time outside [0, {t_end}]")
        return u if lo >= 0.0 and hi <= t_end else np.clip(u, 0.0, t_end)

    def _scalar(self, u: float, side: str) -> float:
        g = self.grid
        j = int(g.searchsorted(u, side=side))
        n = g.size
        if self.interpolation == LINEAR:
            if j >= n:
                return float(self.values[-1])
            if g[j] == u or j == 0:
                return float(self.values[j])
            g0, g1 = g[j - 1], g[j]
            w = (u - g0) / (g1 - g0)
            return float(self.values[j - 1] + w * (self.values[j] - self.values[j - 1]))
        return float(self.values[min(j, n - 1)])

    def __call__(self, u):
        u = self._check(u)
        if isinstance(u, float):
            return self._scalar(u, "right" if self.interpolation != LINEAR else "left")
        if self.interpolation == LINEAR:
            out = np.interp(u, self.grid, self.values)
        else:
            j = np.searchsorted(self.grid, u, side="right")
            out = self.values[np.minimum(j, self.grid.size - 1)]
        return float(out) if out.ndim == 0 else out

    def left_limit(self, u):
        """``lim_{s↑u} x(s)``; at ``u = 0`` this is the first sample."""
        u = self._check(u)
        if isinstance(u, float):
            return self._scalar(u, "left")
        if self.interpolation == LINEAR:
            out = np.interp(u, self.grid, self.values)
        else:
            j = np.searchsorted(self.grid, u, side="left")
            out = self.values[np.minimum(j, self.grid.size - 1)]
        return float(out) if out.ndim == 0 else out

    def integral(self, t: float, func: Callable | None = None) -> float:
        """``∫_0^t func(x(s)) ds``.

        Exact for forward-step paths. For linear paths this is the trapezoid
        rule on the samples, which is exact when ``func`` is the identity.
        """
        t = float(self._check(t))
        if t <= 0.0:
            return 0.0
        f = (lambda v: v) if func is None else func
        g = self.grid
        m = int(np.searchsorted(g, t, side="right"))  # g[:m] <= t
        if self.interpolation == LINEAR:
            knots = g[:m]
            vals = self.values[:m]
            if knots[-1] < t:
                knots = np.append(knots, t)
                vals = np.append(vals, np.interp(t, g, self.values))
            fv = np.asarray(f(vals), dtype=float)
            return float(np.sum(0.5 * (fv[1:] + fv[:-1]) * np.diff(knots)))
        # forward-step: value values[j+1] on [g[j], g[j+1])
        mm = int(np.searchsorted(g, t, side="left"))  # intervals starting before t
        right = np.minimum(g[1:mm + 1], t)
        left = g[:mm]
        carried = self.values[1:mm + 1]
        fv = np.asarray(f(carried), dtype=float)
        return float(np.sum(fv * (right - left)))

    def scaled(self, c: float) -> "SampledPath":
        return SampledPath(self.grid, c * self.values, self.interpolation)


# ---------------------------------------------------------------------------
# Path slices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PathSlice:
    """A path restricted to ``[0, t]``, possibly edited after time ``cut``.

    On ``[0, cut)`` the slice agrees with ``base``. From ``cut`` on it is a
    right-continuous step function: each knot ``(s, v)`` sets the value ``v``
    from time ``s`` onwards; with no knot at ``cut`` the value ``base(cut)``
    is carried. Horizontal extensions push ``t`` forward, vertical
    perturbations and pre-limits put a knot at ``t``.
    """

    base: SampledPath
    t: float
    cut: float
    knots: tuple = ()

    def _values_after_cut(self, u: np.ndarray, strict: bool) -> np.ndarray:
        out = np.full(u.shape, self.base(self.cut), dtype=float)
        for s, v in self.knots:
            hit = (u > s) if strict else (u >= s)
            out = np.where(hit, v, out)
        return out

    def _scalar_after_cut(self, u: float, strict: bool) -> float:
        out = None
        for s, v in self.knots:
            if (u > s) if strict else (u >= s):
                out = v
        return self.base(self.cut) if out is None else float(out)

    def _check(self, u):
        tol = _time_tol(self.t)
        if isinstance(u, (float, int)) or np.ndim(u) == 0:
            u = float(u)
            if u < -tol or u > self.t + tol:
                raise OutOfRange(f"evaluation time {u} outside [0, {self.t}]")
            return min(max(u, 0.0), self.t)
        u = np.asarray(u, dtype=float)
        if u.size and (u.min() < -tol or u.max() > self.t + tol):
            raise OutOfRange(f"evaluation time outside [0, {self.t}]")
        return np.clip(u, 0.0, self.t)

    def __call__(self, u):
        u = self._check(u)
        if isinstance(u, float):
            return self.base(u) if u < self.cut else self._scalar_after_cut(u, strict=False)
        before = u < self.cut
        out = self._values_after_cut(u, strict=False)
        if np.any(before):
            out = np.where(before, self.base(np.where(before, u, 0.0)), out)
        return float(out) if out.ndim == 0 else out

    def left_limit(self, u):
        """Left limit at ``u``; at ``u = 0`` the base's pre-initial value."""
        u = self._check(u)
        if isinstance(u, float):
            return self.base.left_limit(u) if u <= self.cut else self._scalar_after_cut(u, strict=True)
        if not u.size or u.max() <= self.cut:
            return self.base.left_limit(u)
        before = u <= self.cut
        out = self._values_after_cut(u, strict=True)
        if np.any(before):
            out = np.where(before, self.base.left_limit(np.where(before, u, 0.0)), out)
        return float(out) if out.ndim == 0 else out

    @property
    def endpoint(self) -> float:
        return self(self.t)

    @property
    def interpolation(self) -> str:
        return self.base.interpolation

    def integral(self, func: Callable | None = None) -> float:
        """``∫_0^t func(x(s)) ds`` over the slice; point edits carry no mass."""
        total = self.base.integral(self.cut, func)
        if self.t > self.cut:
            f = (lambda v: v) if func is None else func
            pts = sorted({self.cut, self.t, *(s for s, _ in self.knots if self.cut < s < self.t)})
            for a, b in zip(pts[:-1], pts[1:]):
                total += float(f(np.float64(self(a)))) * (b - a)
        return total

    def restrict(self, r: float) -> "PathSlice":
        """The slice cut down to ``[0, r]`` for ``r <= t``."""
        if r > self.t + _time_tol(self.t) or r < 0:
            raise OutOfRange(f"r={r} outside [0, {self.t}]")
        r = min(float(r), self.t)
        if r < self.cut:
            return PathSlice(self.base, r, r)
        return PathSlice(self.base, r, self.cut, tuple(k for k in self.knots if k[0] <= r))

    def knot_times(self) -> np.ndarray:
        """Times at which the slice may change slope or jump."""
        g = self.base.grid
        pts = np.concatenate([g[g <= self.cut], [self.cut, self.t], [s for s, _ in self.knots]])
        return np.unique(pts)


def restrict(path: SampledPath, t: float) -> PathSlice:
    """``x_t``: the path on ``[0, t]``; ``t`` need not be a grid point."""
    tol = _time_tol(path.t_end)
    if t < -tol or t > path.t_end + tol:
        raise OutOfRange(f"t={t} outside [0, {path.t_end}]")
    t = min(max(float(t), 0.0), path.t_end)
    return PathSlice(path, t, t)


def horizontal_extend(slice_: PathSlice, h: float) -> PathSlice:
    """``x_{t,h}``: freeze the value at ``t`` on ``(t, t+h]``."""
    if h < 0:
        raise InvalidArgument(f"horizontal step must be non-negative, got {h}")
    if h == 0:
        return slice_
    horizon = slice_.base.t_end
    if slice_.t + h > horizon + _time_tol(horizon):
        raise OutOfRange(f"t + h = {slice_.t + h} exceeds the horizon {horizon}")
    return _extend(slice_, min(slice_.t + h, horizon) - slice_.t)


def _extend(slice_: PathSlice, h: float) -> PathSlice:
    # no horizon check: used by d_infinity to align slices of different bases
    return PathSlice(slice_.base, slice_.t + h, slice_.cut, slice_.knots)


def _set_endpoint(slice_: PathSlice, value: float) -> PathSlice:
    knots = tuple(k for k in slice_.knots if k[0] != slice_.t) + ((slice_.t, float(value)),)
    return PathSlice(slice_.base, slice_.t, slice_.cut, knots)


def vertical_perturb(slice_: PathSlice, h: float, state_space: tuple | None = None) -> PathSlice:
    """``x_t^h``: add ``h`` to the endpoint only."""
    if h == 0:
        return slice_
    new = slice_.endpoint + h
    if state_space is not None:
        lo, hi = state_space
        if not (lo < new < hi):
            raise DomainViolation(
                f"perturbed endpoint {new} leaves the state space ({lo}, {hi})", where=slice_.t
            )
    return _set_endpoint(slice_, new)


def pre_limit(slice_: PathSlice) -> PathSlice:
    """``x_{t-}``: replace the endpoint by the left limit at ``t``.

    A slice at ``t = 0`` has no left limit and is returned unchanged.
    """
    if slice_.t <= 0.0:
        return slice_
    left = slice_.left_limit(slice_.t)
    if left == slice_.endpoint and not slice_.knots:
        return slice_
    return _set_endpoint(slice_, left)


def d_infinity(a: PathSlice, b: PathSlice) -> float:
    """``sup_u |a_{t,h}(u) - b(u)| + h`` where ``h`` is the gap between end times."""
    if a.t > b.t:
        a, b = b, a
    h = b.t - a.t
    ae = _extend(a, h)
    knots = np.unique(np.concatenate([ae.knot_times(), b.knot_times()]))
    knots = knots[knots <= b.t]
    diff = np.abs(ae(knots) - b(knots))
    sup = float(diff.max())
    inner = knots[knots > 0]
    if inner.size:
        sup = max(sup, float(np.abs(ae.left_limit(inner) - b.left_limit(inner)).max()))
    return sup + h


# ---------------------------------------------------------------------------
# Pathwise sums
# ---------------------------------------------------------------------------


def _level_nodes(scheme: PartitionScheme, level: int, t: float) -> np.ndarray:
    return scheme.nodes(level, t)


def quadratic_variation(path: SampledPath, scheme: PartitionScheme, level: int, t: float) -> float:
    """``Σ_{t_j ∈ (0, t]} (x(t_j) - x(t_{j-1}))²`` on the given level."""
    g = _level_nodes(scheme, level, t)
    if g.size < 2:
        return 0.0
    dx = np.diff(path(g))
    return math.fsum(dx * dx)


def quadratic_variation_path(path: SampledPath, scheme: PartitionScheme, level: int) -> np.ndarray:
    """QV at every grid point of the level (cumulative sums of squared increments)."""
    g = scheme.grid(level)
    dx = np.diff(path(g))
    return np.concatenate([[0.0], np.cumsum(dx * dx)])


def forward_integral(
    integrand: SampledPath,
    integrator: SampledPath,
    scheme: PartitionScheme,
    level: int,
    t: float,
) -> float:
    """``Σ_{t_j ∈ (0, t]} Y(t_{j-1}) (X(t_j) - X(t_{j-1}))`` (left-point sampling)."""
    g = _level_nodes(scheme, level, t)
    if g.size < 2:
        return 0.0
    y = integrand(g[:-1])
    dx = np.diff(integrator(g))
    return math.fsum(y * dx)


def piecewise_constant_approx(path: SampledPath, scheme: PartitionScheme, level: int) -> SampledPath:
    """``x^n``: carries ``x(t_{j+1})`` on ``[t_j, t_{j+1})`` and ``x(T)`` at ``T``."""
    g = scheme.grid(level)
    return SampledPath(g, path(g), FORWARD_STEP)


def follmer_nodes(F, path: SampledPath, scheme: PartitionScheme, level: int, t: float):
    """Föllmer integrand values at the nodes of ``level`` up to ``t``.

    Returns ``(nodes, values, increments)`` where ``values[i]`` is
    ``∇_x F_{t_i}(x^n_{t_i-})`` and ``increments[i] = x(t_{i+1}) - x(t_i)``.
    ``F`` must provide ``vertical_derivative(t, slice)``.
    """
    g = _level_nodes(scheme, level, t)
    xn = piecewise_constant_approx(path, scheme, level)
    xg = path(g)
    nodes = g[:-1]
    vals = np.empty(nodes.size)
    for i, ti in enumerate(nodes):
        s = pre_limit(PathSlice(xn, float(ti), float(ti)))
        try:
            v = F.vertical_derivative(float(ti), s)
        except PathcalcError:
            raise
        except (ArithmeticError, ValueError) as exc:
            raise EvaluationFailure(f"vertical derivative failed at t={ti}: {exc}", t=float(ti)) from exc
        if not math.isfinite(v):
            raise EvaluationFailure(f"non-finite vertical derivative at t={ti}", t=float(ti))
        vals[i] = v
    return nodes, vals, np.diff(xg)


def follmer_integral(F, path: SampledPath, scheme: PartitionScheme, level: int, t: float) -> float:
    """``Σ_{t_{i+1} ≤ t} ∇_x F_{t_i}(x^n_{t_i-}) (x(t_{i+1}) - x(t_i))``."""
    _, vals, dx = follmer_nodes(F, path, scheme, level, t)
    return math.fsum(vals * dx)


def convergence_slope(meshes: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log|error|`` against ``log mesh``.

    Levels whose error is within 100 machine epsilons of zero are dropped so
    the round-off floor is not fitted. Returns ``nan`` with fewer than two
    usable levels.
    """
    m = np.asarray(meshes, dtype=float)
    e = np.abs(np.asarray(errors, dtype=float))
    keep = e > 100 * np.finfo(float).eps
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(m[keep]), np.log(e[keep]), 1)
    return float(slope)
