"""Non-anticipative functionals and their horizontal and vertical derivatives.

A functional maps ``(t, x_t)`` to a real number, where ``x_t`` is a
:class:`~pathcalc.paths.PathSlice` ending at ``t``. Derivatives are taken
analytically when the functional supplies them and by finite differences
otherwise:

* vertical, first order: central difference with ``h = 1e-5 * max(1, |x(t)|)``
* vertical, second order: central difference with ``h = 1e-3 * max(1, |x(t)|)``
* horizontal: forward difference with ``h = 1e-4 * T``, shrunk to fit before ``T``

Analytic derivatives are expected to agree with the finite differences
within ``FD_RTOL`` relative (``FD_ATOL`` absolute floor) for first
derivatives and ``FD2_RTOL`` for second derivatives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainViolation, EvaluationFailure, InvalidArgument, InvalidSpec, OutOfRange
from .paths import (
    PartitionScheme,
    PathSlice,
    SampledPath,
    convergence_slope,
    follmer_nodes,
    horizontal_extend,
    piecewise_constant_approx,
    pre_limit,
    restrict,
    vertical_perturb,
)
from .strategies import BSVStrategy

FD_RTOL = 1e-4
FD_ATOL = 1e-6
FD2_RTOL = 1e-2

VERTICAL_BUMP = 1e-5
SECOND_VERTICAL_BUMP = 1e-3
HORIZONTAL_BUMP = 1e-4


@dataclass(frozen=True)
class NonAnticipativeFunctional:
    """A family ``F_t`` evaluated on path slices, with optional derivatives.

    ``tags`` records class memberships claimed for the functional (for
    example ``"left-continuous"`` or ``"boundedness-preserving"``). They are
    documentation only.
    """

    func: Callable[[float, PathSlice], float]
    horizon: float
    vd: Callable[[float, PathSlice], float] | None = None
    vd2: Callable[[float, PathSlice], float] | None = None
    hd: Callable[[float, PathSlice], float] | None = None
    state_space: tuple | None = None
    tags: frozenset = field(default_factory=frozenset)
    name: str = ""

    def __call__(self, t: float, s: PathSlice) -> float:
        return _finite(self.func(t, s), t, self.name or "functional")

    def at(self, path: SampledPath, t: float) -> float:
        """``F_t(x_t)`` on the restriction of ``path`` to ``[0, t]``."""
        return self(t, restrict(path, t))

    def vertical_derivative(self, t: float, s: PathSlice) -> float:
        if self.vd is not None:
            return _finite(self.vd(t, s), t, "vertical derivative")
        return vertical_derivative_fd(self, t, s)

    def second_vertical_derivative(self, t: float, s: PathSlice) -> float:
        if self.vd2 is not None:
            return _finite(self.vd2(t, s), t, "second vertical derivative")
        return second_vertical_derivative_fd(self, t, s)

    def horizontal_derivative(self, t: float, s: PathSlice) -> float:
        if self.hd is not None:
            return _finite(self.hd(t, s), t, "horizontal derivative")
        return horizontal_derivative_fd(self, t, s)


def _finite(v, t, what) -> float:
    try:
        v = float(v)
    except (TypeError, ValueError, ArithmeticError) as exc:
        raise EvaluationFailure(f"{what} failed at t={t}: {exc}", t=t) from exc
    if not math.isfinite(v):
        raise EvaluationFailure(f"{what} is not finite at t={t}", t=t)
    return v


def _eval(F: NonAnticipativeFunctional, t: float, s: PathSlice) -> float:
    try:
        return F(t, s)
    except EvaluationFailure:
        raise
    except (ArithmeticError, ValueError) as exc:
        if isinstance(exc, (DomainViolation, OutOfRange)):
            raise
        raise EvaluationFailure(f"evaluation failed at t={t}: {exc}", t=t) from exc


def _vertical_bumps(F, t, s, h):
    """Evaluate ``F`` at ``x_t^{+h}`` and ``x_t^{-h}``, shrinking ``h`` once on a state-space exit."""
    for attempt in range(2):
        try:
            up = vertical_perturb(s, h, F.state_space)
            down = vertical_perturb(s, -h, F.state_space)
        except DomainViolation:
            if attempt == 0:
                h /= 10.0
                continue
            raise DomainViolation(
                f"vertical bumps of size {h} leave the state space at t={t}", where=t
            )
        return _eval(F, t, up), _eval(F, t, down), h
    raise AssertionError("unreachable")


def vertical_derivative_fd(F: NonAnticipativeFunctional, t: float, s: PathSlice, h: float | None = None) -> float:
    """Central difference ``(F(x_t^{+h}) - F(x_t^{-h})) / 2h``."""
    if h is None:
        h = VERTICAL_BUMP * max(1.0, abs(s.endpoint))
    if not h > 0:
        raise InvalidArgument(f"bump must be positive, got {h}")
    up, down, h = _vertical_bumps(F, t, s, h)
    return _finite((up - down) / (2.0 * h), t, "vertical derivative")


def second_vertical_derivative_fd(
    F: NonAnticipativeFunctional, t: float, s: PathSlice, h: float | None = None
) -> float:
    """``(F(x^{+h}) - 2F(x) + F(x^{-h})) / h²``."""
    if h is None:
        h = SECOND_VERTICAL_BUMP * max(1.0, abs(s.endpoint))
    if not h > 0:
        raise InvalidArgument(f"bump must be positive, got {h}")
    up, down, h = _vertical_bumps(F, t, s, h)
    mid = _eval(F, t, s)
    return _finite((up - 2.0 * mid + down) / (h * h), t, "second vertical derivative")


def horizontal_derivative_fd(
    F: NonAnticipativeFunctional, t: float, s: PathSlice, h: float | None = None
) -> float:
    """Forward difference ``(F_{t+h}(x_{t,h}) - F_t(x_t)) / h``."""
    T = F.horizon
    room = T - t
    if room <= 1e-12 * max(1.0, T):
        raise OutOfRange(f"no horizontal room at t={t} (horizon {T})")
    if h is None:
        h = HORIZONTAL_BUMP * T
    if not h > 0:
        raise InvalidArgument(f"step must be positive, got {h}")
    h = min(h, room)
    ext = horizontal_extend(s, h)
    return _finite((_eval(F, t + h, ext) - _eval(F, t, s)) / h, t, "horizontal derivative")


# ---------------------------------------------------------------------------
# Cylindrical functionals and integrands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CylindricalSpec:
    """Pieces anchored on ``grid = (t_0 = 0 < ... < t_n = T)``.

    ``form="functional"``: ``pieces[i-1](anchors, x, t)`` with
    ``anchors = (x(t_0), ..., x(t_{i-1}))`` is used for ``t ∈ (t_{i-1}, t_i]``
    (and the first piece at ``t = 0``). Optional partials ``dx``, ``dxx``,
    ``dt`` have the same signature.

    ``form="integrand"``: ``pieces[j-1](anchors)`` with
    ``anchors = (x(t_0), ..., x(t_{j-1}))`` is the position taken from
    ``t_{j-1}`` onwards.

    Anchors are read as left limits ``x(t_j-)``, which coincide with point
    values on continuous paths.
    """

    grid: Sequence[float]
    pieces: tuple
    form: str = "functional"
    dx: tuple | None = None
    dxx: tuple | None = None
    dt: tuple | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0):
            raise InvalidSpec("cylinder grid must be strictly increasing from 0 with at least two points")
        if self.form not in ("functional", "integrand"):
            raise InvalidSpec(f"unknown form {self.form!r}")
        if len(self.pieces) != g.size - 1:
            raise InvalidSpec(f"need {g.size - 1} pieces, got {len(self.pieces)}")
        for name in ("dx", "dxx", "dt"):
            d = getattr(self, name)
            if d is not None and len(d) != len(self.pieces):
                raise InvalidSpec(f"{name} must have one entry per piece")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])


def _piece_index(grid: np.ndarray, t: float) -> int:
    # t in (t_{i-1}, t_i] -> i, with t = 0 -> 1
    return max(1, min(int(np.searchsorted(grid, t, side="left")), grid.size - 1))


def check_seams(spec: CylindricalSpec, n_samples: int = 8, tol: float = 1e-9, seed: int = 0) -> float:
    """Largest seam mismatch ``|f_i(a, a_{i-1}, t_{i-1}) - f_{i-1}(a[:-1], a_{i-1}, t_{i-1})|``.

    At ``t_{i-1}`` the current value equals the newest anchor on a
    continuous path, which is where consecutive pieces must agree.
    Raises :class:`InvalidSpec` when the mismatch exceeds ``tol`` (relative
    to ``1 + |value|``).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    g = spec.grid
    for i in range(2, len(spec.pieces) + 1):
        t_seam = float(g[i - 1])
        for _ in range(n_samples):
            a = rng.uniform(0.5, 1.5, size=i)
            right = float(spec.pieces[i - 1](a, a[-1], t_seam))
            left = float(spec.pieces[i - 2](a[:-1], a[-1], t_seam))
            gap = abs(right - left)
            worst = max(worst, gap)
            if gap > tol * (1.0 + abs(left)):
                raise InvalidSpec(f"pieces {i - 1} and {i} disagree at the seam t={t_seam} (gap {gap:.3g})")
    return worst


def make_cylindrical_functional(spec: CylindricalSpec, name: str = "cylindrical", **kwargs) -> NonAnticipativeFunctional:
    """``F_t(x_t) = Σ_i 1_{(t_{i-1}, t_i]}(t) f_i(x(t_0), ..., x(t_{i-1}), x(t), t)``."""
    if spec.form != "functional":
        raise InvalidSpec("make_cylindrical_functional needs a spec of functional form")
    check_seams(spec)
    g = spec.grid

    def wired(parts):
        if parts is None:
            return None

        def call(t, s):
            i = _piece_index(g, t)
            return parts[i - 1](s.left_limit(g[:i]), s.endpoint, t)

        return call

    return NonAnticipativeFunctional(
        func=wired(spec.pieces),
        horizon=spec.horizon,
        vd=wired(spec.dx),
        vd2=wired(spec.dxx),
        hd=wired(spec.dt),
        tags=frozenset({"cylindrical"}),
        name=name,
        **kwargs,
    )


@dataclass(frozen=True)
class CylindricalIntegrand:
    """``ψ_t(x_t) = Σ_j f_j(x(t_0), ..., x(t_{j-1}))`` over pieces with ``t_{j-1} <= t``.

    A piece is switched on at its anchor time itself, so the position held
    over a grid cell starting at ``t_{j-1}`` already includes ``f_j``; with
    left-point sampling this makes the pathwise sums telescope exactly.
    """

    spec: CylindricalSpec
    name: str = "cylindrical integrand"

    def __post_init__(self):
        if self.spec.form != "integrand":
            raise InvalidSpec("a cylindrical integrand needs a spec of integrand form")

    def _active(self, t: float) -> int:
        g = self.spec.grid
        return int(np.searchsorted(g[:-1], t, side="right"))

    def __call__(self, t: float, s: PathSlice) -> float:
        n = self._active(t)
        a = s.left_limit(self.spec.grid[:n])
        return float(sum(self.spec.pieces[j](a[: j + 1]) for j in range(n)))

    def primitive_value(self, t: float, s: PathSlice) -> float:
        n = self._active(t)
        a = s.left_limit(self.spec.grid[:n])
        x = s.endpoint
        return float(sum(self.spec.pieces[j](a[: j + 1]) * (x - a[j]) for j in range(n)))

    @property
    def primitive(self) -> NonAnticipativeFunctional:
        """``F_t = Σ_j f_j(...) (x(t) - x(t_{j-1}))`` with ``∇_x F = ψ`` and ``∇²F = 𝒟F = 0``."""
        zero = lambda t, s: 0.0  # noqa: E731
        return NonAnticipativeFunctional(
            func=self.primitive_value,
            horizon=self.spec.horizon,
            vd=self.__call__,
            vd2=zero,
            hd=zero,
            tags=frozenset({"cylindrical"}),
            name=f"primitive of {self.name}",
        )


def make_cylindrical_integrand(spec: CylindricalSpec, name: str = "cylindrical integrand") -> CylindricalIntegrand:
    return CylindricalIntegrand(spec, name)


# ---------------------------------------------------------------------------
# Built-in functionals
# ---------------------------------------------------------------------------

_zero = lambda t, s: 0.0  # noqa: E731


def constant_functional(c: float, T: float) -> NonAnticipativeFunctional:
    return NonAnticipativeFunctional(lambda t, s: c, T, vd=_zero, vd2=_zero, hd=_zero, name="constant")


def endpoint_power(p: int, T: float, analytic: bool = True) -> NonAnticipativeFunctional:
    """``F_t(x_t) = x(t)**p``."""
    if not analytic:
        return NonAnticipativeFunctional(lambda t, s: s.endpoint**p, T, name=f"x^{p}")
    return NonAnticipativeFunctional(
        lambda t, s: s.endpoint**p,
        T,
        vd=lambda t, s: p * s.endpoint ** (p - 1),
        vd2=lambda t, s: p * (p - 1) * s.endpoint ** (p - 2) if p >= 2 else 0.0,
        hd=_zero,
        name=f"x^{p}",
    )


def integral_functional(T: float) -> NonAnticipativeFunctional:
    """``F_t(x_t) = ∫_0^t x ds + (T - t) x(t)``; ``∇_x F = T - t``, ``𝒟F = 0``."""
    return NonAnticipativeFunctional(
        lambda t, s: s.integral() + (T - t) * s.endpoint,
        T,
        vd=lambda t, s: T - t,
        vd2=_zero,
        hd=_zero,
        tags=frozenset({"left-continuous", "boundedness-preserving"}),
        name="integral",
    )


def continuous_average(T: float) -> NonAnticipativeFunctional:
    """``F_t(x_t) = (1/T) ∫_0^t x ds + ((T - t)/T) x(t)``; ``∇_x F = (T - t)/T``."""
    return NonAnticipativeFunctional(
        lambda t, s: s.integral() / T + (T - t) / T * s.endpoint,
        T,
        vd=lambda t, s: (T - t) / T,
        vd2=_zero,
        hd=_zero,
        tags=frozenset({"left-continuous", "boundedness-preserving"}),
        name="continuous-average",
    )


def averaging_dates(T: float, N: int) -> np.ndarray:
    if N < 1:
        raise InvalidArgument(f"number of averaging intervals must be positive, got {N}")
    d = np.arange(N + 1, dtype=float) * (T / N)
    d[-1] = T
    return d


def discrete_average_spec(T: float, N: int) -> CylindricalSpec:
    """Pieces of the discrete-average functional on dates ``t_j = jT/N``.

    ``f_i = (Σ_{j<i} x(t_j) + (t - t_{i-1})/(t_i - t_{i-1}) x(t)) / (N + 1)``.
    """
    d = averaging_dates(T, N)
    c = 1.0 / (N + 1)

    def piece(i):
        t0, t1 = d[i - 1], d[i]
        return lambda a, x, t: c * (float(np.sum(a)) + (t - t0) / (t1 - t0) * x)

    def dpiece(i):
        t0, t1 = d[i - 1], d[i]
        return lambda a, x, t: c * (t - t0) / (t1 - t0)

    def tpiece(i):
        t0, t1 = d[i - 1], d[i]
        return lambda a, x, t: c * x / (t1 - t0)

    idx = range(1, N + 1)
    zero = tuple(lambda a, x, t: 0.0 for _ in idx)
    return CylindricalSpec(
        d,
        tuple(piece(i) for i in idx),
        dx=tuple(dpiece(i) for i in idx),
        dxx=zero,
        dt=tuple(tpiece(i) for i in idx),
    )


def discrete_average(T: float, N: int) -> NonAnticipativeFunctional:
    """Cylindrical functional ending at ``(1/(N+1)) Σ_{j=0}^N x(t_j)``.

    ``∇_x F = N/((N+1)T) (t - t_{i-1})`` and ``𝒟F = N/((N+1)T) x(t)`` on
    ``(t_{i-1}, t_i]``; not a martingale functional.
    """
    return make_cylindrical_functional(discrete_average_spec(T, N), name="discrete-average")


def discrete_average_price_spec(T: float, N: int) -> CylindricalSpec:
    """The discrete average plus the hedge of its difference to the continuous average.

    ``G_t = (Σ_{j<i} x(t_j) + (N - i + 1) x(t)) / (N + 1)`` on ``(t_{i-1}, t_i]``,
    so ``𝒟G = 0``, ``∇_x G = (N - i + 1)/(N + 1)`` and ``G_T`` is the discrete average.
    """
    d = averaging_dates(T, N)
    c = 1.0 / (N + 1)

    def piece(i):
        return lambda a, x, t: c * (float(np.sum(a)) + (N - i + 1) * x)

    def dpiece(i):
        return lambda a, x, t: c * (N - i + 1)

    idx = range(1, N + 1)
    zero = tuple(lambda a, x, t: 0.0 for _ in idx)
    return CylindricalSpec(
        d, tuple(piece(i) for i in idx), dx=tuple(dpiece(i) for i in idx), dxx=zero, dt=zero
    )


def discrete_average_price(T: float, N: int) -> NonAnticipativeFunctional:
    return make_cylindrical_functional(discrete_average_price_spec(T, N), name="discrete-average-price")


# ---------------------------------------------------------------------------
# Functional change of variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoVLevel:
    level: int
    mesh: float
    t: float
    F_end: float
    F_start: float
    horizontal: float
    second_order: float
    follmer: float

    @property
    def residual(self) -> float:
        return self.F_end - self.F_start - (self.horizontal + self.second_order + self.follmer)

    def terms(self) -> dict:
        return {
            "F_end": self.F_end,
            "F_start": self.F_start,
            "horizontal": self.horizontal,
            "second_order": self.second_order,
            "follmer": self.follmer,
        }


@dataclass(frozen=True)
class CoVReport:
    levels: tuple

    @property
    def residuals(self) -> np.ndarray:
        return np.array([lv.residual for lv in self.levels])

    @property
    def meshes(self) -> np.ndarray:
        return np.array([lv.mesh for lv in self.levels])

    @property
    def slope(self) -> float:
        return convergence_slope(self.meshes, self.residuals)


def change_of_variables_level(
    F: NonAnticipativeFunctional, path: SampledPath, scheme: PartitionScheme, level: int, t: float
) -> CoVLevel:
    """All terms of the functional change of variables on one level.

    With ``x^n`` the forward-step approximation, node ``t_i`` contributes
    ``𝒟F_{t_i}(x^n_{t_i}) Δt_i`` (left-point quadrature on the path after
    the jump), ``½ ∇²F_{t_i}(x^n_{t_i-}) (Δx_i)²`` and
    ``∇F_{t_i}(x^n_{t_i-}) Δx_i``.
    """
    nodes, vd, dx = follmer_nodes(F, path, scheme, level, t)
    xn = piecewise_constant_approx(path, scheme, level)
    g = scheme.nodes(level, t)
    t_end = float(g[-1])
    vd2 = np.empty(nodes.size)
    hd = np.empty(nodes.size)
    for i, ti in enumerate(nodes):
        ti = float(ti)
        after = restrict(xn, ti)
        vd2[i] = F.second_vertical_derivative(ti, pre_limit(after))
        hd[i] = F.horizontal_derivative(ti, after)
    return CoVLevel(
        level=level,
        mesh=scheme.mesh(level),
        t=t_end,
        F_end=F.at(path, t_end),
        F_start=F.at(path, 0.0),
        horizontal=math.fsum(hd * np.diff(g)),
        second_order=0.5 * math.fsum(vd2 * dx * dx),
        follmer=math.fsum(vd * dx),
    )


def change_of_variables_decomposition(
    F: NonAnticipativeFunctional,
    path: SampledPath,
    scheme: PartitionScheme,
    t: float,
    levels: Sequence[int] | None = None,
) -> CoVReport:
    if levels is None:
        levels = range(scheme.n_levels)
    return CoVReport(tuple(change_of_variables_level(F, path, scheme, lv, t) for lv in levels))


# ---------------------------------------------------------------------------
# Wealth functional of a BSV strategy
# ---------------------------------------------------------------------------


def _quad(f, a, b, t):
    if a == b:
        return 0.0
    res = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200, full_output=1)
    if len(res) > 3:
        raise EvaluationFailure(f"quadrature did not converge at t={t}: {res[3]}", t=t)
    return float(res[0])


def _central(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def wealth_functional(t: float, path, strategy: BSVStrategy, sigma: Callable[[float], float]) -> float:
    """``v(t, η, φ)``: the wealth a smooth strategy would earn, written without stochastic integrals.

    ``v = u(t, η(t), g(t)) - Σ_j ∫ ∂_{y_j} u dg_j - ∫ ∂_t u dr - ½ ∫ ∂_x φ σ²(η(r)) dr``
    with ``u(t, x, y) = ∫_{s0}^x φ(t, ξ, y) dξ``. The time integrals use the
    trapezoid rule on the path's grid up to ``t``; the ``dg_j`` integrals are
    trapezoidal Stieltjes sums on the sampled factor paths.
    """
    s = restrict(path, t) if isinstance(path, SampledPath) else path.restrict(t)
    T = strategy.horizon
    s0 = s(0.0)
    phi = strategy.phi
    g = s.base.grid
    r = np.unique(np.append(g[g < t], t))
    n_f = len(strategy.factors)

    eta = np.empty(r.size)
    ys = np.empty((r.size, n_f))
    for k, rk in enumerate(r):
        sk = s.restrict(float(rk))
        eta[k] = sk.endpoint
        ys[k] = strategy.factor_values(float(rk), sk)
    try:
        sig2 = np.array([float(sigma(v)) ** 2 for v in eta])
    except Exception as exc:  # noqa: BLE001 - any failure of a user callable
        raise InvalidArgument(f"sigma could not be evaluated along the path: {exc}") from exc
    if not np.all(np.isfinite(sig2)):
        raise InvalidArgument("sigma is not finite along the path")

    def u(rk, x, y):
        return _quad(lambda xi: phi(rk, xi, *y), s0, x, rk)

    def du_dy(j, rk, x, y):
        if strategy.du_dy is not None:
            return float(strategy.du_dy[j](rk, x, *y, s0=s0))
        h = VERTICAL_BUMP * max(1.0, abs(y[j]))

        def dphi(xi):
            yp, ym = list(y), list(y)
            yp[j] += h
            ym[j] -= h
            return (phi(rk, xi, *yp) - phi(rk, xi, *ym)) / (2.0 * h)

        return _quad(dphi, s0, x, rk)

    def du_dt(rk, x, y):
        if strategy.du_dt is not None:
            return float(strategy.du_dt(rk, x, *y, s0=s0))
        h = HORIZONTAL_BUMP * T
        lo, hi = max(0.0, rk - h), min(T, rk + h)
        return _quad(lambda xi: (phi(hi, xi, *y) - phi(lo, xi, *y)) / (hi - lo), s0, x, rk)

    def dphi_dx(rk, x, y):
        if strategy.dphi_dx is not None:
            return float(strategy.dphi_dx(rk, x, *y))
        h = VERTICAL_BUMP * max(1.0, abs(x))
        return _central(lambda z: phi(rk, z, *y), x, h)

    dt = np.diff(r)
    a_t = np.array([du_dt(rk, eta[k], ys[k]) for k, rk in enumerate(r)])
    a_x = np.array([dphi_dx(rk, eta[k], ys[k]) for k, rk in enumerate(r)]) * sig2
    total = u(float(r[-1]), eta[-1], ys[-1])
    for j in range(n_f):
        a_y = np.array([du_dy(j, rk, eta[k], ys[k]) for k, rk in enumerate(r)])
        total -= math.fsum(0.5 * (a_y[1:] + a_y[:-1]) * np.diff(ys[:, j]))
    total -= math.fsum(0.5 * (a_t[1:] + a_t[:-1]) * dt)
    total -= 0.5 * math.fsum(0.5 * (a_x[1:] + a_x[:-1]) * dt)
    return _finite(total, t, "wealth functional")
