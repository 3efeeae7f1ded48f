"""Trading strategies of the form ``phi(t, x(t), g_1(t, x_t), ..., g_n(t, x_t))``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .paths import PathSlice


@dataclass(frozen=True)
class HindsightFactor:
    """An adapted, continuous, bounded-variation statistic of the past path.

    ``lipschitz`` documents the constant ``K`` bounding the change of
    ``∫ f dg`` under sup-norm perturbations of the path, when it is known.
    It is not checked at runtime.
    """

    func: Callable[[float, PathSlice], float]
    name: str = ""
    lipschitz: float | None = None

    def __call__(self, t: float, s: PathSlice) -> float:
        return float(self.func(t, s))


@dataclass(frozen=True)
class BSVStrategy:
    """``Φ(t) = phi(t, x(t), g_1(t, x_t), ..., g_n(t, x_t))``.

    Optional analytic partials: ``dphi_dx(t, x, *y)`` and, for the
    antiderivative ``u(t, x, y) = ∫_{s0}^x phi(t, ξ, y) dξ``, ``du_dt(t, x, *y, s0=...)``
    and ``du_dy[j](t, x, *y, s0=...)``. Missing partials are computed by
    central finite differences.
    """

    phi: Callable[..., float]
    factors: tuple = ()
    horizon: float = 1.0
    dphi_dx: Callable | None = None
    du_dt: Callable | None = None
    du_dy: tuple | None = None
    nds_floor: float | None = None
    name: str = ""

    def factor_values(self, t: float, s: PathSlice) -> tuple:
        return tuple(g(t, s) for g in self.factors)

    def __call__(self, t: float, s: PathSlice) -> float:
        return float(self.phi(t, s.endpoint, *self.factor_values(t, s)))
