"""Reference computations that do not import the package.

Each helper recomputes a quantity from first principles (plain loops,
closed forms or quadrature) so that tests compare two independent routes.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats


def squared_increments(values) -> float:
    total = 0.0
    for a, b in zip(values[:-1], values[1:]):
        total += (b - a) ** 2
    return total


def left_riemann(y, x) -> float:
    total = 0.0
    for k in range(len(x) - 1):
        total += y[k] * (x[k + 1] - x[k])
    return total


def brownian_qv_sd(T: float, k: int) -> float:
    """Standard deviation of the QV sum of Brownian motion on ``k`` equal steps."""
    dt = T / k
    return math.sqrt(2.0 * k) * dt


def discrete_ito_gap(values) -> float:
    """``x(T)² - x(0)² - Σ 2 x(t_i) Δx_i - Σ (Δx_i)²``; zero up to round-off."""
    x = np.asarray(values, dtype=float)
    dx = np.diff(x)
    return float(x[-1] ** 2 - x[0] ** 2 - math.fsum(2 * x[:-1] * dx) - math.fsum(dx * dx))


def fbm_covariance(s: float, t: float, H: float) -> float:
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - abs(t - s) ** (2 * H))


def geometric_asian_quadrature(t, spot, G, K, T, vol):
    """Value of the geometric Asian call by integrating the payoff over the lognormal law.

    The log of the geometric mean has mean ``(G + τ log S)/T - vol² τ²/(4T)``
    and variance ``vol² τ³/(3T²)``; the expectation is computed by quadrature.
    """
    tau = T - t
    mean = (G + tau * math.log(spot)) / T - vol**2 * tau**2 / (4 * T)
    sd = math.sqrt(vol**2 * tau**3 / 3) / T
    lo = math.log(K)
    f = lambda y: (math.exp(y) - K) * stats.norm.pdf(y, mean, sd)  # noqa: E731
    val, _ = integrate.quad(f, lo, mean + 12 * sd, epsabs=1e-13, epsrel=1e-12)
    return val


def geometric_asian_delta_quadrature(t, spot, G, K, T, vol, h=1e-5):
    up = geometric_asian_quadrature(t, spot * (1 + h), G, K, T, vol)
    dn = geometric_asian_quadrature(t, spot * (1 - h), G, K, T, vol)
    return (up - dn) / (2 * h * spot)


def hill(x, k):
    x = np.sort(np.asarray(x))[::-1]
    return k / np.sum(np.log(x[:k] / x[k]))


def rk4_scalar(sigma, s0, x, step):
    """Plain RK4 from 0 to ``x`` with the given step (sign taken from ``x``)."""
    n = int(round(abs(x) / step))
    h = math.copysign(step, x) if n else 0.0
    y = s0
    for _ in range(n):
        k1 = sigma(y)
        k2 = sigma(y + h * k1 / 2)
        k3 = sigma(y + h * k2 / 2)
        k4 = sigma(y + h * k3)
        y += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return y
