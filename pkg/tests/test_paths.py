import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brownian_qv_sd, left_riemann, squared_increments
from pathcalc.errors import DomainViolation, EvaluationFailure, InvalidArgument, OutOfRange
from pathcalc.functionals import NonAnticipativeFunctional, integral_functional
from pathcalc.paths import (
    FORWARD_STEP,
    LINEAR,
    PartitionScheme,
    SampledPath,
    convergence_slope,
    d_infinity,
    follmer_integral,
    forward_integral,
    horizontal_extend,
    make_dyadic_scheme,
    piecewise_constant_approx,
    pre_limit,
    quadratic_variation,
    quadratic_variation_path,
    restrict,
    vertical_perturb,
)


def linear(values, T=1.0):
    values = np.asarray(values, dtype=float)
    return SampledPath(np.linspace(0, T, values.size), values, LINEAR)


def identity_path(k=4096, T=1.0):
    g = np.linspace(0, T, k + 1)
    return SampledPath(g, g.copy(), LINEAR)


def brownian(seed, k, T=1.0):
    rng = np.random.default_rng(seed)
    return linear(np.r_[0.0, np.cumsum(rng.normal(0, math.sqrt(T / k), k))], T)


paths_st = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=40).map(linear)


# --- schemes -----------------------------------------------------------------


def test_dyadic_scheme_examples():
    s = make_dyadic_scheme(1.0, 1, 2)
    assert s.n_levels == 1
    np.testing.assert_array_equal(s.grid(0), [0, 0.5, 1])
    s = make_dyadic_scheme(1.0, 3, 1)
    assert [s.mesh(i) for i in range(3)] == [1, 0.5, 0.25]
    s = make_dyadic_scheme(2.0, 2, 4)
    np.testing.assert_array_equal(s.grid(0), [0, 0.5, 1, 1.5, 2])


def test_dyadic_scheme_refines():
    s = make_dyadic_scheme(1.0, 4, 3)
    for i in range(1, 4):
        assert np.all(np.isin(s.grid(i - 1), s.grid(i)))


@pytest.mark.parametrize("args", [(0.0, 2, 2), (-1.0, 2, 2), (1.0, 0, 2), (1.0, 2, 0)])
def test_dyadic_scheme_rejects(args):
    with pytest.raises(InvalidArgument):
        make_dyadic_scheme(*args)


def test_scheme_validation():
    with pytest.raises(InvalidArgument):
        PartitionScheme(1.0, ([0.0, 0.5, 0.9],))
    with pytest.raises(InvalidArgument):
        PartitionScheme(1.0, ([0.0, 0.5, 1.0], [0.0, 0.5, 1.0]))
    with pytest.raises(InvalidArgument):
        PartitionScheme(1.0, ([0.0, 0.5, 0.5, 1.0],))
    with pytest.raises(InvalidArgument):
        make_dyadic_scheme(1.0, 2, 2).grid(2)


# --- surgery -------------------------------------------------------------------


def test_restrict_examples():
    x = linear([0.0, 1.0])
    assert restrict(x, 1.0).endpoint == 1.0
    s0 = restrict(x, 0.0)
    assert s0.t == 0.0 and s0.endpoint == 0.0
    assert restrict(x, 0.3).endpoint == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(OutOfRange):
        restrict(x, 1.5)
    with pytest.raises(OutOfRange):
        restrict(x, -0.1)


def test_horizontal_extend_examples():
    x = identity_path(4)
    s = restrict(x, 0.5)
    assert horizontal_extend(s, 0.0).endpoint == s.endpoint
    e = horizontal_extend(s, 0.25)
    assert e.t == 0.75 and e.endpoint == 0.5
    assert e(0.25) == 0.25 and e(0.6) == 0.5
    c = restrict(linear([2.0, 2.0, 2.0]), 0.5)
    assert np.all(horizontal_extend(c, 0.3)(np.linspace(0, 0.8, 9)) == 2.0)
    with pytest.raises(OutOfRange):
        horizontal_extend(s, 0.6)


def test_vertical_perturb_examples():
    s = restrict(identity_path(4), 0.5)
    assert vertical_perturb(s, 0.0).endpoint == s.endpoint
    v = vertical_perturb(vertical_perturb(s, 0.1), 0.2)
    assert v.endpoint == pytest.approx(0.8)
    assert v(0.25) == 0.25 and v.left_limit(0.5) == 0.5
    p = restrict(linear([0.1, 0.1]), 1.0)
    with pytest.raises(DomainViolation):
        vertical_perturb(p, -0.2, state_space=(0.0, math.inf))


def test_pre_limit_examples():
    x = brownian(1, 64)
    s = restrict(x, 0.4)
    assert pre_limit(s).endpoint == s.endpoint
    scheme = make_dyadic_scheme(1.0, 1, 8)
    xn = piecewise_constant_approx(x, scheme, 0)
    g = scheme.grid(0)
    for i in range(1, g.size):
        sl = restrict(xn, g[i])
        assert pre_limit(sl).endpoint == x(g[i])
        assert sl.endpoint == x(g[min(i + 1, g.size - 1)])
    z = restrict(xn, 0.0)
    assert pre_limit(z) is z


def test_piecewise_constant_approx_example():
    x = identity_path(2)
    xn = piecewise_constant_approx(x, make_dyadic_scheme(1.0, 1, 2), 0)
    assert xn.interpolation == FORWARD_STEP
    assert [xn(u) for u in (0.0, 0.25, 0.49, 0.5, 0.75, 1.0)] == [0.5, 0.5, 0.5, 1.0, 1.0, 1.0]


def test_piecewise_constant_sup_distance_is_mesh():
    x = identity_path(256)
    s = make_dyadic_scheme(1.0, 3, 4)
    u = np.linspace(0, 1, 4097)
    for lv in range(3):
        xn = piecewise_constant_approx(x, s, lv)
        assert np.max(np.abs(xn(u) - x(u))) == pytest.approx(s.mesh(lv), abs=1e-12)


def test_d_infinity_examples():
    x = brownian(2, 32)
    a = restrict(x, 0.7)
    assert d_infinity(a, a) == 0.0
    b = restrict(SampledPath(x.grid, x.values + 0.3, LINEAR), 0.7)
    assert d_infinity(a, b) == pytest.approx(0.3)
    c1 = restrict(linear([1.0, 1.0]), 0.5)
    c2 = restrict(linear([1.0, 1.0]), 0.6)
    assert d_infinity(c1, c2) == pytest.approx(0.1)


def test_d_infinity_sees_vertical_bumps():
    s = restrict(brownian(3, 16), 0.5)
    assert d_infinity(s, vertical_perturb(s, 0.2)) == pytest.approx(0.2)


# --- sums ------------------------------------------------------------------------


def test_qv_identity_path():
    x = identity_path(1024)
    s = make_dyadic_scheme(1.0, 3, 256)
    for lv in range(3):
        assert quadratic_variation(x, s, lv, 1.0) == pytest.approx(s.mesh(lv), rel=1e-12)
    assert quadratic_variation(x, s, 2, 1.0) == pytest.approx(2.0**-10, rel=1e-12)


def test_qv_scaling_exact():
    x = brownian(4, 512)
    s = make_dyadic_scheme(1.0, 2, 256)
    for lv in range(2):
        assert quadratic_variation(x.scaled(3.0), s, lv, 1.0) == pytest.approx(9 * quadratic_variation(x, s, lv, 1.0), rel=1e-14)


def test_qv_matches_oracle_and_level_check():
    x = brownian(5, 256)
    s = make_dyadic_scheme(1.0, 1, 256)
    assert quadratic_variation(x, s, 0, 1.0) == pytest.approx(squared_increments(x.values), rel=1e-13)
    with pytest.raises(InvalidArgument):
        quadratic_variation(x, s, 1, 1.0)


def test_brownian_qv_ensemble_mean():
    k, n = 2**14, 200
    s = make_dyadic_scheme(1.0, 1, k)
    qs = [quadratic_variation(brownian(seed, k), s, 0, 1.0) for seed in range(n)]
    band = 3 * brownian_qv_sd(1.0, k) / math.sqrt(n)
    assert abs(np.mean(qs) - 1.0) < min(band, 0.05)


def test_qv_path_cumulative():
    x = brownian(6, 64)
    s = make_dyadic_scheme(1.0, 1, 64)
    qp = quadratic_variation_path(x, s, 0)
    assert qp[-1] == pytest.approx(quadratic_variation(x, s, 0, 1.0), rel=1e-12)
    assert np.all(np.diff(qp) >= 0)


def test_forward_integral_examples():
    x = brownian(7, 256)
    s = make_dyadic_scheme(1.0, 2, 128)
    c = linear(np.full(257, 2.5))
    assert forward_integral(c, x, s, 1, 1.0) == pytest.approx(2.5 * (x(1.0) - x(0.0)), abs=1e-13)
    y = identity_path(256)
    errs = [abs(forward_integral(y, y, s, lv, 1.0) - 0.5) for lv in range(2)]
    assert errs[0] == pytest.approx(0.5 * s.mesh(0)) and errs[1] < errs[0]
    g = s.grid(1)
    assert forward_integral(x, x, s, 1, 1.0) == pytest.approx(left_riemann(x(g), x(g)), abs=1e-13)


def test_forward_integral_truncates_at_grid():
    x = brownian(8, 64)
    s = make_dyadic_scheme(1.0, 1, 8)
    assert forward_integral(x, x, s, 0, 0.3) == forward_integral(x, x, s, 0, 0.25)


def test_follmer_integral_constant_derivative():
    x = brownian(9, 256)
    s = make_dyadic_scheme(1.0, 2, 128)
    F = NonAnticipativeFunctional(lambda t, sl: 1.7 * sl.endpoint, 1.0, vd=lambda t, sl: 1.7)
    assert follmer_integral(F, x, s, 1, 1.0) == pytest.approx(1.7 * (x(1.0) - x(0.0)), abs=1e-13)


def test_follmer_integral_integral_functional_limit():
    # ∫ x ds = T x(0) + ∫ (T - s) dx(s) in the refinement limit
    x = brownian(10, 4096)
    s = make_dyadic_scheme(1.0, 5, 256)
    F = integral_functional(1.0)
    lhs = x.integral(1.0)
    errs = [abs(lhs - x(0.0) - follmer_integral(F, x, s, lv, 1.0)) for lv in range(5)]
    assert errs[-1] < 1e-3 and errs[-1] < errs[0]


def test_follmer_integral_reports_node_time():
    x = brownian(11, 16)
    s = make_dyadic_scheme(1.0, 1, 16)

    def bad(t, sl):
        return float("nan") if t >= 0.5 else 1.0

    F = NonAnticipativeFunctional(lambda t, sl: 0.0, 1.0, vd=bad)
    with pytest.raises(EvaluationFailure) as ei:
        follmer_integral(F, x, s, 0, 1.0)
    assert ei.value.t == 0.5


def test_convergence_slope():
    m = np.array([1e-1, 1e-2, 1e-3])
    assert convergence_slope(m, 3 * m) == pytest.approx(1.0)
    assert convergence_slope(m, m**0.5) == pytest.approx(0.5)
    assert math.isnan(convergence_slope(m, [1.0, 0.0, 0.0]))


# --- properties ------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(paths_st, st.floats(0, 1))
def test_summation_by_parts(x, t):
    s = PartitionScheme(1.0, (x.grid,))
    lhs = forward_integral(x, x, s, 0, t) + 0.5 * quadratic_variation(x, s, 0, t)
    g = s.nodes(0, t)
    rhs = 0.5 * (x(g[-1]) ** 2 - x(0.0) ** 2)
    assert lhs == pytest.approx(rhs, abs=1e-10 * (1 + x(g[-1]) ** 2))


@settings(max_examples=50, deadline=None)
@given(paths_st, st.lists(st.floats(0, 1), min_size=2, max_size=6))
def test_qv_monotone_in_t(x, ts):
    s = PartitionScheme(1.0, (x.grid,))
    q = [quadratic_variation(x, s, 0, t) for t in sorted(ts)]
    assert all(b >= a for a, b in zip(q[:-1], q[1:]))


@settings(max_examples=50, deadline=None)
@given(paths_st, paths_st, paths_st, st.floats(-3, 3), st.floats(-3, 3))
def test_forward_integral_linear(y, z, x, a, b):
    s = make_dyadic_scheme(1.0, 1, 16)
    comb = SampledPath(s.grid(0), a * y(s.grid(0)) + b * z(s.grid(0)), LINEAR)
    lhs = forward_integral(comb, x, s, 0, 1.0)
    rhs = a * forward_integral(y, x, s, 0, 1.0) + b * forward_integral(z, x, s, 0, 1.0)
    assert lhs == pytest.approx(rhs, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(paths_st, st.floats(0, 1), st.floats(0, 1))
def test_extend_then_restrict_recovers(x, t, frac):
    s = restrict(x, t)
    h = frac * (1.0 - t)
    back = horizontal_extend(s, h).restrict(t)
    u = np.linspace(0, t, 17)
    np.testing.assert_array_equal(back(u), s(u))
    assert back.t == s.t


@settings(max_examples=50, deadline=None)
@given(paths_st, st.floats(0, 1), st.integers(0, 2))
def test_pre_limit_idempotent(x, t, lv):
    s = make_dyadic_scheme(1.0, 3, 2)
    xn = piecewise_constant_approx(x, s, lv)
    once = pre_limit(restrict(xn, t))
    twice = pre_limit(once)
    assert once.endpoint == twice.endpoint
    u = np.linspace(0, t, 9)
    np.testing.assert_array_equal(once(u), twice(u))


@settings(max_examples=50, deadline=None)
@given(paths_st, paths_st, paths_st, st.floats(0, 1))
def test_d_infinity_metric(a, b, c, t):
    sa, sb, sc = restrict(a, t), restrict(b, t), restrict(c, t)
    assert d_infinity(sa, sa) == 0.0
    assert d_infinity(sa, sb) == d_infinity(sb, sa)
    assert d_infinity(sa, sc) <= d_infinity(sa, sb) + d_infinity(sb, sc) + 1e-12
    if not np.array_equal(a(np.linspace(0, t, 50)), b(np.linspace(0, t, 50))):
        assert d_infinity(sa, sb) > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5), st.integers(1, 4))
def test_smooth_path_qv_decays_with_mesh(freq, levels):
    g = np.linspace(0, 1, 2**10 + 1)
    x = SampledPath(g, np.sin(freq * g), LINEAR)
    s = make_dyadic_scheme(1.0, levels, 8)
    tv = freq  # total variation bound of sin(freq u) on [0, 1] up to a constant 1
    for lv in range(levels):
        assert quadratic_variation(x, s, lv, 1.0) <= s.mesh(lv) * tv * tv + 1e-15
