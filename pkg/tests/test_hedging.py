import math

import numpy as np
import pytest

from oracles import geometric_asian_delta_quadrature, geometric_asian_quadrature, left_riemann
from pathcalc.errors import InvalidArgument, NotReplicating
from pathcalc.functionals import (
    CylindricalSpec,
    NonAnticipativeFunctional,
    constant_functional,
    continuous_average,
    discrete_average,
    make_cylindrical_integrand,
)
from pathcalc.hedging import (
    CFStrategy,
    builtin_options,
    extended_vertical_derivative,
    functional_path,
    geometric_asian_mc_oracle,
    geometric_asian_value_and_hedge,
    log_integral_factor,
    replicate_cf,
    strategy_equality_check,
    wealth_process,
)
from pathcalc.paths import LINEAR, SampledPath, follmer_integral, make_dyadic_scheme, restrict
from pathcalc.processes import GeneratorConfig, black_scholes_config, sample_brownian, sample_driver, sample_model_path
from pathcalc.strategies import BSVStrategy

S = make_dyadic_scheme(1.0, 5, 256)
S3 = make_dyadic_scheme(1.0, 3, 64)


def model(seed, scheme=S, **kw):
    return sample_model_path(GeneratorConfig(seed=seed, scheme=scheme, **kw))


def cyl_integrand(n=8):
    spec = CylindricalSpec(
        np.linspace(0, 1, n + 1), tuple(lambda a, j=j: math.sin(a[-1]) + 0.1 * j for j in range(n)), form="integrand"
    )
    return make_cylindrical_integrand(spec)


# --- wealth processes ------------------------------------------------------------


def test_wealth_buy_and_hold_and_zero():
    x = model(1, S3)
    hold = BSVStrategy(lambda t, x: 2.0)
    v = wealth_process(hold, x, S3, 2, 0.5)
    g = S3.grid(2)
    np.testing.assert_allclose(v.values, 0.5 + 2.0 * (x(g) - x(0.0)), atol=1e-13)
    z = wealth_process(BSVStrategy(lambda t, x: 0.0), x, S3, 1, 3.0)
    assert np.all(z.values == 3.0)


def test_wealth_continuous_average_converges_to_average():
    x = model(2, z_kind="fbm")
    F = continuous_average(1.0)
    avg = x.integral(1.0)
    errs = [abs(wealth_process(CFStrategy(F), x, S, lv, x(0.0)).values[-1] - avg) for lv in range(5)]
    assert errs[-1] < errs[0] and errs[-1] < 1e-4


def test_wealth_forward_matches_oracle():
    x = model(3, S3)
    phi = BSVStrategy(lambda t, x: x * x - t)
    g = S3.grid(1)
    v = wealth_process(phi, x, S3, 1, 0.0)
    xs = x(g)
    assert v.values[-1] == pytest.approx(left_riemann(xs**2 - g, xs), abs=1e-13)


# --- replication ---------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["none", "fbm", "icp"])
def test_cylindrical_primitive_replicates_exactly(kind):
    x = model(4, z_kind=kind)
    rep = replicate_cf(cyl_integrand().primitive, x, S)
    assert max(lv.max_abs_error for lv in rep.levels) < 1e-12


def test_continuous_average_replication_converges():
    x = model(5, z_kind="fbm", hurst=0.75)
    rep = replicate_cf(continuous_average(1.0), x, S)
    e = np.abs(rep.final_errors)
    assert e[-1] < e[0]
    assert rep.passed()
    assert rep.slope > 0.5
    # the error is the right-point Riemann error of the average
    lv = rep.levels[0]
    g = S.grid(0)
    riemann = np.sum(x(g[1:]) * np.diff(g))
    assert lv.final_error == pytest.approx(x.integral(1.0) - riemann, abs=1e-12)


def test_constant_functional_zero_error():
    rep = replicate_cf(constant_functional(2.0, 1.0), model(6), S3)
    assert np.all(rep.final_errors == 0.0)


def test_replication_report_arithmetic():
    rep = replicate_cf(builtin_options()["discrete-average"]().price, model(7, z_kind="sicp"), S3)
    for lv in rep.levels:
        np.testing.assert_array_equal(lv.error, lv.target - lv.initial - lv.follmer_wealth)
        assert lv.checkpoints.tolist() == [0.25, 0.5, 0.75, 1.0]


def test_replicate_fd_mode_matches_analytic():
    x = model(8, S3, z_kind="fou")
    F = builtin_options()["discrete-average"]().price
    a = replicate_cf(F, x, S3)
    b = replicate_cf(F, x, S3, derivative_mode="finite-difference")
    np.testing.assert_allclose(a.final_errors, b.final_errors, atol=1e-8)


def test_replicate_rejects_bad_checkpoints():
    with pytest.raises(InvalidArgument):
        replicate_cf(continuous_average(1.0), model(1, S3), S3, checkpoints=[0.5, 0.25])


def test_error_stays_in_band_when_z_is_scaled():
    cfg = GeneratorConfig(seed=9, scheme=S, z_kind="fbm", hurst=0.6)
    F = continuous_average(1.0)
    finals = []
    for c in (0.0, 0.5, 1.0):
        x = sample_model_path(cfg, z_scale=c)
        finals.append(np.abs(replicate_cf(F, x, S, levels=[0, 4]).final_errors))
    finals = np.array(finals)
    assert np.all(finals[:, 1] < finals[:, 0])
    assert np.all(finals[:, 1] < 1e-3)


def test_nds_bound_for_continuous_average():
    for kind in ("none", "fbm", "icp"):
        x = model(10, S3, z_kind=kind)
        rep = replicate_cf(continuous_average(1.0), x, S3, nds_bound=x(0.0) + 1.0)
        assert rep.nds_ok


# --- strategy equality ----------------------------------------------------------------


@pytest.mark.parametrize("kind", ["none", "fbm", "fou", "icp", "sicp"])
def test_continuous_average_cf_equals_bsv(kind):
    opt = builtin_options()["continuous-average"]()
    x = model(11, S3, z_kind=kind)
    rep = strategy_equality_check(opt.functional, opt.bsv, x, S3, 2)
    assert rep.max_node_diff == 0.0
    assert rep.wealth_diff == 0.0 and rep.common_wealth_diff == 0.0


def test_cylindrical_integrand_against_itself():
    psi = cyl_integrand()
    x = model(12, S3)
    rep = strategy_equality_check(psi.primitive, psi, x, S3, 1)
    assert rep.max_node_diff == 0.0 and rep.common_wealth_diff == 0.0


def test_discrete_average_cf_equals_bsv():
    opt = builtin_options()["discrete-average"]()
    x = model(13, S3, z_kind="fbm")
    rep = strategy_equality_check(opt.functional, opt.bsv, x, S3, 2, derivative_mode="finite-difference")
    assert rep.max_node_diff < 1e-9


def test_geometric_asian_fd_matches_closed_form():
    opt = builtin_options()["geometric-asian"](K=1.0, T=1.0, vol=0.2)
    x = sample_model_path(black_scholes_config(14, S3, vol=0.2))
    rep = strategy_equality_check(opt.functional, opt.bsv, x, S3, 1, derivative_mode="finite-difference")
    assert rep.max_rel_node_diff() < 1e-3
    # the forward convention sees the raw path; the two only differ through x(t_i) versus x(t_{i+1})
    assert np.max(np.abs(rep.bsv_forward_values - rep.bsv_values)) < 0.2


# --- geometric Asian closed form ------------------------------------------------------


@pytest.mark.parametrize("args", [(0.0, 1.0, 0.0, 1.0, 1.0, 0.2), (0.4, 1.1, -0.05, 0.9, 1.0, 0.3), (0.5, 2.0, 0.3, 2.5, 2.0, 0.25)])
def test_closed_form_against_quadrature(args):
    v, h = geometric_asian_value_and_hedge(*args)
    assert v == pytest.approx(geometric_asian_quadrature(*args), rel=1e-8, abs=1e-12)
    assert h == pytest.approx(geometric_asian_delta_quadrature(*args), rel=1e-6, abs=1e-9)


def test_closed_form_limits():
    G = 0.1
    v, h = geometric_asian_value_and_hedge(1.0 - 1e-9, 1.0, G, 1.2, 1.0, 0.2)
    assert v == pytest.approx(max(math.exp(G) - 1.2, 0.0), abs=1e-9) and h == pytest.approx(0.0, abs=1e-9)
    v, _ = geometric_asian_value_and_hedge(1.0 - 1e-9, 1.0, G, 1.0, 1.0, 0.2)
    assert v == pytest.approx(math.exp(G) - 1.0, abs=1e-8)
    t, S0 = 0.3, 1.3
    v, _ = geometric_asian_value_and_hedge(t, S0, G, 1.0, 1.0, 1e-7)
    assert v == pytest.approx(max(math.exp(G + 0.7 * math.log(S0)) - 1.0, 0.0), rel=1e-6)


def test_closed_form_rejects():
    with pytest.raises(InvalidArgument):
        geometric_asian_value_and_hedge(1.0, 1.0, 0.0, 1.0, 1.0, 0.2)
    with pytest.raises(InvalidArgument):
        geometric_asian_value_and_hedge(0.0, -1.0, 0.0, 1.0, 1.0, 0.2)


def test_monte_carlo_gate_small():
    mc = geometric_asian_mc_oracle(0.0, 1.0, 0.0, 1.0, 1.0, 0.2, n_paths=200_000, seed=3)
    v, h = geometric_asian_value_and_hedge(0.0, 1.0, 0.0, 1.0, 1.0, 0.2)
    assert abs(mc.value - v) < 3 * mc.value_se
    assert abs(mc.hedge - h) < 3 * mc.hedge_se


def test_log_integral_factor_continuous():
    x = model(15, S3)
    g = log_integral_factor()
    ts = np.linspace(0, 1, 257)
    vals = np.array([g(t, restrict(x, t)) for t in ts])
    assert vals[0] == 0.0
    assert np.max(np.abs(np.diff(vals))) < 1.0 / 256 * np.max(np.abs(np.log(x(ts)))) + 1e-12
    # adapted: values before t ignore the future
    y = SampledPath(x.grid, np.where(x.grid > 0.5, x.values * 2, x.values), LINEAR)
    assert g(0.5, restrict(x, 0.5)) == g(0.5, restrict(y, 0.5))


# --- extended vertical derivative ----------------------------------------------------------


def test_extended_derivative_identity_and_constant():
    x = model(16, S3)
    one = extended_vertical_derivative(lambda p: p, BSVStrategy(lambda t, x: 1.0), x, S3, 2)
    assert np.all(one.values == 1.0)
    const = SampledPath(x.grid, np.full(x.grid.size, 4.0), LINEAR)
    zero = extended_vertical_derivative(lambda p: const, BSVStrategy(lambda t, x: 0.0), x, S3, 2)
    assert np.all(zero.values == 0.0)


def test_extended_derivative_continuous_average():
    x = model(17, z_kind="fbm")
    opt = builtin_options()["continuous-average"]()
    out = extended_vertical_derivative(functional_path(opt.functional), opt.bsv, x, S, 4)
    np.testing.assert_allclose(out.values, 1.0 - out.grid, atol=1e-15)


def test_extended_derivative_certificate_fails():
    x = model(18, S3)
    with pytest.raises(NotReplicating) as ei:
        extended_vertical_derivative(lambda p: p, BSVStrategy(lambda t, x: 0.5), x, S3, 2)
    assert ei.value.checkpoint in (0.25, 0.5, 0.75, 1.0)


# --- option library -----------------------------------------------------------------


def test_builtin_library():
    lib = builtin_options()
    assert set(lib) >= {"continuous-average", "discrete-average", "geometric-asian"}
    ca = lib["continuous-average"]()
    x = model(19, S3)
    assert ca.bsv(0.0, restrict(x, 0.0)) == 1.0 and ca.bsv(1.0, restrict(x, 1.0)) == 0.0
    da = lib["discrete-average"](T=1.0, N=4)
    for t in (0.1, 0.3, 0.5, 0.9):
        i = math.ceil(t * 4 - 1e-12)
        assert da.bsv(t, restrict(x, t)) == pytest.approx(4 / 5 * (t - (i - 1) / 4))


def test_discrete_average_identity_converges():
    opt = builtin_options()["discrete-average"]()
    res = []
    for seed in range(8):
        x = model(seed, z_kind="fbm")
        rep = replicate_cf(opt.price, x, S, levels=[0, 4])
        res.append(np.abs(rep.final_errors))
    med = np.median(res, axis=0)
    assert med[1] < med[0]


def test_discrete_tends_to_continuous_average():
    g = np.linspace(0, 1, 2**14 + 1)
    x = SampledPath(g, 1.0 + 0.3 * np.sin(3 * g) + 0.1 * g * g, LINEAR)
    cont = continuous_average(1.0).at(x, 1.0)
    Ns = [2**k for k in range(6, 11)]
    errs = [abs(discrete_average(1.0, N).at(x, 1.0) - cont) for N in Ns]
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_follmer_integral_is_continuous_in_the_path():
    cfg = GeneratorConfig(seed=20, scheme=S, z_kind="fbm")
    base = sample_driver(cfg)
    F = continuous_average(1.0)
    g = S.grid(4)

    def integral_path(drv):
        p = SampledPath(drv.grid, np.exp(drv.values), LINEAR)
        return wealth_process(CFStrategy(F), p, S, 4, 0.0).values

    ref = integral_path(base)
    deltas = [1e-2, 1e-3, 1e-4]
    resp = []
    for d in deltas:
        pert = SampledPath(g, base.values + d * np.sin(2 * np.pi * g), LINEAR)
        resp.append(np.max(np.abs(integral_path(pert) - ref)))
    slope = np.polyfit(np.log(deltas), np.log(resp), 1)[0]
    assert slope >= 0.9
