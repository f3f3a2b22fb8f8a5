import numpy as np
import pytest
from scipy.integrate import solve_ivp

from xvabsde import analytic
from xvabsde.bsde import (
    _qr,
    diff_se,
    lift_solution,
    price_bounds,
    solve_first_order,
    solve_first_order_ode,
    solve_pair,
    solve_reduced_lsmc,
    solve_reduced_ode,
    solve_vhat,
    stopped_value,
)
from xvabsde.errors import ConfigError, NumericError
from xvabsde.model import (
    Call,
    Constant,
    NumericsConfig,
    Put,
    one_rate_market,
    reference_contract,
    reference_market,
)
from xvabsde.paths import DefaultSample, simulate_asset_paths

# reduced equations for a constant payoff of 100, L_I = L_C = 0.5, alpha = 0.4,
# reference constants; frozen from the independent oracle below
FROZEN_ALPHA04 = {"f_plus": 97.20915186033, "f_minus": 96.64881182300}


def _oracle_constant(side):
    """Hand-expanded scalar ODE for the constant payoff, solved by an adaptive RK."""

    def fbar(t, y):
        v = 100.0 * np.exp(-0.01 * (1.0 - t))
        p1, p2 = 0.7 * v, v  # exposure (1 - alpha) v > 0 only hits the hedger's close-out
        u1, u2 = p1 - y, p2 - y
        lin = -0.03 * y - 0.015 * u1 - 0.0125 * u2 + 0.05 * u1 + 0.10 * u2
        coll = 0.4 * (0.03 - 0.008) * v if side > 0 else 0.4 * (0.03 - 0.012) * v
        spr = 0.005 * abs(y + u1 + u2 - 0.4 * v) + 0.005 * abs(0.5 * u1 + 0.75 * u2)
        return lin + coll + side * spr

    sol = solve_ivp(lambda t, y: [-fbar(t, y[0])], (1.0, 0.0), [100.0], method="DOP853", rtol=1e-13, atol=1e-12)
    return float(sol.y[0, -1])


def _alpha04():
    return reference_market(alpha=0.4), reference_contract(Constant(100.0), alpha=0.4)


def test_oracle_reproduces_frozen_values():
    assert _oracle_constant(1) == pytest.approx(FROZEN_ALPHA04["f_plus"], abs=1e-9)
    assert _oracle_constant(-1) == pytest.approx(FROZEN_ALPHA04["f_minus"], abs=1e-9)


@pytest.mark.parametrize("d", ["f_plus", "f_minus"])
def test_rk4_matches_frozen(d):
    m, c = _alpha04()
    assert solve_reduced_ode(d, m, c, 2000).y0 == pytest.approx(FROZEN_ALPHA04[d], abs=1e-9)


@pytest.mark.parametrize("d", ["f_plus", "f_minus"])
def test_lsmc_constant_payoff_is_exact(d):
    # no randomness enters a constant payoff, so LSMC reduces to explicit Euler
    m, c = _alpha04()
    _, _, sol = solve_pair(m, c, NumericsConfig(n_steps=200, n_paths=500), (d,))
    assert sol[d].y0 == pytest.approx(FROZEN_ALPHA04[d], rel=1e-4)
    assert sol[d].standard_error < 1e-10


def test_ode_rejects_random_payoff(ref_market, ref_call):
    with pytest.raises(ConfigError):
        solve_reduced_ode("f_plus", ref_market, ref_call)


def test_first_order_expansion_is_second_order():
    c = reference_contract(Constant(100.0))
    errs = []
    for eps in (0.01, 0.005):
        m = reference_market().with_spreads(eps, eps)
        full = solve_reduced_ode("f_plus", m, c, 2000).y0
        zeroth, first = solve_first_order_ode("plus", m, c, 2000)
        errs.append(abs(full - zeroth.y0 - first.y0))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_vhat_regression_matches_closed_form(ref_market):
    c = reference_contract(Call(100.0))
    num = NumericsConfig(n_steps=20, n_paths=20000, basis_degree=3)
    b = simulate_asset_paths(ref_market, 1.0, num, "P")
    exact = solve_vhat(ref_market, c, b, num)
    reg = solve_vhat(ref_market, c, b, num, mode="regression")
    assert exact.mode == "analytic" and reg.mode == "regression"
    assert reg.values[0, 0] == pytest.approx(exact.values[0, 0], rel=0.02)
    assert exact.values[0, 0] == pytest.approx(analytic.black_scholes_call(100, 100, 0.01, 0.2, 1.0))


def test_lsmc_one_rate_call_matches_black_scholes():
    m = one_rate_market()
    c = reference_contract(Call(100.0), L_I=0.0, L_C=0.0)
    _, _, sol = solve_pair(m, c, NumericsConfig(n_steps=50, n_paths=20000, seed=99))
    bs = analytic.black_scholes_call(100, 100, 0.02, 0.2, 1.0)
    for s in sol.values():
        assert abs(s.y0 - bs) <= 4 * s.standard_error
        assert np.all(s.picard_residual <= 1e-10 * 200)


def test_put_call_parity_one_rate():
    m = one_rate_market()
    num = NumericsConfig(n_steps=50, n_paths=20000, seed=5)
    call = solve_pair(m, reference_contract(Call(100.0), L_I=0, L_C=0), num, ("f_plus",))[2]["f_plus"].y0
    put = solve_pair(m, reference_contract(Put(100.0), L_I=0, L_C=0), num, ("f_plus",))[2]["f_plus"].y0
    assert call - put == pytest.approx(100 - 100 * np.exp(-0.02), abs=0.05)


def test_common_random_number_se(ref_market, ref_call, small_num):
    _, _, sol = solve_pair(ref_market, ref_call, small_num)
    d = diff_se(sol["f_plus"], sol["f_minus"])
    assert 0 < d < np.hypot(sol["f_plus"].standard_error, sol["f_minus"].standard_error)


def test_rank_deficient_regression():
    X = np.ones((10, 2))
    with pytest.raises(NumericError, match="rank-deficient at step 4"):
        _qr(X, 4)
    with pytest.raises(NumericError, match="rank-deficient at step 1"):
        _qr(np.ones((2, 3)), 1)


def test_requires_p_paths(ref_market, ref_call, small_num):
    b = simulate_asset_paths(ref_market, 1.0, small_num, "P_tilde")
    with pytest.raises(ConfigError):
        solve_vhat(ref_market, ref_call, b, small_num)


def test_unknown_driver(ref_market, ref_call, small_num):
    b = simulate_asset_paths(ref_market, 1.0, small_num, "P")
    vh = solve_vhat(ref_market, ref_call, b, small_num)
    with pytest.raises(ConfigError):
        solve_reduced_lsmc("g_plus", ref_market, ref_call, b, vh, small_num)


def test_first_order_lsmc_shrinks_with_spread(ref_call, small_num):
    sizes = []
    for eps in (0.01, 0.005):
        m = reference_market().with_spreads(eps, eps)
        b, vh, sol = solve_pair(m, ref_call, small_num, ("f0_plus",))
        fo = solve_first_order("plus", m, ref_call, b, sol["f0_plus"], vh, small_num)
        sizes.append(fo.y0)
    assert sizes[0] > 0 and sizes[0] / sizes[1] == pytest.approx(2.0, rel=0.05)


def test_lift_and_stop(ref_market, small_num):
    c = reference_contract(Constant(10.0))
    b, vh, sol = solve_pair(ref_market, c, small_num, ("f_plus",))
    full = lift_solution(sol["f_plus"], vh, c.closeout)
    np.testing.assert_allclose(full.u1 + sol["f_plus"].y_bar, vh.values)
    P = small_num.n_paths
    tau1 = np.full(P, np.inf)
    tau2 = np.full(P, np.inf)
    tau1[0] = 0.51
    d = DefaultSample(tau1, tau2, np.zeros(P), np.zeros(P))
    Y = stopped_value(full, vh, c.closeout, d)
    k = np.searchsorted(b.grid, 0.51)
    assert np.all(Y[0, k:] == vh.values[0, k])
    np.testing.assert_array_equal(Y[1:], sol["f_plus"].y_bar[1:])


@pytest.mark.parametrize("engine", ["lsmc", "pde"])
def test_price_bounds_ordered(ref_market, ref_call, engine):
    num = NumericsConfig(n_steps=20, n_paths=4000)
    res = price_bounds(ref_market, ref_call, num, engine=engine)
    assert res.p_lower < res.p_upper
    with pytest.raises(ConfigError):
        price_bounds(ref_market, ref_call, num, engine="tree")


def test_same_seed_reproducible(ref_market, ref_call, small_num):
    a = solve_pair(ref_market, ref_call, small_num)[2]["f_plus"].y0
    b = solve_pair(ref_market, ref_call, small_num)[2]["f_plus"].y0
    assert a == b
