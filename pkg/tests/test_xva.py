import numpy as np
import pytest

from xvabsde import analytic
from xvabsde.errors import ConfigError
from xvabsde.model import Basket, Call, Constant, NumericsConfig, one_rate_market, reference_contract, reference_market
from xvabsde.xva import (
    XVA_FIELDS,
    compute_classical_xva,
    compute_xva,
    girsanov_diagnostic,
    quadrature_weights,
    telescoping_check,
)

NUM = NumericsConfig(n_steps=50, n_paths=10000, seed=21)


@pytest.mark.parametrize("rule, degree", [("trapezoid", 1), ("simpson", 3)])
def test_quadrature_exact_for_low_degree(rule, degree):
    grid = np.linspace(0.0, 2.0, 11)
    w = quadrature_weights(grid, rule)
    for p in range(degree + 1):
        assert w @ grid**p == pytest.approx(2.0 ** (p + 1) / (p + 1), rel=1e-12)


def test_simpson_needs_even_steps():
    with pytest.raises(ConfigError):
        quadrature_weights(np.linspace(0, 1, 4), "simpson")
    with pytest.raises(ConfigError):
        quadrature_weights(np.linspace(0, 1, 5), "gauss")


def test_one_rate_world_has_only_credit_terms():
    m = one_rate_market()
    c = reference_contract(Call(100.0), L_I=0.0, L_C=0.0)
    rep = compute_xva(m, c, NUM)
    assert rep.va3 == pytest.approx(0.0, abs=1e-12) and rep.va4 == pytest.approx(0.0, abs=1e-12)
    assert rep.va5_plus == pytest.approx(0.0, abs=1e-12)
    assert rep.fva == 0.0 and rep.colva_plus == 0.0 and rep.dva == 0.0 and rep.cva == 0.0
    bs = analytic.black_scholes_call(100, 100, 0.02, 0.2, 1.0)
    assert abs(rep.total_plus - bs) <= 3 * rep.se["total_plus"] + 1e-3


def test_report_shape_and_csv(ref_market, ref_call):
    rep = compute_xva(ref_market, ref_call, NUM)
    d = rep.to_dict()
    for k in XVA_FIELDS:
        assert np.isfinite(d[k])
    assert rep.total_plus >= rep.total_minus
    assert rep.fva_minus_va3 == pytest.approx(rep.fva - rep.va3)
    text = rep.to_csv()
    header, row = text.splitlines()
    assert header.split(",")[0] == "V0" and len(header.split(",")) == len(row.split(","))
    assert text.endswith("\n") and "\r" not in text


def test_classical_signs(ref_market, ref_call):
    cx = compute_classical_xva(ref_market, ref_call, NUM)
    # full collateral: close-out equals the reference value, so credit terms vanish
    assert cx["dva"] == 0.0 and cx["cva"] == 0.0
    under = reference_contract(Call(100.0), alpha=0.0)
    cx = compute_classical_xva(reference_market(alpha=0.0), under, NUM)
    assert cx["cva"] == 0.0  # a call is never a liability to the counterparty
    assert cx["dva"] > 0.0


def test_telescoping_constant_payoff_trapezoid(ref_market):
    c = reference_contract(Constant(100.0))
    res, se = telescoping_check(ref_market, c, NumericsConfig(n_steps=100, n_paths=100))
    gap = 100 * (np.exp(-0.03) - np.exp(-0.1525))
    assert se < 1e-12
    assert res / gap < 1e-6


def test_regression_fallback_for_basket():
    m = reference_market()
    c = reference_contract(Basket(np.array([1.0]), 100.0))
    with pytest.warns(UserWarning, match="regression"):
        rep = compute_xva(m, c, NumericsConfig(n_steps=20, n_paths=4000), classical=False)
    exact = compute_xva(m, reference_contract(Call(100.0)), NumericsConfig(n_steps=20, n_paths=4000),
                        classical=False)
    assert rep.total_plus == pytest.approx(exact.total_plus, abs=0.3)


def test_girsanov_identity(ref_market):
    rep = girsanov_diagnostic(ref_market, 1.0, NUM)
    assert rep.agree(3.0)
    assert rep.direct["identity"] == pytest.approx(100 * np.exp(0.02), abs=4 * rep.se_direct["identity"])
