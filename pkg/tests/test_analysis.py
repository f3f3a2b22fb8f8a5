import numpy as np
import pytest

from xvabsde.analysis import (
    CONDITIONS,
    check_noarb,
    condition_margins,
    epsilon_sweep,
    homogeneity_check,
    martingale_diagnostic,
    ordering_check,
    replicate,
)
from xvabsde.errors import ConfigError, UnsupportedConfiguration
from xvabsde.model import (
    Call,
    CoefficientSchedule,
    Constant,
    NumericsConfig,
    PdeConfig,
    one_rate_market,
    reference_contract,
    reference_market,
)

EPS = [0.02, 0.01, 0.005, 0.0025]
COARSE = NumericsConfig(n_steps=20, n_paths=4000, pde=PdeConfig(n_space=100))


def test_margins_reference():
    margins = condition_margins(reference_market().coefficients(0.0))
    assert set(margins) == set(CONDITIONS)
    assert margins["19f"] == pytest.approx(0.01) and margins["44"] == pytest.approx(0.004)


def test_noarb_failure_modes():
    m = reference_market(r_col=CoefficientSchedule.constant([0.03, 0.02]))
    assert "49" in check_noarb(m).failed()
    late = CoefficientSchedule(np.array([0.0, 0.5]), np.array([0.05, 0.0]))
    rep = check_noarb(reference_market(h1=late))
    rec = next(r for r in rep.records if r.condition == "48-h1")
    assert not rec.passed and rec.worst_time == 0.5


@pytest.mark.parametrize("engine", ["ode", "pde"])
def test_ordering_deterministic_engines(engine):
    c = reference_contract(Constant(100.0)) if engine == "ode" else reference_contract(Call(100.0))
    rep = ordering_check(reference_market(), c, COARSE, engine=engine)
    assert rep.passed
    assert rep.values["f_minus"] < rep.values["f0_minus"] < rep.values["f0_plus"] < rep.values["f_plus"]


def test_ordering_needs_collateral_condition(ref_call):
    m = reference_market(r_col=CoefficientSchedule.constant([0.008, 0.012]))
    with pytest.raises(ConfigError):
        ordering_check(m, ref_call, COARSE)


@pytest.mark.filterwarnings("ignore:errors on the")
def test_literal_first_order_variant_does_not_converge(ref_market, ref_call):
    sw = epsilon_sweep(ref_market, ref_call, EPS, order=1, variant="literal", num=COARSE)
    assert sw.slope < 0.5


def test_lsmc_sweep_rates(ref_market, ref_call):
    zeroth = epsilon_sweep(ref_market, ref_call, EPS[:3], order=0, engine="lsmc", num=COARSE)
    first = epsilon_sweep(ref_market, ref_call, EPS[:3], order=1, engine="lsmc", num=COARSE)
    assert 0.8 <= zeroth.slope <= 1.3
    assert first.slope >= 1.6
    header, rows = first.rows()
    assert header[0] == "eps" and len(rows) == 3


def test_sweep_validation(ref_market, ref_call):
    with pytest.raises(ConfigError):
        epsilon_sweep(ref_market, ref_call, [], num=COARSE)
    with pytest.raises(ConfigError):
        epsilon_sweep(ref_market, ref_call, [0.01, -0.01], num=COARSE)
    with pytest.warns(UserWarning, match="not strictly decreasing"), pytest.warns(UserWarning, match="errors on"):
        epsilon_sweep(ref_market, ref_call, [0.005, 0.01], num=COARSE)


@pytest.mark.parametrize("engine", ["ode", "pde"])
def test_homogeneity_engines(engine):
    c = reference_contract(Constant(100.0)) if engine == "ode" else reference_contract(Call(100.0))
    assert homogeneity_check(reference_market(), c, [2.0, 0.5], engine=engine, num=COARSE) <= 1e-10
    with pytest.raises(ConfigError):
        homogeneity_check(reference_market(), c, [-1.0], engine=engine, num=COARSE)


@pytest.mark.parametrize("side", ["+", "-"])
def test_constant_payoff_replicates(side):
    rep = replicate(reference_market(), reference_contract(Constant(100.0)),
                    NumericsConfig(n_steps=100, n_paths=5000), side=side)
    assert rep.engine == "ode"
    assert rep.n_defaults > 0
    assert rep.rel_error < 1e-4


def test_call_replication_lsmc_source():
    m = one_rate_market()
    c = reference_contract(Call(100.0), L_I=0.0, L_C=0.0)
    num = NumericsConfig(n_steps=50, n_paths=10000)
    pde = replicate(m, c, num, n_eval_paths=5000, engine="pde")
    lsmc = replicate(m, c, num, n_eval_paths=5000, engine="lsmc")
    assert lsmc.premium == pytest.approx(pde.premium, abs=0.2)
    # regression deltas are noisier than grid deltas, but the hedge stays unbiased
    assert lsmc.rel_error < 4.0 * pde.rel_error
    assert abs(lsmc.mean_error) < 0.05 * lsmc.premium
    assert set(pde.error_quantiles) == {"q05", "q25", "q50", "q75", "q95"}


def test_martingale_needs_one_rate(ref_call):
    with pytest.raises(UnsupportedConfiguration):
        martingale_diagnostic(reference_market(), ref_call, COARSE)
