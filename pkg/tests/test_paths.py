import io

import numpy as np
import pytest
from scipy import stats

from xvabsde.errors import ConfigError
from xvabsde.model import CoefficientSchedule, NumericsConfig, reference_market
from xvabsde.paths import (
    STREAM_EVAL_ASSET,
    defaultable_bond_paths,
    effective_workers,
    girsanov_density,
    invert_hazard,
    sample_default_times,
    simulate_asset_paths,
    write_paths_csv,
)

M = reference_market()


@pytest.mark.parametrize("measure, drift", [("P", 0.01), ("P_tilde", 0.02)])
def test_terminal_log_returns_are_normal(measure, drift):
    num = NumericsConfig(n_steps=10, n_paths=20000, seed=3)
    b = simulate_asset_paths(M, 1.0, num, measure)
    x = np.log(b.s[:, -1, 0] / 100.0)
    law = stats.norm(loc=drift - 0.02, scale=0.2)
    assert stats.kstest(x, law.cdf).pvalue > 0.01


def test_piecewise_volatility_variance():
    sig = CoefficientSchedule(np.array([0.0, 0.5]), np.array([[[0.1]], [[0.3]]]))
    m = M.replace(sigma=sig)
    b = simulate_asset_paths(m, 1.0, NumericsConfig(n_steps=20, n_paths=40000, seed=4), "P")
    x = np.log(b.s[:, -1, 0] / 100.0)
    var = 0.5 * 0.01 + 0.5 * 0.09
    assert x.var() == pytest.approx(var, rel=0.03)
    assert x.mean() == pytest.approx(0.01 - 0.5 * var, abs=4 * np.sqrt(var / 40000))


def test_worker_count_does_not_change_paths():
    outs = [simulate_asset_paths(M, 1.0, NumericsConfig(n_steps=5, n_paths=9000, workers=w), "P").s
            for w in (1, 2, 8)]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("XVA_BSDE_THREADS", "2")
    assert effective_workers(8) == 2
    monkeypatch.setenv("XVA_BSDE_THREADS", "many")
    with pytest.raises(ConfigError):
        effective_workers(4)


def test_streams_differ_and_paths_read_only():
    num = NumericsConfig(n_steps=5, n_paths=100)
    a = simulate_asset_paths(M, 1.0, num, "P")
    b = simulate_asset_paths(M, 1.0, num, "P", stream=STREAM_EVAL_ASSET)
    assert not np.array_equal(a.s, b.s)
    with pytest.raises(ValueError):
        a.s[0, 0, 0] = 1.0


def test_bad_measure_and_maturity():
    num = NumericsConfig(n_steps=5, n_paths=100)
    with pytest.raises(ConfigError):
        simulate_asset_paths(M, 1.0, num, "Q")
    with pytest.raises(ConfigError):
        simulate_asset_paths(M, 0.0, num, "P")


def test_invert_hazard_piecewise():
    h = CoefficientSchedule(np.array([0.0, 1.0]), np.array([0.1, 0.2]))
    # cumulative hazard: 0.1 t on [0, 1), then 0.1 + 0.2 (t - 1)
    tau = invert_hazard(h, np.array([0.0, 0.05, 0.1, 0.3, 10.0]), horizon=5.0)
    np.testing.assert_allclose(tau[:4], [0.0, 0.5, 1.0, 2.0])
    assert np.isinf(tau[4])


def test_zero_hazard_never_defaults():
    m = M.replace(h1=CoefficientSchedule.constant(0.0))
    d = sample_default_times(m, 10.0, 1000, seed=1)
    assert np.all(np.isinf(d.tau1))


def test_censoring_fraction():
    d = sample_default_times(M, 1.0, 100_000, seed=5)
    surv = np.isinf(d.tau2).mean()
    assert surv == pytest.approx(np.exp(-0.1), abs=4 * np.sqrt(np.exp(-0.1) * (1 - np.exp(-0.1)) / 100_000))
    assert np.all(d.tau1[np.isfinite(d.tau1)] <= 1.0)


def test_bonds_vanish_after_default():
    num = NumericsConfig(n_steps=20, n_paths=5000, seed=2)
    b = simulate_asset_paths(M, 1.0, num, "P")
    d = sample_default_times(M, 1.0, num.n_paths, seed=2)
    PI, PC = defaultable_bond_paths(M, b, d)
    dead = b.grid[None, :] >= d.tau1[:, None]
    assert np.all(PI[dead] == 0.0) and np.all(PI[~dead] > 0.0)
    # pre-default bond grows at r_D + h1 in mean
    assert PI[:, 0].mean() == 1.0
    pre = PI[np.isinf(d.tau1), -1].mean()
    assert pre == pytest.approx(np.exp(0.06), rel=0.01)
    with pytest.raises(ConfigError):
        defaultable_bond_paths(M, simulate_asset_paths(M, 1.0, num, "P_tilde"), d)


def test_girsanov_density_is_mean_one():
    b = simulate_asset_paths(M, 1.0, NumericsConfig(n_steps=10, n_paths=40000, seed=8), "P")
    L = girsanov_density(M, b)
    assert np.all(L[:, 0] == 1.0)
    se = L[:, -1].std() / np.sqrt(40000)
    assert abs(L[:, -1].mean() - 1.0) < 4 * se


def test_paths_csv():
    b = simulate_asset_paths(M, 1.0, NumericsConfig(n_steps=2, n_paths=10), "P")
    buf = io.StringIO()
    write_paths_csv(b, buf, max_paths=2)
    lines = buf.getvalue().split("\n")
    assert lines[0] == "path_id,t,S_1"
    assert len([l for l in lines if l]) == 1 + 2 * 3
