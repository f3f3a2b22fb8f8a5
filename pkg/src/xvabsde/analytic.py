"""Closed-form lognormal prices for the single-asset payoff menu.

Prices are ``E[exp(-int_t^T d) * Xi(S_T) | S_t = s]`` where ``S`` is a
geometric Brownian motion with drift schedule ``mu`` and the market's
volatility. ``V_hat`` uses ``mu = d = r_D``; the repo-drift value ``V`` used
by the decomposition uses ``mu = r_r^0`` and ``d = r_f^0``.
"""

import numpy as np
from scipy.special import ndtr

from .errors import UnsupportedConfiguration
from .model import CoefficientSchedule, R_schedule


def mid_schedule(pair):
    return CoefficientSchedule(pair.breakpoints, pair.values.mean(axis=1))


def supports(payoff):
    return bool(getattr(payoff, "analytic", False))


def _variance_schedule(market, asset):
    return market.sigma.map(lambda m: float(m[asset] @ m[asset]))


def _parts(payoff, market, t, T, mu, disc):
    if not supports(payoff):
        raise UnsupportedConfiguration(f"no closed form for {payoff.kind} payoffs")
    t = np.asarray(t, dtype=np.float64)
    tau_mu = mu.integral(t, T)
    tau_d = disc.integral(t, T)
    asset = getattr(payoff, "asset", 0)
    var = _variance_schedule(market, asset).integral(t, T)
    return asset, tau_mu, tau_d, np.maximum(var, 0.0)


def price(payoff, market, t, s, T, mu, disc):
    """Closed-form price at time(s) ``t`` and spot(s) ``s`` (the payoff's asset)."""
    asset, i_mu, i_d, var = _parts(payoff, market, t, T, mu, disc)
    s = np.asarray(s, dtype=np.float64)
    df = np.exp(-i_d)
    kind = payoff.kind
    if kind == "constant":
        return payoff.notional * payoff.value * df * np.ones_like(s)
    fwd = s * np.exp(i_mu)
    K = payoff.strike
    if kind == "forward":
        return payoff.notional * df * (fwd - K)
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(fwd / K) + 0.5 * var) / sd
        d2 = d1 - sd
    degenerate = (sd <= 0) | (K <= 0)
    if kind == "call":
        val = fwd * ndtr(d1) - K * ndtr(d2)
        val = np.where(degenerate, np.maximum(fwd - K, 0.0), val)
    else:
        val = K * ndtr(-d2) - fwd * ndtr(-d1)
        val = np.where(degenerate, np.maximum(K - fwd, 0.0), val)
    return payoff.notional * df * val


def delta(payoff, market, t, s, T, mu, disc):
    """Derivative of :func:`price` with respect to the spot."""
    asset, i_mu, i_d, var = _parts(payoff, market, t, T, mu, disc)
    s = np.asarray(s, dtype=np.float64)
    df = np.exp(-i_d)
    kind = payoff.kind
    if kind == "constant":
        return np.zeros_like(s * df)
    growth = np.exp(i_mu)
    if kind == "forward":
        return payoff.notional * df * growth * np.ones_like(s)
    fwd = s * growth
    K = payoff.strike
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(fwd / K) + 0.5 * var) / sd
    degenerate = (sd <= 0) | (K <= 0)
    if kind == "call":
        d = np.where(degenerate, (fwd > K).astype(float), ndtr(d1))
    else:
        d = np.where(degenerate, -(fwd < K).astype(float), ndtr(d1) - 1.0)
    return payoff.notional * df * growth * d


def vhat(payoff, market, t, s, T):
    """Reference value: drift and discount both ``r_D``."""
    return price(payoff, market, t, s, T, market.r_D, market.r_D)


def vhat_delta(payoff, market, t, s, T):
    return delta(payoff, market, t, s, T, market.r_D, market.r_D)


def v_repo(payoff, market, t, s, T):
    """Value with repo mid drift and funding mid discount."""
    return price(payoff, market, t, s, T, mid_schedule(market.r_r), mid_schedule(market.r_f))


def v_bar(payoff, market, t, s, T):
    """Value with repo mid drift discounted at the decomposition rate ``R``."""
    return price(payoff, market, t, s, T, mid_schedule(market.r_r), R_schedule(market))


def black_scholes_call(S0, K, r, sigma, T):
    """Plain Black-Scholes call; independent oracle for tests."""
    from math import erf, exp, log, sqrt

    def N(x):
        return 0.5 * (1.0 + erf(x / sqrt(2.0)))

    d1 = (log(S0 / K) + (r + 0.5 * sigma * sigma) * T) / (sigma * sqrt(T))
    d2 = d1 - sigma * sqrt(T)
    return S0 * N(d1) - K * exp(-r * T) * N(d2)
