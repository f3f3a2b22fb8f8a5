"""Driver functions of the pricing BSDEs and hedge-ratio extraction.

All functions are pure and vectorized: scalars and arrays broadcast, and
``z`` carries a trailing asset axis (a bare scalar or per-path ``z`` is
accepted when there is one asset). Coefficients are read from a
:class:`~xvabsde.model.Coefficients` snapshot or from a market at ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericError
from .model import Coefficients

DRIVERS = ("f_plus", "f_minus", "f0_plus", "f0_minus")


@dataclass(frozen=True)
class DriverPoint:
    t: float
    y: float
    z: np.ndarray
    u1: float
    u2: float
    v_hat: float

    def __neg__(self):
        return DriverPoint(self.t, -self.y, -np.asarray(self.z), -self.u1, -self.u2, -self.v_hat)


@dataclass(frozen=True)
class ReducedPoint:
    t: float
    y: float
    z: np.ndarray
    v_hat: float
    p1: float
    p2: float


def coef(market, t):
    return market if isinstance(market, Coefficients) else market.coefficients(t)


def _z(c, z):
    z = np.asarray(z, dtype=np.float64)
    n = len(c.sinv1)
    if n == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != n:
        raise ConfigError(f"z must have a trailing axis of length {n}")
    return z


def _pos(x):
    return np.maximum(x, 0.0)


def _neg(x):
    return np.maximum(-x, 0.0)


# ------------------------------------------------------------ array kernels


def base(c, y, z, u1, u2):
    """Linear part shared by every driver."""
    zs = _z(c, z) @ c.sinv1
    a = c.rr0 - c.rD
    return (
        -c.rf0 * y
        + a * zs
        + (-(c.rf0 - c.rD) + a * c.kI) * u1
        + (-(c.rf0 - c.rD) + a * c.kC) * u2
    )


def collateral(c, v, alpha, side):
    if side > 0:
        return alpha * (c.rf0 * v - c.rcol_p * _pos(v) + c.rcol_m * _neg(v))
    return alpha * (c.rf0 * v + c.rcol_p * _neg(v) - c.rcol_m * _pos(v))


def spread(c, y, z, u1, u2, v, alpha, side):
    """Funding and repo spread terms, signed by ``side``."""
    zs = _z(c, z) @ c.sinv1
    term = c.eps_f * np.abs(y + u1 + u2 - alpha * v) + c.eps_r * np.abs(zs + u1 * c.kI + u2 * c.kC)
    return term if side > 0 else -term


def driver(driver_id, c, y, z, u1, u2, v, alpha):
    if driver_id not in DRIVERS:
        raise ConfigError(f"unknown driver {driver_id!r}; expected one of {DRIVERS}")
    side = 1 if driver_id.endswith("plus") else -1
    out = base(c, y, z, u1, u2) + collateral(c, v, alpha, side)
    if not driver_id.startswith("f0"):
        out = out + spread(c, y, z, u1, u2, v, alpha, side)
    return out


def reduced(driver_id, c, y, z, v, p1, p2, alpha):
    """Pre-default driver: jump sizes ``p_i - y`` plus hazard-weighted jumps."""
    u1, u2 = p1 - y, p2 - y
    return driver(driver_id, c, y, z, u1, u2, v, alpha) + u1 * c.h1 + u2 * c.h2


def first_order_homogeneous(c, y, z, p1=0.0, p2=0.0, variant="strict"):
    """Linear part of the first-order correction equation.

    ``strict`` reduces the correction process with zero close-out values, so
    the jumps are ``-y`` and the hazard terms stay. ``literal`` keeps the
    close-out values and drops the hazard terms.
    """
    if variant == "strict":
        return base(c, y, z, -y, -y) - y * (c.h1 + c.h2)
    if variant == "literal":
        return base(c, y, z, p1 - y, p2 - y)
    raise ConfigError(f"unknown first-order variant {variant!r}")


def first_order_source(side, c, y0, z0, v, p1, p2, alpha):
    """Spread terms evaluated on the zeroth-order solution."""
    return spread(c, y0, z0, p1 - y0, p2 - y0, v, alpha, side)


# --------------------------------------------------------------- point API


def f0(market, pt):
    c = coef(market, pt.t)
    return base(c, pt.y, pt.z, pt.u1, pt.u2)


def f_plus(market, pt, alpha):
    return driver("f_plus", coef(market, pt.t), pt.y, pt.z, pt.u1, pt.u2, pt.v_hat, alpha)


def f_minus(market, pt, alpha):
    return driver("f_minus", coef(market, pt.t), pt.y, pt.z, pt.u1, pt.u2, pt.v_hat, alpha)


def _side(side):
    if side in ("+", 1, "plus"):
        return 1
    if side in ("-", -1, "minus"):
        return -1
    raise ConfigError(f"side must be '+' or '-', got {side!r}")


def f0_pm(market, pt, alpha, side):
    c = coef(market, pt.t)
    return base(c, pt.y, pt.z, pt.u1, pt.u2) + collateral(c, pt.v_hat, alpha, _side(side))


def f1_pm(market, pt, alpha, side):
    c = coef(market, pt.t)
    return spread(c, pt.y, pt.z, pt.u1, pt.u2, pt.v_hat, alpha, _side(side))


def reduce(driver_id, market, rp, alpha):
    return reduced(driver_id, coef(market, rp.t), rp.y, rp.z, rp.v_hat, rp.p1, rp.p2, alpha)


def lipschitz_bound(c, alpha=1.0):
    """Per-argument Lipschitz constants of the reduced drivers.

    ``|f(a) - f(b)| <= L_y|dy| + sum_j L_z[j]|dz_j| + L_v|dv| + L_p1|dp1| + L_p2|dp2|``.
    """
    a = abs(c.rr0 - c.rD)
    g1 = abs(-(c.rf0 - c.rD) + (c.rr0 - c.rD) * c.kI)
    g2 = abs(-(c.rf0 - c.rD) + (c.rr0 - c.rD) * c.kC)
    eps_u1 = c.eps_f + c.eps_r * abs(c.kI)
    eps_u2 = c.eps_f + c.eps_r * abs(c.kC)
    return {
        # y enters directly and through u_i = p_i - y
        "y": abs(c.rf0) + c.eps_f + g1 + g2 + eps_u1 + eps_u2 + c.h1 + c.h2,
        "z": (a + c.eps_r) * np.abs(c.sinv1),
        "v": alpha * (abs(c.rf0) + max(abs(c.rcol_m), abs(c.rcol_p)) + c.eps_f),
        "p1": g1 + eps_u1 + c.h1,
        "p2": g2 + eps_u2 + c.h2,
    }


# ----------------------------------------------------------------- hedging


@dataclass(frozen=True)
class HedgeRatios:
    pi: np.ndarray
    pi_I: np.ndarray
    pi_C: np.ndarray
    funding: np.ndarray
    repo: np.ndarray
    collateral: np.ndarray


def stock_exposure(c, z, u1, u2, pinv=False):
    """``(sigma^T)^{-1}(z + u1 sigma_I^T + u2 sigma_C^T)``: money in each stock per unit price."""
    z = _z(c, z)
    rhs = z + np.asarray(u1)[..., None] * c.sigma_I + np.asarray(u2)[..., None] * c.sigma_C
    if pinv:
        inv_t = np.linalg.pinv(c.sigma).T
    else:
        try:
            inv_t = np.linalg.inv(c.sigma).T
        except np.linalg.LinAlgError:
            raise NumericError("sigma not invertible") from None
    return rhs @ inv_t.T


def hedge_from_solution(market, t, s, p_I_pre, p_C_pre, z, u1, u2, v_hat, y, alpha, pinv=False):
    """Holdings in stocks and bonds plus cash legs (as money amounts)."""
    c = coef(market, t)
    p_I_pre = np.asarray(p_I_pre, dtype=np.float64)
    p_C_pre = np.asarray(p_C_pre, dtype=np.float64)
    if np.any(p_I_pre <= 0) or np.any(p_C_pre <= 0):
        raise DomainError("pre-default bond prices must be positive")
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 0 or s.shape[-1] != len(c.sinv1):
        s = s[..., None]
    if np.any(s <= 0):
        raise DomainError("stock prices must be positive")
    money = stock_exposure(c, z, u1, u2, pinv=pinv)
    pi = money / s
    return HedgeRatios(
        pi=pi,
        pi_I=-np.asarray(u1) / p_I_pre,
        pi_C=-np.asarray(u2) / p_C_pre,
        funding=y + u1 + u2 - alpha * np.asarray(v_hat),
        repo=-(pi * s).sum(axis=-1),
        collateral=alpha * np.asarray(v_hat),
    )
