"""Closed-form zeroth-order price decomposition and practitioner XVA terms.

Value adjustments are time integrals of discounted expected exposures. The
expectations are Monte Carlo averages over paths simulated with the repo
drift; ``V`` and ``V_hat`` are closed-form functions of the simulated state
for the single-asset payoff menu and regression estimates otherwise.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analytic
from .bsde import _backward
from .errors import ConfigError
from .model import R_schedule, check_consistent, closeout_eval
from .paths import STREAM_EVAL_ASSET, simulate_asset_paths

XVA_FIELDS = (
    "V0", "va1", "va2", "va3", "va4", "va5_plus", "va5_minus", "total_plus", "total_minus",
    "dva", "cva", "fva", "colva_plus", "colva_minus",
)


@dataclass
class XVAReport:
    V0: float
    va1: float
    va2: float
    va3: float
    va4: float
    va5_plus: float
    va5_minus: float
    total_plus: float
    total_minus: float
    dva: float = float("nan")
    cva: float = float("nan")
    fva: float = float("nan")
    colva_plus: float = float("nan")
    colva_minus: float = float("nan")
    se: dict = field(default_factory=dict)
    telescoping_residual: float = float("nan")
    telescoping_se: float = float("nan")
    fva_minus_va3: float = float("nan")

    def to_dict(self):
        return asdict(self)

    def csv_row(self):
        """Header and one row; standard errors get an ``se_`` prefix."""
        names = list(XVA_FIELDS) + ["fva_minus_va3", "telescoping_residual", "telescoping_se"]
        se_names = [k for k in XVA_FIELDS if k in self.se]
        d = self.to_dict()
        header = names + [f"se_{k}" for k in se_names]
        row = [d[k] for k in names] + [self.se[k] for k in se_names]
        return header, row

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header, row = self.csv_row()
        w.writerow(header)
        w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


def quadrature_weights(grid, rule="trapezoid"):
    dt = np.diff(grid)
    if rule == "trapezoid":
        w = np.zeros(len(grid))
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        return w
    if rule == "simpson":
        N = len(grid) - 1
        if N % 2 or not np.allclose(dt, dt[0]):
            raise ConfigError("Simpson quadrature needs an even number of uniform steps")
        w = np.ones(N + 1)
        w[1:-1:2], w[2:-1:2] = 4.0, 2.0
        return w * dt[0] / 3.0
    raise ConfigError(f"unknown quadrature rule {rule!r}")


def _integral(weights, disc, integrand):
    """Per-path quadrature of ``disc(u) * integrand(path, u)``."""
    return integrand @ (weights * disc)


def _stats(per_path):
    return float(per_path.mean()), float(per_path.std(ddof=1) / np.sqrt(len(per_path)))


def _grid_coefs(market, grid):
    return [market.coefficients(t) for t in grid]


def _values(market, contract, num, batch):
    """``V`` and ``V_hat`` on the repo-drift paths."""
    payoff, T = contract.payoff, contract.T
    grid = batch.grid
    if analytic.supports(payoff):
        a = getattr(payoff, "asset", 0)
        s = batch.s[:, :, a]
        V = analytic.v_repo(payoff, market, grid[None, :], s, T)
        Vh = analytic.vhat(payoff, market, grid[None, :], s, T)
        return V, Vh, float(analytic.v_repo(payoff, market, 0.0, market.S0[a], T)), True
    warnings.warn(f"no closed form for {payoff.kind} payoffs; using regression estimates of V and V_hat",
                  stacklevel=3)
    coefs = _grid_coefs(market, grid)
    xi = payoff(batch.s[:, -1])
    solV = _backward(lambda i, y, z: -coefs[i].rf0 * y, xi, batch, num, "V")
    pb = simulate_asset_paths(market, T, num, "P", stream=STREAM_EVAL_ASSET)
    solH = _backward(lambda i, y, z: -coefs[i].rD * y, payoff(pb.s[:, -1]), pb, num, "V_hat")
    Vh = np.empty_like(solV.y_bar)
    Vh[:, -1] = xi
    for i in range(batch.n_steps):
        Vh[:, i] = solH.evaluate(i, batch.s[:, i])[0]
    return solV.y_bar, Vh, solV.y0, False


def compute_xva(market, contract, num, classical=True):
    """Decomposition of the zeroth-order prices into ``V`` plus five adjustments."""
    check_consistent(market, contract)
    T, alpha = contract.T, contract.closeout.alpha
    batch = simulate_asset_paths(market, T, num, "P_tilde")
    grid = batch.grid
    V, Vh, V0, exact = _values(market, contract, num, batch)
    p1, p2 = closeout_eval(contract.closeout, Vh)
    ph1, ph2 = p1 - V, p2 - V
    coefs = _grid_coefs(market, grid)
    h1 = np.array([c.h1 for c in coefs])
    h2 = np.array([c.h2 for c in coefs])
    fs = np.array([c.rf0 - c.rD for c in coefs])
    rs = np.array([c.rr0 - c.rD for c in coefs])
    kI = np.array([c.kI for c in coefs])
    kC = np.array([c.kC for c in coefs])
    rf0 = np.array([c.rf0 for c in coefs])
    cp = np.array([c.rcol_p for c in coefs])
    cm = np.array([c.rcol_m for c in coefs])
    R = R_schedule(market)
    disc = np.exp(-R.integral(0.0, grid))
    w = quadrature_weights(grid, num.quadrature)
    vp, vm = np.maximum(Vh, 0.0), np.maximum(-Vh, 0.0)

    def terms(q1, q2):
        return (
            _integral(w, disc, h1 * q1),
            _integral(w, disc, h2 * q2),
            -_integral(w, disc, fs * (q1 + q2)),
            _integral(w, disc, rs * (q1 * kI + q2 * kC)),
        )

    hat = terms(ph1, ph2)
    va5p = alpha * _integral(w, disc, (rf0 - cp) * vp - (rf0 - cm) * vm)
    va5m = alpha * _integral(w, disc, (rf0 - cm) * vp - (rf0 - cp) * vm)
    base = sum(hat)
    tot_p, tot_m = V0 + base + va5p, V0 + base + va5m

    names = ("va1", "va2", "va3", "va4", "va5_plus", "va5_minus")
    means, ses = {}, {}
    for k, arr in zip(names, hat + (va5p, va5m)):
        means[k], ses[k] = _stats(arr)
    ses["V0"] = 0.0
    _, ses["total_plus"] = _stats(tot_p)
    _, ses["total_minus"] = _stats(tot_m)
    va_sum = sum(means[k] for k in names[:4])
    report = XVAReport(
        V0=V0, **means,
        total_plus=V0 + va_sum + means["va5_plus"],
        total_minus=V0 + va_sum + means["va5_minus"],
        se=ses,
    )

    # telescoping identity against the R-discounted value
    bar = terms(p1, p2)
    gap = sum(hat) - sum(bar)
    if exact:
        a = getattr(contract.payoff, "asset", 0)
        Vbar0 = float(analytic.v_bar(contract.payoff, market, 0.0, market.S0[a], T))
        lhs = gap
    else:
        xi = contract.payoff(batch.s[:, -1])
        lhs = gap - disc[-1] * xi
        Vbar0 = 0.0
    m, s = _stats(lhs)
    report.telescoping_residual = abs(m - (Vbar0 - V0))
    report.telescoping_se = s

    if classical:
        cx = compute_classical_xva(market, contract, num)
        for k in ("dva", "cva", "fva", "colva_plus", "colva_minus"):
            setattr(report, k, cx[k])
            report.se[k] = cx["se"][k]
        report.fva_minus_va3 = report.fva - report.va3
    return report


def compute_classical_xva(market, contract, num):
    """Practitioner DVA, CVA, FVA and ColVA under ``P``, discounted at ``r_D + h1 + h2``."""
    check_consistent(market, contract)
    T, alpha = contract.T, contract.closeout.alpha
    batch = simulate_asset_paths(market, T, num, "P")
    grid = batch.grid
    if analytic.supports(contract.payoff):
        a = getattr(contract.payoff, "asset", 0)
        Vh = analytic.vhat(contract.payoff, market, grid[None, :], batch.s[:, :, a], T)
    else:
        from .bsde import solve_vhat

        Vh = solve_vhat(market, contract, batch, num, mode="regression").values
    p1, p2 = closeout_eval(contract.closeout, Vh)
    coefs = _grid_coefs(market, grid)
    h1 = np.array([c.h1 for c in coefs])
    h2 = np.array([c.h2 for c in coefs])
    rD = np.array([c.rD for c in coefs])
    fs = np.array([c.rf0 - c.rD for c in coefs])
    cp = np.array([c.rcol_p for c in coefs])
    cm = np.array([c.rcol_m for c in coefs])
    rate = market.r_D.integral(0.0, grid) + market.h1.integral(0.0, grid) + market.h2.integral(0.0, grid)
    disc = np.exp(-rate)
    w = quadrature_weights(grid, num.quadrature)
    vp, vm = np.maximum(Vh, 0.0), np.maximum(-Vh, 0.0)
    parts = {
        "dva": -_integral(w, disc, h1 * (p1 - Vh)),
        "cva": _integral(w, disc, h2 * (p2 - Vh)),
        "fva": _integral(w, disc, fs * (p1 + p2)),
        "colva_plus": alpha * _integral(w, disc, (rD - cp) * vp - (rD - cm) * vm),
        "colva_minus": alpha * _integral(w, disc, (rD - cm) * vp - (rD - cp) * vm),
    }
    out = {"se": {}}
    for k, arr in parts.items():
        out[k], out["se"][k] = _stats(arr)
    return out


def telescoping_check(market, contract, num):
    """Residual of the identity linking the two discounting conventions, with its standard error."""
    rep = compute_xva(market, contract, num, classical=False)
    return rep.telescoping_residual, rep.telescoping_se


@dataclass
class GirsanovReport:
    direct: dict
    reweighted: dict
    se_direct: dict
    se_reweighted: dict
    combined_se: dict

    def agree(self, k=3.0):
        return all(abs(self.direct[g] - self.reweighted[g]) <= k * self.combined_se[g] for g in self.direct)

    def to_dict(self):
        return asdict(self)


def girsanov_diagnostic(market, T, num, payoff=None):
    """Repo-drift expectations computed directly and by reweighting ``P`` paths."""
    from .paths import girsanov_density

    tilde = simulate_asset_paths(market, T, num, "P_tilde")
    plain = simulate_asset_paths(market, T, num, "P")
    dens = girsanov_density(market, plain)[:, -1]
    gs = {"identity": lambda s: s[..., 0]}
    if payoff is not None:
        gs["payoff"] = payoff
    rep = GirsanovReport({}, {}, {}, {}, {})
    for name, g in gs.items():
        a = g(tilde.s[:, -1])
        b = dens * g(plain.s[:, -1])
        rep.direct[name], rep.se_direct[name] = _stats(a)
        rep.reweighted[name], rep.se_reweighted[name] = _stats(b)
        rep.combined_se[name] = float(np.hypot(rep.se_direct[name], rep.se_reweighted[name]))
    return rep
