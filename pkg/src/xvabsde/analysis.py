"""No-arbitrage margins, ordering checks, spread sweeps, homogeneity and replication."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analytic, drivers
from .bsde import (
    diff_se,
    solve_first_order,
    solve_first_order_ode,
    solve_pair,
    solve_reduced_lsmc,
    solve_reduced_ode,
    solve_vhat,
)
from .errors import ConfigError, UnsupportedConfiguration
from .model import Constant, check_consistent, closeout_eval, validate_market
from .paths import (
    STREAM_EVAL_ASSET,
    STREAM_EVAL_DEFAULT,
    sample_default_times,
    simulate_asset_paths,
)

CONDITIONS = ("19f", "19r", "44", "48-h1", "48-h2", "49")


# ---------------------------------------------------------------- no-arb


@dataclass
class ConditionRecord:
    condition: str
    worst_margin: float
    worst_time: float
    passed: bool


@dataclass
class NoArbReport:
    records: list

    @property
    def passed(self):
        return all(r.passed for r in self.records)

    def margin(self, cond):
        return next(r.worst_margin for r in self.records if r.condition == cond)

    def failed(self):
        return [r.condition for r in self.records if not r.passed]

    def to_dict(self):
        return {"passed": self.passed, "records": [asdict(r) for r in self.records]}


def condition_margins(c):
    """Margins of each sufficient condition at one coefficient snapshot (nonnegative means satisfied)."""
    kI, kC = c.kI, c.kC

    def hazard_bound(k):
        return (c.rf_m - c.rD) - (c.rr_p - c.rD) * max(k, 0.0) + (c.rr_m - c.rD) * max(-k, 0.0)

    return {
        "19f": c.rf_m - c.rf_p,
        "19r": c.rr_m - c.rr_p,
        "44": c.rcol_m - c.rcol_p,
        "48-h1": c.h1 - hazard_bound(kI),
        "48-h2": c.h2 - hazard_bound(kC),
        "49": c.rf_p - c.rcol_m,
    }


def check_noarb(market, grid_times=None):
    """Worst margin of every condition over ``grid_times`` (default: every coefficient breakpoint)."""
    times = market.breakpoints() if grid_times is None else np.asarray(grid_times, dtype=float)
    worst = {k: (math.inf, 0.0) for k in CONDITIONS}
    for t in times:
        for k, m in condition_margins(market.coefficients(t)).items():
            if m < worst[k][0]:
                worst[k] = (m, float(t))
    return NoArbReport([ConditionRecord(k, worst[k][0], worst[k][1], worst[k][0] >= 0) for k in CONDITIONS])


# -------------------------------------------------------------- ordering

CHAIN = ("f_minus", "f0_minus", "f0_plus", "f_plus")


@dataclass
class OrderingReport:
    engine: str
    values: dict
    standard_errors: dict
    links: list
    grid_links: list = field(default_factory=list)

    @property
    def passed(self):
        return all(l["passed"] for l in self.links) and all(l["passed"] for l in self.grid_links)

    def violated(self):
        return [l["link"] for l in self.links + self.grid_links if not l["passed"]]

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def ordering_check(market, contract, num, engine="lsmc", k_se=2.0):
    """Verify ``f_minus <= f0_minus <= f0_plus <= f_plus`` at time 0 (and in mean along the grid)."""
    rep = validate_market(market)
    if not (rep.ok and rep.flag_44):
        raise ConfigError("the ordering chain needs nonnegative spreads and r_col^- >= r_col^+")
    links, grid_links, ses = [], [], {}
    if engine == "lsmc":
        _, _, sol = solve_pair(market, contract, num, CHAIN)
        values = {k: sol[k].y0 for k in CHAIN}
        ses = {k: sol[k].standard_error for k in CHAIN}
        for a, b in zip(CHAIN[:-1], CHAIN[1:]):
            gap = values[b] - values[a]
            tol = k_se * diff_se(sol[b], sol[a])
            links.append({"link": f"{a} <= {b}", "gap": gap, "tolerance": tol, "passed": gap >= -tol})
            d = sol[b].y_bar - sol[a].y_bar
            m = d.mean(axis=0)
            s = d.std(axis=0, ddof=1) / np.sqrt(d.shape[0])
            worst = int(np.argmin(m + k_se * s))
            grid_links.append({"link": f"{a} <= {b} along grid", "worst_time": float(sol[a].grid[worst]),
                               "gap": float(m[worst]), "tolerance": float(k_se * s[worst]),
                               "passed": bool(np.all(m >= -k_se * s))})
    elif engine in ("ode", "pde"):
        if engine == "ode":
            values = {k: solve_reduced_ode(k, market, contract, num.n_steps * 20).y0 for k in CHAIN}
            tol = 1e-10
        else:
            from .pde import solve_pde_system

            names = {"f_minus": "U_minus", "f0_minus": "U0_minus", "f0_plus": "U0_plus", "f_plus": "U_plus"}
            ps = solve_pde_system(market, contract, num, tuple(names.values()))
            values = {k: ps.value_at_origin(v) for k, v in names.items()}
            tol = 1e-8 * max(1.0, abs(values["f_plus"]))
        ses = {k: 0.0 for k in CHAIN}
        for a, b in zip(CHAIN[:-1], CHAIN[1:]):
            gap = values[b] - values[a]
            links.append({"link": f"{a} <= {b}", "gap": gap, "tolerance": tol, "passed": gap >= -tol})
    else:
        raise ConfigError(f"unknown engine {engine!r}")
    return OrderingReport(engine, values, ses, links, grid_links)


# ----------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    eps: list
    order: int
    engine: str
    errors_plus: list
    errors_minus: list
    errors_y: dict
    errors_z: dict
    correction_norms: dict
    slope_plus: float
    slope_minus: float
    warnings: list = field(default_factory=list)

    @property
    def slope(self):
        return min(self.slope_plus, self.slope_minus)

    def to_dict(self):
        d = asdict(self)
        d["slope"] = self.slope
        return d

    def rows(self):
        """Table rows: eps, error (both sides), slope."""
        header = ["eps", "error_plus", "error_minus", "error_y_plus", "error_z_plus", "error_y_minus",
                  "error_z_minus", "slope_plus", "slope_minus"]
        out = []
        for i, e in enumerate(self.eps):
            out.append([e, self.errors_plus[i], self.errors_minus[i], self.errors_y["plus"][i],
                        self.errors_z["plus"][i], self.errors_y["minus"][i], self.errors_z["minus"][i],
                        self.slope_plus, self.slope_minus])
        return header, out


def _fit_slope(eps, err):
    e = np.asarray(eps, dtype=float)
    r = np.asarray(err, dtype=float)
    keep = (e > 0) & (r > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(e[keep]), np.log(r[keep]), 1)[0])


def _pde_weights(market, grid, x):
    """Probability weights of ``log S_t`` on the nodes at every grid time under ``P``."""
    t = grid.t_nodes
    x0 = float(np.log(market.S0[0]))
    out = np.zeros((len(t), len(x)))
    out[0, (len(x) - 1) // 2] = 1.0
    for i in range(1, len(t)):
        ti = t[i]
        var = float(market.sigma.map(lambda m: m[0, 0] ** 2).integral(0.0, ti))
        mean = x0 + float(market.r_D.integral(0.0, ti)) - 0.5 * var
        w = np.exp(-0.5 * (x - mean) ** 2 / var)
        out[i] = w / w.sum()
    return out


def _norm_pde(gap, weights, dt, beta, t):
    return float(np.sqrt(np.sum(np.exp(beta * t[:-1]) * (weights[:-1] * gap[:-1] ** 2).sum(axis=1) * dt)))


def epsilon_sweep(market_base, contract, eps_list, order=0, engine="pde", num=None, variant="strict"):
    """Gap between the full and approximated prices as both half-spreads shrink together."""
    from .model import NumericsConfig

    num = num or NumericsConfig()
    eps = [float(e) for e in eps_list]
    if len(eps) < 1:
        raise ConfigError("eps_list must not be empty")
    if order not in (0, 1):
        raise ConfigError("order must be 0 or 1")
    if any(e < 0 for e in eps):
        raise ConfigError("eps values must be nonnegative")
    notes = []
    if any(b >= a for a, b in zip(eps[:-1], eps[1:])):
        notes.append("eps_list is not strictly decreasing")
    beta = num.norm_beta
    errs = {"plus": [], "minus": []}
    ey = {"plus": [], "minus": []}
    ez = {"plus": [], "minus": []}
    corr = {"plus": [], "minus": []}
    batch = vh = None
    for e in eps:
        m = market_base.with_spreads(e, e)
        if engine == "pde":
            from .pde import FIELDS, solve_pde_system

            # the correction is solved for both orders to report its norm
            ps = solve_pde_system(m, contract, num, FIELDS, variant=variant)
            g = ps.grid
            w = _pde_weights(m, g, g.x_nodes)
            dt = np.diff(g.t_nodes)
            sig = np.array([float(m.sigma.at(t)[0, 0]) for t in g.t_nodes])[:, None]
            for side in ("plus", "minus"):
                gap = ps.fields[f"U_{side}"] - ps.fields[f"U0_{side}"]
                if order:
                    gap = gap - ps.fields[f"U1_{side}"]
                zg = sig * np.gradient(gap, g.x_nodes, axis=1)
                y_n = _norm_pde(gap, w, dt, beta, g.t_nodes)
                z_n = _norm_pde(zg, w, dt, beta, g.t_nodes)
                u1 = ps.fields[f"U1_{side}"]
                corr[side].append(math.hypot(_norm_pde(u1, w, dt, beta, g.t_nodes),
                                             _norm_pde(sig * np.gradient(u1, g.x_nodes, axis=1), w, dt, beta,
                                                       g.t_nodes)))
                ey[side].append(y_n)
                ez[side].append(z_n)
                errs[side].append(math.hypot(y_n, z_n))
        elif engine == "lsmc":
            check_consistent(m, contract)
            if batch is None:
                batch = simulate_asset_paths(m, contract.T, num, "P")
                vh = solve_vhat(m, contract, batch, num)
            dt = batch.dt
            wt = np.exp(beta * batch.grid[:-1]) * dt
            for side in ("plus", "minus"):
                full = solve_reduced_lsmc(f"f_{side}", m, contract, batch, vh, num)
                zero = solve_reduced_lsmc(f"f0_{side}", m, contract, batch, vh, num)
                first = solve_first_order(side, m, contract, batch, zero, vh, num, variant)
                gy = full.y_bar - zero.y_bar
                gz = full.z_bar - zero.z_bar
                if order:
                    gy = gy - first.y_bar
                    gz = gz - first.z_bar
                y_n = float(np.sqrt(np.sum(wt * (gy[:, :-1] ** 2).mean(axis=0))))
                z_n = float(np.sqrt(np.sum(wt * (gz**2).sum(axis=2).mean(axis=0))))
                c_n = math.hypot(float(np.sqrt(np.sum(wt * (first.y_bar[:, :-1] ** 2).mean(axis=0)))),
                                 float(np.sqrt(np.sum(wt * (first.z_bar**2).sum(axis=2).mean(axis=0)))))
                corr[side].append(c_n)
                ey[side].append(y_n)
                ez[side].append(z_n)
                errs[side].append(math.hypot(y_n, z_n))
        else:
            raise ConfigError(f"unknown engine {engine!r}")
    for side in ("plus", "minus"):
        pos = [(e, r) for e, r in zip(eps, errs[side]) if e > 0]
        if any(r2 > r1 * (1 + 1e-9) for (_, r1), (_, r2) in zip(pos[:-1], pos[1:])):
            notes.append(f"errors on the {side} side are not monotone in eps")
    for n in notes:
        warnings.warn(n, stacklevel=2)
    return SweepResult(
        eps=eps, order=order, engine=engine, errors_plus=errs["plus"], errors_minus=errs["minus"],
        errors_y=ey, errors_z=ez, correction_norms=corr,
        slope_plus=_fit_slope(eps, errs["plus"]), slope_minus=_fit_slope(eps, errs["minus"]),
        warnings=notes,
    )


# ------------------------------------------------------------ homogeneity


def homogeneity_check(market, contract, k_list, engine="lsmc", num=None):
    """Largest relative deviation of ``Y(k * payoff)`` from ``k * Y(payoff)`` over both sides."""
    from .model import NumericsConfig

    num = num or NumericsConfig()
    if any(k <= 0 for k in k_list):
        raise ConfigError("scaling factors must be positive")

    def solve(ct):
        if engine == "ode":
            return {d: solve_reduced_ode(d, market, ct, num.n_steps * 20).y0 for d in ("f_plus", "f_minus")}
        if engine == "lsmc":
            _, _, sol = solve_pair(market, ct, num)
            return {d: s.y0 for d, s in sol.items()}
        if engine == "pde":
            from .pde import solve_pde_system

            ps = solve_pde_system(market, ct, num)
            return {"f_plus": ps.value_at_origin("U_plus"), "f_minus": ps.value_at_origin("U_minus")}
        raise ConfigError(f"unknown engine {engine!r}")

    base = solve(contract)
    worst = 0.0
    for k in k_list:
        scaled = solve(contract.scaled(k))
        for d, v in base.items():
            ref = k * v
            worst = max(worst, abs(scaled[d] - ref) / max(abs(ref), 1e-300))
    return worst


# ------------------------------------------------------------ replication


class _ValueSource:
    """Solution fields ``(y, z)`` as functions of (hedge step, state)."""

    def __init__(self, market, contract, num, side, engine):
        self.side = side
        self.market = market
        driver = f"f_{side}"
        if engine == "auto":
            if isinstance(contract.payoff, Constant):
                engine = "ode"
            elif market.n == 1 and np.all(market.sigma.values != 0):
                engine = "pde"
            else:
                engine = "lsmc"
        self.engine = engine
        N, T = num.n_steps, contract.T
        self.grid = np.linspace(0.0, T, N + 1)
        if engine == "ode":
            sol = solve_reduced_ode(driver, market, contract, max(2000, 10 * N))
            self._ode = sol
            self.y0 = sol.y0
        elif engine == "pde":
            from .model import PdeConfig
            from .pde import make_grid, solve_pde_system

            k = max(1, math.ceil((num.pde.n_time or num.pde.n_space) / N))
            cfg = PdeConfig(n_space=num.pde.n_space, x_width=num.pde.x_width, theta=num.pde.theta,
                            n_time=k * N, rannacher_steps=num.pde.rannacher_steps)
            g = make_grid(market, contract, cfg)
            ps = solve_pde_system(market, contract, g, (f"U_{side}",))
            self._x = g.x_nodes
            self._U = ps.fields[f"U_{side}"][::k]
            self._Z = ps.z(f"U_{side}", market)[::k]
            self.y0 = ps.value_at_origin(f"U_{side}")
        elif engine == "lsmc":
            batch = simulate_asset_paths(market, T, num, "P")
            vh = solve_vhat(market, contract, batch, num)
            self._sol = solve_reduced_lsmc(driver, market, contract, batch, vh, num)
            self.y0 = self._sol.y0
        else:
            raise ConfigError(f"unknown engine {engine!r}")

    def at(self, i, s):
        P, n = s.shape
        if self.engine == "ode":
            return np.full(P, np.interp(self.grid[i], self._ode.grid, self._ode.y)), np.zeros((P, n))
        if self.engine == "pde":
            x = np.log(s[:, 0])
            return np.interp(x, self._x, self._U[i]), np.interp(x, self._x, self._Z[i])[:, None]
        y, z = self._sol.evaluate(i, s)
        return y, z


@dataclass
class ReplicationReport:
    side: str
    engine: str
    n_steps: int
    n_paths: int
    premium: float
    mean_error: float
    mean_abs_terminal_error: float
    se_abs_error: float
    rel_error: float
    rel_error_payoff: float
    error_quantiles: dict
    n_defaults: int

    def to_dict(self):
        return asdict(self)


def _rate(pair_m, pair_p, money):
    return np.where(money < 0, pair_m, pair_p) * money


def replicate(market, contract, num, n_eval_paths=None, side="+", engine="auto", source=None,
              return_paths=False):
    """Forward simulation of the replicating strategy on fresh paths with sampled defaults.

    The seller (``side='+'``) starts from the superhedging price and targets
    the payoff; the buyer (``side='-'``) starts from minus the subhedging
    price and targets minus the payoff. The run stops at the first default or
    at maturity, whichever comes first.
    """
    check_consistent(market, contract)
    sgn = drivers._side(side)
    sname = "plus" if sgn > 0 else "minus"
    src = source or _ValueSource(market, contract, num, sname, engine)
    n_eval = n_eval_paths or num.n_paths
    evn = num.replace(n_paths=n_eval)
    T, alpha = contract.T, contract.closeout.alpha
    batch = simulate_asset_paths(market, T, evn, "P", stream=STREAM_EVAL_ASSET)
    defaults = sample_default_times(market, T, n_eval, num.seed, stream=STREAM_EVAL_DEFAULT)
    if analytic.supports(contract.payoff):
        a = getattr(contract.payoff, "asset", 0)
        Vh = analytic.vhat(contract.payoff, market, batch.grid[None, :], batch.s[:, :, a], T)
        Vh[:, -1] = contract.payoff(batch.s[:, -1])
    else:
        Vh = solve_vhat(market, contract, batch, evn, mode="regression").values
    P, N = n_eval, batch.n_steps
    grid = batch.grid
    tau1, tau2 = np.asarray(defaults.tau1), np.asarray(defaults.tau2)
    W = np.full(P, sgn * src.y0)
    alive = np.ones(P, dtype=bool)
    target = np.empty(P)
    wealth_paths = np.empty((P, N + 1)) if return_paths else None
    if return_paths:
        wealth_paths[:, 0] = W
    for i in range(N):
        t0, t1 = grid[i], grid[i + 1]
        dt = t1 - t0
        c = market.coefficients(t0, require_invertible=False)
        s = batch.s[:, i]
        y, z = src.at(i, s)
        v = Vh[:, i]
        p1, p2 = closeout_eval(contract.closeout, v)
        yh, zh, u1, u2, vh_ = sgn * y, sgn * z, sgn * (p1 - y), sgn * (p2 - y), sgn * v
        m_s = drivers.stock_exposure(c, zh, u1, u2, pinv=True)  # (P, n)
        m_I, m_C = -u1, -u2
        m_col = alpha * vh_
        m_f = W - m_I - m_C - m_col
        m_r = -m_s.sum(axis=1)
        ret_s = batch.s[:, i + 1] / s - 1.0
        dw = batch.dw[:, i]
        gI = np.exp(dw @ c.sigma_I + (c.rD + c.h1 - 0.5 * c.sigma_I @ c.sigma_I) * dt) - 1.0
        gC = np.exp(dw @ c.sigma_C + (c.rD + c.h2 - 0.5 * c.sigma_C @ c.sigma_C) * dt) - 1.0
        first1 = (tau1 <= t1) & (tau1 < tau2)
        first2 = (tau2 <= t1) & (tau2 < tau1)
        gI = np.where(first1, -1.0, gI)
        gC = np.where(first2, -1.0, gC)
        dW_ = (
            (m_s * ret_s).sum(axis=1)
            + m_I * gI
            + m_C * gC
            + dt * (_rate(c.rr_m, c.rr_p, m_r) + _rate(c.rf_m, c.rf_p, m_f) + _rate(c.rcol_m, c.rcol_p, m_col))
        )
        W = np.where(alive, W + dW_, W)
        stop_now = alive & (first1 | first2)
        pay1, pay2 = closeout_eval(contract.closeout, Vh[:, i + 1])
        target = np.where(stop_now & first1, sgn * pay1, target)
        target = np.where(stop_now & first2, sgn * pay2, target)
        alive &= ~stop_now
        if return_paths:
            wealth_paths[:, i + 1] = W
    target = np.where(alive, sgn * contract.payoff(batch.s[:, -1]), target)
    err = W - target
    abs_err = np.abs(err)
    mean_abs = float(abs_err.mean())
    premium = sgn * src.y0
    q = np.quantile(err, [0.05, 0.25, 0.5, 0.75, 0.95])
    rep = ReplicationReport(
        side=side if isinstance(side, str) else ("+" if sgn > 0 else "-"),
        engine=src.engine,
        n_steps=N,
        n_paths=P,
        premium=float(premium),
        mean_error=float(err.mean()),
        mean_abs_terminal_error=mean_abs,
        se_abs_error=float(abs_err.std(ddof=1) / np.sqrt(P)),
        rel_error=mean_abs / max(abs(premium), 1e-300),
        rel_error_payoff=mean_abs / max(float(np.abs(target).mean()), 1e-300),
        error_quantiles={k: float(v) for k, v in zip(("q05", "q25", "q50", "q75", "q95"), q)},
        n_defaults=int((~alive).sum()),
    )
    if return_paths:
        return rep, wealth_paths
    return rep


# ------------------------------------------------------------- martingale


@dataclass
class MartingaleReport:
    block_times: list
    drifts: list
    standard_errors: list
    max_abs_drift: float
    se_at_max: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def _one_rate(market):
    for t in market.breakpoints():
        c = market.coefficients(t, require_invertible=False)
        rates = (c.rf_m, c.rf_p, c.rr_m, c.rr_p, c.rcol_m, c.rcol_p)
        if any(abs(r - c.rD) > 0 for r in rates):
            return False
    return True


def martingale_diagnostic(market, contract, num, n_blocks=4, engine="auto", k_se=3.0):
    """Drift of the discounted value ``E[Y(t) / B_D(t)]`` over a few time blocks.

    ``Y`` is the solution value before the first default and the settled
    close-out amount afterwards, evaluated on fresh paths.
    """
    if not _one_rate(market):
        raise UnsupportedConfiguration("the martingale diagnostic needs every rate equal to r_D")
    check_consistent(market, contract)
    src = _ValueSource(market, contract, num, "plus", engine)
    T = contract.T
    batch = simulate_asset_paths(market, T, num, "P", stream=STREAM_EVAL_ASSET)
    d = sample_default_times(market, T, num.n_paths, num.seed, stream=STREAM_EVAL_DEFAULT)
    grid = batch.grid
    N = batch.n_steps
    if analytic.supports(contract.payoff):
        a = getattr(contract.payoff, "asset", 0)
        Vh = analytic.vhat(contract.payoff, market, grid[None, :], batch.s[:, :, a], T)
    else:
        Vh = solve_vhat(market, contract, batch, num, mode="regression").values
    Y = np.empty((num.n_paths, N + 1))
    for i in range(N + 1):
        if i < N:
            Y[:, i] = src.at(i, batch.s[:, i])[0]
        else:
            Y[:, i] = contract.payoff(batch.s[:, -1])
    p1, p2 = closeout_eval(contract.closeout, Vh)
    tau1, tau2 = np.asarray(d.tau1), np.asarray(d.tau2)
    tau = np.minimum(tau1, tau2)
    k = np.searchsorted(grid, tau, side="left")  # first grid index at or after default
    rows = np.arange(num.n_paths)
    kk = np.minimum(k, N)
    settle = np.where(tau1 <= tau2, p1[rows, kk], p2[rows, kk])
    after = (np.arange(N + 1)[None, :] >= k[:, None]) & (tau <= T)[:, None]
    Y = np.where(after, settle[:, None], Y)
    disc = Y * np.exp(-market.r_D.integral(0.0, grid))[None, :]
    edges = np.unique(np.linspace(0, N, n_blocks + 1).round().astype(int))
    drifts, ses = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        inc = disc[:, b] - disc[:, a]
        span = grid[b] - grid[a]
        drifts.append(float(inc.mean() / span))
        ses.append(float(inc.std(ddof=1) / np.sqrt(len(inc)) / span))
    ratios = [abs(m) / s if s > 0 else (0.0 if m == 0 else math.inf) for m, s in zip(drifts, ses)]
    j = int(np.argmax(np.abs(drifts)))
    return MartingaleReport(
        block_times=[float(grid[e]) for e in edges],
        drifts=drifts,
        standard_errors=ses,
        max_abs_drift=float(abs(drifts[j])),
        se_at_max=ses[j],
        passed=all(r <= k_se for r in ratios) or all(abs(m) <= 1e-10 for m in drifts),
    )
