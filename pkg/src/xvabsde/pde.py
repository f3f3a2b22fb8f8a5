"""Theta-scheme finite differences for the one-asset pricing PDEs.

Unknowns live on a uniform grid in ``x = log S``. For the value functions
``U`` the part that is affine in ``U`` (discounting at ``R`` and the repo
drift correction) is treated with weight ``theta``; the spread terms, which
carry the absolute values, are taken explicitly from the previous (later)
time level. The first steps after the terminal date are replaced by implicit
half-steps to damp the payoff kink.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import drivers, kernels
from .errors import ConfigError, DomainError, NumericError, UnsupportedConfiguration
from .model import NumericsConfig, PdeConfig, check_consistent, closeout_eval, require_valid

FIELDS = ("U_plus", "U_minus", "U0_plus", "U0_minus", "U1_plus", "U1_minus")


@dataclass(frozen=True, eq=False)
class PdeGrid:
    x_nodes: np.ndarray
    t_nodes: np.ndarray
    theta: float = 0.5
    rannacher_steps: int = 2

    def __post_init__(self):
        if len(self.x_nodes) < 3 or len(self.t_nodes) < 3:
            raise ConfigError("PDE grid needs at least 3 nodes in each direction")
        if np.any(np.diff(self.x_nodes) <= 0) or np.any(np.diff(self.t_nodes) <= 0):
            raise ConfigError("PDE grid nodes must be increasing")

    @property
    def dx(self):
        return float(self.x_nodes[1] - self.x_nodes[0])


def make_grid(market, contract, cfg=None):
    """Uniform grid centred on ``log S0``; ``n_space`` counts intervals and is rounded up to even."""
    if isinstance(cfg, NumericsConfig):
        cfg = cfg.pde
    cfg = cfg or PdeConfig()
    T = contract.T
    sig_max = float(np.max(np.abs(market.sigma.values)))
    width = cfg.x_width if cfg.x_width is not None else max(6.0 * sig_max * np.sqrt(T), 0.5)
    m = cfg.n_space + (cfg.n_space % 2)
    x0 = float(np.log(market.S0[0]))
    x = x0 + width * np.linspace(-1.0, 1.0, m + 1)
    x[m // 2] = x0
    nt = cfg.n_time if cfg.n_time is not None else cfg.n_space
    return PdeGrid(x, np.linspace(0.0, T, nt + 1), cfg.theta, cfg.rannacher_steps)


@dataclass(frozen=True, eq=False)
class PdeSolution:
    grid: PdeGrid
    V: np.ndarray
    fields: dict = field(default_factory=dict)

    def __getattr__(self, name):
        if name in FIELDS:
            try:
                return self.fields[name]
            except KeyError:
                raise AttributeError(f"field {name} was not solved") from None
        raise AttributeError(name)

    def surface(self, name):
        return self.V if name == "V" else self.fields[name]

    def value_at_origin(self, name):
        """Value at ``t = 0`` and the centre node ``S0``."""
        return float(self.surface(name)[0, (len(self.grid.x_nodes) - 1) // 2])

    def z(self, name, market):
        """``z = sigma * dU/dx`` on every node."""
        u = self.surface(name)
        du = np.gradient(u, self.grid.x_nodes, axis=1)
        sig = np.array([float(market.sigma.at(t)[0, 0]) for t in self.grid.t_nodes])
        return sig[:, None] * du


# ----------------------------------------------------------------- stencils


class _Stepper:
    """Backward theta steps for ``u_t + a u_xx + b u_x - r u + source = 0``."""

    def __init__(self, grid):
        self.grid = grid
        self.dx = grid.dx
        self.m = len(grid.x_nodes)

    def _operator(self, a, b, r):
        """Row coefficients (lower, diagonal, upper) of the spatial operator.

        Interior rows use central differences. At both ends the second
        derivative is set to zero and the first derivative is one-sided.
        """
        dx, m = self.dx, self.m
        lo = np.full(m, a / dx**2 - b / (2 * dx))
        di = np.full(m, -2 * a / dx**2 - r)
        up = np.full(m, a / dx**2 + b / (2 * dx))
        lo[0], di[0], up[0] = 0.0, -b / dx - r, b / dx
        lo[-1], di[-1], up[-1] = -b / dx, b / dx - r, 0.0
        return lo, di, up

    def apply(self, u, a, b, r):
        lo, di, up = self._operator(a, b, r)
        out = di * u
        out[1:] += lo[1:] * u[:-1]
        out[:-1] += up[:-1] * u[1:]
        return out

    def step(self, u_next, dt, theta, a, b, r, source):
        """One step from ``t + dt`` to ``t``; ``source`` already time-weighted."""
        lo, di, up = self._operator(a, b, r)
        rhs = u_next + (1 - theta) * dt * self.apply(u_next, a, b, r) + dt * source
        return kernels.thomas(-theta * dt * lo, 1 - theta * dt * di, -theta * dt * up, rhs)


def _levels(grid):
    """Sequence of (t_lo, t_hi, theta) sub-steps, backwards from maturity."""
    t = grid.t_nodes
    steps = []
    for k in range(len(t) - 1, 0, -1):
        lo, hi = t[k - 1], t[k]
        if len(t) - 1 - k < grid.rannacher_steps:
            mid = 0.5 * (lo + hi)
            steps.append((mid, hi, 1.0, None))
            steps.append((lo, mid, 1.0, k - 1))
        else:
            steps.append((lo, hi, grid.theta, k - 1))
    return steps


def _check(u, what, t):
    if not np.all(np.isfinite(u)):
        raise NumericError(f"non-finite values in {what} at t={t:g}")


# ------------------------------------------------------------------- solver


def solve_pde_system(market, contract, grid=None, fields=("U_plus", "U_minus"), variant="strict"):
    """Solve ``V`` and the requested value functions on one grid.

    ``grid`` may be a :class:`PdeGrid`, a :class:`PdeConfig` or a
    :class:`NumericsConfig`. Fields ``U0_*`` drop the spread terms and
    ``U1_*`` are the first-order corrections built on ``U0_*``.
    """
    if market.n != 1:
        raise UnsupportedConfiguration("the PDE engine handles a single asset only")
    require_valid(market)
    check_consistent(market, contract)
    if np.any(market.sigma.values == 0):
        raise UnsupportedConfiguration("zero volatility makes the PDE a pure transport equation; not supported")
    if not isinstance(grid, PdeGrid):
        grid = make_grid(market, contract, grid)
    unknown = set(fields) - set(FIELDS)
    if unknown:
        raise ConfigError(f"unknown PDE fields {sorted(unknown)}")
    need = list(fields)
    for f in fields:
        if f.startswith("U1_") and "U0_" + f[3:] not in need:
            need.insert(0, "U0_" + f[3:])
    order = sorted(set(need), key=lambda f: (not f.startswith("U0"), f))

    x, tn = grid.x_nodes, grid.t_nodes
    s = np.exp(x)
    T, alpha = contract.T, contract.closeout.alpha
    payoff = contract.payoff(s[:, None])
    st = _Stepper(grid)
    levels = _levels(grid)
    coef_cache = {}

    def coefs(t):
        if t not in coef_cache:
            coef_cache[t] = market.coefficients(t)
        return coef_cache[t]

    def zfun(c, u):
        return float(c.sigma[0, 0]) * np.gradient(u, x)

    # V: reference value, linear
    V = np.empty((len(tn), len(x)))
    V[-1] = payoff
    v_sub = {tn[-1]: payoff}
    u = payoff.copy()
    for lo, hi, th, k in levels:
        c = coefs(lo)
        a, sig2 = 0.5 * c.sigma[0, 0] ** 2, c.sigma[0, 0] ** 2
        u = st.step(u, hi - lo, th, a, c.rD - 0.5 * sig2, c.rD, 0.0)
        _check(u, "V", lo)
        v_sub[lo] = u
        if k is not None:
            V[k] = u

    def affine_source(c, t, literal=False):
        v = v_sub[t]
        p1, p2 = closeout_eval(contract.closeout, v)
        g1 = -(c.rf0 - c.rD) + (c.rr0 - c.rD) * c.kI
        g2 = -(c.rf0 - c.rD) + (c.rr0 - c.rD) * c.kC
        return g1 * p1, g2 * p2, c.h1 * p1 + c.h2 * p2, p1, p2, v

    out = {}
    sub_store = {}
    for name in order:
        side = 1 if name.endswith("plus") else -1
        first = name.startswith("U1")
        with_spread = name.startswith("U_")
        zeroth = sub_store.get("U0_" + name[3:]) if first else None
        U = np.empty_like(V)
        u = np.zeros_like(payoff) if first else payoff.copy()
        U[-1] = u
        subs = {tn[-1]: u}
        for lo, hi, th, k in levels:
            c_lo = coefs(lo)
            dt = hi - lo
            sig = c_lo.sigma[0, 0]
            a = 0.5 * sig**2
            literal = first and variant == "literal"
            if literal:
                reac = c_lo.rf0 + (-(c_lo.rf0 - c_lo.rD) + (c_lo.rr0 - c_lo.rD) * c_lo.kI) \
                    + (-(c_lo.rf0 - c_lo.rD) + (c_lo.rr0 - c_lo.rD) * c_lo.kC)
            elif variant not in ("strict", "literal"):
                raise ConfigError(f"unknown first-order variant {variant!r}")
            else:
                reac = c_lo.discount_R
            conv = (c_lo.rD - 0.5 * sig**2) + (c_lo.rr0 - c_lo.rD) * float(c_lo.sigma[0, 0] * c_lo.sinv1[0])

            def src(t, c):
                g1p, g2p, hp, p1, p2, v = affine_source(c, t)
                if first:
                    return (g1p + g2p) if literal else 0.0
                return g1p + g2p + hp + drivers.collateral(c, v, alpha, side)

            source = th * src(lo, c_lo) + (1 - th) * src(hi, c_lo)
            if with_spread:
                _, _, _, p1, p2, v = affine_source(c_lo, hi)
                source = source + drivers.spread(c_lo, u, zfun(c_lo, u), p1 - u, p2 - u, v, alpha, side)
            elif first:
                y0 = zeroth[hi]
                _, _, _, p1, p2, v = affine_source(c_lo, hi)
                source = source + drivers.first_order_source(side, c_lo, y0, zfun(c_lo, y0), v, p1, p2, alpha)
            u = st.step(u, dt, th, a, conv, reac, source)
            _check(u, name, lo)
            subs[lo] = u
            if k is not None:
                U[k] = u
        sub_store[name] = subs
        if name in fields:
            out[name] = U
    return PdeSolution(grid, V, out)


def price_at(solution, name, t, s):
    """Bilinear interpolation in ``(t, log s)``."""
    g = solution.grid
    x = np.log(s)
    tn, xn = g.t_nodes, g.x_nodes
    tol = 1e-12 * max(1.0, tn[-1])
    if not (tn[0] - tol <= t <= tn[-1] + tol) or not (xn[0] - 1e-12 <= x <= xn[-1] + 1e-12):
        raise DomainError(f"query (t={t}, s={s}) outside the grid hull")
    surf = solution.surface(name)
    i = int(np.clip(np.searchsorted(tn, t, side="right") - 1, 0, len(tn) - 2))
    j = int(np.clip(np.searchsorted(xn, x, side="right") - 1, 0, len(xn) - 2))
    wt = (t - tn[i]) / (tn[i + 1] - tn[i])
    wx = (x - xn[j]) / (xn[j + 1] - xn[j])
    return float(
        (1 - wt) * ((1 - wx) * surf[i, j] + wx * surf[i, j + 1])
        + wt * ((1 - wx) * surf[i + 1, j] + wx * surf[i + 1, j + 1])
    )


@dataclass
class RefineRow:
    level: int
    n_space: int
    n_time: int
    values: dict
    order: dict


def refine_study(market, contract, base, levels=3, fields=("U_plus", "U_minus")):
    """Repeated halving of both steps with Richardson order estimates."""
    if levels < 2:
        raise ConfigError("refine_study needs at least 2 levels")
    if isinstance(base, NumericsConfig):
        base = base.pde
    rows = []
    for lv in range(levels):
        ns = base.n_space * 2**lv
        nt = (base.n_time or base.n_space) * 2**lv
        cfg = PdeConfig(n_space=ns, x_width=base.x_width, theta=base.theta, n_time=nt,
                        rannacher_steps=base.rannacher_steps)
        sol = solve_pde_system(market, contract, make_grid(market, contract, cfg), fields)
        vals = {f: sol.value_at_origin(f) for f in fields}
        vals["V"] = sol.value_at_origin("V")
        order = {}
        if lv >= 2:
            for f in vals:
                d1 = rows[-2].values[f] - rows[-1].values[f]
                d2 = rows[-1].values[f] - vals[f]
                order[f] = float(np.log2(abs(d1) / abs(d2))) if d2 != 0 and d1 != 0 else float("nan")
        rows.append(RefineRow(lv, ns, nt, vals, order))
    return rows


def write_surface_csv(solution, fp):
    w = csv.writer(fp, lineterminator="\n")
    names = ["V"] + [f for f in FIELDS if f in solution.fields]
    w.writerow(["t", "S"] + names)
    s = np.exp(solution.grid.x_nodes)
    for i, t in enumerate(solution.grid.t_nodes):
        for j in range(len(s)):
            w.writerow([repr(float(t)), repr(float(s[j]))] + [repr(float(solution.surface(n)[i, j])) for n in names])
