"""Backward solvers for the pre-default pricing equations.

The least-squares Monte Carlo solver walks the time grid backwards. At each
step conditional expectations are polynomial regressions in standardized
log-prices; ``y`` is implicit and found by a short fixed-point loop. The
path-wise value carried backwards is the multistep estimator
``xi + sum_j f_j dt``, so its cross-path spread at time 0 gives the
standard error of ``y0``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import analytic, drivers
from .errors import ConfigError, ConsistencyError, NumericError, UnsupportedConfiguration
from .model import Constant, check_consistent, closeout_eval, validate_market
from .paths import simulate_asset_paths

RANK_TOL = 1e-10


# -------------------------------------------------------------- regression


def _exponents(n, degree):
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = np.zeros(n, dtype=int)
            for j in combo:
                e[j] += 1
            out.append(e)
    return np.array(out)


@dataclass(frozen=True)
class Basis:
    """Total-degree monomials in standardized log-prices at one time step."""

    center: np.ndarray
    scale: np.ndarray
    exponents: np.ndarray

    @classmethod
    def fit(cls, s, degree):
        x = np.log(s)
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        if degree == 0 or np.all(scale <= 1e-12 * np.maximum(1.0, np.abs(center))):
            return cls(center, np.ones_like(scale), _exponents(s.shape[1], 0))
        keep = scale > 1e-12 * np.maximum(1.0, np.abs(center))
        scale = np.where(keep, scale, 1.0)
        ex = _exponents(s.shape[1], degree)
        ex = ex[np.all(ex[:, ~keep] == 0, axis=1)]
        return cls(center, scale, ex)

    def design(self, s):
        x = (np.log(s) - self.center) / self.scale
        return np.prod(x[:, None, :] ** self.exponents[None, :, :], axis=2)


def _qr(X, step):
    if X.shape[0] < X.shape[1]:
        raise NumericError(f"regression matrix rank-deficient at step {step}: {X.shape[0]} paths for "
                           f"{X.shape[1]} basis functions")
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.min() <= RANK_TOL * max(d.max(), 1e-300):
        raise NumericError(f"regression matrix rank-deficient at step {step}")
    return Q, R


def _project(Q, R, targets):
    beta = solve_triangular(R, Q.T @ targets)
    return Q @ (R @ beta), beta


# --------------------------------------------------------------- solutions


@dataclass(frozen=True, eq=False)
class VhatSolution:
    grid: np.ndarray
    values: np.ndarray  # (P, N+1)
    delta: np.ndarray | None  # (P, N+1, n)
    mode: str


@dataclass(frozen=True, eq=False)
class ReducedSolution:
    grid: np.ndarray
    y_bar: np.ndarray  # (P, N+1), terminal column included
    z_bar: np.ndarray  # (P, N, n)
    y0: float
    standard_error: float
    y_path0: np.ndarray  # multistep path values at time 0
    label: str = ""
    beta_y: list = field(default_factory=list)
    beta_z: list = field(default_factory=list)
    bases: list = field(default_factory=list)
    picard_residual: np.ndarray | None = None

    def evaluate(self, i, s):
        """Fitted ``(y, z)`` at step ``i`` for fresh states ``s`` of shape (P, n)."""
        X = self.bases[i].design(s)
        return X @ self.beta_y[i], X @ self.beta_z[i]


@dataclass(frozen=True, eq=False)
class FullSolution:
    reduced: ReducedSolution
    u1: np.ndarray
    u2: np.ndarray


@dataclass(frozen=True)
class OdeSolution:
    grid: np.ndarray
    y: np.ndarray
    label: str = ""

    @property
    def y0(self):
        return float(self.y[0])


def diff_se(a, b):
    """Standard error of ``a.y0 - b.y0`` on common random numbers."""
    d = a.y_path0 - b.y_path0
    return float(d.std(ddof=1) / np.sqrt(len(d)))


# -------------------------------------------------------------------- V hat


def _need_p(batch):
    if batch.measure != "P":
        raise ConfigError("the pricing equations are solved on paths simulated under P")


def solve_vhat(market, contract, batch, num=None, mode="auto"):
    """Reference value on every path and grid time."""
    _need_p(batch)
    payoff, T = contract.payoff, contract.T
    if mode not in ("auto", "analytic", "regression"):
        raise ConfigError(f"unknown V_hat mode {mode!r}")
    if mode != "regression" and analytic.supports(payoff):
        a = getattr(payoff, "asset", 0)
        s = batch.s[:, :, a]
        t = batch.grid[None, :]
        values = analytic.vhat(payoff, market, t, s, T)
        dv = analytic.vhat_delta(payoff, market, t, s, T)
        sig_rows = np.asarray(market.sigma.at(batch.grid))[:, a, :]  # (N+1, n)
        delta = (dv * s)[:, :, None] * sig_rows[None]
        values[:, -1] = payoff(batch.s[:, -1])
        return VhatSolution(batch.grid, values, delta, "analytic")
    num = num or _default_numerics(batch)
    coefs = [market.coefficients(t, require_invertible=False) for t in batch.grid[:-1]]

    def drv(i, y, z):
        return -coefs[i].rD * y

    sol = _backward(drv, payoff(batch.s[:, -1]), batch, num, "V_hat")
    # the martingale integrand of the linear equation is the delta process itself
    delta = np.concatenate([sol.z_bar, sol.z_bar[:, -1:]], axis=1)
    return VhatSolution(batch.grid, sol.y_bar, delta, "regression")


def _default_numerics(batch):
    from .model import NumericsConfig

    return NumericsConfig(n_steps=batch.n_steps, n_paths=batch.n_paths)


# ------------------------------------------------------------ LSMC backward


def _backward(drv, xi, batch, num, label):
    P, N = batch.n_paths, batch.n_steps
    n = batch.n_assets
    dt = batch.dt
    y_bar = np.empty((P, N + 1))
    z_bar = np.empty((P, N, n))
    y_bar[:, N] = xi
    y_path = np.array(xi, dtype=np.float64)
    y_next = y_bar[:, N]
    bases, beta_y, beta_z = [None] * N, [None] * N, [None] * N
    resid = np.zeros(N)
    for i in range(N - 1, -1, -1):
        basis = Basis.fit(batch.s[:, i], 0 if i == 0 else num.basis_degree)
        Q, R = _qr(basis.design(batch.s[:, i]), i)
        fit, _ = _project(Q, R, np.column_stack([y_path, y_next]))
        ey = fit[:, 0]
        centered = (y_next - fit[:, 1])[:, None] * batch.dw[:, i] / dt[i]
        z, bz = _project(Q, R, centered)
        y = ey.copy()
        scale = np.max(np.abs(ey))
        for _ in range(num.picard_iters):
            y_new = ey + dt[i] * drv(i, y, z)
            r = np.max(np.abs(y_new - y))
            y = y_new
            if r <= num.picard_tol * scale:
                break
        resid[i] = r
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite values at step {i} of {label}")
        _, by = _project(Q, R, y[:, None])
        bases[i], beta_y[i], beta_z[i] = basis, by[:, 0], bz
        y_path = y_path + dt[i] * drv(i, y, z)
        y_bar[:, i] = y
        z_bar[:, i] = z
        y_next = y
    y0 = float(y_bar[0, 0])
    se = float(y_path.std(ddof=1) / np.sqrt(P))
    return ReducedSolution(
        grid=batch.grid, y_bar=y_bar, z_bar=z_bar, y0=y0, standard_error=se, y_path0=y_path,
        label=label, beta_y=beta_y, beta_z=beta_z, bases=bases, picard_residual=resid,
    )


def _step_inputs(market, contract, batch, vhat):
    if vhat.values.shape != batch.s.shape[:2]:
        raise ConfigError("V_hat and path batch have different shapes")
    coefs = [market.coefficients(t) for t in batch.grid[:-1]]
    p1, p2 = closeout_eval(contract.closeout, vhat.values)
    return coefs, vhat.values, p1, p2


def solve_reduced_lsmc(driver_id, market, contract, batch, vhat, num):
    """Regression Monte Carlo solution of one reduced pricing equation."""
    _need_p(batch)
    if driver_id not in drivers.DRIVERS:
        raise ConfigError(f"unknown driver {driver_id!r}")
    coefs, v, p1, p2 = _step_inputs(market, contract, batch, vhat)
    alpha = contract.closeout.alpha

    def drv(i, y, z):
        return drivers.reduced(driver_id, coefs[i], y, z, v[:, i], p1[:, i], p2[:, i], alpha)

    return _backward(drv, contract.payoff(batch.s[:, -1]), batch, num, driver_id)


def solve_first_order(side, market, contract, batch, zeroth, vhat, num, variant="strict"):
    """First-order spread correction around a zeroth-order solution."""
    _need_p(batch)
    sgn = drivers._side(side)
    coefs, v, p1, p2 = _step_inputs(market, contract, batch, vhat)
    alpha = contract.closeout.alpha
    y0, z0 = zeroth.y_bar, zeroth.z_bar

    def drv(i, y, z):
        c = coefs[i]
        return drivers.first_order_homogeneous(c, y, z, p1[:, i], p2[:, i], variant) + drivers.first_order_source(
            sgn, c, y0[:, i], z0[:, i], v[:, i], p1[:, i], p2[:, i], alpha
        )

    label = f"first_order_{'plus' if sgn > 0 else 'minus'}"
    return _backward(drv, np.zeros(batch.n_paths), batch, num, label)


def lift_solution(reduced, vhat, closeout):
    """Jump sizes ``u_i = phi_i(V_hat) - y_bar`` on every path and grid time."""
    if reduced.y_bar.shape != vhat.values.shape:
        raise ConfigError("reduced solution and V_hat have different shapes")
    p1, p2 = closeout_eval(closeout, vhat.values)
    return FullSolution(reduced, p1 - reduced.y_bar, p2 - reduced.y_bar)


def stopped_value(full, vhat, closeout, defaults):
    """Full-filtration value paths: ``y_bar`` before the first default, then the settled amount.

    A default in ``(t_{i-1}, t_i]`` settles at the close-out value at ``t_i``.
    """
    grid = full.reduced.grid
    T = grid[-1]
    p1, p2 = closeout_eval(closeout, vhat.values)
    tau1, tau2 = np.asarray(defaults.tau1), np.asarray(defaults.tau2)
    tau = np.minimum(tau1, tau2)
    k = np.searchsorted(grid, np.minimum(tau, T), side="left")
    P = len(tau)
    rows = np.arange(P)
    settle = np.where(tau1 < np.minimum(tau2, T), p1[rows, np.minimum(k, len(grid) - 1)],
                      np.where(tau2 < np.minimum(tau1, T), p2[rows, np.minimum(k, len(grid) - 1)],
                               full.reduced.y_bar[:, -1]))
    Y = full.reduced.y_bar.copy()
    after = np.arange(len(grid))[None, :] >= np.where(tau < T, k, len(grid) - 1)[:, None]
    Y[after] = np.broadcast_to(settle[:, None], Y.shape)[after]
    return Y


# --------------------------------------------------------------- ODE oracle


def _ode_grid(market, T, n_steps):
    bp = np.append(market.breakpoints(T), T)
    lengths = np.diff(bp)
    counts = np.maximum(1, np.round(n_steps * lengths / T).astype(int))
    return np.concatenate([np.linspace(a, b, m + 1)[:-1] for a, b, m in zip(bp[:-1], bp[1:], counts)] + [[T]])


def _rk4_backward(rhs, y_T, grid):
    """Integrate ``-y' = rhs(t, y)`` from ``grid[-1]`` back to ``grid[0]``.

    Stages evaluate coefficients just inside each step so breakpoints are honored.
    """
    y = np.empty((len(grid),) + np.shape(y_T))
    y[-1] = y_T
    for k in range(len(grid) - 1, 0, -1):
        a, b = grid[k - 1], grid[k]
        h = b - a
        tb, tm, ta = b - 1e-14 * h, 0.5 * (a + b), a
        yk = y[k]
        k1 = rhs(tb, yk)
        k2 = rhs(tm, yk + 0.5 * h * k1)
        k3 = rhs(tm, yk + 0.5 * h * k2)
        k4 = rhs(ta, yk + h * k3)
        y[k - 1] = yk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _constant_payoff(contract):
    if not isinstance(contract.payoff, Constant):
        raise UnsupportedConfiguration("the ODE oracle needs a constant payoff")
    return contract.payoff.notional * contract.payoff.value


def solve_reduced_ode(driver_id, market, contract, n_steps=2000):
    """Deterministic solution for a constant payoff (``z`` vanishes)."""
    K = _constant_payoff(contract)
    T, alpha = contract.T, contract.closeout.alpha
    if driver_id not in drivers.DRIVERS:
        raise ConfigError(f"unknown driver {driver_id!r}")

    def rhs(t, y):
        c = market.coefficients(t)
        v = K * np.exp(-market.r_D.integral(t, T))
        p1, p2 = closeout_eval(contract.closeout, v)
        return drivers.reduced(driver_id, c, y, 0.0, v, p1, p2, alpha)

    grid = _ode_grid(market, T, n_steps)
    return OdeSolution(grid, _rk4_backward(rhs, float(K), grid), driver_id)


def solve_first_order_ode(side, market, contract, n_steps=2000, variant="strict"):
    """Zeroth- and first-order deterministic solutions, integrated jointly."""
    K = _constant_payoff(contract)
    T, alpha = contract.T, contract.closeout.alpha
    sgn = drivers._side(side)
    zeroth_id = "f0_plus" if sgn > 0 else "f0_minus"

    def rhs(t, y):
        c = market.coefficients(t)
        v = K * np.exp(-market.r_D.integral(t, T))
        p1, p2 = closeout_eval(contract.closeout, v)
        g0 = drivers.reduced(zeroth_id, c, y[0], 0.0, v, p1, p2, alpha)
        g1 = drivers.first_order_homogeneous(c, y[1], 0.0, p1, p2, variant) + drivers.first_order_source(
            sgn, c, y[0], 0.0, v, p1, p2, alpha
        )
        return np.array([float(np.squeeze(g0)), float(np.squeeze(g1))])

    grid = _ode_grid(market, T, n_steps)
    y = _rk4_backward(rhs, np.array([float(K), 0.0]), grid)
    return OdeSolution(grid, y[:, 0], zeroth_id), OdeSolution(grid, y[:, 1], f"first_order_{side}")


# ------------------------------------------------------------ price bounds


@dataclass
class PriceBounds:
    p_lower: float
    p_upper: float
    se_lower: float
    se_upper: float
    engine: str
    se_gap: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


def conditions_hold(market):
    rep = validate_market(market)
    return rep.ok and rep.flag_44


def solve_pair(market, contract, num, ids=("f_minus", "f_plus")):
    """Solve several reduced equations on one common set of paths."""
    check_consistent(market, contract)
    batch = simulate_asset_paths(market, contract.T, num, "P")
    vh = solve_vhat(market, contract, batch, num)
    return batch, vh, {d: solve_reduced_lsmc(d, market, contract, batch, vh, num) for d in ids}


def price_bounds(market, contract, num, engine="lsmc"):
    """Sub- and superhedging prices, with an ordering post-check."""
    if engine == "lsmc":
        _, _, sol = solve_pair(market, contract, num)
        lo, up = sol["f_minus"], sol["f_plus"]
        res = PriceBounds(lo.y0, up.y0, lo.standard_error, up.standard_error, "lsmc", diff_se(up, lo))
        tol = 2.0 * np.hypot(res.se_lower, res.se_upper)
    elif engine == "pde":
        from .pde import solve_pde_system

        check_consistent(market, contract)
        ps = solve_pde_system(market, contract, num)
        res = PriceBounds(ps.value_at_origin("U_minus"), ps.value_at_origin("U_plus"), 0.0, 0.0, "pde")
        tol = 1e-8 * max(1.0, abs(res.p_upper))
    else:
        raise ConfigError(f"unknown engine {engine!r}; expected 'lsmc' or 'pde'")
    if conditions_hold(market) and res.p_lower > res.p_upper + tol:
        raise ConsistencyError(
            f"price interval inverted: lower {res.p_lower:.6g} > upper {res.p_upper:.6g} beyond tolerance {tol:.3g}"
        )
    return res
