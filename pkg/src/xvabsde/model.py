"""Market, contract and numerics configuration types.

Every coefficient is a deterministic piecewise-constant function of time,
stored as a :class:`CoefficientSchedule`. Rate pairs are schedules whose
values carry a trailing axis of length 2 holding ``(r_minus, r_plus)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from .errors import ConfigError, DomainError, NumericError


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------- schedules


@dataclass(frozen=True)
class RatePair:
    """Borrowing (``r_minus``) and lending (``r_plus``) legs of one rate."""

    r_minus: float
    r_plus: float

    @property
    def mid(self):
        return 0.5 * (self.r_minus + self.r_plus)

    @property
    def eps(self):
        return 0.5 * (self.r_minus - self.r_plus)

    @classmethod
    def from_mid(cls, mid, eps):
        return cls(mid + eps, mid - eps)


@dataclass(frozen=True, eq=False)
class CoefficientSchedule:
    """Right-continuous piecewise-constant function of time.

    ``values[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``; the last
    value extends to the maturity.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = _frozen(np.atleast_1d(self.breakpoints))
        vals = _frozen(self.values)
        if bp.ndim != 1 or bp.size == 0:
            raise ConfigError("schedule breakpoints must be a non-empty list")
        if vals.ndim == 0 or vals.shape[0] != bp.size:
            raise ConfigError(
                f"schedule has {bp.size} breakpoints but {0 if vals.ndim == 0 else vals.shape[0]} values"
            )
        if bp[0] != 0.0:
            raise ConfigError("first schedule breakpoint must be 0")
        if np.any(np.diff(bp) <= 0):
            raise ConfigError("schedule breakpoints must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("schedule values must be finite")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value):
        return cls(np.array([0.0]), np.asarray(value, dtype=np.float64)[None, ...])

    @property
    def is_constant(self):
        return bool(np.all(self.values == self.values[0]))

    @property
    def value_shape(self):
        return self.values.shape[1:]

    def index(self, t):
        return np.searchsorted(self.breakpoints, t, side="right") - 1

    def at(self, t):
        """Value at ``t``; times before 0 are clamped to the first interval."""
        k = np.maximum(self.index(t), 0)
        return self.values[k]

    def integral(self, a, b):
        """Exact integral over ``[a, b]`` (vectorized over ``a`` and ``b``)."""
        return self._cumulative(b) - self._cumulative(a)

    def _cumulative(self, t):
        t = np.asarray(t, dtype=np.float64)
        bp = self.breakpoints
        seg = np.diff(bp)
        seg_vals = self.values[:-1] * seg.reshape((-1,) + (1,) * (self.values.ndim - 1))
        cum = np.concatenate([np.zeros((1,) + self.value_shape), np.cumsum(seg_vals, axis=0)])
        k = np.maximum(np.searchsorted(bp, t, side="right") - 1, 0)
        dt = (t - bp[k]).reshape(t.shape + (1,) * len(self.value_shape))
        return cum[k] + self.values[k] * dt

    def map(self, fn):
        return CoefficientSchedule(self.breakpoints, np.array([fn(v) for v in self.values]))

    def to_dict(self):
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    def __eq__(self, other):
        if not isinstance(other, CoefficientSchedule):
            return NotImplemented
        return np.array_equal(self.breakpoints, other.breakpoints) and np.array_equal(self.values, other.values)

    __hash__ = None


def merge_schedules(*schedules):
    """Re-express schedules on the union of their breakpoints."""
    bp = np.unique(np.concatenate([s.breakpoints for s in schedules]))
    return bp, [CoefficientSchedule(bp, s.at(bp)) for s in schedules]


def coefficient_at(schedule, t, T=None):
    """Evaluate ``schedule`` at ``t``, rejecting times outside ``[0, T]``."""
    t = float(t)
    if not math.isfinite(t) or t < 0.0 or (T is not None and t > T):
        raise DomainError(f"time {t} outside [0, {T if T is not None else 'inf'}]")
    return schedule.at(t)


def _pair_schedule(sched):
    return sched.values.ndim == 2 and sched.values.shape[1] == 2


# -------------------------------------------------------------------- market


@dataclass(frozen=True)
class Coefficients:
    """Snapshot of every market coefficient at one time."""

    rD: float
    rf_m: float
    rf_p: float
    rr_m: float
    rr_p: float
    rcol_m: float
    rcol_p: float
    h1: float
    h2: float
    sigma: np.ndarray
    sigma_I: np.ndarray
    sigma_C: np.ndarray
    sinv1: np.ndarray

    @property
    def rf0(self):
        return 0.5 * (self.rf_m + self.rf_p)

    @property
    def eps_f(self):
        return 0.5 * (self.rf_m - self.rf_p)

    @property
    def rr0(self):
        return 0.5 * (self.rr_m + self.rr_p)

    @property
    def eps_r(self):
        return 0.5 * (self.rr_m - self.rr_p)

    @property
    def kI(self):
        """``sigma_I . sigma^{-1} 1``."""
        return float(self.sigma_I @ self.sinv1)

    @property
    def kC(self):
        return float(self.sigma_C @ self.sinv1)

    @property
    def discount_R(self):
        """Discount rate of the closed-form zeroth-order decomposition."""
        return (
            self.rD
            - (self.rf0 - self.rD)
            + (self.rr0 - self.rD) * (self.kI + self.kC)
            + self.h1
            + self.h2
        )


@dataclass(frozen=True, eq=False)
class MarketSpec:
    n: int
    r_D: CoefficientSchedule
    r_f: CoefficientSchedule
    r_r: CoefficientSchedule
    r_col: CoefficientSchedule
    h1: CoefficientSchedule
    h2: CoefficientSchedule
    sigma: CoefficientSchedule
    sigma_I: CoefficientSchedule
    sigma_C: CoefficientSchedule
    S0: np.ndarray
    PI0: float = 1.0
    PC0: float = 1.0
    alpha: float = 1.0
    sigma_threshold: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "S0", _frozen(np.atleast_1d(self.S0)))
        n = self.n
        if n < 1:
            raise ConfigError("asset count n must be at least 1")
        for name in ("r_D", "h1", "h2"):
            if getattr(self, name).value_shape != ():
                raise ConfigError(f"{name} must be a scalar schedule")
        for name in ("r_f", "r_r", "r_col"):
            if not _pair_schedule(getattr(self, name)):
                raise ConfigError(f"{name} must hold (r_minus, r_plus) pairs")
        if self.sigma.value_shape != (n, n):
            raise ConfigError(f"sigma values must be {n}x{n} matrices")
        for name in ("sigma_I", "sigma_C"):
            if getattr(self, name).value_shape != (n,):
                raise ConfigError(f"{name} values must be rows of length {n}")
        if self.S0.shape != (n,):
            raise ConfigError(f"S0 must have {n} entries")

    def schedules(self):
        return {f: getattr(self, f) for f in
                ("r_D", "r_f", "r_r", "r_col", "h1", "h2", "sigma", "sigma_I", "sigma_C")}

    def breakpoints(self, T=None):
        bp = np.unique(np.concatenate([s.breakpoints for s in self.schedules().values()]))
        if T is not None:
            bp = bp[bp < T]
        return bp

    @property
    def is_constant(self):
        return all(s.is_constant for s in self.schedules().values())

    def coefficients(self, t, require_invertible=True):
        sigma = np.asarray(self.sigma.at(t))
        rf, rr, rc = self.r_f.at(t), self.r_r.at(t), self.r_col.at(t)
        sinv1 = np.full(self.n, np.nan)
        if require_invertible:
            if _min_singular(sigma) <= self.sigma_threshold:
                raise NumericError(f"sigma not invertible at t={float(t):g}")
            sinv1 = np.linalg.solve(sigma, np.ones(self.n))
        return Coefficients(
            rD=float(self.r_D.at(t)),
            rf_m=float(rf[0]), rf_p=float(rf[1]),
            rr_m=float(rr[0]), rr_p=float(rr[1]),
            rcol_m=float(rc[0]), rcol_p=float(rc[1]),
            h1=float(self.h1.at(t)), h2=float(self.h2.at(t)),
            sigma=sigma,
            sigma_I=np.asarray(self.sigma_I.at(t)),
            sigma_C=np.asarray(self.sigma_C.at(t)),
            sinv1=sinv1,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_spreads(self, eps_f, eps_r):
        """Same mid rates with funding and repo half-spreads set to the given values."""
        def respread(sched, eps):
            mid = sched.values.mean(axis=1)
            return CoefficientSchedule(sched.breakpoints, np.stack([mid + eps, mid - eps], axis=1))

        return self.replace(r_f=respread(self.r_f, eps_f), r_r=respread(self.r_r, eps_r))

    def to_dict(self):
        d = {k: v.to_dict() for k, v in self.schedules().items()}
        d.update(n=self.n, S0=self.S0.tolist(), PI0=self.PI0, PC0=self.PC0, alpha=self.alpha,
                 sigma_threshold=self.sigma_threshold)
        return d

    def __eq__(self, other):
        if not isinstance(other, MarketSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _min_singular(m):
    return float(np.linalg.svd(np.atleast_2d(m), compute_uv=False).min())


def R_schedule(market):
    """Discount rate schedule used by the zeroth-order decomposition."""
    bp = market.breakpoints()
    return CoefficientSchedule(bp, np.array([market.coefficients(t).discount_R for t in bp]))


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    flag_44: bool = True

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"valid": self.ok, "violations": list(self.violations), "flag_44": self.flag_44}


def validate_market(spec):
    """List every violated constraint; never raises."""
    report = ValidationReport()
    v = report.violations
    for t in spec.breakpoints():
        rf, rr, rc = spec.r_f.at(t), spec.r_r.at(t), spec.r_col.at(t)
        if rf[0] < rf[1]:
            v.append(f"funding spread negative at t={t:g} [19f]: r_f^- {rf[0]:g} < r_f^+ {rf[1]:g}")
        if rr[0] < rr[1]:
            v.append(f"repo spread negative at t={t:g} [19r]: r_r^- {rr[0]:g} < r_r^+ {rr[1]:g}")
        if rc[0] < rc[1]:
            report.flag_44 = False
        for name in ("h1", "h2"):
            h = float(getattr(spec, name).at(t))
            if h < 0:
                v.append(f"hazard {name} negative at t={t:g}: {h:g}")
        sv = _min_singular(spec.sigma.at(t))
        if sv <= spec.sigma_threshold:
            v.append(f"sigma not invertible at t={t:g} (smallest singular value {sv:.3g})")
    if not 0.0 <= spec.alpha <= 1.0:
        v.append(f"alpha {spec.alpha:g} outside [0, 1]")
    if np.any(spec.S0 <= 0):
        v.append("initial prices S0 must be positive")
    if spec.PI0 <= 0 or spec.PC0 <= 0:
        v.append("initial bond prices PI0, PC0 must be positive")
    return report


def require_valid(spec, allow_singular_sigma=False):
    report = validate_market(spec)
    problems = [m for m in report.violations if not (allow_singular_sigma and m.startswith("sigma not invertible"))]
    if problems:
        raise ConfigError("invalid market: " + "; ".join(problems))
    return report


# ------------------------------------------------------------------- payoffs


@dataclass(frozen=True)
class _Payoff:
    kind: ClassVar[str] = ""
    analytic: ClassVar[bool] = True

    def scaled(self, k):
        return dataclasses.replace(self, notional=self.notional * k)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["type"] = self.kind
        return d

    def check(self, n):
        for k, val in dataclasses.asdict(self).items():
            if not np.all(np.isfinite(val)):
                raise ConfigError(f"payoff parameter {k} must be finite")


@dataclass(frozen=True)
class Call(_Payoff):
    strike: float
    notional: float = 1.0
    asset: int = 0
    kind: ClassVar[str] = "call"

    def __call__(self, s):
        return self.notional * np.maximum(s[..., self.asset] - self.strike, 0.0)


@dataclass(frozen=True)
class Put(_Payoff):
    strike: float
    notional: float = 1.0
    asset: int = 0
    kind: ClassVar[str] = "put"

    def __call__(self, s):
        return self.notional * np.maximum(self.strike - s[..., self.asset], 0.0)


@dataclass(frozen=True)
class Forward(_Payoff):
    strike: float
    notional: float = 1.0
    asset: int = 0
    kind: ClassVar[str] = "forward"

    def __call__(self, s):
        return self.notional * (s[..., self.asset] - self.strike)


@dataclass(frozen=True)
class Constant(_Payoff):
    value: float
    notional: float = 1.0
    kind: ClassVar[str] = "constant"

    def __call__(self, s):
        return np.full(np.shape(s)[:-1], self.notional * self.value)


@dataclass(frozen=True)
class Basket(_Payoff):
    weights: tuple
    strike: float
    notional: float = 1.0
    kind: ClassVar[str] = "basket"
    analytic: ClassVar[bool] = False

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in np.atleast_1d(self.weights)))

    def __call__(self, s):
        return self.notional * np.maximum(s @ np.asarray(self.weights) - self.strike, 0.0)

    def check(self, n):
        super().check(n)
        if len(self.weights) != n:
            raise ConfigError(f"basket has {len(self.weights)} weights but market has {n} assets")


PAYOFFS = {p.kind: p for p in (Call, Put, Forward, Constant, Basket)}


def payoff_eval(payoff, s_T):
    """Terminal payoff; ``s_T`` is a scalar or an array with trailing asset axis."""
    s = np.asarray(s_T, dtype=np.float64)
    if s.ndim == 0:
        s = s[None]
    out = payoff(s)
    return float(out) if np.ndim(out) == 0 else out


def payoff_from_dict(d):
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in PAYOFFS:
        raise ConfigError(f"unknown payoff type {kind!r}; expected one of {sorted(PAYOFFS)}")
    cls = PAYOFFS[kind]
    if kind == "constant" and "value" not in d and "strike" in d:
        d["value"] = d.pop("strike")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(d) - names
    if extra:
        raise ConfigError(f"unknown {kind} payoff fields: {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} payoff: {exc}") from None


# ------------------------------------------------------------------ contract


@dataclass(frozen=True)
class CloseoutSpec:
    L_I: float = 0.0
    L_C: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        for name in ("L_I", "L_C", "alpha"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ConfigError(f"closeout {name}={val} outside [0, 1]")


def closeout_eval(closeout, v):
    """Close-out amounts ``(phi1, phi2)`` on default of the hedger / the counterparty."""
    v = np.asarray(v, dtype=np.float64)
    exposure = v - closeout.alpha * v
    phi1 = v - closeout.L_I * np.maximum(exposure, 0.0)
    phi2 = v + closeout.L_C * np.maximum(-exposure, 0.0)
    if phi1.ndim == 0:
        return float(phi1), float(phi2)
    return phi1, phi2


@dataclass(frozen=True)
class ContractSpec:
    T: float
    payoff: _Payoff
    closeout: CloseoutSpec = CloseoutSpec()

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"maturity T={self.T} must be positive")

    def scaled(self, k):
        return dataclasses.replace(self, payoff=self.payoff.scaled(k))

    def to_dict(self):
        return {"T": self.T, "payoff": self.payoff.to_dict(), "closeout": dataclasses.asdict(self.closeout)}


def check_consistent(market, contract):
    """Cross-object checks between a market and a contract."""
    contract.payoff.check(market.n)
    asset = getattr(contract.payoff, "asset", 0)
    if not 0 <= asset < market.n:
        raise ConfigError(f"payoff asset index {asset} out of range for n={market.n}")
    if abs(market.alpha - contract.closeout.alpha) > 0:
        raise ConfigError(
            f"collateral level differs between market ({market.alpha}) and closeout ({contract.closeout.alpha})"
        )


# ------------------------------------------------------------------ numerics


@dataclass(frozen=True)
class PdeConfig:
    n_space: int = 400
    x_width: float | None = None
    theta: float = 0.5
    n_time: int | None = None
    rannacher_steps: int = 2

    def __post_init__(self):
        if self.n_space < 2:
            raise ConfigError("pde.n_space must be at least 2")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("pde.theta must lie in [0, 1]")
        if self.x_width is not None and not self.x_width > 0:
            raise ConfigError("pde.x_width must be positive")
        if self.n_time is not None and self.n_time < 2:
            raise ConfigError("pde.n_time must be at least 2")
        if self.rannacher_steps < 0:
            raise ConfigError("pde.rannacher_steps must be nonnegative")


@dataclass(frozen=True)
class NumericsConfig:
    n_steps: int = 100
    n_paths: int = 10000
    basis_degree: int = 2
    picard_iters: int = 5
    picard_tol: float = 1e-12
    seed: int = 12345
    norm_beta: float = 0.0
    pde: PdeConfig = PdeConfig()
    workers: int = 1
    quadrature: str = "trapezoid"

    def __post_init__(self):
        if isinstance(self.pde, dict):
            object.__setattr__(self, "pde", PdeConfig(**self.pde))
        if self.n_steps < 2:
            raise ConfigError("n_steps must be at least 2")
        if self.n_paths < 2:
            raise ConfigError("n_paths must be at least 2")
        if self.picard_iters < 1:
            raise ConfigError("picard_iters must be at least 1")
        if self.basis_degree < 0:
            raise ConfigError("basis_degree must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.quadrature not in ("trapezoid", "simpson"):
            raise ConfigError("quadrature must be 'trapezoid' or 'simpson'")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


def numerics_from_dict(d):
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(NumericsConfig)}
    extra = set(d) - names
    if extra:
        raise ConfigError(f"unknown numerics fields: {sorted(extra)}")
    if "pde" in d:
        pde = dict(d["pde"])
        extra = set(pde) - {f.name for f in dataclasses.fields(PdeConfig)}
        if extra:
            raise ConfigError(f"unknown numerics.pde fields: {sorted(extra)}")
        d["pde"] = PdeConfig(**pde)
    return NumericsConfig(**d)


# ---------------------------------------------------------------------- JSON


def _schedule_from(value, kind, n=1):
    """Build a schedule from JSON; plain values are shorthand for a constant."""
    if isinstance(value, dict) and "breakpoints" in value:
        vals = [_value_from(v, kind, n) for v in value["values"]]
        return CoefficientSchedule(np.asarray(value["breakpoints"], dtype=float), np.array(vals))
    return CoefficientSchedule.constant(_value_from(value, kind, n))


def _value_from(v, kind, n):
    try:
        if kind == "pair":
            if isinstance(v, dict):
                return np.array([float(v["r_minus"]), float(v["r_plus"])])
            a = np.asarray(v, dtype=float)
            if a.shape != (2,):
                raise ConfigError("rate pair must be [r_minus, r_plus]")
            return a
        a = np.asarray(v, dtype=float)
        if kind == "matrix":
            return a.reshape(n, n) if a.size == n * n else np.broadcast_to(a, (n, n)).copy()
        if kind == "row":
            return np.broadcast_to(a, (n,)).copy()
        if a.ndim != 0:
            raise ConfigError("expected a scalar rate")
        return a
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad coefficient value {v!r}: {exc}") from None


_MARKET_KINDS = {
    "r_D": "scalar", "r_f": "pair", "r_r": "pair", "r_col": "pair",
    "h1": "scalar", "h2": "scalar", "sigma": "matrix", "sigma_I": "row", "sigma_C": "row",
}


def market_from_dict(d):
    d = dict(d)
    n = int(d.get("n", 1))
    missing = [k for k in _MARKET_KINDS if k not in d] + (["S0"] if "S0" not in d else [])
    if missing:
        raise ConfigError(f"market is missing fields: {missing}")
    extra = set(d) - set(_MARKET_KINDS) - {"n", "S0", "PI0", "PC0", "alpha", "sigma_threshold"}
    if extra:
        raise ConfigError(f"unknown market fields: {sorted(extra)}")
    kw = {k: _schedule_from(d[k], kind, n) for k, kind in _MARKET_KINDS.items()}
    for k in ("PI0", "PC0", "alpha", "sigma_threshold"):
        if k in d:
            kw[k] = float(d[k])
    return MarketSpec(n=n, S0=np.broadcast_to(np.asarray(d["S0"], dtype=float), (n,)), **kw)


def contract_from_dict(d):
    d = dict(d)
    if "T" not in d or "payoff" not in d:
        raise ConfigError("contract needs T and payoff")
    co = d.get("closeout", {})
    try:
        closeout = CloseoutSpec(**co)
    except TypeError as exc:
        raise ConfigError(f"bad closeout: {exc}") from None
    return ContractSpec(T=float(d["T"]), payoff=payoff_from_dict(d["payoff"]), closeout=closeout)


# ------------------------------------------------------------------ fixtures


def reference_market(n=1, **overrides):
    """Reference desk constants satisfying every no-arbitrage condition."""
    if n != 1:
        raise ConfigError("reference market is defined for one asset")
    kw = dict(
        n=1,
        r_D=CoefficientSchedule.constant(0.01),
        r_f=CoefficientSchedule.constant([0.035, 0.025]),
        r_r=CoefficientSchedule.constant([0.025, 0.015]),
        r_col=CoefficientSchedule.constant([0.012, 0.008]),
        h1=CoefficientSchedule.constant(0.05),
        h2=CoefficientSchedule.constant(0.10),
        sigma=CoefficientSchedule.constant([[0.2]]),
        sigma_I=CoefficientSchedule.constant([0.1]),
        sigma_C=CoefficientSchedule.constant([0.15]),
        S0=np.array([100.0]),
        PI0=1.0,
        PC0=1.0,
        alpha=1.0,
    )
    kw.update(overrides)
    return MarketSpec(**kw)


def one_rate_market(r=0.02, sigma=0.2, h1=0.05, h2=0.10, S0=100.0, sigma_I=0.1, sigma_C=0.15, alpha=1.0):
    """Every rate pair collapsed onto ``r``."""
    c = CoefficientSchedule.constant
    return MarketSpec(
        n=1, r_D=c(r), r_f=c([r, r]), r_r=c([r, r]), r_col=c([r, r]),
        h1=c(h1), h2=c(h2), sigma=c([[sigma]]), sigma_I=c([sigma_I]), sigma_C=c([sigma_C]),
        S0=np.array([S0]), alpha=alpha,
    )


def reference_contract(payoff=None, T=1.0, L_I=0.5, L_C=0.5, alpha=1.0):
    return ContractSpec(T=T, payoff=payoff or Call(100.0), closeout=CloseoutSpec(L_I, L_C, alpha))
