"""Asset path simulation, default-time sampling and defaultable bond prices."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .model import require_valid

MEASURES = ("P", "P_tilde")
CHUNK = 4096
# RNG stream ids; one per independent source of randomness.
STREAM_ASSET = 0
STREAM_DEFAULT = 1
STREAM_EVAL_ASSET = 2
STREAM_EVAL_DEFAULT = 3


def effective_workers(requested=1):
    cap = os.environ.get("XVA_BSDE_THREADS")
    w = max(1, int(requested))
    if cap:
        try:
            w = min(w, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"XVA_BSDE_THREADS must be an integer, got {cap!r}") from None
    return w


@dataclass(frozen=True, eq=False)
class PathBatch:
    grid: np.ndarray
    s: np.ndarray
    dw: np.ndarray
    measure: str
    seed: int = 0
    stream: int = STREAM_ASSET

    @property
    def n_paths(self):
        return self.s.shape[0]

    @property
    def n_steps(self):
        return self.dw.shape[1]

    @property
    def n_assets(self):
        return self.s.shape[2]

    @property
    def dt(self):
        return np.diff(self.grid)


def time_grid(T, n_steps):
    return np.linspace(0.0, float(T), int(n_steps) + 1)


def _step_terms(market, grid, measure):
    """Per-step exact drift integrals, left-point volatilities and variance integrals."""
    t0, t1 = grid[:-1], grid[1:]
    if measure == "P":
        mu = market.r_D.integral(t0, t1)
    else:
        rr = market.r_r
        mu = 0.5 * (rr.integral(t0, t1)[:, 0] + rr.integral(t0, t1)[:, 1])
    sig = np.asarray(market.sigma.at(t0))  # (N, n, n)
    var = market.sigma.map(lambda m: np.einsum("ij,ij->i", m, m)).integral(t0, t1)  # (N, n)
    return mu, sig, var


def brownian_increments(seed, stream, path_start, n_paths, grid, n):
    z = kernels.normals(seed, stream, path_start, n_paths, (len(grid) - 1) * n)
    z = z.reshape(n_paths, len(grid) - 1, n)
    return z * np.sqrt(np.diff(grid))[None, :, None]


def simulate_asset_paths(market, T, num, measure="P", stream=STREAM_ASSET):
    """Exact lognormal paths on a uniform grid.

    Paths are generated in fixed chunks; the random numbers of a path depend
    only on ``(seed, stream, path index)``, so the result does not depend on
    the number of workers.
    """
    if measure not in MEASURES:
        raise ConfigError(f"measure must be one of {MEASURES}, got {measure!r}")
    require_valid(market, allow_singular_sigma=True)
    if not T > 0:
        raise ConfigError("T must be positive")
    grid = time_grid(T, num.n_steps)
    mu, sig, var = _step_terms(market, grid, measure)
    n, P, N = market.n, num.n_paths, num.n_steps
    log_s0 = np.log(market.S0)
    s = np.empty((P, N + 1, n))
    dw = np.empty((P, N, n))

    def run(start):
        stop = min(start + CHUNK, P)
        inc = brownian_increments(num.seed, stream, start, stop - start, grid, n)
        shock = np.einsum("tij,ptj->pti", sig, inc)
        logs = log_s0 + np.cumsum(shock + (mu[:, None] - 0.5 * var)[None], axis=1)
        dw[start:stop] = inc
        s[start:stop, 0] = market.S0
        s[start:stop, 1:] = np.exp(logs)

    starts = range(0, P, CHUNK)
    workers = effective_workers(num.workers)
    if workers == 1 or P <= CHUNK:
        for st in starts:
            run(st)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, starts))
    s.setflags(write=False)
    dw.setflags(write=False)
    return PathBatch(grid=grid, s=s, dw=dw, measure=measure, seed=num.seed, stream=stream)


# ---------------------------------------------------------------- defaults


@dataclass(frozen=True, eq=False)
class DefaultSample:
    """Default times of both parties; ``np.inf`` means no default before the horizon."""

    tau1: np.ndarray
    tau2: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    def __len__(self):
        return len(self.tau1)

    def __getitem__(self, i):
        return DefaultSample(self.tau1[i], self.tau2[i], self.e1[i], self.e2[i])


def invert_hazard(schedule, e, horizon):
    """``inf{t : int_0^t h >= e}``, or ``inf`` when that exceeds ``horizon``."""
    e = np.asarray(e, dtype=np.float64)
    bp = schedule.breakpoints[schedule.breakpoints < horizon]
    h = schedule.values[: len(bp)]
    cum = schedule.integral(0.0, bp)
    total = schedule.integral(0.0, horizon)
    k = np.clip(np.searchsorted(cum, e, side="left") - 1, 0, len(bp) - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = bp[k] + (e - cum[k]) / h[k]
    tau = np.where(e <= 0, 0.0, tau)
    return np.where(e > total, np.inf, tau)


def sample_default_times(market, horizon, n_samples, seed, stream=STREAM_DEFAULT):
    """Exact default times by inversion of the cumulative hazards."""
    if np.any(market.h1.values < 0) or np.any(market.h2.values < 0):
        raise ConfigError("hazard rates must be nonnegative")
    u = kernels.uniforms(seed, stream, 0, n_samples, 2)
    e = -np.log(u)
    e1, e2 = e[:, 0], e[:, 1]
    return DefaultSample(
        tau1=invert_hazard(market.h1, e1, horizon),
        tau2=invert_hazard(market.h2, e2, horizon),
        e1=e1,
        e2=e2,
    )


def defaultable_bond_paths(market, batch, defaults):
    """Bond prices of the hedger (``P_I``) and counterparty (``P_C``), zero from default on."""
    if batch.measure != "P":
        raise ConfigError("defaultable bond paths need paths simulated under P")
    grid = batch.grid
    t0, t1 = grid[:-1], grid[1:]
    out = []
    for p0, h, sig, tau in (
        (market.PI0, market.h1, market.sigma_I, defaults.tau1),
        (market.PC0, market.h2, market.sigma_C, defaults.tau2),
    ):
        vol = np.asarray(sig.at(t0))  # (N, n)
        drift = (
            market.r_D.integral(t0, t1)
            + h.integral(t0, t1)
            - 0.5 * sig.map(lambda r: float(r @ r)).integral(t0, t1)
        )
        incr = np.einsum("tj,ptj->pt", vol, batch.dw) + drift[None]
        logp = np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(incr, axis=1)], axis=1)
        alive = grid[None, :] < np.asarray(tau)[:, None]
        out.append(p0 * np.exp(logp) * alive)
    return out[0], out[1]


def girsanov_density(market, batch):
    """Density process turning the P drift ``r_D`` into the repo drift ``r_r^0``."""
    if batch.measure != "P":
        raise ConfigError("the density is defined for paths simulated under P")
    t0 = batch.grid[:-1]
    theta = np.empty((len(t0), market.n))
    for i, t in enumerate(t0):
        c = market.coefficients(t)
        theta[i] = (c.rr0 - c.rD) * c.sinv1
    dt = np.diff(batch.grid)
    incr = np.einsum("tj,ptj->pt", theta, batch.dw) - 0.5 * (theta**2).sum(axis=1)[None] * dt[None]
    return np.exp(np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(incr, axis=1)], axis=1))


def write_paths_csv(batch, fp, max_paths=None):
    """Debug dump with columns ``path_id, t, S_1..S_n``."""
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["path_id", "t"] + [f"S_{j + 1}" for j in range(batch.n_assets)])
    P = batch.n_paths if max_paths is None else min(max_paths, batch.n_paths)
    for p in range(P):
        for i, t in enumerate(batch.grid):
            w.writerow([p, repr(float(t))] + [repr(float(x)) for x in batch.s[p, i]])
