"""Explicit trinomial dynamic programming for the stopping problem with a transfer.

This is the independent check on everything Monte Carlo: it only uses the
coefficients, ``f``, ``g`` and the transfer, never the simulators.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import stats

from .barrier import Barrier
from .model import Problem, make_problem, Constant
from .paths import PreconditionError, TimeGrid, terminal_states
from .transfer import MCConfig, TransferCurve


class StabilityError(ValueError):
    pass


class StructureError(ValueError):
    """The stopping region is not an up-set in ``x`` at some time."""


@dataclass(frozen=True)
class Lattice:
    dt: float
    dx: float
    x_min: float
    x_max: float
    horizon: float = 1.0

    @property
    def times(self) -> np.ndarray:
        n = int(round(self.horizon / self.dt))
        return np.linspace(0.0, self.horizon, n + 1)

    @property
    def states(self) -> np.ndarray:
        m = int(round((self.x_max - self.x_min) / self.dx))
        return self.x_min + self.dx * np.arange(m + 1)

    @classmethod
    def build(cls, p: Problem, dt, dx, x_min, x_max) -> "Lattice":
        """Construct and check the explicit-scheme stability condition."""
        if abs(round(p.horizon / dt) * dt - p.horizon) > 1e-9 * p.horizon:
            raise ValueError("dt must divide the horizon")
        lat = cls(dt, dx, x_min, x_max, p.horizon)
        _, pm, pu, pd = _weights_all(p, lat)
        bad = (pm < -1e-12) | (pu < -1e-12) | (pd < -1e-12)
        if np.any(bad):
            k, j = np.unravel_index(np.argmax(bad), bad.shape)
            t, x = lat.times[k], lat.states[j]
            ratio = float(p.sigma(t, np.float64(x)) ** 2 * dt / dx**2)
            raise StabilityError(f"unstable lattice at t={t:.6g}, x={x:.6g}: "
                                 f"sigma^2 dt/dx^2 = {ratio:.4g}")
        return lat

    @classmethod
    def around(cls, p: Problem, dt, dx, lo, hi, n_std=6.0) -> "Lattice":
        """Lattice covering ``[lo, hi]`` plus ``n_std`` diffusion standard deviations."""
        xs = np.linspace(lo - 10, hi + 10, 41)
        ts = np.linspace(0, p.horizon, 11)
        smax = max(float(np.max(np.abs(p.sigma(t, xs)))) for t in ts)
        mmax = max(float(np.max(np.abs(p.mu(t, xs)))) for t in ts)
        pad = n_std * smax * math.sqrt(p.horizon) + mmax * p.horizon
        x_min = dx * math.floor((lo - pad) / dx)
        x_max = dx * math.ceil((hi + pad) / dx)
        return cls.build(p, dt, dx, x_min, x_max)


def _row_weights(p, t, x, dt, dx):
    a = p.sigma(t, x) ** 2 * dt / dx**2
    c = p.mu(t, x) * dt / dx
    a = np.broadcast_to(a, x.shape)
    c = np.broadcast_to(c, x.shape)
    pu = 0.5 * (a + c * c + c)
    pd = 0.5 * (a + c * c - c)
    pm = 1.0 - a - c * c
    return pm, pu, pd


def _weights_all(p, lat):
    xs = lat.states
    rows = [_row_weights(p, t, xs, lat.dt, lat.dx) for t in lat.times[:-1]]
    pm = np.array([r[0] for r in rows])
    pu = np.array([r[1] for r in rows])
    pd = np.array([r[2] for r in rows])
    return None, pm, pu, pd


@dataclass
class ValueSurface:
    times: np.ndarray
    states: np.ndarray
    v: np.ndarray
    stop_value: np.ndarray
    stop_region: np.ndarray
    g: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "v", "stop"])
            for k, t in enumerate(self.times):
                for j, x in enumerate(self.states):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(self.v[k, j])),
                                int(self.stop_region[k, j])])


TransferLike = Union[TransferCurve, Callable, float, None]


def transfer_on(pi: TransferLike, times) -> np.ndarray:
    """Transfer values at ``times`` (``None`` means the zero transfer)."""
    times = np.asarray(times, dtype=float)
    if pi is None:
        return np.zeros_like(times)
    if isinstance(pi, (int, float)):
        return np.full_like(times, float(pi))
    return np.asarray(pi(times), dtype=float) * np.ones_like(times)


def _continuation(p, t, xs, dt, dx, nxt):
    pm, pu, pd = _row_weights(p, t, xs, dt, dx)
    cont = np.empty_like(nxt)
    cont[1:-1] = (pm[1:-1] * nxt[1:-1] + pu[1:-1] * nxt[2:] + pd[1:-1] * nxt[:-2])
    cont += p.payoff.f(t, xs) * dt
    return cont


def dp_value(p: Problem, pi: TransferLike, lat: Lattice, rel_tol: float = 1e-9) -> ValueSurface:
    """Backward induction ``v = max(g + pi, f dt + E v_next)``; edge rows stop."""
    ts, xs = lat.times, lat.states
    piv = transfer_on(pi, ts)
    n, m = len(ts), len(xs)
    v = np.empty((n, m))
    stopv = np.empty((n, m))
    g = np.empty((n, m))
    for k in range(n):
        g[k] = np.broadcast_to(p.payoff.g(ts[k], xs), (m,))
        stopv[k] = g[k] + piv[k]
    v[-1] = stopv[-1]
    for k in range(n - 2, -1, -1):
        cont = _continuation(p, ts[k], xs, lat.dt, lat.dx, v[k + 1])
        row = np.maximum(stopv[k], cont)
        row[0], row[-1] = stopv[k, 0], stopv[k, -1]
        v[k] = row
    stop = np.abs(v - stopv) <= rel_tol * np.maximum(1.0, np.abs(stopv))
    return ValueSurface(ts, xs, v, stopv, stop, g)


def forced_value(p: Problem, pi: TransferLike, lat: Lattice, b: Barrier) -> np.ndarray:
    """Value of stopping at the first lattice time with ``x >= b(t)``."""
    ts, xs = lat.times, lat.states
    piv = transfer_on(pi, ts)
    n, m = len(ts), len(xs)
    w = np.empty((n, m))
    w[-1] = p.payoff.g(ts[-1], xs) + piv[-1]
    for k in range(n - 2, -1, -1):
        stopv = p.payoff.g(ts[k], xs) + piv[k]
        cont = _continuation(p, ts[k], xs, lat.dt, lat.dx, w[k + 1])
        row = np.where(xs >= b.eval(ts[k]), stopv, cont)
        row[0], row[-1] = stopv[0], stopv[-1]
        w[k] = row
    return w


@dataclass
class ExtractedBoundary:
    barrier: Barrier
    degenerate: np.ndarray  # per lattice time: "", "all_stop" or "no_stop"


def extract_boundary(vs: ValueSurface, return_flags: bool = False):
    """Smallest interior stopping state per lattice time.

    The clamped edge rows are excluded.  Raises :class:`StructureError`
    when the interior stopping set is not ``[b, x_max]``.
    """
    xs = vs.states
    vals = np.empty(len(vs.times))
    flags = np.empty(len(vs.times), dtype=object)
    for k, t in enumerate(vs.times):
        inner = vs.stop_region[k, 1:-1]
        idx = np.flatnonzero(inner)
        flags[k] = ""
        if len(idx) == 0:
            vals[k] = xs[-1]
            flags[k] = "no_stop"
            continue
        j0 = idx[0]
        if not np.all(inner[j0:]):
            hole = j0 + np.flatnonzero(~inner[j0:])[0] + 1
            raise StructureError(f"stopping region at t={t:.6g} has a gap at x={xs[hole]:.6g}")
        if j0 == 0:
            vals[k] = xs[0]
            flags[k] = "all_stop"
        else:
            vals[k] = xs[j0 + 1]
    b = Barrier(vs.times, vals, interpolation="constant")
    return ExtractedBoundary(b, flags) if return_flags else b


@dataclass
class ImplementabilityReport:
    passed: bool
    worst_gap: float
    worst_node: tuple
    tol: float
    strict_passed: Optional[bool] = None
    strict_margin: Optional[float] = None
    details: dict = field(default_factory=dict)

    def summary(self) -> str:
        s = (f"implementability: {'PASS' if self.passed else 'FAIL'}\n"
             f"worst gap v - v_forced = {self.worst_gap:.6g} at (t, x) = "
             f"({self.worst_node[0]:.6g}, {self.worst_node[1]:.6g}); tol = {self.tol:.3g}")
        if self.strict_passed is not None:
            s += (f"\nstrict: {'PASS' if self.strict_passed else 'FAIL'} "
                  f"(min v - (g + pi) below the barrier = {self.strict_margin:.6g})")
        return s

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "worst_gap": self.worst_gap,
                           "worst_node": list(self.worst_node), "tol": self.tol,
                           "strict_passed": self.strict_passed,
                           "strict_margin": self.strict_margin, **self.details}, indent=2)


def check_implementability(p: Problem, b: Barrier, pi: TransferLike, lat: Lattice,
                           tol: float, strict: bool = False, strict_tol: float = 0.0,
                           window: Optional[tuple] = None) -> ImplementabilityReport:
    """Compare the optimal value with the value of stopping at the barrier.

    ``window`` restricts the reported gap to states in ``[lo, hi]``
    (default: the whole lattice).
    """
    vs = dp_value(p, pi, lat)
    w = forced_value(p, pi, lat, b)
    gap = vs.v - w
    xs = vs.states
    cols = np.ones(len(xs), dtype=bool)
    if window is not None:
        cols = (xs >= window[0]) & (xs <= window[1])
    g_sub = np.where(cols[None, :], gap, -np.inf)
    k, j = np.unravel_index(np.argmax(g_sub), g_sub.shape)
    worst = float(g_sub[k, j])
    rep = ImplementabilityReport(worst <= tol, worst, (float(vs.times[k]), float(xs[j])), tol)
    if strict:
        below = (xs[None, :] < b.eval(vs.times)[:, None]) & cols[None, :]
        below[:, 0] = below[:, -1] = False
        below[-1] = False
        margin = np.where(below, vs.v - vs.stop_value, np.inf)
        rep.strict_margin = float(np.min(margin))
        rep.strict_passed = rep.strict_margin > strict_tol
    return rep


# ---------------------------------------------------------------------------
# Reflection principle check
# ---------------------------------------------------------------------------


@dataclass
class CDFCheckReport:
    statistic: float
    critical: float
    passed: bool
    n: int
    ecdf_at_barrier: float
    model_at_barrier: float


def ks_critical(n: int, coefficient: float = 1.63) -> float:
    return coefficient / math.sqrt(n)


def reflection_cdf_check(sigma: float, b_const: float, t: float, s: float, cfg: MCConfig,
                         factor: float = 2.0) -> CDFCheckReport:
    """KS distance between simulated ``X~_s^{t,b}`` and ``factor * P[X_s^{t,b} <= x]``."""
    if not sigma > 0 or not s > t:
        raise PreconditionError("need sigma > 0 and s > t")
    p = make_problem(sigma=Constant(sigma), horizon=s)
    b = Barrier.constant(b_const, horizon=s, start=t)
    grid = TimeGrid.build(t, s, cfg.max_step)
    xs = terminal_states(p, b, t, b_const, grid, cfg.seed, cfg.n_paths, scheme=cfg.scheme)
    scale = sigma * math.sqrt(s - t)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < b_const, np.minimum(1.0, factor * stats.norm.cdf((x - b_const) / scale)),
                        1.0)

    d = float(stats.kstest(xs, cdf).statistic)
    crit = ks_critical(len(xs))
    return CDFCheckReport(d, crit, d <= crit, len(xs), float(np.mean(xs <= b_const)),
                          float(min(1.0, factor * 0.5)))
