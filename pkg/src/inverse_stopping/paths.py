"""Euler simulation of the diffusion and its reflection below a barrier.

Two reflection schemes are available:

``projection``
    ``X~_{k+1} = min(X~_k + mu dt + sigma dW, b(t_{k+1}))``.  The regulator
    only sees the grid, so it is exactly the running-max formula applied to
    the discrete path.
``bridge``
    Coefficients are frozen over a step and the maximum of the Brownian
    bridge between the two grid values is sampled, so the regulator also
    catches excursions above the barrier between grid points.  For
    Brownian motion with a piecewise-linear barrier this is exact in law at
    the grid points.  It needs one extra uniform per step.

Noise is organised in blocks of :data:`BLOCK` paths; block ``j`` of a seed
uses its own ``SeedSequence([seed, j, kind])``, so the increments of path
``i`` are a pure function of ``(seed, i, grid)``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .barrier import Barrier
from .model import Problem, generator_payoff_unchecked

BLOCK = 8192
SCHEMES = ("projection", "bridge")
_NORMAL, _UNIFORM = 0, 1
_SEED_MASK = (1 << 64) - 1


class SimulationError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Grids and noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 1 or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def build(cls, t_start, t_end, max_step, knots=()):
        """Grid from ``t_start`` to ``t_end`` containing every knot in between.

        Each interval between consecutive mandatory points is split into
        the fewest equal steps not longer than ``max_step``.
        """
        if max_step <= 0:
            raise ValueError("max_step must be positive")
        if t_end < t_start:
            raise ValueError("t_end before t_start")
        knots = np.asarray(knots, dtype=float)
        inner = knots[(knots > t_start) & (knots < t_end)]
        anchors = np.unique(np.concatenate([[t_start], inner, [t_end]]))
        pieces = [anchors[:1]]
        for a, b in zip(anchors[:-1], anchors[1:]):
            n = max(1, int(math.ceil((b - a) / max_step - 1e-9)))
            seg = np.linspace(a, b, n + 1)[1:]
            seg[-1] = b
            pieces.append(seg)
        return cls(np.concatenate(pieces))

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def n_steps(self) -> int:
        return len(self.points) - 1

    @property
    def t_start(self) -> float:
        return float(self.points[0])

    @property
    def t_end(self) -> float:
        return float(self.points[-1])

    def index(self, t) -> int:
        k = int(np.searchsorted(self.points, t))
        if k >= len(self.points) or self.points[k] != t:
            raise ValueError(f"{t} is not a grid point")
        return k

    def tail(self, k: int) -> "TimeGrid":
        return TimeGrid(self.points[k:])

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    path_index: int = 0


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit sub-seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & _SEED_MASK, *[int(k) for k in keys]])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def _block_draws(seed, block, kind, rows, n_steps):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & _SEED_MASK, block, kind]))
    if kind == _NORMAL:
        return rng.standard_normal((rows, n_steps))
    return rng.random((rows, n_steps))


def draws(seed: int, n_steps: int, first: int, count: int, kind: int = _NORMAL) -> np.ndarray:
    """Draws for paths ``first .. first+count-1`` as an ``(n_steps, count)`` array.

    Rows within a block are generated in order, so asking for a prefix of
    a block yields the same numbers as generating the whole block.
    """
    out = np.empty((n_steps, count))
    i = first
    end = first + count
    while i < end:
        blk, row = divmod(i, BLOCK)
        stop = min(end, (blk + 1) * BLOCK)
        z = _block_draws(seed, blk, kind, stop - blk * BLOCK, n_steps)
        out[:, i - first:stop - first] = z[row:].T
        i = stop
    return out


def brownian_increments(grid: TimeGrid, stream: NoiseStream) -> np.ndarray:
    z = draws(stream.seed, grid.n_steps, stream.path_index, 1)[:, 0]
    return z * np.sqrt(grid.dt)


def bridge_uniforms(grid: TimeGrid, stream: NoiseStream) -> np.ndarray:
    return draws(stream.seed, grid.n_steps, stream.path_index, 1, _UNIFORM)[:, 0]


# ---------------------------------------------------------------------------
# Stepping kernels (vectorised over paths)
# ---------------------------------------------------------------------------


def _euler_step(p, t, dt, x, dw):
    return x + p.mu(t, x) * dt + p.sigma(t, x) * dw


def _reflect_step(p, t, dt, x, dw, u, b_start, b_end_left, b_end, scheme):
    """One reflected step; returns ``(new_state, regulator_increment, pre_projection)``."""
    drift = p.mu(t, x) * dt
    sig = p.sigma(t, x)
    pre = x + drift + sig * dw  # same operation order as _euler_step
    incr = drift + sig * dw
    if scheme == "bridge":
        # excursion of X - b over the step, barrier linear from b_start to b_end_left
        y = incr - (b_end_left - b_start)
        m = 0.5 * (y + np.sqrt(y * y - 2.0 * sig * sig * dt * np.log1p(-u)))
        inside = np.maximum(0.0, x - b_start + m)
        mid = pre - inside
        new = np.minimum(mid, b_end)
        return new, inside + (mid - new), mid
    new = np.minimum(pre, b_end)
    return new, pre - new, pre


def _check_finite(x, k, t):
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"non-finite state at step {k} (t={t})")


# ---------------------------------------------------------------------------
# Single-path API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReflectedPath:
    grid: TimeGrid
    x: np.ndarray
    x_refl: np.ndarray
    l: np.ndarray
    tau_b: float
    barrier_values: np.ndarray
    pre: np.ndarray  # value before the final clip at each grid point (x_refl[0] at k=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "x_refl", "l"])
            for row in zip(self.grid.points, self.x, self.x_refl, self.l):
                w.writerow([repr(float(v)) for v in row])


def _resolve_increments(grid, stream, increments):
    if increments is not None:
        dw = np.asarray(increments, dtype=float)
        if dw.shape != (grid.n_steps,):
            raise ValueError(f"expected {grid.n_steps} increments, got {dw.shape}")
        return dw
    if stream is None:
        raise ValueError("need a NoiseStream or explicit increments")
    return brownian_increments(grid, stream)


def simulate_unreflected(p: Problem, t0, x0, grid: TimeGrid, stream: Optional[NoiseStream] = None,
                         increments=None) -> np.ndarray:
    if grid.t_start != t0:
        raise PreconditionError("grid must start at t0")
    dw = _resolve_increments(grid, stream, increments)
    pts, dts = grid.points, grid.dt
    x = np.empty(len(pts))
    x[0] = x0
    for k in range(grid.n_steps):
        x[k + 1] = _euler_step(p, pts[k], dts[k], x[k], dw[k])
        if not math.isfinite(x[k + 1]):
            raise SimulationError(f"non-finite state at step {k + 1} (t={pts[k + 1]})")
    return x


def hitting_time(x_path, b: Barrier, grid: TimeGrid) -> float:
    """First grid time with ``x >= b(t)``; the grid end when there is none."""
    hit = np.flatnonzero(np.asarray(x_path) >= b.eval(grid.points))
    return float(grid.points[hit[0]]) if len(hit) else grid.t_end


def reflect(p: Problem, b: Barrier, t0, xi, grid: TimeGrid, stream: Optional[NoiseStream] = None,
            increments=None, uniforms=None, scheme: str = "projection") -> ReflectedPath:
    """Reflect the Euler path started at ``(t0, xi)`` below ``b``.

    The unreflected path is driven by the same increments and returned
    alongside.  ``increments``/``uniforms`` override the stream (hand traces,
    flow-property restarts).
    """
    dw = _resolve_increments(grid, stream, increments)
    if scheme == "bridge" and uniforms is None:
        if stream is None:
            raise ValueError("bridge scheme needs uniforms or a stream")
        uniforms = bridge_uniforms(grid, stream)
    u = None if uniforms is None else np.asarray(uniforms, dtype=float)[:, None]
    batch = reflect_many(p, b, t0, np.array([float(xi)]), grid, increments=dw[:, None],
                         uniforms=u, scheme=scheme)
    return batch.path(0)


@dataclass(frozen=True)
class ReflectedBatch:
    """Many reflected paths; arrays are ``(n_grid, n_paths)``."""

    grid: TimeGrid
    x: np.ndarray
    x_refl: np.ndarray
    l: np.ndarray
    pre: np.ndarray
    barrier_values: np.ndarray

    @property
    def tau_b(self) -> np.ndarray:
        hit = self.x >= self.barrier_values[:, None]
        first = np.where(hit.any(axis=0), hit.argmax(axis=0), len(self.grid) - 1)
        return self.grid.points[first]

    def path(self, i: int) -> ReflectedPath:
        return ReflectedPath(self.grid, self.x[:, i].copy(), self.x_refl[:, i].copy(),
                             self.l[:, i].copy(), float(self.tau_b[i]), self.barrier_values,
                             self.pre[:, i].copy())


def reflect_many(p: Problem, b: Barrier, t0, xi, grid: TimeGrid, seed: Optional[int] = None,
                 n_paths: Optional[int] = None, first_path: int = 0, increments=None,
                 uniforms=None, scheme: str = "projection") -> ReflectedBatch:
    """Vectorised :func:`reflect`.

    Path ``j`` uses ``NoiseStream(seed, first_path + j)``, so it matches the
    single-path call bit for bit.  Alternatively pass ``increments`` (and
    ``uniforms`` for the bridge scheme) as ``(n_steps, n_paths)`` arrays.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if grid.t_start != t0:
        raise PreconditionError("grid must start at t0")
    on_grid = set(grid.points.tolist())
    missing = [t for t in b.times if t0 < t < grid.t_end and t not in on_grid]
    if missing:
        raise PreconditionError(f"barrier knots {missing[:3]} are not grid points")
    if increments is None:
        if seed is None or n_paths is None:
            raise ValueError("need seed and n_paths, or explicit increments")
        dw = draws(seed, grid.n_steps, first_path, n_paths) * np.sqrt(grid.dt)[:, None]
        if scheme == "bridge":
            uniforms = draws(seed, grid.n_steps, first_path, n_paths, _UNIFORM)
    else:
        dw = np.asarray(increments, dtype=float)
        n_paths = dw.shape[1]
        if dw.shape[0] != grid.n_steps:
            raise ValueError(f"expected {grid.n_steps} increment rows, got {dw.shape[0]}")
        if scheme == "bridge" and uniforms is None:
            raise ValueError("bridge scheme needs uniforms")
    xi = np.broadcast_to(np.asarray(xi, dtype=float), (n_paths,))
    bvals = b.eval(grid.points)
    if np.any(xi > bvals[0]):
        raise PreconditionError(f"start value {float(np.max(xi))} exceeds barrier {bvals[0]} at t={t0}")
    blefts = b.eval_left(grid.points[1:]) if grid.n_steps else np.empty(0)
    pts, dts = grid.points, grid.dt
    n = len(pts)
    x = np.empty((n, n_paths))
    xr = np.empty((n, n_paths))
    l = np.zeros((n, n_paths))
    pre = np.empty((n, n_paths))
    x[0] = xr[0] = pre[0] = xi
    for k in range(grid.n_steps):
        x[k + 1] = _euler_step(p, pts[k], dts[k], x[k], dw[k])
        new, dl, before = _reflect_step(p, pts[k], dts[k], xr[k], dw[k],
                                        None if uniforms is None else uniforms[k],
                                        bvals[k], blefts[k], bvals[k + 1], scheme)
        xr[k + 1] = new
        pre[k + 1] = before
        l[k + 1] = l[k] + dl
        _check_finite(x[k + 1], k + 1, pts[k + 1])
        _check_finite(xr[k + 1], k + 1, pts[k + 1])
    return ReflectedBatch(grid, x, xr, l, pre, bvals)


def dump_paths(paths, out_dir, prefix="path") -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, rp in enumerate(paths):
        f = out_dir / f"{prefix}_{i:05d}.csv"
        rp.to_csv(f)
        files.append(f)
    return files


# ---------------------------------------------------------------------------
# Monte Carlo path integrals
# ---------------------------------------------------------------------------


def path_integrals(p: Problem, b: Optional[Barrier], t0, x0, grid: TimeGrid, seed: int,
                   n_paths: int, *, reflected=True, indicator=False, scheme="bridge",
                   integrand=None, workers: int = 1) -> np.ndarray:
    """Per-path trapezoidal integrals of ``h(s, X_s)`` over the grid.

    ``reflected=True`` integrates along the reflected path below ``b``;
    otherwise along the unreflected Euler path, optionally multiplied by
    ``1{X_s <= b(s)}`` (``indicator=True``).  With the indicator the start
    point sits on the barrier, where the indicator jumps, so the first
    interval uses its right endpoint only.

    ``x0`` may be a scalar or one value per path.  Paths are processed in
    noise blocks; ``workers`` threads share the blocks and the result does
    not depend on their number.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if grid.t_start != t0:
        raise PreconditionError("grid must start at t0")
    h = integrand or (lambda t, x: generator_payoff_unchecked(p, t, x))
    need_barrier = reflected or indicator
    if need_barrier:
        missing = [t for t in b.times if t0 < t < grid.t_end and not np.any(grid.points == t)]
        if missing:
            raise PreconditionError(f"barrier knots {missing[:3]} are not grid points")
        bvals = b.eval(grid.points)
        blefts = b.eval_left(grid.points[1:]) if grid.n_steps else np.empty(0)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,))
    if reflected and np.any(x0 > bvals[0]):
        raise PreconditionError(f"start value exceeds barrier {bvals[0]} at t={t0}")
    pts, dts = grid.points, grid.dt
    sq = np.sqrt(dts)
    use_u = reflected and scheme == "bridge"

    def run_block(first):
        cnt = min(BLOCK - first % BLOCK, n_paths - first)
        acc = np.zeros(cnt)
        if grid.n_steps == 0:
            return acc
        z = draws(seed, grid.n_steps, first, cnt)
        u = draws(seed, grid.n_steps, first, cnt, _UNIFORM) if use_u else None
        x = x0[first:first + cnt].copy()
        hv = np.broadcast_to(h(pts[0], x), x.shape)
        if indicator:
            hv = np.zeros(cnt)  # left-open first interval
        for k in range(grid.n_steps):
            t, dt = pts[k], dts[k]
            dw = z[k] * sq[k]
            if reflected:
                x, _, _ = _reflect_step(p, t, dt, x, dw, u[k] if use_u else None,
                                        bvals[k], blefts[k], bvals[k + 1], scheme)
            else:
                x = _euler_step(p, t, dt, x, dw)
            _check_finite(x, k + 1, pts[k + 1])
            hn = np.broadcast_to(h(pts[k + 1], x), x.shape)
            if indicator:
                hn = np.where(x <= bvals[k + 1], hn, 0.0)
                w = dt if k == 0 else 0.5 * dt
                acc += (w * hn) if k == 0 else w * (hv + hn)
            else:
                acc += 0.5 * dt * (hv + hn)
            hv = hn
        return acc

    starts = list(range(0, n_paths, BLOCK))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run_block, starts))
    else:
        parts = [run_block(s) for s in starts]
    out = np.concatenate(parts) if parts else np.empty(0)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite path integral")
    return out


def terminal_states(p: Problem, b: Barrier, t0, x0, grid: TimeGrid, seed: int, n_paths: int,
                    scheme="bridge", reflected=True) -> np.ndarray:
    """States at the grid end for ``n_paths`` paths (reflected by default)."""
    out = []
    bvals = b.eval(grid.points)
    blefts = b.eval_left(grid.points[1:]) if grid.n_steps else np.empty(0)
    if reflected and x0 > bvals[0]:
        raise PreconditionError("start value exceeds barrier")
    sq = np.sqrt(grid.dt)
    for first in range(0, n_paths, BLOCK):
        cnt = min(BLOCK, n_paths - first)
        z = draws(seed, grid.n_steps, first, cnt)
        u = draws(seed, grid.n_steps, first, cnt, _UNIFORM) if scheme == "bridge" else None
        x = np.full(cnt, float(x0))
        for k in range(grid.n_steps):
            t, dt = grid.points[k], grid.dt[k]
            if reflected:
                x, _, _ = _reflect_step(p, t, dt, x, z[k] * sq[k], None if u is None else u[k],
                                        bvals[k], blefts[k], bvals[k + 1], scheme)
            else:
                x = _euler_step(p, t, dt, x, z[k] * sq[k])
            _check_finite(x, k + 1, grid.points[k + 1])
        out.append(x)
    return np.concatenate(out)
