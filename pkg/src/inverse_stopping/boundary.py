"""Optimal stopping boundaries from the reflected integral equation.

A barrier ``b`` is optimal iff ``E[ integral_t^T h(s, X~_s^{t,b(t)}) ds ] = 0``
for every ``t``.  :func:`solve_boundary` finds it backwards in time, one
solver node at a time, by bisection on the Monte Carlo residual.  The
noise at a node is frozen (common random numbers), so the residual is a
deterministic, pathwise non-increasing function of the trial value.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .barrier import Barrier
from .model import Problem, check_single_crossing, generator_payoff
from .paths import PreconditionError, TimeGrid, derive_seed, path_integrals
from .transfer import MCConfig, simulation_grid

log = logging.getLogger(__name__)


class NoRootError(RuntimeError):
    """The residual does not change sign on the bracket."""

    def __init__(self, message, t=None, bracket=None, residuals=None):
        super().__init__(message)
        self.t = t
        self.bracket = bracket
        self.residuals = residuals


class DegenerateBracketError(NoRootError):
    """The residual vanishes on the whole bracket (every value is a root)."""


class NonMonotoneResidualError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResidualReport:
    t: float
    x: float
    residual: float
    stderr: float
    n_paths: int


@dataclass(frozen=True)
class SolverConfig:
    time_grid: tuple
    bracket: tuple = (-5.0, 5.0)
    tol_x: float = 1e-6
    cfg: MCConfig = MCConfig()
    max_bisections: int = 100
    residual_tol: float = 1e-12
    terminal_value: Optional[float] = None
    on_no_root: str = "raise"  # or "flag"
    crn: bool = True

    def __post_init__(self):
        lo, hi = self.bracket
        if not lo < hi:
            raise ValueError("bracket must satisfy x_lo < x_hi")
        if not self.tol_x > 0:
            raise ValueError("tol_x must be positive")
        if self.on_no_root not in ("raise", "flag"):
            raise ValueError("on_no_root must be 'raise' or 'flag'")
        grid = np.asarray(self.time_grid, dtype=float)
        if len(grid) < 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("solver grid must be increasing")


@dataclass
class NodeResult:
    t: float
    value: float
    report: Optional[ResidualReport]
    iterates: list = field(default_factory=list)  # (iterate, x, residual, stderr)
    flag: str = ""  # "", "no_sign_change_positive", "no_sign_change_negative", "degenerate"


@dataclass
class BoundarySolution:
    barrier: Barrier
    nodes: list
    hypotheses_violated: bool = False

    @property
    def reports(self) -> list:
        return [n.report for n in self.nodes]

    def audit_rows(self):
        for node in self.nodes:
            for it, x, r, se in node.iterates:
                yield node.t, it, x, r, se

    def write_audit(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "iterate", "x", "residual", "stderr"])
            for row in self.audit_rows():
                w.writerow([repr(float(row[0])), row[1], repr(float(row[2])),
                            repr(float(row[3])), repr(float(row[4]))])


def _mean_se(v):
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v)))


def reflected_residual(p: Problem, b_future: Barrier, t: float, x: float, cfg: MCConfig,
                       seed=None) -> ResidualReport:
    """``E[ integral_t^T h(s, X~_s^{t,x}) ds ]`` with reflection below ``b_future`` on ``(t, T]``."""
    if t >= p.horizon:
        return ResidualReport(t, x, 0.0, 0.0, cfg.n_paths)
    bt = b_future.restrict(t)
    cap = bt.eval(t)
    if x > cap:
        warnings.warn(f"start value {x} above barrier {cap} at t={t}; clipped", stacklevel=2)
        x = cap
    grid = simulation_grid(bt, t, cfg.max_step)
    seed = cfg.seed if seed is None else seed
    ints = path_integrals(p, bt, t, x, grid, seed, cfg.n_paths, scheme=cfg.scheme,
                          workers=cfg.workers)
    m, se = _mean_se(ints)
    return ResidualReport(t, x, m, se, cfg.n_paths)


def kjc_residual(p: Problem, b: Barrier, t: float, cfg: MCConfig, seed=None) -> ResidualReport:
    """``E[ integral_t^T h(s, X_s) 1{X_s <= b(s)} ds ]`` along unreflected paths from ``b(t)``."""
    x = b.eval(t)
    if t >= p.horizon:
        return ResidualReport(t, x, 0.0, 0.0, cfg.n_paths)
    grid = simulation_grid(b, t, cfg.max_step)
    seed = cfg.seed if seed is None else seed
    ints = path_integrals(p, b, t, x, grid, seed, cfg.n_paths, reflected=False, indicator=True,
                          workers=cfg.workers)
    m, se = _mean_se(ints)
    return ResidualReport(t, x, m, se, cfg.n_paths)


def terminal_boundary(p: Problem, bracket=(-1e3, 1e3), tol_x: float = 1e-12,
                      max_iter: int = 200) -> float:
    """Root of ``x -> h(T, x)`` by bisection (``h`` non-increasing in ``x``)."""
    T = p.horizon
    lo, hi = map(float, bracket)
    h = lambda x: float(generator_payoff(p, T, np.float64(x)))  # noqa: E731
    hlo, hhi = h(lo), h(hi)
    if hlo == 0 and hhi == 0:
        raise DegenerateBracketError(f"h(T, .) vanishes at both bracket ends {bracket}",
                                     T, bracket, (hlo, hhi))
    if hlo == 0:
        return lo
    if hhi == 0:
        return hi
    if hlo < 0 < hhi:
        raise NonMonotoneResidualError(f"h(T, .) increases across {bracket}: h={hlo:.4g}, {hhi:.4g}")
    if not (hlo > 0 > hhi):
        raise NoRootError(f"h(T, .) has no sign change on {bracket}: h={hlo:.4g}, {hhi:.4g}",
                          T, bracket, (hlo, hhi))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        hm = h(mid)
        if hm == 0:
            return mid
        if hm > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol_x:
            break
    return 0.5 * (lo + hi)


def _trial_barrier(t, x, future_times, future_values):
    return Barrier(np.concatenate([[t], future_times]), np.concatenate([[x], future_values]),
                   interpolation="linear")


def _check_monotone(trace, t):
    pts = sorted((x, r) for _, x, r, _ in trace)
    for (x1, r1), (x2, r2) in zip(pts, pts[1:]):
        if r2 > r1 + 1e-12 * (1 + abs(r1)):
            raise NonMonotoneResidualError(
                f"residual increases in x at t={t}: Phi({x1:.6g})={r1:.6g} < Phi({x2:.6g})={r2:.6g}")


def _solve_node(p, scfg, k, t, future_times, future_values):
    cfg = scfg.cfg
    seed = derive_seed(cfg.seed, k) if scfg.crn else None
    counter = [0]

    def phi(x):
        s = seed if scfg.crn else derive_seed(cfg.seed, k, counter[0])
        counter[0] += 1
        return reflected_residual(p, _trial_barrier(t, x, future_times, future_values), t, x,
                                  cfg, seed=s)

    lo, hi = map(float, scfg.bracket)
    rlo, rhi = phi(lo), phi(hi)
    trace = [(0, lo, rlo.residual, rlo.stderr), (0, hi, rhi.residual, rhi.stderr)]
    node = NodeResult(t, float("nan"), None, trace)
    tol_r = scfg.residual_tol
    if abs(rlo.residual) <= tol_r and abs(rhi.residual) <= tol_r:
        node.flag, node.value, node.report = "degenerate", hi, rhi  # any value is a root
        msg = f"residual vanishes on the whole bracket at t={t}"
        return node, DegenerateBracketError(msg, t, scfg.bracket, (rlo.residual, rhi.residual))
    if rlo.residual < -tol_r or rhi.residual > tol_r:
        if rlo.residual < -tol_r and rhi.residual < -tol_r:
            node.flag, node.value = "no_sign_change_negative", lo
        elif rlo.residual > tol_r and rhi.residual > tol_r:
            node.flag, node.value = "no_sign_change_positive", hi
        else:
            raise NonMonotoneResidualError(
                f"residual increases across the bracket at t={t}: "
                f"Phi({lo})={rlo.residual:.6g}, Phi({hi})={rhi.residual:.6g}")
        msg = (f"no sign change at node t={t}: Phi({lo})={rlo.residual:.6g}, "
               f"Phi({hi})={rhi.residual:.6g}")
        node.report = rlo if node.value == lo else rhi
        return node, NoRootError(msg, t, scfg.bracket, (rlo.residual, rhi.residual))
    if abs(rlo.residual) <= tol_r:
        node.value, node.report = lo, rlo
        return node, None
    if abs(rhi.residual) <= tol_r:
        node.value, node.report = hi, rhi
        return node, None
    best = None
    for it in range(1, scfg.max_bisections + 1):
        mid = 0.5 * (lo + hi)
        rm = phi(mid)
        trace.append((it, mid, rm.residual, rm.stderr))
        if scfg.crn:
            _check_monotone(trace, t)
        if rm.residual == 0.0:
            best = rm
            break
        if rm.residual > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= scfg.tol_x:
            break
    else:
        raise RuntimeError(f"bisection did not reach tol_x={scfg.tol_x} at t={t} "
                           f"within {scfg.max_bisections} iterations")
    if best is None:
        root = 0.5 * (lo + hi)
        best = phi(root)
        trace.append((len(trace) - 1, root, best.residual, best.stderr))
    node.value, node.report = best.x, best
    return node, None


def solve_boundary(p: Problem, scfg: SolverConfig) -> BoundarySolution:
    """Backward node-by-node solution of the reflected integral equation."""
    nodes_t = np.asarray(scfg.time_grid, dtype=float)
    T = p.horizon
    if abs(nodes_t[-1] - T) > 1e-12:
        raise PreconditionError("solver grid must end at the horizon")
    lo, hi = scfg.bracket
    sc = check_single_crossing(p, nodes_t, np.linspace(lo, hi, 41))
    violated = not sc.holds
    if violated:
        warnings.warn(f"single crossing fails at {len(sc.fails_at)} grid pairs; "
                      "the solved boundary may not be optimal", stacklevel=2)
    if scfg.terminal_value is not None:
        bT = float(scfg.terminal_value)
    else:
        try:
            bT = terminal_boundary(p, scfg.bracket, tol_x=min(scfg.tol_x, 1e-12))
        except NoRootError:
            if scfg.on_no_root == "raise":
                raise
            hT = float(generator_payoff(p, T, np.float64(lo)))
            bT = hi if hT > 0 else lo
    results = [NodeResult(T, bT, ResidualReport(T, bT, 0.0, 0.0, scfg.cfg.n_paths))]
    fut_t = np.array([T])
    fut_v = np.array([bT])
    for k in range(len(nodes_t) - 2, -1, -1):
        t = float(nodes_t[k])
        node, err = _solve_node(p, scfg, k, t, fut_t, fut_v)
        if err is not None:
            if scfg.on_no_root == "raise":
                raise err
            log.warning("%s", err)
        results.append(node)
        fut_t = np.concatenate([[t], fut_t])
        fut_v = np.concatenate([[node.value], fut_v])
    results.reverse()
    barrier = Barrier(fut_t, fut_v, interpolation="linear")
    return BoundarySolution(barrier, results, violated)
