"""Transfers that make a given cut-off barrier optimal.

``pi(t) = E[ integral_t^T h(s, X~_s) ds ]`` with ``X~`` reflected below the
barrier and started on it at time ``t``.  The left limit ``pi(t-)`` is
estimated by starting at ``min(b(t-), b(t))`` at ``t`` on the same noise,
which gives a paired estimate of any jump of the transfer.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import roots_legendre

from .barrier import Barrier
from .model import Problem, generator_payoff, is_constant_coefficient
from .paths import PreconditionError, TimeGrid, derive_seed, path_integrals


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 10_000
    seed: int = 0
    max_step: float = 1e-2
    scheme: str = "bridge"
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


@dataclass
class TransferCurve:
    times: np.ndarray
    pi: np.ndarray
    stderr: np.ndarray
    pi_left: Optional[np.ndarray] = None
    jump_stderr: Optional[np.ndarray] = None
    closed_form: Optional[np.ndarray] = None
    n_paths: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("curve times must be increasing")
        if np.any(self.stderr < 0):
            raise ValueError("negative standard error")

    def __call__(self, t):
        """Right-continuous interpolation.

        Linear between consecutive curve times, from ``pi(t_i)`` to the left
        limit ``pi(t_{i+1}-)`` when it is known, so jumps stay at the curve
        times.  Constant beyond the last time.
        """
        t = np.asarray(t, dtype=float)
        lefts = self.pi if self.pi_left is None else self.pi_left
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        j = np.minimum(i + 1, len(self.times) - 1)
        span = self.times[j] - self.times[i]
        w = np.where(span > 0, (t - self.times[i]) / np.where(span > 0, span, 1.0), 0.0)
        w = np.clip(w, 0.0, 1.0)
        out = self.pi[i] + w * (lefts[j] - self.pi[i])
        out = np.where(t < self.times[0], self.pi[0], out)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["t", "pi", "stderr"]
            cols = [self.times, self.pi, self.stderr]
            if self.pi_left is not None:
                head += ["pi_left", "jump_stderr"]
                cols += [self.pi_left, self.jump_stderr]
            if self.closed_form is not None:
                head.append("closed_form")
                cols.append(self.closed_form)
            w.writerow(head)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "TransferCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        keys = rows[0].keys() if rows else []
        return cls(col("t"), col("pi"), col("stderr"),
                   col("pi_left") if "pi_left" in keys else None,
                   col("jump_stderr") if "jump_stderr" in keys else None,
                   col("closed_form") if "closed_form" in keys else None)

    @classmethod
    def zero(cls, horizon=1.0) -> "TransferCurve":
        return cls(np.array([0.0, horizon]), np.zeros(2), np.zeros(2))


def simulation_grid(b: Barrier, t, max_step) -> TimeGrid:
    return TimeGrid.build(t, b.horizon, max_step, b.times)


def _mean_se(samples):
    n = len(samples)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _check_barrier(p: Problem, b: Barrier, t):
    if not b.start <= t <= b.horizon:
        raise PreconditionError(f"t={t} outside the barrier domain")
    if abs(b.horizon - p.horizon) > 1e-12:
        raise PreconditionError("barrier and problem horizons differ")


def estimate_transfer_at(p: Problem, b: Barrier, t: float, cfg: MCConfig, seed=None):
    """Monte Carlo ``(pi(t), stderr)`` for the barrier ``b``."""
    _check_barrier(p, b, t)
    if t >= b.horizon:
        return 0.0, 0.0
    seed = cfg.seed if seed is None else seed
    grid = simulation_grid(b, t, cfg.max_step)
    ints = path_integrals(p, b, t, b.eval(t), grid, seed, cfg.n_paths,
                          scheme=cfg.scheme, workers=cfg.workers)
    return _mean_se(ints)


def estimate_transfer_pair(p: Problem, b: Barrier, t: float, cfg: MCConfig, seed=None):
    """``(pi(t), se, pi(t-), jump_se)`` on shared noise.

    ``jump_se`` is the standard error of the paired difference
    ``pi(t) - pi(t-)``; it is zero when ``b`` does not jump up at ``t``
    because the two estimates coincide path by path.
    """
    _check_barrier(p, b, t)
    if t >= b.horizon:
        return 0.0, 0.0, 0.0, 0.0
    seed = cfg.seed if seed is None else seed
    grid = simulation_grid(b, t, cfg.max_step)
    right = path_integrals(p, b, t, b.eval(t), grid, seed, cfg.n_paths,
                           scheme=cfg.scheme, workers=cfg.workers)
    start_left = b.min_left_right(t)
    if start_left == b.eval(t):
        left = right
    else:
        left = path_integrals(p, b, t, start_left, grid, seed, cfg.n_paths,
                              scheme=cfg.scheme, workers=cfg.workers)
    m, se = _mean_se(right)
    ml, _ = _mean_se(left)
    _, jse = _mean_se(right - left)
    return m, se, ml, jse


def transfer_curve(p: Problem, b: Barrier, times, cfg: MCConfig, workers: int = 1) -> TransferCurve:
    """Transfer on ``times``; time ``i`` uses sub-seed ``derive_seed(cfg.seed, i)``.

    Points are independent of each other and of ``workers``.
    """
    times = np.asarray(times, dtype=float)

    def one(i):
        return estimate_transfer_pair(p, b, float(times[i]), cfg, seed=derive_seed(cfg.seed, i))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(one, range(len(times))))
    else:
        res = [one(i) for i in range(len(times))]
    arr = np.array(res, dtype=float).reshape(len(times), 4)
    return TransferCurve(times, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], n_paths=cfg.n_paths)


# ---------------------------------------------------------------------------
# Brownian closed form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureConfig:
    n_time: int = 64
    n_space: int = 64
    truncation: float = 8.0  # in standard deviations of |W|


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float
    tail_bound: float


def _is_bm(p: Problem, sigma) -> bool:
    d = p.diffusion
    if is_constant_coefficient(d.mu, 0.0) and is_constant_coefficient(d.sigma, sigma):
        return True
    ts = np.linspace(0, p.horizon, 7)
    xs = np.linspace(-5, 5, 11)
    try:
        return all(np.allclose(d.mu(t, xs), 0.0) and np.allclose(d.sigma(t, xs), sigma) for t in ts)
    except Exception:
        return False


def _bm_quadrature(sigma, b_const, p, t, n_t, n_x, trunc):
    T = p.horizon
    # s = t + u^2 removes the square-root behaviour at s = t
    ut, wt = roots_legendre(n_t)
    umax = math.sqrt(T - t)
    u = 0.5 * umax * (ut + 1.0)
    wu = 0.5 * umax * wt
    zx, wx = roots_legendre(n_x)
    z = 0.5 * trunc * (zx + 1.0)
    wz = 0.5 * trunc * wx
    dens = 2.0 * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)  # half-normal density
    total = 0.0
    for ui, wi in zip(u, wu):
        s = t + ui * ui
        y = b_const - sigma * ui * z
        inner = float(np.sum(wz * dens * generator_payoff(p, s, y)))
        total += wi * 2.0 * ui * inner
    return total


def closed_form_bm_transfer(sigma: float, b_const: float, p: Problem, t: float,
                            quadrature: QuadratureConfig = QuadratureConfig()) -> QuadratureResult:
    """Transfer for driftless Brownian motion below a constant barrier.

    Uses ``X~_s ~ b - sigma*|W_{s-t}|`` and Gauss-Legendre in both
    variables.  The error estimate compares against half the nodes; the
    tail bound is the neglected half-normal mass times the largest
    ``|h|`` seen on the truncation edge.
    """
    if not sigma > 0:
        raise PreconditionError("sigma must be positive")
    if not _is_bm(p, sigma):
        raise PreconditionError("closed form requires mu = 0 and constant sigma")
    T = p.horizon
    if t >= T:
        return QuadratureResult(0.0, 0.0, 0.0)
    q = quadrature
    fine = _bm_quadrature(sigma, b_const, p, t, q.n_time, q.n_space, q.truncation)
    coarse = _bm_quadrature(sigma, b_const, p, t, max(2, q.n_time // 2), max(2, q.n_space // 2),
                            q.truncation)
    tail_mass = math.erfc(q.truncation / math.sqrt(2.0))
    edge = np.abs(generator_payoff(p, np.linspace(t, T, 9),
                                   b_const - sigma * math.sqrt(T - t) * q.truncation))
    tail = tail_mass * float(np.max(edge)) * (T - t) * 10.0
    return QuadratureResult(fine, abs(fine - coarse), tail)


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


@dataclass
class PropertyCheck:
    name: str
    passed: bool
    evidence: list = field(default_factory=list)


@dataclass
class TransferPropertyReport:
    checks: list
    terminal_limit: float
    terminal_stderr: float
    empirical_range: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> PropertyCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"{c.name}: {'pass' if c.passed else 'FAIL'}"
                 + (f"  {c.evidence[:3]}" if c.evidence else "") for c in self.checks]
        lines.append(f"pi(T-) ~ {self.terminal_limit:.3e} +/- {self.terminal_stderr:.1e}")
        lines.append(f"empirical range [{self.empirical_range[0]:.4g}, {self.empirical_range[1]:.4g}]")
        return "\n".join(lines)


def _terminal_limit(curve: TransferCurve, horizon: float, n_fit: int = 4):
    """Extrapolate ``pi`` to ``T-`` by weighted least squares.

    Near ``T`` the transfer behaves like ``a*s + c*s**1.5`` in the time to
    go ``s``; the intercept of a fit on ``[1, s, s**1.5]`` over the last
    pre-``T`` points estimates ``pi(T-)``.  Its standard error is inflated
    by the fit misfit when there are spare degrees of freedom.
    """
    mask = curve.times < horizon
    s = horizon - curve.times[mask]
    y = curve.pi[mask]
    se = curve.stderr[mask]
    if len(s) == 0:
        return 0.0, 0.0
    k = min(n_fit, len(s))
    s, y, se = s[-k:], y[-k:], se[-k:]
    if k == 1:
        return float(y[0]), float(se[0])
    basis = [np.ones(k), s, s**1.5][:min(3, k)]
    A = np.column_stack(basis)
    w = 1.0 / np.maximum(se, 1e-300) if np.all(se > 0) else np.ones(k)
    Aw = A * w[:, None]
    coef, *_ = np.linalg.lstsq(Aw, y * w, rcond=None)
    pinv = np.linalg.pinv(Aw)
    var = float(np.sum((pinv[0] * w * se) ** 2)) if np.all(se > 0) else 0.0
    dof = k - A.shape[1]
    if dof > 0 and np.all(se > 0):
        chi2 = float(np.sum(((A @ coef - y) * w) ** 2)) / dof
        var *= max(1.0, chi2)
    return float(coef[0]), math.sqrt(var)


def check_transfer_properties(curve: TransferCurve, b: Barrier, n_sigma: float = 3.0,
                              abs_tol: float = 1e-12) -> TransferPropertyReport:
    """Check the structural properties of an implementing transfer on a curve.

    Needs the paired left limits produced by :func:`transfer_curve`.
    ``abs_tol`` absorbs floating-point noise when a standard error is 0.
    """
    if curve.pi_left is None:
        raise ValueError("curve carries no left-limit estimates")
    jump = curve.pi - curve.pi_left
    tol = n_sigma * curve.jump_stderr + abs_tol
    up, cont, down_ok = [], [], []
    for t, d, tl in zip(curve.times, jump, tol):
        bj = b.jump_at(t) if b.start < t <= b.horizon else 0.0
        if d > tl:
            up.append((float(t), float(d), float(tl)))
        if bj <= 0 and abs(d) > tl:
            cont.append((float(t), float(d), float(tl)))
        if d < -tl and not bj > 0:
            down_ok.append((float(t), float(d), float(tl)))
    lim, lim_se = _terminal_limit(curve, b.horizon)
    term_ok = abs(lim) <= n_sigma * lim_se + abs_tol
    checks = [
        PropertyCheck("no_upward_jumps", not up, up),
        PropertyCheck("continuous_where_barrier_continuous_or_down", not cont, cont),
        PropertyCheck("downward_jumps_only_at_barrier_up_jumps", not down_ok, down_ok),
        PropertyCheck("vanishes_at_horizon", term_ok, [] if term_ok else [(lim, lim_se)]),
    ]
    rng = (float(np.min(curve.pi)), float(np.max(curve.pi)))
    return TransferPropertyReport(checks, lim, lim_se, rng)
