"""Problem data: diffusion coefficients, payoffs and the generator payoff ``h``.

Coefficient and payoff functions take ``(t, x)`` and must broadcast over
numpy arrays; the Monte Carlo and lattice code evaluate them on whole
vectors of states at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Coefficient = Callable[[float, np.ndarray], np.ndarray]


class EvaluationError(ValueError):
    """A coefficient or payoff returned a non-finite value."""


# ---------------------------------------------------------------------------
# Built-in coefficient families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)


@dataclass(frozen=True)
class Affine:
    """``a + b*x``."""

    a: float
    b: float

    def __call__(self, t, x):
        return self.a + self.b * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class OrnsteinUhlenbeckDrift:
    """Mean-reverting drift ``kappa * (theta - x)``."""

    kappa: float
    theta: float

    def __call__(self, t, x):
        return self.kappa * (self.theta - np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Monomial:
    """Terminal payoff ``c * x**n`` together with its partials."""

    c: float
    n: int

    def g(self, t, x):
        return self.c * np.asarray(x, dtype=float) ** self.n

    def g_t(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g_x(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.n == 0:
            return np.zeros_like(x)
        return self.c * self.n * x ** (self.n - 1)

    def g_xx(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.n < 2:
            return np.zeros_like(x)
        return self.c * self.n * (self.n - 1) * x ** (self.n - 2)


@dataclass(frozen=True)
class TimeToGoProduct:
    """Terminal payoff ``c * x * (T - t)``."""

    horizon: float
    c: float = 1.0

    def g(self, t, x):
        return self.c * np.asarray(x, dtype=float) * (self.horizon - t)

    def g_t(self, t, x):
        return -self.c * np.asarray(x, dtype=float)

    def g_x(self, t, x):
        return np.full_like(np.asarray(x, dtype=float), self.c * (self.horizon - t))

    def g_xx(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))


ZERO = Constant(0.0)


# ---------------------------------------------------------------------------
# Problem specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSpec:
    mu: Coefficient
    sigma: Coefficient
    lipschitz_bound: float
    horizon: float

    def __post_init__(self):
        if not self.lipschitz_bound > 0:
            raise ValueError("lipschitz_bound must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True)
class PayoffSpec:
    f: Coefficient
    g: Coefficient
    g_t: Coefficient
    g_x: Coefficient
    g_xx: Coefficient
    derivative_bound: Optional[float] = None

    @classmethod
    def from_terminal(cls, f: Coefficient, terminal, derivative_bound=None) -> "PayoffSpec":
        """Build from a flow payoff and an object exposing ``g, g_t, g_x, g_xx``."""
        return cls(f, terminal.g, terminal.g_t, terminal.g_x, terminal.g_xx, derivative_bound)


@dataclass(frozen=True)
class Problem:
    diffusion: DiffusionSpec
    payoff: PayoffSpec
    name: str = field(default="custom", compare=False)

    @property
    def horizon(self) -> float:
        return self.diffusion.horizon

    def mu(self, t, x):
        return self.diffusion.mu(t, x)

    def sigma(self, t, x):
        return self.diffusion.sigma(t, x)


def _checked(name, fn, t, x):
    out = np.asarray(fn(t, x), dtype=float)
    if not np.all(np.isfinite(out)):
        xs = np.broadcast_to(np.asarray(x, dtype=float), out.shape)
        bad = xs[~np.isfinite(out)].flat[0] if out.ndim else float(xs)
        raise EvaluationError(f"{name}(t={float(np.ravel(t)[0])!r}, x={float(bad)!r}) is not finite")
    return out


def generator_payoff(p: Problem, t, x):
    """``h = f + g_t + mu*g_x + 0.5*sigma**2*g_xx`` evaluated at ``(t, x)``.

    ``x`` may be a scalar or an array; the result has the broadcast shape.
    """
    pay = p.payoff
    f = _checked("f", pay.f, t, x)
    gt = _checked("g_t", pay.g_t, t, x)
    gx = _checked("g_x", pay.g_x, t, x)
    gxx = _checked("g_xx", pay.g_xx, t, x)
    mu = _checked("mu", p.diffusion.mu, t, x)
    sig = _checked("sigma", p.diffusion.sigma, t, x)
    return f + gt + mu * gx + 0.5 * sig * sig * gxx


def generator_payoff_unchecked(p: Problem, t, x):
    """Same as :func:`generator_payoff` without the finiteness checks (hot loops)."""
    pay = p.payoff
    sig = p.diffusion.sigma(t, x)
    return (pay.f(t, x) + pay.g_t(t, x) + p.diffusion.mu(t, x) * pay.g_x(t, x)
            + 0.5 * sig * sig * pay.g_xx(t, x))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass
class CrossingReport:
    holds: bool
    holds_strictly: bool
    fails_at: list

    def __bool__(self):
        return self.holds


def check_single_crossing(p: Problem, times, states, h=None) -> CrossingReport:
    """Check that ``x -> h(t, x)`` is non-increasing on a grid.

    ``states`` is either one ascending vector shared by all times or a
    2-D array with one ascending row per time.  Every adjacent pair
    ``(x1, x2)`` with ``h(t, x2) > h(t, x1)`` is reported.  ``h`` overrides
    the generator payoff (used to test the detector itself).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    states = np.asarray(states, dtype=float)
    rows = np.broadcast_to(states, (len(times), states.shape[-1]))
    hfun = h if h is not None else (lambda t, x: generator_payoff(p, t, x))
    fails = []
    strict = True
    for t, xs in zip(times, rows):
        if np.any(np.diff(xs) <= 0):
            raise ValueError(f"states at t={t} are not strictly ascending")
        hv = np.broadcast_to(np.asarray(hfun(t, xs), dtype=float), xs.shape)
        dh = np.diff(hv)
        for j in np.flatnonzero(dh > 0):
            fails.append((float(t), float(xs[j]), float(xs[j + 1])))
        if np.any(dh >= 0):
            strict = False
    return CrossingReport(holds=not fails, holds_strictly=strict and not fails, fails_at=fails)


def check_lipschitz(d: DiffusionSpec, n: int = 1000, scale: float = 10.0, seed: int = 0) -> list:
    """Spot-check the declared Lipschitz bound and ``sigma >= 0`` on random pairs.

    Returns the list of violating ``(t, x, y)`` triples (empty when consistent).
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, d.horizon, n)
    x = rng.uniform(-scale, scale, n)
    y = rng.uniform(-scale, scale, n)
    bad = []
    for ti, xi, yi in zip(t, x, y):
        lhs = (abs(float(d.mu(ti, np.array(xi)) - d.mu(ti, np.array(yi))))
               + abs(float(d.sigma(ti, np.array(xi)) - d.sigma(ti, np.array(yi)))))
        if lhs > d.lipschitz_bound * abs(xi - yi) * (1 + 1e-12) + 1e-12:
            bad.append((ti, xi, yi))
        if float(d.sigma(ti, np.array(xi))) < 0:
            bad.append((ti, xi, xi))
    return bad


def check_payoff_partials(pay: PayoffSpec, t, x, delta: float = 1e-4) -> dict:
    """Largest deviation of the supplied partials from central differences."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    g = pay.g
    fd_x = (g(t, x + delta) - g(t, x - delta)) / (2 * delta)
    fd_xx = (g(t, x + delta) - 2 * g(t, x) + g(t, x - delta)) / delta**2
    fd_t = (g(t + delta, x) - g(t - delta, x)) / (2 * delta)
    return {
        "g_x": float(np.max(np.abs(pay.g_x(t, x) - fd_x))),
        "g_xx": float(np.max(np.abs(pay.g_xx(t, x) - fd_xx))),
        "g_t": float(np.max(np.abs(pay.g_t(t, x) - fd_t))),
    }


# ---------------------------------------------------------------------------
# Convenience constructors used by tests, the CLI and the examples in the docs
# ---------------------------------------------------------------------------


def make_problem(mu=ZERO, sigma=ZERO, f=ZERO, terminal=None, horizon=1.0,
                 lipschitz_bound=None, name="custom") -> Problem:
    """Assemble a :class:`Problem` from coefficient callables.

    ``terminal`` is any object with ``g, g_t, g_x, g_xx`` methods; ``None``
    means ``g = 0``.  ``lipschitz_bound`` defaults to the one implied by
    the built-in families (1 if unknown).
    """
    if terminal is None:
        terminal = Monomial(0.0, 0)
    if lipschitz_bound is None:
        lipschitz_bound = max(1.0, _family_lipschitz(mu) + _family_lipschitz(sigma))
    diff = DiffusionSpec(mu, sigma, lipschitz_bound, horizon)
    return Problem(diff, PayoffSpec.from_terminal(f, terminal), name=name)


def _family_lipschitz(c) -> float:
    if isinstance(c, Affine):
        return abs(c.b)
    if isinstance(c, OrnsteinUhlenbeckDrift):
        return abs(c.kappa)
    return 0.0


def is_constant_coefficient(c, value=None) -> bool:
    if isinstance(c, Constant):
        return value is None or c.value == value
    if isinstance(c, Affine) and c.b == 0:
        return value is None or c.a == value
    return False
