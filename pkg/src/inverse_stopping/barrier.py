"""Right-continuous cut-off barriers with finitely many knots.

A barrier is stored as knot times ``t_0 < ... < t_n``, right values
``b(t_i)`` and left limits ``b(t_i-)``.  With linear interpolation the
segment on ``[t_i, t_{i+1})`` runs from ``b(t_i)`` to ``b(t_{i+1}-)`` so a
jump at the right knot is not smeared over the interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

INTERPOLATIONS = ("constant", "linear")


class BarrierError(ValueError):
    pass


@dataclass(frozen=True)
class Jump:
    t: float
    size: float  # b(t) - b(t-)


@dataclass(frozen=True)
class RegularityReport:
    ok: bool
    jumps: list
    violations: list
    downward_total: float


class Barrier:
    """Cut-off boundary ``b`` on ``[times[0], times[-1]]``."""

    def __init__(self, times, values, lefts=None, interpolation="constant"):
        times = np.asarray(times, dtype=float).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if interpolation not in INTERPOLATIONS:
            raise BarrierError(f"unknown interpolation {interpolation!r}")
        if len(times) == 0 or len(times) != len(values):
            raise BarrierError("need matching, non-empty knot times and values")
        if np.any(np.diff(times) <= 0):
            raise BarrierError("knot times must be strictly increasing (no duplicates)")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise BarrierError("knots must be finite")
        if interpolation == "constant":
            implied = np.concatenate([values[:1], values[:-1]])
            if lefts is not None:
                lefts = np.asarray(lefts, dtype=float).ravel()
                given = ~np.isnan(lefts)
                if np.any(np.abs(lefts[given] - implied[given]) > 1e-12 * (1 + np.abs(implied[given]))):
                    raise BarrierError("left value inconsistent with piecewise-constant interpolation")
            lefts = implied
        else:
            if lefts is None:
                lefts = values.copy()
            else:
                lefts = np.asarray(lefts, dtype=float).ravel().copy()
                if len(lefts) != len(values):
                    raise BarrierError("left values must match knots")
                miss = np.isnan(lefts)
                lefts[miss] = values[miss]
            lefts[0] = values[0]
            if not np.all(np.isfinite(lefts)):
                raise BarrierError("left limits must be finite")
        self.times = times
        self.values = values
        self.lefts = lefts
        self.interpolation = interpolation
        for arr in (self.times, self.values, self.lefts):
            arr.setflags(write=False)

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value, horizon=1.0, start=0.0):
        return cls([start, horizon], [value, value], interpolation="constant")

    @classmethod
    def linear(cls, start_value, end_value, horizon=1.0, start=0.0):
        return cls([start, horizon], [start_value, end_value], interpolation="linear")

    @classmethod
    def step(cls, before, after, jump_time, horizon=1.0, start=0.0):
        """Piecewise-constant barrier with a single jump at ``jump_time``."""
        return cls([start, jump_time, horizon], [before, after, after], interpolation="constant")

    @classmethod
    def from_function(cls, fn, times, interpolation="linear"):
        times = np.asarray(times, dtype=float)
        return cls(times, [fn(t) for t in times], interpolation=interpolation)

    # -- evaluation -------------------------------------------------------
    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _check_range(self, t):
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise BarrierError(f"time outside [{self.times[0]}, {self.times[-1]}]")

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t):
        """Right-continuous value ``b(t)``."""
        ta = np.asarray(t, dtype=float)
        self._check_range(ta)
        i = np.clip(np.searchsorted(self.times, ta, side="right") - 1, 0, len(self.times) - 1)
        out = self.values[i]
        if self.interpolation == "linear" and len(self.times) > 1:
            j = np.minimum(i + 1, len(self.times) - 1)
            span = self.times[j] - self.times[i]
            inside = span > 0
            w = np.where(inside, (ta - self.times[i]) / np.where(inside, span, 1.0), 0.0)
            out = self.values[i] + w * (self.lefts[j] - self.values[i])
        return float(out) if np.ndim(out) == 0 else out

    def eval_left(self, t):
        """Left limit ``b(t-)``; equals ``b(t)`` away from knots."""
        ta = np.asarray(t, dtype=float)
        self._check_range(ta)
        if np.any(ta <= self.times[0]) and len(self.times) > 1:
            raise BarrierError("left limit undefined at the start time")
        k = np.searchsorted(self.times, ta, side="left")
        k = np.clip(k, 0, len(self.times) - 1)
        at_knot = self.times[k] == ta
        val = np.where(at_knot, self.lefts[k], self.eval(ta))
        return float(val) if np.ndim(val) == 0 else val

    def min_left_right(self, t) -> float:
        """``min(b(t-), b(t))``, the start level of the left-limit transfer."""
        if t <= self.times[0]:
            return self.eval(t)
        return min(self.eval(t), self.eval_left(t))

    # -- structure --------------------------------------------------------
    def jumps(self) -> list:
        d = self.values[1:] - self.lefts[1:]
        return [Jump(float(t), float(s)) for t, s in zip(self.times[1:], d) if s != 0.0]

    def jump_at(self, t) -> float:
        k = np.searchsorted(self.times, t)
        if k < len(self.times) and k > 0 and self.times[k] == t:
            return float(self.values[k] - self.lefts[k])
        return 0.0

    def restrict(self, t0):
        """The same barrier on ``[t0, T]`` (used for reflection started at ``t0``)."""
        if t0 <= self.times[0]:
            return self
        keep = self.times > t0
        times = np.concatenate([[t0], self.times[keep]])
        values = np.concatenate([[self.eval(t0)], self.values[keep]])
        lefts = np.concatenate([[self.eval(t0)], self.lefts[keep]])
        return Barrier(times, values, lefts if self.interpolation == "linear" else None,
                       self.interpolation)

    def __eq__(self, other):
        return (isinstance(other, Barrier) and self.interpolation == other.interpolation
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.lefts, other.lefts))

    def __repr__(self):
        return f"Barrier(n_knots={len(self.times)}, interpolation={self.interpolation!r})"


def validate_regular(b: Barrier) -> RegularityReport:
    violations = []
    if not np.all(np.isfinite(b.values)) or not np.all(np.isfinite(b.lefts)):
        violations.append("non-finite knot value")
    if np.any(np.diff(b.times) <= 0):
        violations.append("knot times not strictly increasing")
    jumps = b.jumps()
    down = sum(-j.size for j in jumps if j.size < 0)
    return RegularityReport(ok=not violations, jumps=jumps, violations=violations,
                            downward_total=float(down))


# ---------------------------------------------------------------------------
# Plain-text barrier files
# ---------------------------------------------------------------------------


def dumps(b: Barrier) -> str:
    lines = [f"interpolation={b.interpolation}"]
    for i, (t, v, l) in enumerate(zip(b.times.tolist(), b.values.tolist(), b.lefts.tolist())):
        if i > 0 and l != v:
            lines.append(f"{t!r},{v!r},{l!r}")
        else:
            lines.append(f"{t!r},{v!r}")
    return "\n".join(lines) + "\n"


def loads(text: str, source: str = "<string>") -> Barrier:
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [r for r in rows if r and not r.startswith("#")]
    if not rows or not rows[0].startswith("interpolation="):
        raise BarrierError(f"{source}: first line must be 'interpolation=constant|linear'")
    kind = rows[0].split("=", 1)[1].strip()
    times, values, lefts = [], [], []
    for n, row in enumerate(rows[1:], start=2):
        parts = [p.strip() for p in row.split(",")]
        if len(parts) not in (2, 3):
            raise BarrierError(f"{source}: line {n}: expected 't,value[,left_value]'")
        try:
            nums = [float(p) for p in parts]
        except ValueError as exc:
            raise BarrierError(f"{source}: line {n}: {exc}") from None
        times.append(nums[0])
        values.append(nums[1])
        lefts.append(nums[2] if len(nums) == 3 else np.nan)
    if kind == "constant":
        # jump knots list the left value for readability; it is implied anyway
        return Barrier(times, values, lefts, "constant")
    return Barrier(times, values, lefts, kind)


def save(b: Barrier, path) -> None:
    Path(path).write_text(dumps(b))


def load(path) -> Barrier:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"barrier file not found: {p}")
    return loads(p.read_text(), source=str(p))
