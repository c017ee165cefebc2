"""Run configuration: problem families, barriers and numerical settings.

Config files are JSON (``.json``) or YAML (``.yaml``/``.yml``).  Schema::

    seed: 42
    problem:
      preset: product          # static | bm_square | product | martingale | custom
      horizon: 1.0
      sigma: 1.0               # volatility for the Brownian presets
      drift:      {kind: constant, value: 0.0}     # constant | affine(a, b) | ou(kappa, theta)
      volatility: {kind: constant, value: 1.0}     # constant | affine(a, b)
      flow:       {kind: affine, a: 0.0, b: -1.0}  # constant | affine  (f = a + b*x)
      terminal:   {kind: monomial, c: 1.0, n: 2}   # zero | monomial(c, n) | product(c)
    barrier:                   # one of: file | constant | knots
      file: barrier.txt
      constant: 1.0
      knots: [[0.0, 1.0], [0.5, 2.0, 1.0], [1.0, 2.0]]
      interpolation: linear
    mc:       {n_paths: 10000, max_step: 0.01, scheme: bridge}
    transfer: {n_times: 11, closed_form: false}    # or times: [...]
    solver:   {nodes: 21, bracket: [-1, 3], tol_x: 1e-3, max_bisections: 100, on_no_root: raise}
    lattice:  {dt: 0.001, dx: 0.04, lo: -1.0, hi: 2.0}   # or x_min/x_max
    simulate: {n_paths: 10, x0: 0.0, t0: 0.0}
    verify:   {transfer: zero, tol: 0.01, strict: false}  # transfer: zero | computed | path.csv
    output:   {dir: out}

Preset keys (``preset``, ``sigma``) fill in the coefficient sections; any
explicitly given section overrides the preset.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import yaml

from . import barrier as barrier_io
from .barrier import Barrier
from .model import (ZERO, Affine, Constant, Monomial, OrnsteinUhlenbeckDrift, TimeToGoProduct,
                    make_problem)


class ConfigError(ValueError):
    pass


PRESETS = {
    "static": {"drift": {"kind": "constant", "value": 0.0},
               "volatility": {"kind": "constant", "value": 0.0},
               "flow": {"kind": "affine", "a": 0.0, "b": -1.0},
               "terminal": {"kind": "zero"}},
    "bm_square": {"drift": {"kind": "constant", "value": 0.0},
                  "volatility": {"kind": "constant", "value": "sigma"},
                  "flow": {"kind": "constant", "value": 0.0},
                  "terminal": {"kind": "monomial", "c": 1.0, "n": 2}},
    "product": {"drift": {"kind": "constant", "value": 0.0},
                "volatility": {"kind": "constant", "value": "sigma"},
                "flow": {"kind": "constant", "value": 0.0},
                "terminal": {"kind": "product", "c": 1.0}},
    "martingale": {"drift": {"kind": "constant", "value": 0.0},
                   "volatility": {"kind": "constant", "value": "sigma"},
                   "flow": {"kind": "constant", "value": 0.0},
                   "terminal": {"kind": "monomial", "c": 1.0, "n": 1}},
}


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    try:
        if p.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    data.setdefault("_base_dir", str(p.parent.resolve()))
    return data


def _num(section, key, where, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"{where}: missing field '{key}'")
        return default
    try:
        return float(section[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected a number, got {section[key]!r}") from None


def _coefficient(spec, where, drift=False):
    kind = spec.get("kind")
    if kind == "constant":
        return Constant(_num(spec, "value", where))
    if kind == "affine":
        return Affine(_num(spec, "a", where), _num(spec, "b", where))
    if kind == "ou" and drift:
        return OrnsteinUhlenbeckDrift(_num(spec, "kappa", where), _num(spec, "theta", where))
    raise ConfigError(f"{where}.kind: unknown coefficient family {kind!r}")


def _terminal(spec, horizon, where):
    kind = spec.get("kind")
    if kind in (None, "zero"):
        return Monomial(0.0, 0)
    if kind == "monomial":
        n = spec.get("n")
        if not isinstance(n, int) or n < 0:
            raise ConfigError(f"{where}.n: expected a non-negative integer")
        return Monomial(_num(spec, "c", where, 1.0), n)
    if kind == "product":
        return TimeToGoProduct(horizon, _num(spec, "c", where, 1.0))
    raise ConfigError(f"{where}.kind: unknown terminal payoff family {kind!r}")


def resolve_problem_section(section: dict) -> dict:
    """Expand a preset into explicit coefficient sections."""
    sec = copy.deepcopy(section)
    preset = sec.get("preset", "custom")
    if preset != "custom":
        if preset not in PRESETS:
            raise ConfigError(f"problem.preset: unknown preset {preset!r}; "
                              f"choose from {sorted(PRESETS)} or 'custom'")
        sigma = sec.get("sigma", 1.0)
        for key, val in PRESETS[preset].items():
            if key not in sec:
                val = copy.deepcopy(val)
                if val.get("value") == "sigma":
                    val["value"] = sigma
                sec[key] = val
    sec.setdefault("horizon", 1.0)
    for key in ("drift", "volatility", "flow", "terminal"):
        if key not in sec:
            raise ConfigError(f"problem: missing section '{key}'")
    return sec


def build_problem(section: dict):
    sec = resolve_problem_section(section)
    horizon = _num(sec, "horizon", "problem")
    if horizon <= 0:
        raise ConfigError("problem.horizon must be positive")
    mu = _coefficient(sec["drift"], "problem.drift", drift=True)
    sigma = _coefficient(sec["volatility"], "problem.volatility")
    flow = sec["flow"]
    f = ZERO if flow.get("kind") == "zero" else _coefficient(flow, "problem.flow")
    term = _terminal(sec["terminal"], horizon, "problem.terminal")
    return make_problem(mu=mu, sigma=sigma, f=f, terminal=term, horizon=horizon,
                        name=sec.get("preset", "custom"))


def build_barrier(section: dict, horizon: float, base_dir=".") -> Barrier:
    if not section:
        raise ConfigError("missing 'barrier' section")
    if "file" in section:
        path = Path(section["file"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"barrier.file: file not found: {path}")
        return barrier_io.load(path)
    if "constant" in section:
        return Barrier.constant(_num(section, "constant", "barrier"), horizon)
    if "knots" in section:
        knots = section["knots"]
        try:
            times = [float(k[0]) for k in knots]
            vals = [float(k[1]) for k in knots]
            lefts = [float(k[2]) if len(k) > 2 else np.nan for k in knots]
        except (TypeError, ValueError, IndexError):
            raise ConfigError("barrier.knots: expected a list of [t, value(, left)] triples") from None
        return Barrier(times, vals, lefts, section.get("interpolation", "linear"))
    raise ConfigError("barrier: need one of 'file', 'constant' or 'knots'")
