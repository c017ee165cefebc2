"""Command-line entry point.

    inverse-stopping {simulate,transfer,solve-boundary,verify,check-properties}
        --config PATH [--seed N] [--out DIR] [--workers N]

Exit codes: 0 success, 2 configuration error, 3 precondition error,
4 solver found no root, 5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import barrier as barrier_io
from .barrier import BarrierError
from .boundary import NoRootError, SolverConfig, solve_boundary
from .config import ConfigError, build_barrier, build_problem, load_config, resolve_problem_section
from .model import EvaluationError
from .oracle import Lattice, StabilityError, check_implementability
from .paths import NoiseStream, PreconditionError, SimulationError, TimeGrid, dump_paths, reflect
from .transfer import (MCConfig, TransferCurve, check_transfer_properties, closed_form_bm_transfer,
                       transfer_curve)

log = logging.getLogger("inverse_stopping")

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NO_ROOT, EXIT_VERIFY = 0, 2, 3, 4, 5
SEED_ENV = "INVERSE_STOPPING_SEED"


class VerificationFailed(RuntimeError):
    pass


def _resolve(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    elif "seed" not in cfg and os.environ.get(SEED_ENV):
        try:
            cfg["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    cfg.setdefault("seed", 0)
    cfg["problem"] = resolve_problem_section(cfg.get("problem", {"preset": "product"}))
    out = args.out or cfg.get("output", {}).get("dir", "out")
    cfg.setdefault("output", {})["dir"] = str(out)
    cfg["workers"] = args.workers or os.cpu_count() or 1
    return cfg


def _write_manifest(cfg: dict, command: str) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "version": __version__, "seed": cfg["seed"],
                "config": {k: v for k, v in cfg.items() if not k.startswith("_")}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def _mc(cfg: dict, section="mc") -> MCConfig:
    mc = cfg.get(section, {})
    try:
        return MCConfig(n_paths=int(mc.get("n_paths", 10_000)), seed=int(cfg["seed"]),
                        max_step=float(mc.get("max_step", 1e-2)),
                        scheme=str(mc.get("scheme", "bridge")), workers=1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _times(cfg, horizon):
    tr = cfg.get("transfer", {})
    if "times" in tr:
        return np.asarray(tr["times"], dtype=float)
    return np.linspace(0.0, horizon, int(tr.get("n_times", 11)))


def _lattice(cfg, p):
    lat = cfg.get("lattice")
    if not lat:
        raise ConfigError("missing 'lattice' section")
    dt, dx = float(lat.get("dt", 1e-3)), float(lat.get("dx", 0.04))
    if "x_min" in lat and "x_max" in lat:
        return Lattice.build(p, dt, dx, float(lat["x_min"]), float(lat["x_max"]))
    return Lattice.around(p, dt, dx, float(lat.get("lo", -1.0)), float(lat.get("hi", 1.0)))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    out = _write_manifest(cfg, "simulate")
    p = build_problem(cfg["problem"])
    b = build_barrier(cfg.get("barrier"), p.horizon, cfg.get("_base_dir", "."))
    sim = cfg.get("simulate", {})
    mc = _mc(cfg)
    n = int(sim.get("n_paths", 10))
    t0 = float(sim.get("t0", 0.0))
    x0 = float(sim.get("x0", b.eval(t0)))
    scheme = str(sim.get("scheme", "projection"))
    grid = TimeGrid.build(t0, p.horizon, mc.max_step, b.times)
    paths = [reflect(p, b, t0, x0, grid, NoiseStream(mc.seed, i), scheme=scheme) for i in range(n)]
    dump_paths(paths, out / "paths")
    hit = [bool(np.any(rp.x >= rp.barrier_values)) for rp in paths]
    taus = [rp.tau_b for rp in paths]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_paths", "fraction_hitting", "mean_tau_b"])
        w.writerow([n, repr(float(np.mean(hit))), repr(float(np.mean(taus)))])
    print(f"{n} paths written to {out / 'paths'}; fraction hitting {np.mean(hit):.4f}, "
          f"mean tau_b {np.mean(taus):.4f}")
    return EXIT_OK


def cmd_transfer(cfg: dict) -> int:
    out = _write_manifest(cfg, "transfer")
    p = build_problem(cfg["problem"])
    b = build_barrier(cfg.get("barrier"), p.horizon, cfg.get("_base_dir", "."))
    mc = _mc(cfg)
    times = _times(cfg, p.horizon)
    curve = transfer_curve(p, b, times, mc, workers=cfg["workers"])
    if cfg.get("transfer", {}).get("closed_form"):
        if len(b.jumps()) or np.ptp(b.values) != 0:
            raise PreconditionError("closed form needs a constant barrier")
        sigma = float(p.sigma(0.0, np.float64(b.values[0])))
        curve.closed_form = np.array([closed_form_bm_transfer(sigma, float(b.values[0]), p, t).value
                                      for t in times])
    curve.to_csv(out / "transfer.csv")
    print(f"transfer curve ({len(times)} times) written to {out / 'transfer.csv'}")
    return EXIT_OK


def cmd_solve_boundary(cfg: dict) -> int:
    out = _write_manifest(cfg, "solve-boundary")
    p = build_problem(cfg["problem"])
    sol_sec = cfg.get("solver", {})
    nodes = sol_sec.get("nodes", 21)
    grid = (np.linspace(0.0, p.horizon, int(nodes)) if isinstance(nodes, int)
            else np.asarray(nodes, dtype=float))
    try:
        scfg = SolverConfig(tuple(grid), bracket=tuple(sol_sec.get("bracket", (-5.0, 5.0))),
                            tol_x=float(sol_sec.get("tol_x", 1e-6)), cfg=_mc(cfg),
                            max_bisections=int(sol_sec.get("max_bisections", 100)),
                            terminal_value=sol_sec.get("terminal_value"),
                            on_no_root=sol_sec.get("on_no_root", "raise"))
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None
    sol = solve_boundary(p, scfg)
    barrier_io.save(sol.barrier, out / "boundary.txt")
    sol.write_audit(out / "residual_audit.csv")
    flagged = [n for n in sol.nodes if n.flag]
    if sol.hypotheses_violated:
        print("warning: single crossing violated; hypotheses of the characterisation fail",
              file=sys.stderr)
    print(f"boundary written to {out / 'boundary.txt'} ({len(sol.nodes)} nodes, "
          f"{len(flagged)} flagged)")
    return EXIT_NO_ROOT if flagged else EXIT_OK


def _transfer_for_verify(cfg, p, b):
    src = cfg.get("verify", {}).get("transfer", "zero")
    if src == "zero":
        return None
    if src == "computed":
        return transfer_curve(p, b, _times(cfg, p.horizon), _mc(cfg), workers=cfg["workers"])
    path = Path(src)
    if not path.is_absolute():
        path = Path(cfg.get("_base_dir", ".")) / path
    if not path.exists():
        raise ConfigError(f"verify.transfer: file not found: {path}")
    return TransferCurve.from_csv(path)


def cmd_verify(cfg: dict) -> int:
    out = _write_manifest(cfg, "verify")
    p = build_problem(cfg["problem"])
    b = build_barrier(cfg.get("barrier"), p.horizon, cfg.get("_base_dir", "."))
    ver = cfg.get("verify", {})
    pi = _transfer_for_verify(cfg, p, b)
    lat = _lattice(cfg, p)
    rep = check_implementability(p, b, pi, lat, float(ver.get("tol", 0.01)),
                                 strict=bool(ver.get("strict", False)))
    (out / "verify_report.txt").write_text(rep.summary() + "\n")
    (out / "verify_report.json").write_text(rep.to_json())
    print(rep.summary())
    return EXIT_OK if rep.passed and rep.strict_passed is not False else EXIT_VERIFY


def cmd_check_properties(cfg: dict) -> int:
    out = _write_manifest(cfg, "check-properties")
    p = build_problem(cfg["problem"])
    b = build_barrier(cfg.get("barrier"), p.horizon, cfg.get("_base_dir", "."))
    times = np.unique(np.concatenate([_times(cfg, p.horizon), b.times]))
    curve = transfer_curve(p, b, times, _mc(cfg), workers=cfg["workers"])
    curve.to_csv(out / "transfer.csv")
    rep = check_transfer_properties(curve, b)
    (out / "properties_report.txt").write_text(rep.summary() + "\n")
    (out / "properties_report.json").write_text(json.dumps(
        {c.name: {"passed": c.passed, "evidence": c.evidence} for c in rep.checks}, indent=2))
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_VERIFY


COMMANDS = {
    "simulate": cmd_simulate,
    "transfer": cmd_transfer,
    "solve-boundary": cmd_solve_boundary,
    "verify": cmd_verify,
    "check-properties": cmd_check_properties,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inverse-stopping", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON or YAML run configuration")
    ap.add_argument("--seed", type=int, default=None,
                    help=f"global seed (overrides config; default from ${SEED_ENV})")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--workers", type=int, default=None, help="thread cap (default: all cores)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, BarrierError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, StabilityError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NoRootError as exc:
        print(f"no root: {exc}", file=sys.stderr)
        return EXIT_NO_ROOT
    except (SimulationError, EvaluationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
