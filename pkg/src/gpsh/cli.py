"""Batch command-line frontend.

Every run writes its outputs plus ``manifest.json`` into the output
directory. Exit codes: 0 success (or positive verdict), 1 negative verdict
or failed reproduction, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dirichlet_solver import (Lattice, boundary_data, build_stencil, hull, hull_threshold_sweep,
                               max_principle_check, psh_envelope, read_grid_csv, solve_dirichlet,
                               write_grid_csv)
from .errors import GpshError, MaximumPrincipleAtRisk, NotConverged
from .geom_domain import boundary_convexity, builtin_domain
from .grassmann import (ComplexLines, FullGrassmannian, GrassmannSet, classify, free_dimension_report,
                        grassmann_from_json, span_analysis)
from .repro import SCENARIOS, run as run_repro
from .symcore import symform

log = logging.getLogger("gpsh")

MANIFEST_SCHEMA_PATH = Path(__file__).with_name("schemas") / "manifest.schema.json"

DEFAULTS = {
    "seed": 0, "out": "gpsh-out", "tol": None, "grassmann": None, "box": "-1,1,-1,1", "h": 1 / 32,
    "radius": 2, "method": "gs", "max_sweeps": 100_000, "boundary": "saddle", "boundary_file": None,
    "obstacle": "double-well", "obstacle_file": None, "points": None, "threshold": 0.05,
    "domain": "ball", "domain_params": None, "grid_h": None, "trials": 200, "matrix": None,
    "restarts": 50, "jacobi": False, "periodic": "",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parsing helpers

def parse_grassmann(spec) -> GrassmannSet:
    """Inline JSON, a JSON file, or shorthand ``full:p:n`` / ``complex:n``."""
    if spec is None:
        raise UsageError("a plane family is required (--grassmann)")
    if isinstance(spec, dict):
        return grassmann_from_json(spec)
    s = str(spec).strip()
    if s.startswith("{"):
        return grassmann_from_json(json.loads(s))
    if os.path.exists(s):
        with open(s) as fh:
            return grassmann_from_json(json.load(fh))
    parts = s.split(":")
    if parts[0] == "full" and len(parts) == 3:
        return FullGrassmannian(int(parts[1]), int(parts[2]))
    if parts[0] == "complex" and len(parts) == 2:
        return ComplexLines(int(parts[1]))
    raise UsageError(f"cannot read plane family {s!r}")


def read_matrix_csv(path) -> np.ndarray:
    if not os.path.exists(path):
        raise UsageError(f"matrix file {path} not found")
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and not row[0].strip().startswith("#"):
                rows.append([float(c) for c in row])
    return symform(rows)


def parse_box(s) -> tuple:
    vals = [float(v) for v in (s if isinstance(s, (list, tuple)) else str(s).split(","))]
    if len(vals) % 2 or not vals:
        raise UsageError("box needs lo,hi pairs")
    return tuple(zip(vals[::2], vals[1::2]))


def parse_points(s) -> list:
    if not s:
        raise UsageError("hull needs --points x,y;x,y;...")
    if isinstance(s, list):
        return [tuple(map(float, p)) for p in s]
    return [tuple(float(c) for c in p.split(",")) for p in str(s).split(";") if p.strip()]


def _lattice(cfg) -> Lattice:
    periodic = tuple(int(a) for a in str(cfg["periodic"]).split(",") if a.strip() != "")
    return Lattice(parse_box(cfg["box"]), float(cfg["h"]), layer=int(cfg["radius"]), periodic=periodic)


def _num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return _num(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float):
        return _num(obj)
    return obj


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command: str, cfg: dict, argv: list):
        self.command = command
        self.cfg = cfg
        self.argv = argv
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []

    def json(self, name: str, obj) -> None:
        with open(self.out / name, "w") as fh:
            json.dump(_clean(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.outputs.append(name)

    def csv(self, name: str, header: list, rows) -> None:
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([("%.17g" % v) if isinstance(v, (float, np.floating)) else v for v in r])
        self.outputs.append(name)

    def grid(self, name: str, lattice: Lattice, values) -> None:
        write_grid_csv(self.out / name, lattice, values)
        self.outputs.append(name)

    def text(self, name: str, body: str) -> None:
        (self.out / name).write_text(body)
        self.outputs.append(name)

    def manifest(self, exit_code: int, error: Optional[str] = None) -> None:
        m = {"command": self.command, "argv": self.argv, "config": _clean(self.cfg),
             "version": __version__, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
             "outputs": sorted(self.outputs), "exit_code": exit_code, "error": error}
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(m, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _gnuplot_surface(csv_name: str, title: str) -> str:
    return (f"set datafile separator ','\nset title '{title}'\nset key off\n"
            f"splot '{csv_name}' every ::1 using 1:2:3 with points pt 7 ps 0.3\n")


# ---------------------------------------------------------------- commands

def cmd_classify(run: Run) -> int:
    cfg = run.cfg
    if not cfg["matrix"]:
        raise UsageError("classify needs --matrix FILE")
    A = read_matrix_csv(cfg["matrix"])
    G = parse_grassmann(cfg["grassmann"])
    v = classify(G, A)
    out = v.to_json()
    out["strict"] = v.in_IntP
    run.json("verdict.json", out)
    print(json.dumps(_clean(out), sort_keys=True))
    return 0 if v.in_P else 1


def _exact_solution(name: str, lattice: Lattice) -> Optional[np.ndarray]:
    X = lattice.coords()
    if name == "saddle":
        return X[:, 0] ** 2 - X[:, 1] ** 2
    if name == "xsq":
        return X[:, 0] ** 2
    return None


def cmd_solve(run: Run) -> int:
    cfg = run.cfg
    lat = _lattice(cfg)
    G = parse_grassmann(cfg["grassmann"])
    if cfg["boundary"] == "custom-csv" and (not cfg["boundary_file"] or not os.path.exists(cfg["boundary_file"])):
        raise UsageError(f"boundary file {cfg['boundary_file']!r} not found")
    g = boundary_data(cfg["boundary"], lat, cfg["boundary_file"])
    tol = cfg["tol"] if cfg["tol"] is not None else 1e-10
    try:
        res = solve_dirichlet(g, G, lat, tol=tol, max_sweeps=int(cfg["max_sweeps"]),
                              radius=int(cfg["radius"]), method=cfg["method"], jacobi=bool(cfg["jacobi"]))
    except NotConverged as exc:
        run.json("report.json", {"converged": False, "residual": exc.residual, "sweeps": exc.sweeps})
        return 1
    rep = res.to_json()
    rep["converged"] = True
    exact = _exact_solution(cfg["boundary"], lat)
    if exact is not None:
        rep["max_error_vs_exact"] = float(np.max(np.abs(res.u.values.ravel() - exact)))
    run.grid("u.csv", lat, res.u.values)
    run.csv("residual_history.csv", ["sweep", "max_update"], [(i + 1, r) for i, r in enumerate(res.history)])
    run.json("report.json", rep)
    if lat.dim == 2:
        run.text("u.gp", _gnuplot_surface("u.csv", "discrete G-harmonic solution"))
    print(json.dumps(_clean(rep), sort_keys=True))
    return 0


def _obstacle(cfg, lat: Lattice) -> np.ndarray:
    X = lat.coords()
    name = cfg["obstacle"]
    if name == "double-well":
        return ((X[:, 0] ** 2 - 1) ** 2).reshape(lat.shape)
    if name == "xsq":
        return (X[:, 0] ** 2).reshape(lat.shape)
    if name == "abs":
        return np.linalg.norm(X, axis=1).reshape(lat.shape)
    if name == "custom-csv":
        path = cfg["obstacle_file"]
        if not path or not os.path.exists(path):
            raise UsageError(f"obstacle file {path!r} not found")
        vals, seen = read_grid_csv(path, lat)
        if not seen.all():
            raise UsageError("obstacle file must give a value at every lattice point")
        return vals
    raise UsageError(f"unknown obstacle {name!r}")


def cmd_envelope(run: Run) -> int:
    cfg = run.cfg
    lat = _lattice(cfg)
    G = parse_grassmann(cfg["grassmann"])
    psi = _obstacle(cfg, lat)
    tol = cfg["tol"] if cfg["tol"] is not None else 1e-12
    w = psh_envelope(psi, G, lat, tol, radius=int(cfg["radius"]), method=cfg["method"])
    run.grid("envelope.csv", lat, w.values)
    rep = {"contact_points": int(np.sum(np.abs(w.values - psi) <= 1e-9)),
           "max_gap": float(np.max(psi - w.values))}
    run.json("report.json", rep)
    print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_hull(run: Run) -> int:
    cfg = run.cfg
    lat = _lattice(cfg)
    G = parse_grassmann(cfg["grassmann"])
    K = np.zeros(lat.shape, dtype=bool)
    for pnt in parse_points(cfg["points"]):
        K[lat.index_of(pnt)] = True
    S = build_stencil(G, lat, int(cfg["radius"]))
    H = hull(K, G, lat, float(cfg["threshold"]), stencil=S)
    sweep = hull_threshold_sweep(K, G, lat, stencil=S)
    run.grid("hull.csv", lat, H.astype(float))
    rep = {"cells": int(H.sum()), "threshold": float(cfg["threshold"]),
           "threshold_sweep": {str(k): v for k, v in sweep.items()}}
    run.json("report.json", rep)
    print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_boundary(run: Run) -> int:
    cfg = run.cfg
    params = json.loads(cfg["domain_params"]) if isinstance(cfg["domain_params"], str) else (cfg["domain_params"] or {})
    D = builtin_domain(cfg["domain"], **params)
    G = parse_grassmann(cfg["grassmann"])
    verdicts = boundary_convexity(D, G, grid_h=cfg["grid_h"], seed=int(cfg["seed"]))
    names = ["x", "y", "z", "w"][:D.n]
    rows = [list(v.point.x) + [v.min_tangential_trace, v.verdict] for v in verdicts]
    run.csv("boundary.csv", names + ["min_tangential_trace", "verdict"], rows)
    counts: dict = {}
    for v in verdicts:
        counts[v.verdict] = counts.get(v.verdict, 0) + 1
    witness = next((list(v.point.x) for v in verdicts if v.verdict == "not_convex"), None)
    rep = {"samples": len(verdicts), "counts": counts, "not_convex_witness": witness}
    run.json("report.json", rep)
    print(json.dumps(_clean(rep), sort_keys=True))
    return 0


def cmd_span(run: Run) -> int:
    G = parse_grassmann(run.cfg["grassmann"])
    r = span_analysis(G, seed=int(run.cfg["seed"]))
    run.json("span.json", r.to_json())
    print(json.dumps(_clean(r.to_json()), sort_keys=True))
    return 0 if r.involves_all else 1


def cmd_freedim(run: Run) -> int:
    G = parse_grassmann(run.cfg["grassmann"])
    r = free_dimension_report(G, restarts=int(run.cfg["restarts"]), seed=int(run.cfg["seed"]))
    out = {"free_dimension": r.dim, "defect": r.defect, "certificate_min": r.certificate_min,
           "certificate_samples": r.certificate_samples,
           "frame": None if r.frame is None else r.frame.tolist()}
    run.json("freedim.json", out)
    print(json.dumps(_clean(out), sort_keys=True))
    return 0


def cmd_repro(run: Run) -> int:
    name = run.cfg["name"]
    if name not in SCENARIOS:
        raise UsageError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}")
    r = run_repro(name)
    run.json("repro.json", r.to_json())
    if r.csv_rows:
        fname = f"{name}.csv"
        run.csv(fname, r.csv_header, r.csv_rows)
        run.text(f"{name}.gp", "set datafile separator ','\nset key off\n"
                 f"plot '{fname}' every ::1 using 1:2 with dots\n")
    print(f"{name}: {'PASS' if r.passed else 'FAIL'}")
    return 0 if r.passed else 1


def cmd_mp_check(run: Run) -> int:
    cfg = run.cfg
    lat = _lattice(cfg)
    G = parse_grassmann(cfg["grassmann"])
    r = max_principle_check(G, lat, int(cfg["trials"]), int(cfg["seed"]), radius=int(cfg["radius"]))
    run.json("mp.json", r.to_json())
    print(json.dumps(_clean(r.to_json()), sort_keys=True))
    return 0 if r.violations == 0 else 1


COMMANDS = {"classify": cmd_classify, "solve": cmd_solve, "envelope": cmd_envelope, "hull": cmd_hull,
            "boundary": cmd_boundary, "span": cmd_span, "freedim": cmd_freedim, "repro": cmd_repro,
            "mp-check": cmd_mp_check}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from resetting a global flag given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--tol", type=float)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--grassmann", "-G",
                        help="plane family: inline JSON, JSON file, full:p:n or complex:n")
    p = argparse.ArgumentParser(prog="gpsh", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def lattice_args(sp):
        sp.add_argument("--box", default=None, help="lo,hi[,lo,hi...]")
        sp.add_argument("--h", type=float, default=None)
        sp.add_argument("--radius", type=int, default=None, help="stencil radius and boundary layer")
        sp.add_argument("--method", choices=["gs", "policy"], default=None)
        sp.add_argument("--periodic", default=None, help="comma-separated periodic axes")

    s = sub.add_parser("classify", parents=[common])
    s.add_argument("--matrix", default=None, help="CSV file with the symmetric matrix")
    s = sub.add_parser("solve", parents=[common])
    lattice_args(s)
    s.add_argument("--boundary", default=None, help="saddle, xsq, abs or custom-csv")
    s.add_argument("--boundary-file", default=None)
    s.add_argument("--max-sweeps", type=int, default=None)
    s.add_argument("--jacobi", action="store_true", default=None)
    s = sub.add_parser("envelope", parents=[common])
    lattice_args(s)
    s.add_argument("--obstacle", default=None, help="double-well, xsq, abs or custom-csv")
    s.add_argument("--obstacle-file", default=None)
    s = sub.add_parser("hull", parents=[common])
    lattice_args(s)
    s.add_argument("--points", default=None, help="x,y;x,y;...")
    s.add_argument("--threshold", type=float, default=None)
    s = sub.add_parser("boundary", parents=[common])
    s.add_argument("--domain", default=None)
    s.add_argument("--domain-params", default=None, help="JSON keyword arguments for the domain")
    s.add_argument("--grid-h", type=float, default=None)
    sub.add_parser("span", parents=[common])
    s = sub.add_parser("freedim", parents=[common])
    s.add_argument("--restarts", type=int, default=None)
    s = sub.add_parser("repro", parents=[common])
    s.add_argument("name")
    s = sub.add_parser("mp-check", parents=[common])
    lattice_args(s)
    s.add_argument("--trials", type=int, default=None)
    return p


def resolve_config(ns: argparse.Namespace) -> dict:
    """Command line over config file over defaults."""
    cfg = dict(DEFAULTS)
    config = getattr(ns, "config", None)
    if config:
        if not os.path.exists(config):
            raise UsageError(f"config file {config} not found")
        with open(config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(ns).items():
        if v is not None and k != "config":
            cfg[k] = v
    cfg["config"] = config
    return cfg


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    run = None
    try:
        cfg = resolve_config(ns)
        run = Run(ns.command, cfg, argv)
        with warnings.catch_warnings():
            warnings.simplefilter("always", MaximumPrincipleAtRisk)
            code = COMMANDS[ns.command](run)
        run.manifest(code)
        return code
    except (UsageError, GpshError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run is not None:
            run.manifest(2, str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
