"""Command-line front end.

    toriclab <validate|eval|solve|normalize|geodesic|verify|export-plot> --config <path> [--out <dir>] [--seed <u64>]

The configuration is an INI file read with :mod:`configparser`.  Every
command writes its results to the output directory; wall-clock timings go to
``timings.json`` so that all other files are reproducible byte for byte.
Exit status is 0 on success, 2 on invalid input and 3 on numerical failure,
with the error also written as JSON to stdout and ``error.json``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import abreu, affine, calabi, invariants, verify
from .domain import Box, Disk, intersect, sample_interior
from .errors import ConfigError, IoError, NumericalError, ToricLabError
from .field import GridJets, SplitPotential, load_field, save_field
from .jets import QuadraticPotential
from .legendre import DualPotential
from .polytope import HalfPlaneModel, read_polytope, standard_simplex, unit_square

COMMANDS = ("validate", "eval", "solve", "normalize", "geodesic", "verify", "export-plot")
POTENTIAL_KINDS = ("guillemin", "guillemin+psi", "quadratic", "halfplane")


# -- configuration -------------------------------------------------------------------------


class RunConfig:
    """Parsed configuration with typed accessors; relative paths resolve against the config file."""

    def __init__(self, command: str, parser: configparser.ConfigParser, base: Path, out: Path, seed: int):
        self.command = command
        self.cp = parser
        self.base = base
        self.out = out
        self.seed = seed
        env = os.environ.get("TORICLAB_THREADS")
        self.threads = int(env) if env else self.get_int("run", "threads", os.cpu_count() or 1)
        if self.threads <= 0:
            raise ConfigError("threads must be positive", threads=self.threads)

    def get(self, section, key, default=None):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        return default

    def get_float(self, section, key, default=None, positive=False):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            v = float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number", value=raw) from None
        if positive and not v > 0:
            raise ConfigError(f"[{section}] {key} must be positive", value=v)
        return v

    def get_int(self, section, key, default=None, minimum=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            v = int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer", value=raw) from None
        if minimum is not None and v < minimum:
            raise ConfigError(f"[{section}] {key} must be at least {minimum}", value=v)
        return v

    def get_vector(self, section, key, default=None, size=2):
        raw = self.get(section, key)
        if raw is None:
            return None if default is None else np.asarray(default, dtype=float)
        try:
            v = np.array([float(t) for t in raw.replace(",", " ").split()])
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be numbers", value=raw) from None
        if size is not None and v.size != size:
            raise ConfigError(f"[{section}] {key} needs {size} numbers", value=raw)
        return v

    def get_bool(self, section, key, default=False):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a boolean", value=raw) from None

    def path(self, section, key, must_exist=True):
        raw = self.get(section, key)
        if raw is None:
            return None
        p = Path(raw)
        if not p.is_absolute():
            p = self.base / p
        if must_exist and not p.exists():
            raise IoError(f"[{section}] {key}: file not found", path=str(p))
        return p


def load_config(command: str, config_path, out=None, seed=None) -> RunConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", known=list(COMMANDS))
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    base = Path.cwd()
    if config_path is not None:
        p = Path(config_path)
        if not p.exists():
            raise IoError("config file not found", path=str(p))
        try:
            cp.read_string(p.read_text())
        except configparser.Error as exc:
            raise ConfigError("config file is not valid INI", reason=str(exc).splitlines()[0]) from None
        base = p.resolve().parent
    declared = cp.get("run", "command", fallback=None)
    if declared and declared.strip() != command:
        raise ConfigError("config was written for another command", config=declared.strip(), command=command)
    out_dir = Path(out) if out else Path(cp.get("run", "out", fallback="out"))
    if not out_dir.is_absolute() and not out:
        out_dir = base / out_dir
    if seed is None:
        seed = cp.getint("run", "seed", fallback=0)
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer", seed=seed)
    return RunConfig(command, cp, base, out_dir, int(seed))


# -- building blocks -----------------------------------------------------------------------


def build_polytope(cfg: RunConfig):
    builtin = cfg.get("polytope", "builtin")
    f = cfg.path("polytope", "file")
    edges = cfg.get("polytope", "edges")
    given = [x is not None for x in (builtin, f, edges)]
    if sum(given) > 1:
        raise ConfigError("give exactly one of [polytope] builtin, file or edges")
    if builtin is not None:
        table = {"square": unit_square, "simplex": standard_simplex}
        if builtin not in table:
            raise ConfigError("unknown builtin polytope", builtin=builtin, known=sorted(table))
        return table[builtin]()
    if f is not None:
        return read_polytope(f)
    if edges is not None:
        from .polytope import parse_polytope_text

        return parse_polytope_text(edges.replace(";", "\n"))
    return None


def build_potential(cfg: RunConfig):
    """(potential, domain, polytope or None, bbox or None) for the [potential] section."""
    kind = cfg.get("potential", "kind", "guillemin")
    if kind not in POTENTIAL_KINDS:
        raise ConfigError("unknown potential kind", kind=kind, known=list(POTENTIAL_KINDS))
    if kind in ("guillemin", "guillemin+psi"):
        poly = build_polytope(cfg)
        if poly is None:
            raise ConfigError("a [polytope] section is required for Guillemin potentials")
        u = poly.potential
        if kind == "guillemin+psi":
            psi_file = cfg.path("potential", "psi_file")
            if psi_file is None:
                raise ConfigError("[potential] psi_file is required for guillemin+psi")
            u = SplitPotential(poly.potential, load_field(psi_file), tag="loaded")
        return u, poly.domain, poly, None
    if kind == "quadratic":
        Q = cfg.get_vector("potential", "Q", (1.0, 0.0, 0.0, 1.0), size=4).reshape(2, 2)
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0:
            raise ConfigError("[potential] Q must be positive definite", Q=Q.tolist())
        center = cfg.get_vector("domain", "center", (0.0, 0.0))
        radius = cfg.get_float("domain", "radius", 1.0, positive=True)
        return QuadraticPotential(Q), Disk(center, radius), None, None
    hp = HalfPlaneModel()
    lo = cfg.get_vector("domain", "lo", (0.5, -0.5))
    hi = cfg.get_vector("domain", "hi", (1.5, 0.5))
    if lo[0] < 0 or np.any(hi <= lo):
        raise ConfigError("[domain] box must satisfy 0 <= lo < hi", lo=lo.tolist(), hi=hi.tolist())
    return hp.potential, intersect([hp.domain, Box(lo, hi)]), None, (lo, hi)


def sample_points(cfg: RunConfig, domain, section: str, default_n: int = 100, box=None):
    n = cfg.get_int(section, "points", default_n, minimum=1)
    margin = cfg.get_float(section, "margin", 0.05)
    explicit = cfg.get(section, "at")
    if explicit:
        pts = np.array([[float(t) for t in p.replace(",", " ").split()] for p in explicit.split(";")])
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ConfigError(f"[{section}] at must list points as 'a b; c d'")
        return pts
    rng = np.random.default_rng(cfg.seed)
    return sample_interior(domain, n, rng, min_margin=margin, box=box)


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# -- commands -------------------------------------------------------------------------------


def cmd_validate(cfg: RunConfig, polytope_file=None) -> dict:
    poly = read_polytope(polytope_file) if polytope_file else build_polytope(cfg)
    if poly is None:
        raise ConfigError("nothing to validate: give a [polytope] section or --polytope")
    report = {"valid": True, "edges": [[list(v), lam] for v, lam in poly.edges],
              "vertices": poly.vertices.tolist(), "area": poly.area()}
    write_json(cfg.out / "validate.json", report)
    return report


def cmd_eval(cfg: RunConfig) -> dict:
    u, domain, poly, box = build_potential(cfg)
    pts = sample_points(cfg, domain, "eval", box=box)
    chart = cfg.get("eval", "chart", "torus")
    if chart not in invariants.CHART:
        raise ConfigError("unknown chart", chart=chart, known=sorted(invariants.CHART))
    with_K = cfg.get_bool("eval", "with_K", False)
    route = cfg.get("eval", "route", "jet")
    rows = [(p[0], p[1], abreu.abreu_S_u(u, p, route=route)) for p in pts]
    write_rows(cfg.out / "curvature.csv", ["xi1", "xi2", "S"], rows)
    if cfg.get_bool("eval", "invariants", True):
        reps = [invariants.invariant_report(u, p, chart, with_K=with_K) for p in pts]
        invariants.write_invariant_csv(reps, cfg.out / "invariants.csv")
    S = np.array([r[2] for r in rows])
    summary = {"points": len(rows), "S_min": float(S.min()), "S_max": float(S.max()), "chart": chart,
               "route": route, "seed": cfg.seed}
    write_json(cfg.out / "eval.json", summary)
    return summary


def snapshot_function(field):
    """ξ ↦ ψ(ξ): stored node values where ξ is a node, spline interpolation elsewhere."""
    g = field.grid
    gj = GridJets(field, max_order=0)

    def fn(p):
        i, j = g.nearest_node(p)
        if 0 <= i < g.shape[0] and 0 <= j < g.shape[1] and np.isfinite(field.values[i, j]):
            if np.max(np.abs(g.coords(i, j) - p)) <= 1e-9 * g.h:
                return float(field.values[i, j])
        return gj.jet(p, 0).value

    return fn


def _psi0(cfg: RunConfig):
    f = cfg.path("solve", "psi0_file")
    expr = cfg.get("solve", "psi0")
    if f is not None and expr is not None:
        raise ConfigError("give at most one of [solve] psi0 and psi0_file")
    if f is not None:
        return snapshot_function(load_field(f))
    if expr is not None:
        spec = abreu.CurvatureSpec(expr)  # same sympy front end, names xi1, xi2
        return spec
    return None


def cmd_solve(cfg: RunConfig) -> dict:
    u, domain, poly, box = build_potential(cfg)
    if isinstance(u, SplitPotential):
        raise ConfigError("solve starts from an analytic potential; pass the snapshot as [solve] psi0_file")
    spec = abreu.CurvatureSpec(cfg.get("curvature", "K", "0"))
    boundary = cfg.get("solve", "boundary", "extrapolate" if poly is not None else "dirichlet")
    ghost = cfg.get("solve", "ghost")
    ghost_fn = abreu.CurvatureSpec(ghost) if ghost else None
    n = cfg.get_int("numeric", "n", abreu.DEFAULT_N, minimum=8)
    h = cfg.get_float("numeric", "h", None, positive=True)
    if h is not None:
        lo, hi = box if box is not None else domain.bbox
        n = max(8, int(round(float(np.max(np.asarray(hi) - np.asarray(lo))) / h)))
    kw = dict(analytic=u, n=n,
              tol=cfg.get_float("numeric", "tol", abreu.DEFAULT_TOL, positive=True),
              max_iter=cfg.get_int("numeric", "max_iter", 50, minimum=0),
              mode=cfg.get("numeric", "mode", "newton"),
              tau0=cfg.get_float("numeric", "tau0", 1e-7, positive=True),
              boundary=boundary, ghost_fn=ghost_fn, bbox=box,
              certify=cfg.get_bool("solve", "certify", True))
    if kw["mode"] not in ("newton", "relax"):
        raise ConfigError("[numeric] mode must be newton or relax", mode=kw["mode"])
    solved, rep = abreu.solve(poly if poly is not None else domain, spec, _psi0(cfg), **kw)
    save_field(solved.psi, cfg.out / "psi.csv", {"K": spec.expr, "boundary": boundary})
    d = rep.to_dict()
    d["affine_deviation"] = abreu.best_affine_deviation(solved)
    write_json(cfg.out / "solve_report.json", d)
    return {"converged": rep.converged, "iterations": rep.iterations, "_seconds": rep.seconds,
            "_failed": not rep.converged}


def cmd_normalize(cfg: RunConfig) -> dict:
    mode = cfg.get("normalize", "mode", "john")
    if mode == "john":
        verts = cfg.get("normalize", "vertices")
        if verts:
            v = np.array([[float(t) for t in p.replace(",", " ").split()] for p in verts.split(";")])
        else:
            poly = build_polytope(cfg)
            if poly is None:
                raise ConfigError("john normalization needs [normalize] vertices or a [polytope]")
            v = poly.vertices
        T, image = affine.john_normalize(v)
        r_in, r_out = affine.sandwich_radii(image)
        out = {"mode": mode, "map": T.to_dict(), "vertices": image.tolist(), "inradius": r_in,
               "circumradius": r_out, "sandwich": affine.check_sandwich(image), "widths": affine.widths(image)}
    elif mode == "blowup":
        u, domain, poly, box = build_potential(cfg)
        p = cfg.get_vector("normalize", "point")
        if p is None:
            raise ConfigError("[normalize] point is required for blow-up normalization")
        lam = cfg.get_float("normalize", "lambda", 1.0, positive=True)
        w, m = affine.blowup_normalize(u, p, lam)
        j = w.jet(np.zeros(2), 2)
        out = {"mode": mode, "map": m.to_dict(), "slope": w.slope.tolist(), "constant": w.const,
               "value_at_0": float(j.value), "hessian_at_0": j.hess.tolist()}
    else:
        raise ConfigError("[normalize] mode must be john or blowup", mode=mode)
    write_json(cfg.out / "affine_map.json", out["map"])
    write_json(cfg.out / "normalize.json", out)
    return out


def cmd_geodesic(cfg: RunConfig) -> dict:
    u, domain, poly, box = build_potential(cfg)
    mode = cfg.get("geodesic", "mode", "shoot")
    start = cfg.get_vector("geodesic", "start")
    if start is None:
        raise ConfigError("[geodesic] start is required")
    step = cfg.get_float("geodesic", "step", None, positive=True)
    if mode == "shoot":
        d = cfg.get_vector("geodesic", "direction")
        length = cfg.get_float("geodesic", "length", None, positive=True)
        if d is None or length is None:
            raise ConfigError("[geodesic] direction and length are required for shooting")
        path = calabi.geodesic_shoot(u, start, d, length, step)
        path.to_csv(cfg.out / "path.csv")
        out = {"mode": mode, "end": path.end.tolist(), "length": path.length}
    elif mode == "distance":
        target = cfg.get_vector("geodesic", "target")
        if target is None:
            raise ConfigError("[geodesic] target is required for distance queries")
        dist, V = calabi.shoot_to(u, start, target, step)
        G = u.jet(start, 2).hess
        path = calabi.geodesic_shoot(u, start, V, dist, step)
        path.to_csv(cfg.out / "path.csv")
        out = {"mode": mode, "distance": dist, "initial_velocity": V.tolist(),
               "unit_direction": (V / math.sqrt(float(V @ G @ V))).tolist()}
    elif mode == "boundary":
        rays = cfg.get_int("geodesic", "rays", 64, minimum=4)
        bd = calabi.distance_to_boundary(u, start, rays=rays, step=step)
        out = {"mode": mode, "distance": bd.distance, "direction": bd.direction.tolist(),
               "exit_point": bd.exit_point.tolist(), "rays": bd.rays, "finite": bd.finite}
    else:
        raise ConfigError("[geodesic] mode must be shoot, distance or boundary", mode=mode)
    write_json(cfg.out / "geodesic.json", out)
    return out


def _run_check(name, cfg, u, domain, box):
    tol = cfg.get_float("verify", "tol", verify.DEFAULT_TOL, positive=True)
    pts = sample_points(cfg, domain, "verify", default_n=20, box=box)
    if name == "bernstein":
        return verify.check_bernstein(u, pts if not hasattr(u, "psi") else None)
    if name == "phi_inequality":
        return verify.check_phi_inequality(u, pts, cfg.get_float("verify", "eps_S", 1e-3, positive=True),
                                           tol=tol, side="u")
    f = DualPotential(u)
    xs = np.array([u.jet(p, 1).grad for p in pts])
    if name == "inequality_I":
        return verify.check_inequality_I(f, xs, tol=tol, chart=cfg.get("verify", "chart", "torus"))
    if name == "inequality_II":
        from .instances import flat_reference

        return verify.check_inequality_II(f, flat_reference(), xs, tol=tol)
    if name == "theta_d2":
        return verify.monitor_theta_d2(u, pts, rays=cfg.get_int("verify", "rays", 16, minimum=4),
                                       with_K=cfg.get_bool("verify", "with_K", True))
    raise ConfigError("check not available from the command line", check=name,
                      known=["phi_inequality", "inequality_I", "inequality_II", "theta_d2", "bernstein"])


def cmd_verify(cfg: RunConfig) -> dict:
    solved = cfg.path("verify", "psi_file")
    u, domain, poly, box = build_potential(cfg)
    if solved is not None:
        u = SplitPotential(u, load_field(solved), tag="loaded")
        domain = u.domain
    names = [c.strip() for c in cfg.get("verify", "checks", "phi_inequality").split(",") if c.strip()]
    verdicts = {}
    for name in names:
        rep = _run_check(name, cfg, u, domain, box)
        rep.write_values(cfg.out / f"{rep.id}.csv")
        (cfg.out / f"{rep.id}.json").write_text(rep.to_json(values_ref=f"{rep.id}.csv") + "\n")
        verdicts[rep.id] = rep.verdict
    write_json(cfg.out / "verify.json", verdicts)
    return {"verdicts": verdicts, "_failed": any(v == "fail" for v in verdicts.values())}


PLOT_FIELDS = ("S", "phi", "theta", "J", "rho", "W", "psi", "value")


def _field_value(u, name, p, chart):
    if name == "S":
        return abreu.abreu_S_u(u, p)
    if name == "value":
        return u.value(p)
    if name in ("phi", "theta", "rho"):
        return getattr(invariants, name)(u, p)
    if name == "J":
        return invariants.pick_J(u, p)
    fj = invariants.dual_jet(invariants.jet(u, p, 4), 3)
    if name == "W":
        return invariants.complex_W(None, fj, chart)
    return invariants.psi(None, fj, chart)


def cmd_export_plot(cfg: RunConfig) -> dict:
    u, domain, poly, box = build_potential(cfg)
    name = cfg.get("plot", "field", "S")
    if name not in PLOT_FIELDS:
        raise ConfigError("unknown plot field", field=name, known=list(PLOT_FIELDS))
    n = cfg.get_int("plot", "n", 64, minimum=2)
    chart = cfg.get("plot", "chart", "torus")
    lo, hi = box if box is not None else domain.bbox
    # node-centred samples strictly inside the box
    a = lo[0] + (np.arange(n) + 0.5) * (hi[0] - lo[0]) / n
    b = lo[1] + (np.arange(n) + 0.5) * (hi[1] - lo[1]) / n
    M = np.full((n, n), np.nan)
    for i, x1 in enumerate(a):
        for k, x2 in enumerate(b):
            p = np.array([x1, x2])
            if domain.contains(p):
                try:
                    M[k, i] = _field_value(u, name, p, chart)
                except ToricLabError:
                    pass
    # gnuplot nonuniform matrix: first row holds x1, first column holds x2
    lines = [",".join([str(n)] + [_fmt(v) for v in a])]
    for k in range(n):
        lines.append(",".join([_fmt(b[k])] + ["nan" if not np.isfinite(v) else _fmt(v) for v in M[k]]))
    (cfg.out / f"{name}.csv").write_text("\n".join(lines) + "\n")
    out = {"field": name, "n": n, "finite": int(np.isfinite(M).sum())}
    write_json(cfg.out / "export_plot.json", out)
    return out


HANDLERS = {
    "validate": cmd_validate,
    "eval": cmd_eval,
    "solve": cmd_solve,
    "normalize": cmd_normalize,
    "geodesic": cmd_geodesic,
    "verify": cmd_verify,
    "export-plot": cmd_export_plot,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="toriclab", description="Toric Kähler geometry numerics")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides [run] seed)")
    ap.add_argument("--polytope", help="polytope file for validate")
    return ap


def _fail(exc: ToricLabError, out: Path | None) -> int:
    payload = exc.to_dict()
    text = json.dumps(payload, sort_keys=True, default=str)
    print(text)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return exc.exit_code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    t0 = time.perf_counter()
    try:
        if args.config is None and not (args.command == "validate" and args.polytope):
            raise ConfigError("--config is required")
        cfg = load_config(args.command, args.config, args.out, args.seed)
        out = cfg.out
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "error.json").unlink(missing_ok=True)
        if args.command == "validate":
            result = cmd_validate(cfg, args.polytope)
        else:
            result = HANDLERS[args.command](cfg)
    except ToricLabError as exc:
        return _fail(exc, out)
    except ValueError as exc:
        return _fail(ConfigError(str(exc)), out)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(NumericalError(f"{type(exc).__name__}: {exc}"), out)
    timings = {"command": args.command, "seconds": time.perf_counter() - t0}
    if isinstance(result, dict) and "_seconds" in result:
        timings["solver_seconds"] = result["_seconds"]
    (cfg.out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    public = {k: v for k, v in result.items() if not k.startswith("_")} if isinstance(result, dict) else {}
    print(json.dumps(public, sort_keys=True, default=_jsonable))
    if isinstance(result, dict) and result.get("_failed"):
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
