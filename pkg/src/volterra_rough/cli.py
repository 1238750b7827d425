"""Command-line experiment runner.

Every subcommand resolves defaults, then a config file (TOML, or the JSON/CSV
output of an earlier run), then flags, and embeds the resolved config in its
output. Exit codes: 0 success, 2 invalid input, 3 a numerical check failed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 3

COMMON = {
    "kernel": {"kind": "fractional", "gamma": 0.25, "lam": 1.0},
    "driver": {"kind": "sine", "d": 1},
    "output": {"path": "", "format": "json"},
    "threads": 0,
}

DEFAULTS = {
    "lift": {"depth": 5, "sub_level": 10, "level_path": "", "level_format": "binary"},
    "norms": {"depth": 5, "alpha": 1.0, "pair_gamma": None, "etas": [0.0, 0.25, 0.5, 0.75, 1.0]},
    "chen-check": {"depths": "5:8", "coarse_level": 2, "min_slope": 1.0},
    "extend": {"m": 2, "n_tuples": 20, "seed": 0, "depth": 12, "tol": 1e-4},
    "solve": {"depth": 8, "field": "sin", "y0": [1.0], "scheme": "rough-euler", "T": 1.0,
              "columns": []},
    "brownian-mc": {"seed": 1, "n_paths": 10000, "d": 1, "fine_level": 8, "coarse_level": 3,
                    "n_tuples": 10, "p": 2, "max_z": 4.0},
    "verify-h": {"depth": 5, "etas": [0.0, 0.25, 0.5, 0.75, 1.0], "betas": [0.0, 0.25, 0.5, 0.75, 1.0]},
    "convergence": {"levels": "5:9", "field": "sin", "y0": [1.0], "scheme": "rough-euler",
                    "reference_level": 14, "T": 1.0},
}


class ConfigError(ValueError):
    pass


def defaults_for(cmd: str) -> dict:
    cfg = copy.deepcopy(COMMON)
    cfg.update(copy.deepcopy(DEFAULTS[cmd]))
    return cfg


def _merge(base: dict, extra: dict) -> dict:
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _merge(base[key], val)
        else:
            base[key] = val
    return base


def load_config(path) -> dict:
    """Read TOML, or recover the embedded config from a JSON/CSV output."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            data = json.loads(text)
            return data.get("config", data)
        if path.suffix == ".csv":
            first = text.splitlines()[0]
            if not first.startswith("# config="):
                raise ConfigError("CSV file has no embedded config")
            return json.loads(first[len("# config="):])
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def parse_range(spec) -> list:
    if isinstance(spec, (list, tuple)):
        return [int(v) for v in spec]
    text = str(spec)
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",")]


# ------------------------------------------------------------ builders

def _kernel(cfg):
    from .kernel import VolterraKernel
    try:
        return VolterraKernel.from_dict(cfg["kernel"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad kernel: {exc}") from exc


def _driver(cfg):
    from .lift import DrivingPath
    try:
        return DrivingPath.from_dict(cfg["driver"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad driver: {exc}") from exc


def _field(name, m):
    from .controlled import VectorField
    try:
        return VectorField.from_name(name, m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------ subcommands

def cmd_lift(cfg):
    from .grid import make_uniform
    from .lift import lift_level1, write_level
    k, x = _kernel(cfg), _driver(cfg)
    g = make_uniform(1.0, int(cfg["depth"]))
    z = lift_level1(k, x, g, sub_level=int(cfg["sub_level"]))
    if cfg["level_path"]:
        write_level(z, cfg["level_path"], cfg["level_format"])
    N = g.n_points
    Z = z.values
    add = 0.0
    for u in range(N):
        D = Z[:u + 1, u:] - Z[u, u:][None] - Z[:u + 1, u][:, None]
        tt, kk = np.indices((N - u, N), sparse=True)
        D = D * (kk >= tt + u)[None, :, :, None]
        add = max(add, float(np.max(np.abs(D))))
    return {"n_points": N, "additivity_defect": add, "max_abs": float(np.max(np.abs(z.values))),
            "diagonal_final": z.at(0, N - 1, N - 1).tolist(), "provenance": z.provenance}, True


def cmd_norms(cfg):
    from .grid import make_uniform
    from .hoelder import HoelderPair, estimate_norms
    from .lift import lift_level1
    k, x = _kernel(cfg), _driver(cfg)
    g = make_uniform(1.0, int(cfg["depth"]))
    z = lift_level1(k, x, g)
    gam = cfg["pair_gamma"] if cfg["pair_gamma"] is not None else k.gamma
    rep = estimate_norms(z, HoelderPair(float(cfg["alpha"]), float(gam)), cfg["etas"])
    return rep.to_dict(), True


def cmd_chen(cfg):
    from .convolution import chen_convergence
    res = chen_convergence(_kernel(cfg), _driver(cfg), parse_range(cfg["depths"]), int(cfg["coarse_level"]))
    ok = res["slope"] is not None and res["slope"] >= float(cfg["min_slope"])
    return dict(res, min_slope=cfg["min_slope"], passed=ok), ok


def cmd_extend(cfg):
    from .convolution import extend_values
    from .lift import SmoothLevel, smooth_signature
    k, x = _kernel(cfg), _driver(cfg)
    if int(cfg["m"]) != 2:
        raise ConfigError("the extend subcommand builds level 2 from level 1")
    rng = np.random.default_rng(int(cfg["seed"]))
    T = np.sort(rng.uniform(0, 1, (int(cfg["n_tuples"]), 3)), axis=1)
    vals, ind = extend_values([SmoothLevel(k, x, 1)], 2, x.alpha - k.gamma, k.gamma, T[:, 0], T[:, 1], T[:, 2])
    rows = []
    for n in range(T.shape[0]):
        ref = smooth_signature(k, x, 2, *T[n], depth=int(cfg["depth"]))[1]
        rows.append({"s": T[n, 0], "t": T[n, 1], "tau": T[n, 2], "extended": vals[n].ravel().tolist(),
                     "quadrature": ref.ravel().tolist(), "error": float(np.max(np.abs(vals[n] - ref)))})
    worst = max(r["error"] for r in rows)
    return {"rows": rows, "max_error": worst, "tol": cfg["tol"]}, worst <= float(cfg["tol"])


def _solve_cfg(cfg, L):
    from .grid import make_uniform
    from .solver import SolveConfig
    x = _driver(cfg)
    y0 = np.atleast_1d(np.asarray(cfg["y0"], dtype=float))
    f = _field(cfg["field"], y0.size)
    try:
        return SolveConfig(make_uniform(float(cfg["T"]), L), _kernel(cfg), f, y0, driver=x,
                           scheme=cfg["scheme"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_solve(cfg):
    from .solver import solve
    sol = solve(_solve_cfg(cfg, int(cfg["depth"])))
    P = sol.grid.points
    N = sol.grid.n_points
    rows = [[float(P[i]), float(P[i])] + sol.y[i, i].tolist() for i in range(N)]
    for tau in cfg["columns"]:
        kk = sol.grid.index_of(float(tau))
        rows += [[float(P[i]), float(P[kk])] + sol.y[i, kk].tolist() for i in range(kk + 1)]
    m = sol.y.shape[-1]
    return {"columns": ["t", "tau"] + [f"y{c}" for c in range(m)], "rows": rows}, True


def cmd_brownian(cfg):
    from .brownian import BrownianBatch, isometry_check, lp_bound_check, sample_lift
    from .grid import make_uniform
    k = _kernel(cfg)
    b = BrownianBatch(int(cfg["seed"]), int(cfg["n_paths"]), int(cfg["d"]), int(cfg["fine_level"]))
    g = make_uniform(1.0, int(cfg["coarse_level"]))
    try:
        lift = sample_lift(b, k, g)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    N = g.n_points
    rng = np.random.default_rng(int(cfg["seed"]))
    allt = [(s, t, tau) for s in range(N) for t in range(s + 1, N) for tau in range(t, N)]
    far = [tp for tp in allt if g.points[tp[2]] - g.points[tp[1]] >= 0.25]
    n = int(cfg["n_tuples"])
    iso_t = [far[i] for i in rng.choice(len(far), min(n, len(far)), replace=False)]
    stats = isometry_check(lift, iso_t)
    pick = rng.permutation(len(allt))[: 2 * n]
    lt = [allt[i] for i in pick]
    _, z2 = lift.values(lt)
    times = [tuple(float(g.points[i]) for i in tp) for tp in lt]
    lp = lp_bound_check(z2, int(cfg["p"]), lt, times, k.gamma, np.arange(len(lt)) < n)
    zmax = max(abs(s.z) for s in stats)
    ok = zmax <= float(cfg["max_z"]) and lp["passed"]
    return {"isometry": [s.to_dict() for s in stats], "max_abs_z": zmax,
            "lp": {"C": lp["C"], "held_out_max": lp["held_out_max"], "passed": lp["passed"],
                   "stats": [s.to_dict() for s in lp["stats"]]},
            "grid": {"fine_level": b.fine_level, "coarse_level": int(cfg["coarse_level"])}}, ok


def cmd_verify_h(cfg):
    from .grid import make_uniform
    from .kernel import verify_h
    rep = verify_h(_kernel(cfg), make_uniform(1.0, int(cfg["depth"])), cfg["etas"], cfg["betas"])
    return rep.to_dict(), True


def cmd_convergence(cfg):
    from .solver import convergence_study, product_integration_oracle
    levels = parse_range(cfg["levels"])
    base = _solve_cfg(cfg, levels[0])
    _, Y = product_integration_oracle(base.kernel, base.driver, base.field, base.y0, float(cfg["T"]),
                                      int(cfg["reference_level"]))
    res = convergence_study(base, levels, reference=Y[-1])
    return res, True


COMMANDS = {
    "lift": cmd_lift, "norms": cmd_norms, "chen-check": cmd_chen, "extend": cmd_extend,
    "solve": cmd_solve, "brownian-mc": cmd_brownian, "verify-h": cmd_verify_h,
    "convergence": cmd_convergence,
}


# ------------------------------------------------------------ plumbing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="volterra", description="Volterra rough path experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config, or a JSON/CSV output of an earlier run")
        p.add_argument("--print-defaults", action="store_true", help="print the default config as TOML")
        p.add_argument("--kernel", choices=["unit", "fractional", "tempered"])
        p.add_argument("--gamma", type=float)
        p.add_argument("--lam", type=float)
        p.add_argument("--driver", choices=["linear", "sine"])
        p.add_argument("--dim", type=int, help="driver dimension")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=["json", "csv"])
        p.add_argument("--threads", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a top-level key (value parsed as TOML)")
        if "depth" in DEFAULTS[name]:
            p.add_argument("--depth", type=int)
        if name == "chen-check":
            p.add_argument("--depths")
        if name == "convergence":
            p.add_argument("--levels")
        if "seed" in DEFAULTS[name]:
            p.add_argument("--seed", type=int)
        if "n_paths" in DEFAULTS[name]:
            p.add_argument("--n-paths", type=int, dest="n_paths")
    return ap


def resolve(args) -> dict:
    cfg = defaults_for(args.command)
    if args.config:
        _merge(cfg, load_config(args.config))
    flags = {
        ("kernel", "kind"): args.kernel, ("kernel", "gamma"): args.gamma, ("kernel", "lam"): args.lam,
        ("driver", "kind"): args.driver, ("driver", "d"): args.dim,
        ("output", "path"): args.out, ("output", "format"): args.format,
    }
    for (a, b), v in flags.items():
        if v is not None:
            cfg[a][b] = v
    for key in ("threads", "depth", "depths", "levels", "seed", "n_paths"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        try:
            cfg[key.strip()] = tomllib.loads(f"v = {val}")["v"]
        except tomllib.TOMLDecodeError:
            cfg[key.strip()] = val
    if not cfg["threads"]:
        cfg["threads"] = int(os.environ.get("VOLTERRA_THREADS", "0") or 0)
    unknown = set(cfg) - set(defaults_for(args.command))
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    return repr(v) if isinstance(v, float) else str(v)


def embedded(cfg) -> dict:
    """The config as recorded in outputs; the destination path is left out so
    that re-running from an output reproduces it byte for byte."""
    out = copy.deepcopy(_jsonable(cfg))
    out["output"].pop("path", None)
    return out


def render(cfg, results) -> str:
    fmt = cfg["output"]["format"]
    cfg, results = embedded(cfg), _jsonable(results)
    if fmt == "csv":
        if "columns" in results:
            cols, rows = results["columns"], results["rows"]
        elif "rows" in results and results["rows"] and isinstance(results["rows"][0], dict):
            cols = list(results["rows"][0].keys())
            rows = [[r[c] for c in cols] for r in results["rows"]]
        else:
            cols = ["key", "value"]
            rows = [[k, json.dumps(v)] for k, v in results.items()]
        buf = io.StringIO()
        buf.write("# config=" + json.dumps(cfg, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        w.writerows([_cell(v) for v in r] for r in rows)
        return buf.getvalue()
    return json.dumps({"config": cfg, "results": results}, indent=2, sort_keys=True) + "\n"


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.print_defaults:
        sys.stdout.write(tomli_w.dumps({k: v for k, v in defaults_for(args.command).items() if v is not None}))
        return EXIT_OK
    try:
        cfg = resolve(args)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=cfg["threads"] or None):
            results, ok = COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    text = render(cfg, results)
    if cfg["output"]["path"]:
        Path(cfg["output"]["path"]).write_text(text)
    else:
        sys.stdout.write(text)
    if not ok:
        sys.stderr.write("numerical check failed\n")
        return EXIT_CHECK
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
