"""Command line front end.

Subcommands: simulate, solve-hjb, estimate-theta, strategy, field, verify.
Configuration is a strict JSON document; unknown keys anywhere are rejected
by their dotted path. Every run writes a manifest.json echoing the fully
defaulted configuration, the library versions and the wall time (the wall
time is the only field allowed to differ between identical runs). Exit
codes: 0 success, 1 configuration or validation errors, 2 numerical
failures.
"""

import argparse
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, hjb, strategy
from .errors import NumericalError, ValidationError
from .feynman import feynman_kac_estimate
from .lqg import eval_field, q_constant, sample_field
from .model import ModelParams, SchoolState
from .sde import DynamicsSpec, simulate
from .verify import verify_battery

SUBCOMMANDS = ("simulate", "solve-hjb", "estimate-theta", "strategy", "field", "verify")

GAMMA_DEFAULT = math.sqrt(8.0 / 3.0)


def _fail(path, what):
    raise ValidationError(f"{path} {what}")


def _as_int(val, path):
    if isinstance(val, bool) or not isinstance(val, int):
        _fail(path, "must be an integer")
    return int(val)


def _as_num(val, path):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(path, "must be a number")
    return float(val)


def _as_bool(val, path):
    if not isinstance(val, bool):
        _fail(path, "must be a boolean")
    return val


def _as_str(val, path):
    if not isinstance(val, str):
        _fail(path, "must be a string")
    return val


def _as_num_or_list(val, path):
    if isinstance(val, list):
        return [_as_num(x, f"{path}[{k}]") for k, x in enumerate(val)]
    return _as_num(val, path)


def _as_num_list(val, path):
    if not isinstance(val, list):
        _fail(path, "must be a list of numbers")
    return [_as_num(x, f"{path}[{k}]") for k, x in enumerate(val)]


_CHECKERS = {
    "int": _as_int,
    "num": _as_num,
    "bool": _as_bool,
    "str": _as_str,
    "num_or_list": _as_num_or_list,
    "num_list": _as_num_list,
}

# key -> (type tag, default); None default with "num" means "filled later"
_PARAM_KEYS = {
    "n_fish": ("int", None),
    "horizon": ("num", None),
    "dt": ("num", None),
    "discount": ("num_or_list", 0.05),
    "weight": ("num_or_list", 1.0),
    "survival": ("num_or_list", 1.0),
    "comm_rate": ("num_or_list", 1.0),
    "coupling": ("num_or_list", 1.0),
    "mult1": ("num_or_list", 0.0),
    "mult2": ("num_or_list", 0.0),
    "mult3": ("num_or_list", 0.0),
    "sigma1": ("num_or_list", 0.1),
    "sigma2": ("num_or_list", 0.1),
    "corr": ("num", 0.0),
    "quad_cost": ("num", 1.0),
    "reward_floor": ("num", 0.0),
}
_PARAM_REQUIRED = ("n_fish", "horizon", "dt")

_SECTION_KEYS = {
    "dynamics": {
        "kind": ("str", "cucker-smale"),
        "convention": ("str", "paper"),
    },
    "policy": {
        "kind": ("str", "zero"),
        "value": ("num", 0.0),
    },
    "grid": {
        "x_min": ("num", -3.0),
        "x_max": ("num", 3.0),
        "nx": ("int", 41),
        "v_min": ("num", -3.0),
        "v_max": ("num", 3.0),
        "nv": ("int", 41),
    },
    "mc": {
        "n_paths": ("int", 1000),
        "dt": ("num", None),
    },
    "modes": {
        "gaussian_mode": ("str", "exact"),
        "conventional_cross_term": ("bool", False),
        "strategy_mode": ("str", "foc-consistent"),
        "f_sub_mode": ("str", "default"),
    },
    "field": {
        "gamma": ("num", GAMMA_DEFAULT),
        "truncation": ("int", 8),
        "l": ("num", 0.0),
    },
    "init": {
        "positions": ("num_list", None),
        "velocities": ("num_list", None),
    },
    "hjb": {
        "s_start": ("num", 0.0),
        "s_end": ("num", None),
        "n_time_steps": ("int", None),
        "safety": ("num", 0.25),
        "w_xx": ("num", 0.1),
        "w_vv": ("num", 0.1),
        "w_0": ("num", 0.0),
        "drift_x": ("num", -0.5),
        "drift_v": ("num", -0.5),
    },
    "estimate": {
        "s": ("num", 0.0),
        "x": ("num", 0.0),
        "v": ("num", 0.0),
        "tau": ("num", None),
    },
    "strategy": {
        "s": ("num", 0.5),
        "fish": ("int", 0),
        "k_offset": ("num", 0.0),
        "use_field": ("bool", False),
    },
}


def _check_section(raw, keyspec, path):
    if not isinstance(raw, dict):
        _fail(path, "must be an object")
    out = {}
    for k, val in raw.items():
        if k not in keyspec:
            raise ValidationError(f"unknown key {path}.{k}")
        tag, _default = keyspec[k]
        if val is None:
            out[k] = None
        else:
            out[k] = _CHECKERS[tag](val, f"{path}.{k}")
    for k, (tag, default) in keyspec.items():
        out.setdefault(k, default)
    return out


def parse_config(raw):
    """Validate a raw JSON object and return the fully defaulted config dict."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    known_top = {"schema_version", "seed", "params"} | set(_SECTION_KEYS)
    for k in raw:
        if k not in known_top:
            raise ValidationError(f"unknown key {k}")
    if "schema_version" not in raw:
        raise ValidationError("schema_version is required")
    if _as_int(raw["schema_version"], "schema_version") != 1:
        raise ValidationError("schema_version must be 1")
    if "seed" not in raw:
        raise ValidationError("seed is required")
    seed = _as_int(raw["seed"], "seed")
    if seed < 0:
        raise ValidationError("seed must be nonnegative")
    if "params" not in raw:
        raise ValidationError("params is required")
    params = _check_section(raw["params"], _PARAM_KEYS, "params")
    for k in _PARAM_REQUIRED:
        if params[k] is None:
            raise ValidationError(f"params.{k} is required")
    cfg = {"schema_version": 1, "seed": seed, "params": params}
    for section, keyspec in _SECTION_KEYS.items():
        cfg[section] = _check_section(raw.get(section, {}), keyspec, section)
    return cfg


def _build_params(cfg):
    kwargs = {k: v for k, v in cfg["params"].items() if v is not None}
    kwargs["n_fish"] = int(kwargs["n_fish"])
    return ModelParams(**kwargs)


def _build_dynamics(cfg):
    d = cfg["dynamics"]
    if d["kind"] != "cucker-smale":
        raise ValidationError("dynamics.kind must be 'cucker-smale' here; other kinds need library use")
    return DynamicsSpec(kind="cucker-smale", convention=d["convention"])


def _build_policy(cfg):
    p = cfg["policy"]
    if p["kind"] == "zero":
        return lambda s, state: 0.0
    if p["kind"] == "constant":
        value = p["value"]
        return lambda s, state: value
    raise ValidationError("policy.kind must be 'zero' or 'constant'")


def _build_school(cfg, params):
    init = cfg["init"]
    n = params.n_fish
    if init["positions"] is None:
        positions = 1.0 + 0.25 * np.arange(n)
    else:
        positions = np.asarray(init["positions"], dtype=float)
    if init["velocities"] is None:
        velocities = 1.0 + 0.1 * np.arange(n)
    else:
        velocities = np.asarray(init["velocities"], dtype=float)
    if positions.size != n or velocities.size != n:
        raise ValidationError("init vectors must have length params.n_fish")
    return SchoolState(0.0, positions, velocities)


def _build_problem(cfg, params):
    h = cfg["hjb"]
    w_xx, w_vv, w_0 = h["w_xx"], h["w_vv"], h["w_0"]
    ax, av = h["drift_x"], h["drift_v"]
    g = cfg["grid"]
    if g["nx"] < 3 or g["nv"] < 3:
        raise ValidationError("grid.nx and grid.nv must be >= 3")
    x = np.linspace(g["x_min"], g["x_max"], g["nx"])
    v = np.linspace(g["v_min"], g["v_max"], g["nv"])
    terminal = hjb.ValueGrid(x, v, np.ones((g["nx"], g["nv"])), time=0.0, tag="theta")
    s1 = float(np.max(np.atleast_1d(np.asarray(params.sigma1, dtype=float))))
    s2 = float(np.max(np.atleast_1d(np.asarray(params.sigma2, dtype=float))))
    problem = hjb.HjbProblem(
        W=lambda s, X, V: w_xx * X**2 + w_vv * V**2 + w_0,
        mu1=lambda s, X, V: ax * X,
        mu2=lambda s, X, V: av * V,
        sigma1=s1,
        sigma2=s2,
        corr=params.corr,
        R=params.quad_cost,
        terminal=terminal,
        conventional_cross_term=cfg["modes"]["conventional_cross_term"],
    )
    return problem, terminal


def _fmt(x):
    return f"{x:.17g}"


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trajectories(path, ens):
    with open(path, "w") as fh:
        fh.write("path,step,time,fish,x,v,u\n")
        n_fish = ens.xs.shape[2]
        for p in range(ens.n_paths):
            for k in range(ens.n_steps + 1):
                t = _fmt(ens.times[k])
                for i in range(n_fish):
                    fh.write(
                        f"{p},{k},{t},{i},{_fmt(ens.xs[p, k, i])},{_fmt(ens.vs[p, k, i])},{_fmt(ens.us[p, k, i])}\n"
                    )


def _write_grid_csv(path, grid):
    with open(path, "w") as fh:
        fh.write("x,v,value\n")
        for ix in range(grid.x.size):
            xs = _fmt(grid.x[ix])
            for iv in range(grid.v.size):
                fh.write(f"{xs},{_fmt(grid.v[iv])},{_fmt(grid.values[ix, iv])}\n")


def _run_simulate(cfg, out, track):
    params = _build_params(cfg)
    spec = _build_dynamics(cfg)
    policy = _build_policy(cfg)
    school = _build_school(cfg, params)
    ens = simulate(
        spec, params, policy, params.horizon, params.dt, cfg["mc"]["n_paths"], cfg["seed"], init=school
    )
    path = out / "trajectories.csv"
    track(path)
    _write_trajectories(path, ens)
    return 0


def _run_solve_hjb(cfg, out, track):
    params = _build_params(cfg)
    problem, terminal = _build_problem(cfg, params)
    h = cfg["hjb"]
    s_start = h["s_start"]
    s_end = params.horizon if h["s_end"] is None else h["s_end"]
    steps = h["n_time_steps"]
    if steps is None:
        limit = hjb.stability_limit(problem, terminal.dx, terminal.dv, h["safety"])
        # positivity also needs the potential decay and advection resolved
        X, V = terminal.mesh()
        rate = float(np.max(np.abs(problem.W(s_end, X, V)))) / abs(problem.omega)
        rate += float(np.max(np.abs(problem.mu1(s_end, X, V)))) / terminal.dx
        rate += float(np.max(np.abs(problem.mu2(s_end, X, V)))) / terminal.dv
        if rate > 0.0:
            limit = min(limit, 0.5 / rate)
        if not np.isfinite(limit):
            steps = 100
        else:
            steps = max(1, int(math.ceil((s_end - s_start) / (0.9 * limit))))
    solved = hjb.solve_theta_backward(problem, terminal, s_start, s_end, steps, h["safety"])
    csv_path = out / "theta.csv"
    meta_path = out / "theta.json"
    track(csv_path)
    track(meta_path)
    _write_grid_csv(csv_path, solved)
    _write_json(
        meta_path,
        {
            "x_min": float(solved.x[0]),
            "x_max": float(solved.x[-1]),
            "nx": int(solved.x.size),
            "v_min": float(solved.v[0]),
            "v_max": float(solved.v[-1]),
            "nv": int(solved.v.size),
            "time": float(solved.time),
            "tag": solved.tag,
            "omega": float(problem.omega),
            "n_time_steps": int(steps),
        },
    )
    return 0


def _run_estimate_theta(cfg, out, track):
    params = _build_params(cfg)
    problem, _terminal = _build_problem(cfg, params)
    e = cfg["estimate"]
    tau = params.horizon if e["tau"] is None else e["tau"]
    dt = params.dt if cfg["mc"]["dt"] is None else cfg["mc"]["dt"]
    est, stderr = feynman_kac_estimate(
        problem, (e["s"], e["x"], e["v"]), tau, cfg["mc"]["n_paths"], dt, cfg["seed"]
    )
    path = out / "estimate.json"
    track(path)
    _write_json(
        path,
        {
            "estimate": float(est),
            "stderr": float(stderr),
            "point": {"s": e["s"], "x": e["x"], "v": e["v"]},
            "tau": float(tau),
            "n_paths": int(cfg["mc"]["n_paths"]),
            "dt": float(dt),
            "omega": float(problem.omega),
        },
    )
    return 0


def _run_strategy(cfg, out, track):
    params = _build_params(cfg)
    school = _build_school(cfg, params)
    st = cfg["strategy"]
    fld = None
    if st["use_field"]:
        fld = sample_field(cfg["field"]["gamma"], cfg["field"]["truncation"], cfg["seed"])
    ctx = strategy.Example1Context(
        params=params,
        school=school,
        field=fld,
        l_point=cfg["field"]["l"],
        k_offset=st["k_offset"],
        mode=cfg["modes"]["strategy_mode"],
    )
    reports = [strategy.strategy_report(ctx, st["s"], i) for i in range(params.n_fish)]
    cases = strategy.case_diagnostics(ctx, st["s"], st["fish"])
    spath = out / "strategy.json"
    cpath = out / "cases.json"
    track(spath)
    track(cpath)
    _write_json(spath, {"controls": reports, "mode": ctx.mode, "time": st["s"]})
    _write_json(cpath, cases)
    return 0


def _run_field(cfg, out, track):
    f = cfg["field"]
    fld = sample_field(f["gamma"], f["truncation"], cfg["seed"])
    path = out / "field.json"
    track(path)
    _write_json(
        path,
        {
            "gamma": float(fld.gamma),
            "truncation": int(fld.truncation),
            "seed": int(cfg["seed"]),
            "cos_coef": [float(c) for c in fld.cos_coef],
            "sin_coef": [float(c) for c in fld.sin_coef],
            "l": float(f["l"]),
            "k_at_l": float(eval_field(fld, f["l"])),
            "q_constant": float(q_constant(fld.gamma)),
        },
    )
    return 0


def _run_verify(cfg, out, track):
    report = verify_battery(cfg["seed"])
    path = out / "verify.json"
    track(path)
    _write_json(path, report)
    if not report["all_pass"]:
        failed = sorted(k for k, v in report["suites"].items() if not v["pass"])
        print("verify failed: " + ", ".join(failed), file=sys.stderr)
        return 2
    return 0


_RUNNERS = {
    "simulate": _run_simulate,
    "solve-hjb": _run_solve_hjb,
    "estimate-theta": _run_estimate_theta,
    "strategy": _run_strategy,
    "field": _run_field,
    "verify": _run_verify,
}


def _apply_override(raw, spec):
    if "=" not in spec:
        raise ValidationError(f"--mode needs KEY=VALUE, got {spec!r}")
    key, _, text = spec.partition("=")
    key = key.strip()
    if not key:
        raise ValidationError(f"--mode needs KEY=VALUE, got {spec!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ValidationError(f"cannot override inside non-object key {part}")
        node = nxt
    node[parts[-1]] = value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _build_parser():
    parser = _Parser(prog="fishmig", description="fish-school migration control toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="path to a JSON configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument(
            "--mode",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override, repeatable",
        )
    return parser


_MINIMAL_RAW = {"schema_version": 1, "seed": 0, "params": {"n_fish": 2, "horizon": 1.0, "dt": 0.01}}


def load_raw_config(args):
    if args.config is None:
        if args.command != "verify":
            raise ValidationError("--config is required")
        raw = json.loads(json.dumps(_MINIMAL_RAW))
    else:
        path = Path(args.config)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}")
    for spec in args.mode:
        _apply_override(raw, spec)
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def run(args):
    raw = load_raw_config(args)
    cfg = parse_config(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    started = time.perf_counter()
    try:
        code = _RUNNERS[args.command](cfg, out, written.append)
    except BaseException:
        for p in written:
            Path(p).unlink(missing_ok=True)
        raise
    manifest = {
        "command": args.command,
        "config": cfg,
        "seed": cfg["seed"],
        "versions": {
            "fishmig": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    _write_json(out / "manifest.json", manifest)
    return code


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
