"""Command-line entry point: ``cgprocess <subcommand>``.

Subcommands: ``simulate``, ``solve``, ``oracle``, ``validate`` and
``model gen``.  Global flags (``--seed``, ``--threads``, ``--out``,
``--config``) may appear before or after the subcommand.

Config files are INI style.  Sections and keys::

    [experiment]  name, replicates, seed, threads, clock, times, output_dir
    [model]       family, plus that family's parameters
    [params]      experiment-specific parameters
    [solve]       family, h, t_max, plus d | r | c | pmf | path, root
    [validate]    suite, budget, only

Unknown sections or keys are rejected with exit code 2.  Command-line flags
override the file.

Exit codes: 0 success, 1 a validation criterion failed, 2 invalid
configuration or arguments, 3 invariant violation during a run, 130
interrupted (partial output marked ``truncated``).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance as A
from . import experiments as X
from . import models as M
from . import oracle, solver
from .engine import Clock
from .exceptions import InvalidArgument, InvariantViolation, ProtocolViolation
from .rng import stream

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INVARIANT, EXIT_INTERRUPTED = 0, 1, 2, 3, 130

DEFAULT_SEED = 1

SCHEMA = {
    "experiment": {"name", "replicates", "seed", "threads", "clock", "times", "output_dir"},
    "model": None,  # checked against the family
    "params": None,  # checked against the experiment
    "solve": {"family", "h", "t_max", "d", "r", "c", "pmf", "path", "root"},
    "validate": {"suite", "budget", "only"},
}

SOLVE_FAMILIES = ("tree-file", "dary", "regular", "gw-poisson", "gw-pmf")


class ConfigError(Exception):
    pass


# value parsing --------------------------------------------------------------------


def _number(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def _list(text: str, typ) -> list:
    items = [x.strip() for x in str(text).split(",") if x.strip()]
    return [typ(_number(x)) for x in items]


def _coerce(value, like, name: str):
    """Coerce a config string to the type of the default ``like``."""
    if not isinstance(value, str):
        return value
    try:
        if isinstance(like, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, list) or like is None:
            typ = X.PARAM_TYPES.get(name, float)
            if like:
                typ = type(like[0])
            return _list(value, typ)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc
    return value


def _kv_pairs(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_config(path: str | None) -> dict[str, dict[str, str]]:
    if path is None:
        return {}
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        keys = dict(cp.items(section))
        allowed = SCHEMA[section]
        if allowed is not None and set(keys) - allowed:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(set(keys) - allowed)}")
        out[section] = keys
    return out


# output helpers -------------------------------------------------------------------


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _jsonable(v) for k, v in r.items()})
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _global(args, name, cfg_value=None, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg_value if cfg_value is not None else default


# subcommands ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = read_config(args.config)
    exp_cfg = dict(cfg.get("experiment", {}))
    name = args.experiment or exp_cfg.pop("name", None)
    exp_cfg.pop("name", None)
    if name is None:
        raise ConfigError("no experiment named (use --experiment or [experiment] name)")
    if name not in X.EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(X.EXPERIMENTS)}")
    exp = X.EXPERIMENTS[name]
    seed = int(_global(args, "seed", exp_cfg.get("seed"), DEFAULT_SEED))
    threads = int(_global(args, "threads", exp_cfg.get("threads"), 1))
    out_dir = Path(_global(args, "out", exp_cfg.get("output_dir"), f"out-{name}"))
    replicates = args.replicates if args.replicates is not None else exp_cfg.get("replicates")
    replicates = int(replicates) if replicates is not None else None
    clock = args.clock or exp_cfg.get("clock")
    if clock is not None and clock not in {c.value for c in Clock}:
        raise ConfigError(f"clock must be one of {[c.value for c in Clock]}")

    model_desc = {**cfg.get("model", {}), **_kv_pairs(args.model)}
    params = {**cfg.get("params", {}), **_kv_pairs(args.param)}
    times = exp_cfg.get("times")
    if times is not None:
        if "times" not in exp.defaults:
            raise ConfigError(f"experiment {name!r} takes no times list")
        params["times"] = times
    unknown = set(params) - set(exp.defaults)
    if unknown:
        raise ConfigError(f"unknown parameters for {name!r}: {sorted(unknown)}")
    params = {k: _coerce(v, exp.defaults[k], k) for k, v in params.items()}

    try:
        output, resolved = X.run_experiment(name, model_desc, params, seed, threads, clock, replicates)
    except KeyboardInterrupt:
        meta = {"experiment": name, "seed": seed, "threads": threads, "truncated": True, "version": __version__}
        _write(out_dir / "summary.json", dump_json(meta))
        return EXIT_INTERRUPTED
    resolved["output_dir"] = str(out_dir)
    doc = {"config": resolved, "version": __version__, "truncated": False, "summary": output.summary,
           "curves": sorted(output.curves)}
    _write(out_dir / "summary.json", dump_json(doc))
    for curve, rows in output.curves.items():
        _write(out_dir / f"{curve}.csv", rows_to_csv(rows))
    print(dump_json(doc), end="")
    return EXIT_OK


def _solve_table(family: str, p: dict, grid: solver.Grid):
    if family == "dary":
        return solver.solve_dary_fixed_point(int(p["d"]), grid)
    if family == "regular":
        return solver.solve_r_regular(int(p["r"]), grid)
    if family == "gw-poisson":
        return solver.solve_gw(M.GwOffspring.poisson(float(p["c"])), grid)
    if family == "gw-pmf":
        return solver.solve_gw(M.GwOffspring(p["pmf"]), grid)
    if family == "tree-file":
        return solver.solve_tree_recursion(M.MeetingModel.load(p["path"]), int(p.get("root", 0)), grid)
    raise ConfigError(f"solve family must be one of {SOLVE_FAMILIES}")


_SOLVE_TYPES = {"d": int, "r": int, "root": int, "c": float, "path": str,
               "pmf": lambda v: v if isinstance(v, list) else _list(v, float)}

_SOLVE_NEEDS = {"dary": {"d"}, "regular": {"r"}, "gw-poisson": {"c"}, "gw-pmf": {"pmf"}, "tree-file": {"path"}}


def cmd_solve(args) -> int:
    cfg = read_config(args.config)
    p = {**cfg.get("solve", {}), **_kv_pairs(args.set)}
    if args.family:
        p["family"] = args.family
    unknown = set(p) - SCHEMA["solve"]
    if unknown:
        raise ConfigError(f"unknown solve keys: {sorted(unknown)}")
    family = p.pop("family", None)
    if family not in SOLVE_FAMILIES:
        raise ConfigError(f"solve family must be one of {SOLVE_FAMILIES}")
    missing = _SOLVE_NEEDS[family] - set(p)
    if missing:
        raise ConfigError(f"family {family!r} needs {sorted(missing)}")
    try:
        for k, typ in _SOLVE_TYPES.items():
            if k in p:
                p[k] = typ(p[k])
        h = float(p.pop("h", 0.01))
        t_max = float(p.pop("t_max", 1.0))
        grid = solver.Grid.uniform(h, t_max)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out_dir = Path(_global(args, "out", None, f"out-solve-{family}"))

    table = _solve_table(family, p, grid)
    table.check_invariants(1e-9)
    value, err = solver.refine_and_estimate_error(lambda g: _solve_table(family, p, g), grid)
    report = {"phi0_tmax": float(table.values[0, -1]), "richardson": {"refined_value": value, "error_estimate": err}}
    zz, tt = grid.z[:, None], grid.t[None, :]
    if family == "gw-poisson":
        exact = oracle.pgw_phi(float(p["c"]), zz, tt)
        report["closed_form_max_error"] = float(np.abs(table.values - exact).max())
        report["closed_form_phi0_tmax"] = oracle.pgw_solvent_prob(float(p["c"]), t_max)
    if family == "dary":
        d = int(p["d"])
        b = oracle.dary_phi_bounds(d, zz, tt)
        report["bounds"] = {"epsilon_d": b.epsilon_d, "max_upper_excess": float((table.values - b.upper).max()),
                            "max_lower_excess": float((b.lower - table.values).max())}
    if family == "regular":
        r = int(p["r"])
        base = solver.solve_dary_fixed_point(r - 1, grid).values
        eps = oracle.epsilon_d(r - 1)
        upper_gap = float((table.values - base).max())
        lower_gap = float(((1 - eps) * base - table.values).max())
        report["sandwich"] = {"epsilon": eps, "max_upper_violation": upper_gap, "max_lower_violation": lower_gap,
                              "holds": bool(max(upper_gap, lower_gap) <= X.SANDWICH_SLACK),
                              "two_over_r": 2.0 / r}
    resolved = {"family": family, "h": h, "t_max": t_max, **p}
    doc = {"config": resolved, "version": __version__, "table": table.sidecar(), "report": report}
    _write(out_dir / "table.csv", table.to_csv())
    _write(out_dir / "table.json", dump_json(doc))
    print(dump_json(doc), end="")
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.name not in oracle.REGISTRY:
        raise ConfigError(f"unknown oracle {args.name!r}; choose from {sorted(oracle.REGISTRY)}")
    params = {k: _number(v) for k, v in _kv_pairs(args.params).items()}
    try:
        value = oracle.REGISTRY[args.name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {args.name}: {exc}") from exc
    print(dump_json({"name": args.name, "params": params, "value": value}), end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = read_config(args.config).get("validate", {})
    suite = args.suite or cfg.get("suite", "fast")
    if suite not in A.SUITES:
        raise ConfigError(f"suite must be one of {A.SUITES}")
    budget = args.budget if args.budget is not None else cfg.get("budget")
    budget = float(budget) if budget is not None else (120.0 if suite == "fast" else None)
    only = args.only if args.only is not None else (_list(cfg["only"], int) if "only" in cfg else None)
    seed = int(_global(args, "seed", None, DEFAULT_SEED))
    threads = int(_global(args, "threads", None, 1))

    start = time.perf_counter()
    results = A.run_suite(suite, seed, threads, only=set(only) if only else None,
                          on_result=lambda r: print(A.format_line(r), flush=True))
    elapsed = time.perf_counter() - start
    failed = [r.id for r in results if r.gated and not r.passed]
    over_budget = budget is not None and elapsed > budget
    report = {
        "version": __version__,
        "config": {"suite": suite, "seed": seed, "threads": threads, "budget": budget, "only": only},
        "criteria": [r.as_dict() for r in results],
        "failed": failed,
        "passed": not failed and not over_budget,
        # wall-clock figures vary run to run; kept apart from the criteria
        "timing": {"total_seconds": elapsed, "over_budget": over_budget,
                   "per_criterion": {str(r.id): {"seconds": r.elapsed, "budget": r.budget} for r in results}},
    }
    out = _global(args, "out", None, None)
    if out is not None:
        _write(Path(out) / "validate_report.json", dump_json(report))
    if failed:
        names = ", ".join(f"{r.id} ({r.name})" for r in results if r.id in failed)
        print(f"FAILED criteria: {names}")
    if over_budget:
        print(f"FAILED budget: {elapsed:.1f}s > {budget:.0f}s")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_model_gen(args) -> int:
    cfg = read_config(args.config).get("model", {})
    desc = {**cfg, **_kv_pairs(args.set)}
    family = args.family or desc.pop("family", None)
    desc.pop("family", None)
    if family is None:
        raise ConfigError("no model family given")
    built = X.build_model(family, desc)
    if callable(built) and not isinstance(built, M.MeetingModel):
        built = built(stream(int(_global(args, "seed", None, DEFAULT_SEED)), 0))
    text = built.to_text()
    out = _global(args, "out", None, None)
    if out is None:
        sys.stdout.write(text)
    else:
        _write(Path(out), text)
    return EXIT_OK


# argument parsing -----------------------------------------------------------------


def _globals_parser(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default, help="master seed (64-bit integer)")
    p.add_argument("--threads", type=int, default=default, help="worker threads; never changes results")
    p.add_argument("--out", default=default, help="output directory (file for model gen)")
    p.add_argument("--config", default=default, help="INI config file")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgprocess", parents=[_globals_parser(False)],
                                     description="Compulsive-gambler process experiments and solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    g = [_globals_parser(True)]

    s = sub.add_parser("simulate", parents=g, help="run a registered experiment")
    s.add_argument("--experiment", choices=sorted(X.EXPERIMENTS))
    s.add_argument("--replicates", type=int)
    s.add_argument("--clock", choices=[c.value for c in Clock])
    s.add_argument("--model", action="append", metavar="KEY=VALUE", help="model family or parameter")
    s.add_argument("--param", action="append", metavar="KEY=VALUE", help="experiment parameter")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", parents=g, help="tabulate the generating-function recursion")
    s.add_argument("--family", choices=SOLVE_FAMILIES)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="h, t_max, d, r, c, pmf, path, root")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("oracle", parents=g, help="evaluate a closed-form quantity")
    s.add_argument("name")
    s.add_argument("params", nargs="*", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("validate", parents=g, help="run the acceptance suite")
    s.add_argument("--suite", choices=A.SUITES)
    s.add_argument("--budget", type=float, help="overall wall-clock budget in seconds")
    s.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    s.set_defaults(func=cmd_validate)

    m = sub.add_parser("model", help="model utilities")
    msub = m.add_subparsers(dest="model_command", required=True)
    s = msub.add_parser("gen", parents=g, help="write a model as a text edge list")
    s.add_argument("--family", choices=sorted(X.MODEL_FAMILIES))
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_model_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, ProtocolViolation) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
