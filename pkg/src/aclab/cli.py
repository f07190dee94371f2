"""Command-line entry point: ``aclab <command> --config cfg.json --out dir``.

Every run validates its config against the shipped schema, writes the fully
resolved config and a manifest beside its outputs, and exits with 0 on
success, 2 on invalid input and 3 on numerical failure. Failures also leave
``diagnostics.json`` in the output directory and print the same JSON to stderr.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import importlib.metadata
import io
import json
import math
import os
import platform
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from aclab import __version__
from aclab.errors import (
    AclabError,
    ConfigurationError,
    DomainError,
    ResolutionError,
    StructuralError,
    UnsupportedDimensionError,
)

COMMANDS = ("simulate", "renorm-constants", "model-check", "minimize-action", "ldp-scan", "algebra")
SEED_ENV = "ACLAB_SEED"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class NumericalFailure(AclabError):
    """A run finished but its result is not usable (blowup, non-convergence)."""


def load_schema() -> dict:
    return json.loads(resources.files("aclab").joinpath("config_schema.json").read_text())


def _fill_defaults(schema: dict, doc: dict) -> dict:
    out = copy.deepcopy(doc)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
        if sub.get("type") == "object" and key in out:
            out[key] = _fill_defaults(sub, out[key])
    return out


def resolve_config(raw: dict, seed_flag: int | None = None, env=None) -> dict:
    """Validate, expand defaults and apply the seed precedence flag > env > config."""
    schema = load_schema()
    jsonschema.validate(raw, schema)
    cfg = _fill_defaults(schema, raw)
    for section in ("noise", "equation", "run"):
        cfg[section] = _fill_defaults(schema["properties"][section], cfg.get(section, {}))
    env = os.environ if env is None else env
    if seed_flag is not None:
        cfg["noise"]["seed"] = int(seed_flag)
    elif env.get(SEED_ENV):
        try:
            cfg["noise"]["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    jsonschema.validate(cfg, schema)
    return cfg


def _canonical(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _Outputs:
    """Tracks written files so the manifest can list their hashes."""

    def __init__(self, out: Path):
        self.out = out
        self.files = {}

    def text(self, name: str, content: str) -> Path:
        p = self.out / name
        p.write_text(content)
        self.files[name] = _sha256(content.encode())
        return p

    def register(self, name: str) -> None:
        self.files[name] = _sha256((self.out / name).read_bytes())


def _table(rows, columns, fmt: str) -> str:
    if fmt == "json":
        return _canonical([dict(zip(columns, r)) for r in rows])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _spec(cfg):
    from aclab.fields import GridSpec

    g = cfg["grid"]
    return GridSpec(d=g["d"], T=g["T"], n_t=g["n_t"], n_x=g["n_x"])


def _delta(cfg, spec) -> float:
    from aclab.harness import schedule_delta

    noise, eq = cfg["noise"], cfg["equation"]
    if "delta" in noise:
        return float(noise["delta"])
    if "schedule" in noise and eq["eps"] > 0:
        return schedule_delta(spec.d, noise["schedule"]["lambda"], eq["eps"], spec)
    return 0.0


def _solve_config(cfg, spec):
    from aclab.solver import SolveConfig

    eq, run = cfg["equation"], cfg["run"]
    u0 = np.full(spec.space_shape, float(run["u0"]))
    return SolveConfig(spec=spec, C=eq["C"], eps=eq["eps"], delta=_delta(cfg, spec),
                       renormalised=eq["renormalised"], u0=u0, blowup_threshold=run["blowup_threshold"],
                       mollifier=cfg["noise"]["mollifier"], dealias=run["dealias"])


def cmd_simulate(cfg, outs: _Outputs, fmt: str, workers: int) -> dict:
    from aclab.fields import GridField, export_slice_csv
    from aclab.noise import sample_white_noise
    from aclab.solver import level_spec, save_trajectory, solve

    spec = _spec(cfg)
    scfg = _solve_config(cfg, spec)
    xi = sample_white_noise(spec, cfg["noise"]["seed"]) if scfg.eps > 0 else None
    traj = solve(scfg, xi)
    save_trajectory(outs.out / "trajectory", traj)
    outs.register("trajectory.bin")
    outs.register("trajectory.json")
    summary = traj.metadata()
    if traj.blown_up:
        raise NumericalFailure(f"solution reached the blowup cap at t={traj.blowup_time:.6g}")
    export_slice_csv(outs.out / "terminal.csv", GridField(level_spec(spec), traj.values), spec.n_t)
    outs.register("terminal.csv")
    summary["terminal_sup"] = float(np.max(np.abs(traj.terminal)))
    return summary


def _per_delta_spec(spec, delta: float, ppd: int):
    from aclab.fields import GridSpec

    n_x = 2
    while 1.0 / n_x > delta / ppd * (1 + 1e-12):
        n_x *= 2
    # dt = delta^2/8 samples the mollifier's time profile well enough for c1.
    n_t = int(math.ceil(8.0 * spec.T / delta**2 * (1 - 1e-12)))
    return GridSpec(d=spec.d, T=spec.T, n_t=n_t, n_x=n_x)


def cmd_renorm_constants(cfg, outs: _Outputs, fmt: str, workers: int) -> dict:
    from aclab.renorm import c1, c2

    spec = _spec(cfg)
    run = cfg["run"]
    rho = cfg["noise"]["mollifier"]
    deltas = sorted(run.get("deltas") or [2.0**-k for k in range(3, 8)], reverse=True)
    rows = []
    prev = None
    for dl in deltas:
        s = spec if run["grid_policy"] == "fixed" else _per_delta_spec(spec, dl, run["points_per_delta"])
        v1 = c1(spec.d, dl, rho, s)
        v2 = c2(dl, rho, s) if spec.d == 3 else float("nan")
        diff = v1 - prev if prev is not None else float("nan")
        rows.append((float(dl), math.log(1.0 / dl), float(v1), float(diff), float(v2), s.n_x, s.n_t))
        prev = v1
    cols = ("delta", "log_inv_delta", "c1", "c1_diff", "c2", "n_x", "n_t")
    ext = "json" if fmt == "json" else "csv"
    outs.text(f"constants.{ext}", _table(rows, cols, fmt))
    L = np.array([r[1] for r in rows])
    v = np.array([r[2] for r in rows])
    summary = {"deltas": deltas, "c1": v.tolist()}
    if len(rows) >= 2:
        summary["c1_slope_vs_log_inv_delta"] = float(np.polyfit(L, v, 1)[0])
    return summary


def cmd_model_check(cfg, outs: _Outputs, fmt: str, workers: int) -> dict:
    from aclab.chaos import build_minimal_model, model_pair_3d
    from aclab.fields import TestFunction, test_pair
    from aclab.noise import sample_white_noise, trial_seed
    from aclab.renorm import renorm_constants

    spec = _spec(cfg)
    run = cfg["run"]
    rho = cfg["noise"]["mollifier"]
    sym = run["symbol"]
    if sym in ("<22>", "<31>", "<32>") and spec.d != 3:
        raise UnsupportedDimensionError(f"{sym} is only built in d = 3")
    center = tuple(run.get("test_center") or [spec.T / 2] + [0.5] * spec.d)
    phi = TestFunction(center, run["test_scale"])
    deltas = sorted(run.get("deltas") or [_delta(cfg, spec)], reverse=True)
    eps = cfg["equation"]["eps"] or 1.0
    rows = []
    for j, dl in enumerate(deltas):
        k = renorm_constants(spec.d, dl, rho, spec)
        ren = np.empty(run["samples"])
        raw = np.empty(run["samples"])
        for i in range(run["samples"]):
            xi = sample_white_noise(spec, trial_seed(trial_seed(cfg["noise"]["seed"], j), i))
            for store, flag in ((ren, True), (raw, False)):
                m = build_minimal_model(xi, dl, spec.d, renormalised=flag, eps=eps, rho=rho, constants=k)
                if sym in ("<22>", "<31>", "<32>"):
                    store[i] = model_pair_3d(m, sym, center, phi)
                else:
                    store[i] = test_pair(m[sym], phi)
        n = run["samples"]
        rows.append((float(dl), float(ren.mean()), float(ren.std(ddof=1) / math.sqrt(n)),
                     float(raw.mean()), float(raw.std(ddof=1) / math.sqrt(n)), float(k.c1),
                     float(k.c2) if k.c2 is not None else float("nan")))
    cols = ("delta", "renormalised_mean", "renormalised_stderr", "raw_mean", "raw_stderr", "c1", "c2")
    ext = "json" if fmt == "json" else "csv"
    outs.text(f"model_check.{ext}", _table(rows, cols, fmt))
    return {"symbol": sym, "deltas": deltas, "samples": run["samples"]}


def _event(run):
    from aclab.harness import AlwaysEvent, SupNormExceedance, TerminalL2Exit, TerminalSignChange

    ev = run.get("event")
    if ev is None:
        return None
    kind = ev["kind"]
    if kind == "always":
        return AlwaysEvent()
    if "threshold" not in ev and kind != "terminal_sign_change":
        raise ConfigurationError(f"event {kind!r} needs a threshold")
    if kind == "terminal_l2_exit":
        return TerminalL2Exit(ev["threshold"])
    if kind == "sup_norm_exceedance":
        return SupNormExceedance(ev["threshold"])
    return TerminalSignChange(ev.get("threshold", 0.0))


def _instanton(cfg, spec, event, target):
    from aclab.action import minimize_action

    run = cfg["run"]
    kwargs = {}
    if run.get("mus"):
        kwargs["mus"] = tuple(run["mus"])
    u0 = np.full(spec.space_shape, float(run["u0"]))
    return minimize_action(spec.d, cfg["equation"]["C"], spec.T, spec, u0=u0, target=target, event=event,
                           lam=run.get("lambda"), rho=cfg["noise"]["mollifier"], maxiter=run["maxiter"], **kwargs)


def cmd_minimize_action(cfg, outs: _Outputs, fmt: str, workers: int) -> dict:
    from aclab.fields import write_field
    from aclab.solver import save_trajectory

    spec = _spec(cfg)
    run = cfg["run"]
    event = _event(run)
    target = None
    if run.get("target") is not None:
        t = run["target"]
        x = np.meshgrid(*([np.arange(spec.n_x) * spec.dx] * spec.d), indexing="ij")[0]
        target = np.full(spec.space_shape, t["value"]) if t["kind"] == "constant" else t["value"] * np.cos(2 * np.pi * x)
    if (target is None) == (event is None):
        raise ConfigurationError("minimize-action needs exactly one of run.target or run.event")
    if event is not None and not hasattr(event, "distance_and_gradient"):
        raise ConfigurationError("this event has no terminal distance; use terminal_l2_exit")
    res = _instanton(cfg, spec, event, target)
    write_field(outs.out / "control.bin", res.h)
    outs.register("control.bin")
    save_trajectory(outs.out / "instanton", res.trajectory)
    outs.register("instanton.bin")
    outs.register("instanton.json")
    summary = {"action": res.action, "misfit": res.misfit, "success": res.success, "message": res.message,
               "C_used": res.C_used, "iterations": len(res.log)}
    outs.text("iterations.json", _canonical(res.log))
    if not res.success:
        raise NumericalFailure(res.message, summary)
    return summary


def cmd_ldp_scan(cfg, outs: _Outputs, fmt: str, workers: int) -> dict:
    from aclab.harness import Schedule, compare_with_rate, estimate_rare_event

    spec = _spec(cfg)
    run = cfg["run"]
    event = _event(run)
    if event is None:
        raise ConfigurationError("ldp-scan needs run.event")
    eps_list = run.get("eps_list")
    if not eps_list:
        raise ConfigurationError("ldp-scan needs run.eps_list")
    noise = cfg["noise"]
    lam = noise.get("schedule", {}).get("lambda", 0.0)
    if "delta" in noise:
        fixed = float(noise["delta"])
        schedule = Schedule(spec.d, lam, fn=lambda e: fixed)
    else:
        schedule = Schedule(spec.d, lam)
    scfg = _solve_config(cfg, spec)
    inst = None
    if run["estimator"] == "tilted" or hasattr(event, "distance_and_gradient"):
        if hasattr(event, "distance_and_gradient"):
            inst = _instanton(cfg, spec, event, None)
            if not inst.success:
                raise NumericalFailure(f"instanton did not converge: {inst.message}")
    if run["estimator"] == "tilted" and inst is None:
        raise ConfigurationError("the tilted estimator needs an event with a terminal distance")
    table = estimate_rare_event(scfg, schedule, eps_list, event, run["trials"], run["estimator"],
                                instanton=inst, seed=noise["seed"], chunk=run["chunk"], workers=workers)
    if fmt == "json":
        rows = [[getattr(r, c) for c in table.COLUMNS] for r in table.rows]
        outs.text("ldp_table.json", _table(rows, table.COLUMNS, "json"))
    else:
        outs.text("ldp_table.csv", table.to_csv())
    summary = {"rows": len(table.rows), "flagged": sum(r.flagged for r in table.rows)}
    if inst is not None:
        report = compare_with_rate(table, inst)
        outs.text("rate_report.json", report.to_json() + "\n")
        outs.text("rate_report.txt", report.render() + "\n")
        summary.update(action=inst.action, verdict=report.verdict)
    return summary


def algebra_query(query: str) -> list:
    """Answer ``"<set> d=<n>"`` (set in U, W, W_plus, W_minus) or ``"coproduct <tree>"``."""
    from aclab.algebra import coproduct, format_coproduct, generate_symbols, homogeneity, parse, to_text, tree, tree_name

    parts = query.split()
    if parts and parts[0] == "coproduct" and len(parts) == 2:
        tau = tree(parts[1]) if parts[1].startswith("<") or parts[1] == "Xi" else parse(parts[1])
        return [format_coproduct(coproduct(tau))]
    if len(parts) != 2 or not parts[1].startswith("d="):
        raise ConfigurationError(f"cannot parse algebra query {query!r}")
    name, d = parts[0], int(parts[1][2:])
    sets = generate_symbols(d)
    if name not in ("U", "W", "W_plus", "W_minus"):
        raise ConfigurationError(f"unknown symbol set {name!r}")
    out = []
    for s in getattr(sets, name):
        if name == "W_plus":
            out.append(s.text(names=True))
            continue
        try:
            label = tree_name(s)
        except StructuralError:
            label = to_text(s)
        out.append(f"{label}\t{homogeneity(s, d)}")
    return out


def cmd_algebra(cfg, outs: _Outputs, fmt: str, workers: int, query: str | None = None) -> dict:
    query = query or cfg["run"].get("query") or f"W_minus d={cfg['grid']['d']}"
    lines = algebra_query(query)
    print("\n".join(lines))
    if fmt == "json":
        outs.text("algebra.json", _canonical({"query": query, "result": lines}))
    else:
        outs.text("algebra.txt", "\n".join(lines) + "\n")
    return {"query": query, "count": len(lines)}


HANDLERS = {
    "simulate": cmd_simulate,
    "renorm-constants": cmd_renorm_constants,
    "model-check": cmd_model_check,
    "minimize-action": cmd_minimize_action,
    "ldp-scan": cmd_ldp_scan,
    "algebra": cmd_algebra,
}


def _versions() -> dict:
    return {"aclab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "jsonschema": importlib.metadata.version("jsonschema")}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aclab", description="Stochastic Allen-Cahn experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config (algebra may omit it)")
    p.add_argument("--out", default="aclab-out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help=f"master seed; overrides {SEED_ENV} and the config")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for Monte Carlo trials")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    p.add_argument("--query", default=None, help='algebra query such as "W_minus d=3"')
    return p


def _fail(out: Path | None, code: int, kind: str, exc: Exception, extra=None) -> int:
    diag = {"status": "invalid" if code == EXIT_INVALID else "numerical_failure",
            "error": kind, "message": str(exc)}
    if isinstance(exc, ResolutionError):
        diag.update(required_n_x=exc.required_n_x, required_n_t=exc.required_n_t, min_eps=exc.min_eps)
    if extra:
        diag["details"] = extra
    text = _canonical(diag)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "diagnostics.json").write_text(text)
        except OSError:
            pass
    sys.stderr.write(text)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.config:
            raw = json.loads(Path(args.config).read_text())
        elif args.command == "algebra":
            raw = {"grid": {"d": 3}}
        else:
            raise ConfigurationError("--config is required for this command")
        cfg = resolve_config(raw, args.seed)
        if args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
    except (OSError, json.JSONDecodeError, ConfigurationError) as exc:
        return _fail(out, EXIT_INVALID, type(exc).__name__, exc)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        return _fail(out, EXIT_INVALID, "SchemaError", f"{path or '<root>'}: {exc.message}")

    out.mkdir(parents=True, exist_ok=True)
    outs = _Outputs(out)
    resolved = outs.text("config.resolved.json", _canonical(cfg))
    try:
        handler = HANDLERS[args.command]
        if args.command == "algebra":
            summary = handler(cfg, outs, args.format, args.workers, query=args.query)
        else:
            summary = handler(cfg, outs, args.format, args.workers)
    except NumericalFailure as exc:
        extra = exc.args[1] if len(exc.args) > 1 else None
        return _fail(out, EXIT_NUMERICAL, "NumericalFailure", exc.args[0], extra)
    except (ResolutionError, ConfigurationError, DomainError, StructuralError, UnsupportedDimensionError) as exc:
        return _fail(out, EXIT_INVALID, type(exc).__name__, exc)
    except (AclabError, FloatingPointError) as exc:
        return _fail(out, EXIT_NUMERICAL, type(exc).__name__, exc)

    outs.text("summary.json", _canonical(summary))
    manifest = {
        "command": ["aclab", args.command, "--config", "config.resolved.json", "--format", args.format],
        "config_sha256": _sha256(resolved.read_bytes()),
        "seed": cfg["noise"]["seed"],
        "versions": _versions(),
        "outputs": dict(sorted(outs.files.items())),
    }
    if args.command == "algebra" and args.query:
        manifest["command"] += ["--query", args.query]
    (out / "manifest.json").write_text(_canonical(manifest))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
