"""Command-line front end.

    eventum simulate  --model clock --kappa 2 --t-end 10 --n 10000 --seed 42
    eventum integrate --model clock --kappa 1 --t-end 5
    eventum verify    --model testpair --n 100,1000,10000
    eventum demo detector | clock

Exit codes: 0 success, 1 a check failed, 2 usage error, 3 numerical abort.
Machine-readable results go to files under ``--out``; stdout gets a short
human summary and diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from . import io
from .engine import EngineConfig, run_trajectory, simulate_ensemble
from .ensemble import convergence_report
from .errors import NUMERICAL_ERRORS, EventumError
from .master import DensityFamily, integrate
from .models import (
    check_clock_horizon,
    check_no_wrap,
    detection_prob_closed_form,
    tick_gaps,
)
from .rng import RngStream

SEED_ENV = "EVENTUM_SEED"
COMMANDS = ("simulate", "integrate", "verify", "demo")
DEMOS = ("detector", "clock")

# flag dest -> builtin model parameter name
MODEL_FLAGS = {
    "kappa": "kappa", "width": "width", "a": "a", "i_max": "i_max", "grid_N": "grid.N",
    "grid_L": "grid.L", "x0": "x0", "sigma": "sigma", "model_seed": "model_seed",
    "dim": "dim", "isometry": "isometry",
}
CONFIG_KEYS = {"model", "params", "t_start", "t_end", "n", "seed", "base_step", "root_tol",
               "dt", "checkpoints", "out", "jobs", "log_compact", "matrices"}


class UsageError(EventumError):
    pass


@dataclass
class RunConfig:
    command: str
    model: str | None = None
    params: dict[str, Any] = field(default_factory=dict)
    demo: str | None = None
    t_start: float = 0.0
    t_end: float = 1.0
    n_trajectories: int = 1000
    n_list: tuple[int, ...] = (100, 1000, 10000)
    master_seed: int = 0
    base_step: float = 1e-2
    root_tol: float = 1e-10
    dt: float | None = None
    checkpoints: tuple[float, ...] = ()
    output_dir: str = "out"
    log_compact: bool = True
    jobs: int = 1
    matrices: bool = False

    def engine(self) -> EngineConfig:
        return EngineConfig(base_step=self.base_step, root_tol=self.root_tol)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eventum", description="Hybrid classical+quantum event simulator")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("demo", nargs="?", choices=DEMOS, help="demo name (demo command only)")
    p.add_argument("--model", help="builtin name (detector1d, clock, testpair, testtriple) or model JSON path")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", help="trajectory count, or comma-separated counts for verify")
    p.add_argument("--t-start", dest="t_start", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--base-step", dest="base_step", type=float)
    p.add_argument("--root-tol", dest="root_tol", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--checkpoints", help="comma-separated times")
    p.add_argument("--full-log", dest="full_log", action="store_true", default=None,
                   help="include post-jump state vectors in the event log")
    p.add_argument("--matrices", action="store_true", default=None,
                   help="add flattened density matrices to the time-series CSV")
    g = p.add_argument_group("builtin model parameters")
    g.add_argument("--kappa", type=float)
    g.add_argument("--width", type=float)
    g.add_argument("--a", type=float)
    g.add_argument("--i-max", dest="i_max", type=int)
    g.add_argument("--grid.N", dest="grid_N", type=int)
    g.add_argument("--grid.L", dest="grid_L", type=float)
    g.add_argument("--x0", type=float)
    g.add_argument("--sigma", type=float)
    g.add_argument("--model-seed", dest="model_seed", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--isometry", choices=("identity", "random"))
    return p


def _floats(text: str | Sequence) -> tuple[float, ...]:
    if isinstance(text, str):
        return tuple(float(x) for x in text.split(",") if x.strip())
    return tuple(float(x) for x in text)


def _ints(text: str | Sequence | int) -> tuple[int, ...]:
    if isinstance(text, int):
        return (text,)
    if isinstance(text, str):
        return tuple(int(x) for x in text.split(",") if x.strip())
    return tuple(int(x) for x in text)


def parse_and_validate(argv: Sequence[str], env: Mapping[str, str] | None = None) -> RunConfig:
    """Precedence: command-line flag > EVENTUM_SEED > config file > default."""
    env = os.environ if env is None else env
    try:
        args = _build_parser().parse_args(list(argv))
    except UsageError:
        raise
    values: dict[str, Any] = {}

    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(file_cfg) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(CONFIG_KEYS)}")
        values.update(file_cfg)

    if env.get(SEED_ENV):
        try:
            values["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer") from None

    for key in ("model", "seed", "n", "t_start", "t_end", "dt", "base_step", "root_tol",
                "jobs", "out", "checkpoints", "matrices"):
        val = getattr(args, key)
        if val is not None:
            values[key] = val
    if args.full_log:
        values["log_compact"] = False

    params = dict(values.get("params", {}))
    for dest, name in MODEL_FLAGS.items():
        val = getattr(args, dest)
        if val is not None:
            params[name] = val

    cfg = RunConfig(command=args.command, demo=args.demo, params=params)
    if args.command == "demo":
        if args.demo is None:
            raise UsageError("demo needs a name: detector or clock")
        cfg.model = "detector1d" if args.demo == "detector" else "clock"
    else:
        if args.demo is not None:
            raise UsageError(f"unexpected argument {args.demo!r}")
        cfg.model = values.get("model")
        if not cfg.model:
            raise UsageError("--model is required (builtin name or model JSON path)")

    try:
        if "seed" in values:
            cfg.master_seed = int(values["seed"])
        if "n" in values:
            counts = _ints(values["n"])
            cfg.n_list = counts
            cfg.n_trajectories = counts[-1]
        for key in ("t_start", "t_end", "base_step", "root_tol"):
            if key in values:
                setattr(cfg, key, float(values[key]))
        if values.get("dt") is not None:
            cfg.dt = float(values["dt"])
        if "checkpoints" in values:
            cfg.checkpoints = _floats(values["checkpoints"])
        if "out" in values:
            cfg.output_dir = str(values["out"])
        if "jobs" in values:
            cfg.jobs = int(values["jobs"])
        if "log_compact" in values:
            cfg.log_compact = bool(values["log_compact"])
        if "matrices" in values:
            cfg.matrices = bool(values["matrices"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad option value: {exc}") from None

    _apply_demo_defaults(cfg, values)
    _validate(cfg)
    return cfg


def _apply_demo_defaults(cfg: RunConfig, values: Mapping[str, Any]) -> None:
    if cfg.command != "demo":
        return
    if cfg.demo == "detector":
        if "checkpoints" not in values:
            cfg.checkpoints = (0.75, 1.25, 1.5, 2.0, 3.0)
        if "t_end" not in values:
            cfg.t_end = max(cfg.checkpoints)
    else:
        cfg.params.setdefault("kappa", 2.0)
        if "t_end" not in values:
            cfg.t_end = 10.0
        if "i_max" not in cfg.params:
            mean = cfg.params["kappa"] * (cfg.t_end - cfg.t_start)
            cfg.params["i_max"] = int(math.ceil(mean + 6.0 * math.sqrt(mean))) + 2
    if "n" not in values:
        cfg.n_trajectories = 10000


def _validate(cfg: RunConfig) -> None:
    if not cfg.t_end > cfg.t_start:
        raise UsageError(f"t_end ({cfg.t_end}) must exceed t_start ({cfg.t_start})")
    if cfg.command in ("simulate", "verify", "demo") and min(cfg.n_list + (cfg.n_trajectories,)) < 1:
        raise UsageError("trajectory counts must be >= 1")
    for name in ("base_step", "root_tol"):
        if getattr(cfg, name) <= 0:
            raise UsageError(f"{name} must be positive")
    if cfg.dt is not None and cfg.dt <= 0:
        raise UsageError("dt must be positive")
    if cfg.jobs < 1:
        raise UsageError("jobs must be >= 1")
    if not 0 <= cfg.master_seed < 2**64:
        raise UsageError("seed must be an unsigned 64-bit integer")


# ---------------------------------------------------------------------------


def _load(cfg: RunConfig):
    return io.load_model(cfg.model, cfg.params or None)


def _simulate_chunk(cfg: RunConfig, start: int, stop: int):
    """Worker: rebuild the model and run trajectories ``start..stop-1``."""
    model, initial = _load(cfg)
    eng = cfg.engine()
    lines, rows = [], []
    for k in range(start, stop):
        traj = run_trajectory(model, initial, cfg.t_start, cfg.t_end,
                              RngStream(cfg.master_seed, k), eng)
        lines.extend(io.event_lines(traj, compact=cfg.log_compact))
        rows.append((k, traj.n_events, traj.final.alpha + 1, traj.survival_norm_sq))
    return lines, rows


def _run_chunks(cfg: RunConfig, n: int):
    if cfg.jobs <= 1:
        return [_simulate_chunk(cfg, 0, n)]
    n_chunks = min(n, cfg.jobs * 4)
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        futures = [pool.submit(_simulate_chunk, cfg, int(a), int(b))
                   for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        return [f.result() for f in futures]


def cmd_simulate(cfg: RunConfig) -> int:
    _load(cfg)  # fail fast on a bad model before spawning workers
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    chunks = _run_chunks(cfg, cfg.n_trajectories)
    n_events = 0
    with open(out / "events.jsonl", "w", newline="\n") as log, \
            open(out / "summary.csv", "w", newline="\n") as summ:
        summ.write(",".join(io.SUMMARY_FIELDS) + "\n")
        for lines, rows in chunks:
            for line in lines:
                log.write(line + "\n")
            for k, ne, fa, surv in rows:
                summ.write(f"{k},{ne},{fa},{surv!r}\n")
                n_events += ne
    print(f"simulated {cfg.n_trajectories} trajectories, {n_events} events "
          f"(mean {n_events / cfg.n_trajectories:.4g}) -> {out}")
    return 0


def cmd_integrate(cfg: RunConfig) -> int:
    model, initial = _load(cfg)
    fam0 = DensityFamily.from_state(model, initial, cfg.t_start)
    t_eval = cfg.checkpoints or tuple(np.linspace(cfg.t_start, cfg.t_end, 101))
    t_eval = tuple(sorted(set((cfg.t_start,) + tuple(t_eval))))
    series = integrate(model, fam0, cfg.t_end, dt=cfg.dt, t_eval=t_eval)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_timeseries_csv(out / "timeseries.csv", series, matrices=cfg.matrices)
    last = series[-1]
    print(f"integrated to t={last.t:g}; total trace {last.total_trace:.12f} -> {out / 'timeseries.csv'}")
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    model, initial = _load(cfg)
    checkpoints = cfg.checkpoints or (0.5 * cfg.t_end, cfg.t_end)
    report = convergence_report(model, initial, checkpoints, cfg.n_list, cfg.master_seed,
                                cfg.engine(), dt=cfg.dt, t_start=cfg.t_start)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_report_json(out / "report.json", report)
    for n, row in zip(report["N"], report["trace_distances"]):
        print(f"N={n:>7d}  trace distances " + "  ".join(f"{d:.4f}" for d in row))
    slope = report["fitted_slope"]
    print(f"fitted slope {slope if slope is None else round(slope, 3)}  "
          f"{'PASS' if report['pass'] else 'FAIL'}")
    return 0 if report["pass"] else 1


def demo_detector(cfg: RunConfig) -> list[tuple[str, bool]]:
    model, initial = _load(cfg)
    spec = model.meta["spec"]
    horizon = max(cfg.checkpoints)
    check_no_wrap(spec, initial.psi, horizon)
    trajs = simulate_ensemble(model, initial, cfg.t_start, horizon, cfg.n_trajectories,
                              cfg.master_seed, cfg.engine())
    first = np.array([tr.events[0].time if tr.events else np.inf for tr in trajs])
    rows = []
    print(f"{'t':>6} {'empirical':>10} {'closed form':>12} {'4 sigma':>9}")
    for t in cfg.checkpoints:
        emp = float(np.mean(first <= t))
        ref = detection_prob_closed_form(spec, initial.psi, t)
        band = 4.0 * math.sqrt(max(ref * (1 - ref), 1e-12) / len(trajs))
        ok = abs(emp - ref) <= band
        print(f"{t:6.3g} {emp:10.4f} {ref:12.4f} {band:9.4f}  {'PASS' if ok else 'FAIL'}")
        rows.append((f"detection by t={t:g}", ok))
    return rows


def demo_clock(cfg: RunConfig) -> list[tuple[str, bool]]:
    model, initial = _load(cfg)
    spec = model.meta["spec"]
    span = cfg.t_end - cfg.t_start
    check_clock_horizon(spec, span)
    trajs = simulate_ensemble(model, initial, cfg.t_start, cfg.t_end, cfg.n_trajectories,
                              cfg.master_seed, cfg.engine())
    gaps = tick_gaps(trajs, k=max(1, min(5, int(0.25 * spec.kappa * span))))
    ks = stats.kstest(gaps, "expon", args=(0, 1.0 / spec.kappa))
    counts = np.array([tr.n_events for tr in trajs], dtype=float)
    n = len(counts)
    lam = spec.kappa * span
    mean_ok = abs(counts.mean() - lam) <= 4.0 * math.sqrt(lam / n)
    # variance of the sample variance of a Poisson(lam) count: (lam + 2 lam^2)/n approx
    var_ok = abs(counts.var(ddof=1) - lam) <= 4.0 * math.sqrt((lam + 2 * lam ** 2) / n)
    norm_dev = max((abs(np.linalg.norm(e.post_jump_psi) - 1.0) for tr in trajs for e in tr.events),
                   default=0.0)
    rows = [
        (f"inter-tick KS vs Exp({spec.kappa:g}): p={ks.pvalue:.3f}", ks.pvalue >= 0.01),
        (f"tick count mean {counts.mean():.4f} vs {lam:g}", mean_ok),
        (f"tick count variance {counts.var(ddof=1):.4f} vs {lam:g}", var_ok),
        (f"post-tick norm deviation {norm_dev:.1e}", norm_dev <= 1e-12),
    ]
    for label, ok in rows:
        print(f"{label:<48} {'PASS' if ok else 'FAIL'}")
    return rows


def cmd_demo(cfg: RunConfig) -> int:
    rows = demo_detector(cfg) if cfg.demo == "detector" else demo_clock(cfg)
    ok = all(r[1] for r in rows)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def execute(cfg: RunConfig) -> int:
    handler = {"simulate": cmd_simulate, "integrate": cmd_integrate,
               "verify": cmd_verify, "demo": cmd_demo}[cfg.command]
    try:
        return handler(cfg)
    except NUMERICAL_ERRORS as exc:
        print(f"eventum: numerical abort: {exc}", file=sys.stderr)
        return 3
    except (EventumError, ValueError, KeyError, OSError) as exc:
        print(f"eventum: {exc}", file=sys.stderr)
        return 2


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_and_validate(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"eventum: usage error: {exc}", file=sys.stderr)
        return 2
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
