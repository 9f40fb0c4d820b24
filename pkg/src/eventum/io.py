"""File formats: model JSON, event log JSONL, trajectory summary CSV, time series CSV, report JSON.

Classical labels are one-based in every file.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .engine import TrajectoryRecord
from .master import DensityFamily
from .model import HybridModel, Operator, PureHybridState, build_model
from .models import build_builtin


def parse_matrix(data, ndim: int = 2) -> np.ndarray:
    """Complex array of rank ``ndim`` from nested lists.

    Leaves are ``[re, im]`` pairs, or plain reals when the nesting depth is ``ndim``.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim == ndim + 1 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim == ndim:
        return arr.astype(complex)
    raise ValueError(f"expected a rank-{ndim} complex array, got shape {arr.shape}")


def encode_complex(arr: np.ndarray) -> list:
    arr = np.asarray(arr, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _named(name: str, rows: int, cols: int) -> np.ndarray:
    if name == "zero":
        return np.zeros((rows, cols), dtype=complex)
    if name == "identity":
        if rows != cols:
            raise ValueError("identity needs a square block")
        return np.eye(rows, dtype=complex)
    raise ValueError(f"unknown builtin operator {name!r}")


def _time_factor(desc: Mapping[str, Any] | None):
    """Amplitude factor ``f(t)`` for a coupling; the rate scales as ``f(t)^2``."""
    if not desc:
        return None
    kind = desc.get("kind")
    if kind == "rate_sin":
        amp = float(desc.get("amplitude", 1.0))
        omega = float(desc.get("omega", 1.0))
        phase = float(desc.get("phase", 0.0))
        if abs(amp) > 1:
            raise ValueError("rate_sin amplitude must be within [-1, 1]")
        return lambda t: math.sqrt(1.0 + amp * math.sin(omega * t + phase))
    if kind == "pulse":
        start, stop = float(desc["start"]), float(desc["stop"])
        boost = float(desc.get("factor", 2.0))
        return lambda t: math.sqrt(boost) if start <= t <= stop else 1.0
    raise ValueError(f"unknown time_dependence kind {kind!r}")


def model_from_dict(spec: Mapping[str, Any],
                    overrides: Mapping[str, Any] | None = None) -> tuple[HybridModel, PureHybridState]:
    """Build a model and its initial state from the JSON model schema."""
    if "builtin" in spec:
        params = dict(spec.get("params", {}))
        params.update(overrides or {})
        return build_builtin(spec["builtin"], params)
    if overrides:
        raise ValueError("parameter overrides only apply to builtin models")

    allowed = {"m", "dims", "hamiltonians", "couplings", "initial", "sample_times"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown model keys {sorted(unknown)}")
    m = int(spec["m"])
    dims = [int(d) for d in spec["dims"]]
    hams = []
    for a, h in enumerate(spec.get("hamiltonians", ["zero"] * m)):
        hams.append(_named(h, dims[a], dims[a]) if isinstance(h, str) else parse_matrix(h))

    couplings = {}
    for entry in spec.get("couplings", []):
        frm, to = int(entry["from"]) - 1, int(entry["to"]) - 1
        if "matrix" in entry:
            mat = parse_matrix(entry["matrix"])
        else:
            mat = _named(entry.get("builtin", "identity"), dims[to], dims[frm])
        mat = float(entry.get("scale", 1.0)) * mat
        factor = _time_factor(entry.get("time_dependence"))
        if factor is None:
            couplings[(to, frm)] = mat
        else:
            couplings[(to, frm)] = Operator(fn=lambda t, mat=mat, f=factor: f(t) * mat)

    model = build_model(m, dims, hams, couplings,
                        sample_times=spec.get("sample_times", np.linspace(0, 10, 11)),
                        meta={"source": dict(spec)})
    init = spec.get("initial", {})
    alpha = int(init.get("alpha", 1)) - 1
    if "psi" in init:
        psi = parse_matrix(init["psi"], ndim=1)
    else:
        psi = np.zeros(dims[alpha], dtype=complex)
        psi[0] = 1.0
    return model, PureHybridState.make(alpha, psi)


def load_model(source: str, overrides: Mapping[str, Any] | None = None):
    """Model from a builtin name or a JSON file path."""
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        with open(path) as fh:
            return model_from_dict(json.load(fh), overrides)
    return build_builtin(source, overrides)


def event_lines(traj: TrajectoryRecord, index: int | None = None, compact: bool = True) -> Iterable[str]:
    k = traj.stream_index if index is None else index
    for ev in traj.events:
        rec = {"trajectory": k, "seed": traj.seed, "t": ev.time, "from": ev.from_state + 1,
               "to": ev.to_state + 1, "norm_sq_at_jump": ev.pre_jump_norm_sq}
        if not compact and ev.post_jump_psi is not None:
            rec["psi"] = encode_complex(ev.post_jump_psi)
        yield json.dumps(rec)


def write_event_log(path, trajectories: Sequence[TrajectoryRecord], compact: bool = True) -> None:
    with open(path, "w", newline="\n") as fh:
        for traj in trajectories:
            for line in event_lines(traj, compact=compact):
                fh.write(line + "\n")


def read_event_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


SUMMARY_FIELDS = ["trajectory", "n_events", "final_alpha", "survival_norm_sq"]


def write_summary_csv(path, trajectories: Sequence[TrajectoryRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for traj in trajectories:
            w.writerow([traj.stream_index, traj.n_events, traj.final.alpha + 1,
                        repr(traj.survival_norm_sq)])


def timeseries_header(m: int, dims: Sequence[int] | None = None, matrices: bool = False) -> list[str]:
    cols = ["t"]
    for b in range(1, m + 1):
        cols += [f"tr_{b}", f"purity_{b}"]
    if matrices:
        for b, d in enumerate(dims, start=1):
            for i in range(d):
                for j in range(d):
                    cols += [f"re_{b}_{i}_{j}", f"im_{b}_{i}_{j}"]
    return cols


def write_timeseries_csv(path, families: Sequence[DensityFamily], matrices: bool = False) -> None:
    dims = [b.shape[0] for b in families[0].blocks]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(timeseries_header(len(dims), dims, matrices))
        for fam in families:
            row = [repr(float(fam.t))]
            for tr, pur in zip(fam.traces, fam.purities):
                row += [repr(float(tr)), repr(float(pur))]
            if matrices:
                for blk in fam.blocks:
                    for z in blk.ravel():
                        row += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(row)


def read_timeseries_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def write_report_json(path, report: Mapping[str, Any]) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
