"""Concrete models: particle detector, fuzzy clock, and seeded random test models."""
from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from ..model import HybridModel, PureHybridState, build_model
from .clock import (
    ClockSpec,
    build_clock_model,
    check_clock_horizon,
    clock_block_traces,
    random_unitary,
    tick_gaps,
)
from .detector import (
    OFF,
    ON,
    DetectorSpec,
    build_detector_model,
    check_no_wrap,
    detection_prob_closed_form,
    exact_propagate,
    gaussian_packet,
)

__all__ = [
    "ClockSpec", "DetectorSpec", "ON", "OFF",
    "build_clock_model", "build_detector_model", "check_clock_horizon", "check_no_wrap",
    "clock_block_traces", "detection_prob_closed_form", "exact_propagate",
    "gaussian_packet", "random_model", "random_unitary", "tick_gaps", "BUILTIN_DEFAULTS", "build_builtin",
]


def random_model(seed: int, m: int = 2, dim: int = 2, h_scale: float = 1.0,
                 g_scale: float = 0.7) -> HybridModel:
    """Dense random model with a coupling for every ordered pair of states."""
    rng = np.random.default_rng(seed)
    hams = []
    for _ in range(m):
        x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        hams.append(h_scale * 0.5 * (x + x.conj().T))
    couplings = {}
    for frm in range(m):
        for to in range(m):
            if to != frm:
                z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
                couplings[(to, frm)] = g_scale * z / np.sqrt(2 * dim)
    return build_model(m, [dim] * m, hams, couplings, name=f"random{m}",
                       meta={"seed": seed})


BUILTIN_DEFAULTS: dict[str, dict[str, Any]] = {
    "detector1d": {"kappa": 1.0, "width": 1024.0, "a": 0.0, "grid.L": 16.0, "grid.N": 2048,
                   "x0": -1.5, "sigma": 0.4, "hamiltonian": "shift"},
    "clock": {"kappa": 1.0, "i_max": 40, "dim": 2, "isometry": "identity",
              "model_seed": 0, "cyclic": False},
    "testpair": {"model_seed": 7, "dim": 2, "g_scale": 0.7, "h_scale": 1.0},
    "testtriple": {"model_seed": 11, "dim": 2, "g_scale": 0.7, "h_scale": 1.0},
}


def build_builtin(name: str, params: Mapping[str, Any] | None = None) -> tuple[HybridModel, PureHybridState]:
    """Model and default initial state for a named builtin family."""
    if name not in BUILTIN_DEFAULTS:
        raise ValueError(f"unknown builtin model {name!r}; choose from {sorted(BUILTIN_DEFAULTS)}")
    p = dict(BUILTIN_DEFAULTS[name])
    unknown = set(params or {}) - set(p)
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    p.update(params or {})

    if name == "detector1d":
        spec = DetectorSpec(kappa=float(p["kappa"]), width=float(p["width"]), a=float(p["a"]),
                            L=float(p["grid.L"]), N=int(p["grid.N"]),
                            hamiltonian=str(p["hamiltonian"]))
        model = build_detector_model(spec)
        return model, PureHybridState(ON, gaussian_packet(spec, float(p["x0"]), float(p["sigma"])))

    if name == "clock":
        i_max, dim = int(p["i_max"]), int(p["dim"])
        cyclic = bool(p["cyclic"])
        isometries = None
        if p["isometry"] == "random":
            rng = np.random.default_rng(int(p["model_seed"]))
            isometries = [random_unitary(dim, rng) for _ in range(i_max + int(cyclic))]
        elif p["isometry"] != "identity":
            raise ValueError("clock isometry must be 'identity' or 'random'")
        spec = ClockSpec(kappa=float(p["kappa"]), i_max=i_max, dims=dim,
                         isometries=isometries, cyclic=cyclic)
        return build_clock_model(spec), PureHybridState.make(0, np.ones(dim))

    m = 2 if name == "testpair" else 3
    model = random_model(int(p["model_seed"]), m, int(p["dim"]), float(p["h_scale"]),
                         float(p["g_scale"]))
    psi = np.zeros(int(p["dim"]), dtype=complex)
    psi[0] = 1.0
    return model, PureHybridState(0, psi)
