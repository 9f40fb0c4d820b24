"""Fuzzy clock: a pointer that ticks forward at constant rate ``kappa``.

Tick ``i-1 -> i`` is the coupling ``sqrt(kappa) U_i`` with ``U_i`` an isometry,
so the event rate never depends on the quantum state and pure states stay
pure.  The integer pointer is truncated to sites ``0..i_max``; by default the
last site is absorbing (no outgoing coupling).  ``cyclic=True`` instead wraps
site ``i_max`` back to 0, which keeps every site's damping equal.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import poisson

from ..errors import NotIsometry, ShapeMismatch
from ..model import HybridModel, build_model

ISOMETRY_TOL = 1e-12


@dataclass(frozen=True)
class ClockSpec:
    kappa: float = 1.0
    i_max: int = 40
    dims: int | Sequence[int] = 2
    # U_1..U_{i_max} (plus U_0 for the wrap-around tick when cyclic); None means identities
    isometries: Sequence[np.ndarray] | None = None
    cyclic: bool = False

    def site_dims(self) -> list[int]:
        if isinstance(self.dims, (int, np.integer)):
            return [int(self.dims)] * (self.i_max + 1)
        dims = [int(d) for d in self.dims]
        if len(dims) != self.i_max + 1:
            raise ShapeMismatch(f"{len(dims)} site dimensions for i_max={self.i_max}")
        return dims


def build_clock_model(spec: ClockSpec) -> HybridModel:
    if spec.i_max < 1:
        raise ValueError("i_max must be >= 1")
    if spec.kappa < 0:
        raise ValueError("kappa must be >= 0")
    dims = spec.site_dims()
    n_sites = spec.i_max + 1
    ticks = [(i, i - 1) for i in range(1, n_sites)]
    if spec.cyclic:
        ticks.append((0, spec.i_max))
    root = math.sqrt(spec.kappa)

    couplings = {}
    if spec.isometries is None:
        for to, frm in ticks:
            if dims[to] != dims[frm]:
                raise ShapeMismatch("identity ticks need equal site dimensions")
            couplings[(to, frm)] = np.full(dims[to], root, dtype=complex)
    else:
        if len(spec.isometries) != len(ticks):
            raise ShapeMismatch(f"{len(spec.isometries)} isometries for {len(ticks)} ticks")
        for (to, frm), u in zip(ticks, spec.isometries):
            u = np.asarray(u, dtype=complex)
            if u.shape != (dims[to], dims[frm]):
                raise ShapeMismatch(f"U for tick {frm}->{to} has shape {u.shape}")
            defect = np.max(np.abs(u.conj().T @ u - np.eye(dims[frm])))
            if defect > ISOMETRY_TOL:
                raise NotIsometry(f"U for tick {frm}->{to} violates U^dagger U = I by {defect:.2e}")
            couplings[(to, frm)] = root * u

    hams = [np.zeros(d) for d in dims]
    return build_model(n_sites, dims, hams, couplings, name="clock", meta={"spec": spec})


def check_clock_horizon(spec: ClockSpec, horizon: float) -> bool:
    """Warn (and return False) when truncation at ``i_max`` may be felt by ``horizon``."""
    mean = spec.kappa * horizon
    need = mean + 6.0 * math.sqrt(mean)
    if not spec.cyclic and spec.i_max <= need:
        warnings.warn(f"i_max={spec.i_max} <= kappa*T + 6 sqrt(kappa*T) = {need:.1f}",
                      stacklevel=2)
        return False
    return True


def clock_block_traces(kappa: float, t: float, i_max: int) -> np.ndarray:
    """Exact occupation of each site for a clock started at site 0.

    Poisson probabilities of ``i`` ticks, with the whole tail lumped into the
    absorbing last site.
    """
    p = poisson.pmf(np.arange(i_max), kappa * t)
    return np.append(p, poisson.sf(i_max - 1, kappa * t))


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def tick_gaps(trajectories, k: int = 5) -> np.ndarray:
    """First ``k`` inter-tick gaps of every trajectory that ticked at least ``k`` times.

    Pooling every completed gap up to a fixed horizon is biased short (the
    censored last gap is the long one), so only a fixed number of leading
    gaps is used.  Choose ``k`` well below ``kappa * horizon``.
    """
    out = []
    for tr in trajectories:
        if len(tr.events) >= k:
            times = [tr.t_start] + [e.time for e in tr.events[:k]]
            out.append(np.diff(times))
    return np.concatenate(out) if out else np.empty(0)
