"""Ensemble dynamics: the master equation for the density family (rho_beta).

    d rho_b/dt = -i [H_b, rho_b] + sum_{c != b} g_bc rho_c g_bc^dagger - {Lambda_b, rho_b}/2

Integrated with fixed-step RK4.  When every block has the same dimension the
right-hand side is evaluated on stacked ``(m, d, d)`` arrays.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimMismatch, ShapeMismatch, ToleranceBreach
from .model import (
    HybridModel,
    PureHybridState,
    hamiltonian_value,
    lambda_value,
    op_dense,
)


@dataclass(frozen=True)
class DensityFamily:
    """One sub-normalized density matrix per classical state, at time ``t``."""

    blocks: tuple[np.ndarray, ...]
    t: float = 0.0

    @classmethod
    def from_state(cls, model: HybridModel, state: PureHybridState, t: float = 0.0) -> "DensityFamily":
        blocks = [np.zeros((d, d), dtype=complex) for d in model.dims]
        blocks[state.alpha] = np.outer(state.psi, state.psi.conj())
        return cls(tuple(blocks), t)

    @property
    def traces(self) -> np.ndarray:
        return np.array([np.trace(b).real for b in self.blocks])

    @property
    def total_trace(self) -> float:
        return float(self.traces.sum())

    @property
    def purities(self) -> np.ndarray:
        return np.array([np.vdot(b, b).real for b in self.blocks])

    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(0.5 * (b + b.conj().T)).min()) for b in self.blocks)

    def hermiticity_defect(self) -> float:
        return max(float(np.max(np.abs(b - b.conj().T))) for b in self.blocks)

    def combine(self, a: complex, other: "DensityFamily", b: complex) -> "DensityFamily":
        return DensityFamily(tuple(a * x + b * y for x, y in zip(self.blocks, other.blocks)), self.t)


def _check_shapes(model: HybridModel, family: DensityFamily) -> None:
    if len(family.blocks) != model.m:
        raise ShapeMismatch(f"{len(family.blocks)} blocks for m={model.m}")
    for d, blk in zip(model.dims, family.blocks):
        if blk.shape != (d, d):
            raise ShapeMismatch(f"block of shape {blk.shape}, expected {(d, d)}")


class _Liouvillian:
    """Right-hand side of the master equation, with cached operators."""

    def __init__(self, model: HybridModel):
        self.model = model
        self.stacked = len(set(model.dims)) == 1
        self._ops = None if model.time_dependent else self._build(0.0)

    def _build(self, t):
        model = self.model
        hs = [op_dense(hamiltonian_value(model, a, t)) for a in range(model.m)]
        lams = [op_dense(lambda_value(model, a, t)) for a in range(model.m)]
        keys = sorted(model.couplings)
        gs = [op_dense(model.couplings[k](t)) for k in keys]
        to_idx = np.array([k[0] for k in keys], dtype=int)
        from_idx = np.array([k[1] for k in keys], dtype=int)
        if self.stacked:
            d = model.dims[0]
            g_arr = np.array(gs) if gs else np.zeros((0, d, d), dtype=complex)
            return (np.array(hs), np.array(lams), g_arr, to_idx, from_idx)
        return (hs, lams, gs, to_idx, from_idx)

    def ops(self, t):
        return self._ops if self._ops is not None else self._build(t)

    def stack_rhs(self, rho: np.ndarray, t: float) -> np.ndarray:
        h, lam, g, to_idx, from_idx = self.ops(t)
        out = -1j * (h @ rho - rho @ h) - 0.5 * (lam @ rho + rho @ lam)
        if len(g):
            gain = g @ rho[from_idx] @ g.conj().transpose(0, 2, 1)
            np.add.at(out, to_idx, gain)
        return out

    def list_rhs(self, blocks: Sequence[np.ndarray], t: float) -> list[np.ndarray]:
        h, lam, g, to_idx, from_idx = self.ops(t)
        out = [-1j * (h[b] @ r - r @ h[b]) - 0.5 * (lam[b] @ r + r @ lam[b])
               for b, r in enumerate(blocks)]
        for gk, to, frm in zip(g, to_idx, from_idx):
            out[to] = out[to] + gk @ blocks[frm] @ gk.conj().T
        return out


_LIOUVILLIANS: "weakref.WeakKeyDictionary[HybridModel, _Liouvillian]" = weakref.WeakKeyDictionary()


def _liouvillian(model: HybridModel) -> _Liouvillian:
    liou = _LIOUVILLIANS.get(model)
    if liou is None:
        liou = _LIOUVILLIANS[model] = _Liouvillian(model)
    return liou


def master_rhs(model: HybridModel, family: DensityFamily, t: float | None = None) -> DensityFamily:
    """Time derivative of ``family`` (evaluated at ``family.t`` unless ``t`` is given)."""
    _check_shapes(model, family)
    t = family.t if t is None else t
    liou = _liouvillian(model)
    if liou.stacked:
        out = liou.stack_rhs(np.array(family.blocks), t)
        return DensityFamily(tuple(out), t)
    return DensityFamily(tuple(liou.list_rhs(family.blocks, t)), t)


def default_dt(model: HybridModel) -> float:
    """``1e-3 / max(1, max_alpha ||Lambda_alpha||_inf)`` at t = 0."""
    worst = 1.0
    for a in range(model.m):
        lam = op_dense(lambda_value(model, a, 0.0))
        worst = max(worst, float(np.abs(lam).sum(axis=1).max(initial=0.0)))
    return 1e-3 / worst


def integrate(model: HybridModel, family0: DensityFamily, t_end: float,
              dt: float | None = None, t_eval: Sequence[float] | None = None,
              trace_tol: float = 1e-6) -> list[DensityFamily]:
    """RK4-integrate from ``family0.t`` to ``t_end``.

    Returns the family at each time in ``t_eval`` (default: start and end).
    Output times need not lie on the step grid: each interval between outputs
    is split into equal steps no longer than ``dt``.  Blocks are re-symmetrized
    after every step; positivity is only monitored.
    """
    _check_shapes(model, family0)
    dt = default_dt(model) if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0 = float(family0.t)
    t_eval = [t0, float(t_end)] if t_eval is None else [float(x) for x in t_eval]
    if any(b < a for a, b in zip(t_eval, t_eval[1:])) or t_eval[0] < t0 or t_eval[-1] > t_end:
        raise ValueError("t_eval must be sorted and inside [t0, t_end]")

    liou = _liouvillian(model)
    trace0 = family0.total_trace
    scale = max(1.0, abs(trace0))
    if liou.stacked:
        state = np.array(family0.blocks)
        rhs = liou.stack_rhs
        pack = lambda s, t: DensityFamily(tuple(s.copy()), t)  # noqa: E731
        sym = lambda s: 0.5 * (s + s.conj().transpose(0, 2, 1))  # noqa: E731
        total = lambda s: float(np.trace(s, axis1=1, axis2=2).real.sum())  # noqa: E731
    else:
        state = [b.copy() for b in family0.blocks]
        rhs = _ListRhs(liou)
        pack = lambda s, t: DensityFamily(tuple(b.copy() for b in s), t)  # noqa: E731
        sym = lambda s: _ListArith([0.5 * (b + b.conj().T) for b in s])  # noqa: E731
        total = lambda s: float(sum(np.trace(b).real for b in s))  # noqa: E731
        state = _ListArith(state)

    out = []
    t = t0
    for target in t_eval:
        span = target - t
        if span > 0:
            n = max(1, int(np.ceil(span / dt - 1e-9)))
            h = span / n
            for k in range(n):
                tk = t + k * h
                k1 = rhs(state, tk)
                k2 = rhs(state + (0.5 * h) * k1, tk + 0.5 * h)
                k3 = rhs(state + (0.5 * h) * k2, tk + 0.5 * h)
                k4 = rhs(state + h * k3, tk + h)
                state = sym(state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            t = target
        drift = abs(total(state) - trace0)
        if not drift <= trace_tol * scale:
            raise ToleranceBreach(
                f"total trace drifted by {drift:.3e} at t={t}; try dt={dt / 2:g}")
        fam = pack(state, t)
        # RK4 keeps the trace of a trace-free generator exactly, so an unstable
        # step shows up as lost positivity: trace norms exceeding the traces
        excess = _trace_norm_excess(fam)
        if not excess <= trace_tol * scale:
            raise ToleranceBreach(
                f"blocks lost positivity (trace-norm excess {excess:.3e}) at t={t}; "
                f"try dt={dt / 2:g}")
        out.append(fam)
    return out


def _trace_norm_excess(family: DensityFamily) -> float:
    neg = 0.0
    for b in family.blocks:
        ev = np.linalg.eigvalsh(0.5 * (b + b.conj().T))
        neg += float(-ev[ev < 0].sum())
    return 2.0 * neg


class _ListArith(list):
    """Blockwise list arithmetic for families with unequal block sizes."""

    def __add__(self, other):
        return _ListArith([a + b for a, b in zip(self, other)])

    def __mul__(self, c):
        return _ListArith([c * a for a in self])

    __rmul__ = __mul__


class _ListRhs:
    def __init__(self, liou: _Liouvillian):
        self.liou = liou

    def __call__(self, state, t):
        return _ListArith(self.liou.list_rhs(state, t))


def reduce_to_quantum(model: HybridModel, family: DensityFamily) -> np.ndarray:
    """``sum_beta rho_beta``; only defined when all Hilbert spaces coincide."""
    if len(set(model.dims)) != 1:
        raise DimMismatch("blocks have different dimensions; no common quantum state")
    _check_shapes(model, family)
    return sum(family.blocks[1:], family.blocks[0].copy())


def check_collapsibility(model: HybridModel, candidate_v: Sequence[np.ndarray],
                         tol: float = 1e-10, t: float = 0.0) -> tuple[bool, dict]:
    """Test whether summing the blocks yields a closed quantum master equation.

    Requires identical Hamiltonians and damping operators across states, and
    for every source state ``c`` the jump map ``X -> sum_b g_bc X g_bc^dagger``
    must equal ``X -> sum_i V_i X V_i^dagger`` (checked on all matrix units),
    with ``sum_i V_i^dagger V_i`` equal to the common damping operator.
    """
    if len(set(model.dims)) != 1:
        raise DimMismatch("collapse needs identical Hilbert spaces")
    d = model.dims[0]
    vs = [np.asarray(v, dtype=complex) for v in candidate_v]
    hs = [op_dense(hamiltonian_value(model, a, t)) for a in range(model.m)]
    lams = [op_dense(lambda_value(model, a, t)) for a in range(model.m)]
    h_dev = max(float(np.max(np.abs(h - hs[0]))) for h in hs)
    lam_dev = max(float(np.max(np.abs(lam - lams[0]))) for lam in lams)
    v_lam = sum((v.conj().T @ v for v in vs), np.zeros((d, d), dtype=complex))
    v_lam_dev = float(np.max(np.abs(v_lam - lams[0])))

    map_dev = 0.0
    for c in range(model.m):
        gs = [op_dense(g(t)) for _, g in model.outgoing(c)]
        for j in range(d):
            for k in range(d):
                unit = np.zeros((d, d), dtype=complex)
                unit[j, k] = 1.0
                lhs = sum((g @ unit @ g.conj().T for g in gs), np.zeros((d, d), dtype=complex))
                rhs = sum((v @ unit @ v.conj().T for v in vs), np.zeros((d, d), dtype=complex))
                map_dev = max(map_dev, float(np.max(np.abs(lhs - rhs))))

    report = {"hamiltonian_dev": h_dev, "lambda_dev": lam_dev,
              "v_lambda_dev": v_lam_dev, "jump_map_dev": map_dev}
    report["max_dev"] = max(report.values())
    return report["max_dev"] <= tol, report


def quantum_rhs(rho: np.ndarray, hamiltonian: np.ndarray, candidate_v: Sequence[np.ndarray]) -> np.ndarray:
    """Right-hand side of the collapsed quantum-only Lindblad equation."""
    lam = sum((v.conj().T @ v for v in candidate_v), np.zeros_like(rho))
    out = -1j * (hamiltonian @ rho - rho @ hamiltonian) - 0.5 * (lam @ rho + rho @ lam)
    for v in candidate_v:
        out = out + v @ rho @ v.conj().T
    return out
