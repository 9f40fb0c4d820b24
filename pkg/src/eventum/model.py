"""Coupled classical+quantum model and the quantities derived from its couplings.

A model has ``m`` classical states.  Classical state ``alpha`` carries a Hilbert
space of dimension ``dims[alpha]``, a Hamiltonian ``H_alpha(t)`` and outgoing
couplings ``g[beta, alpha](t)`` mapping that space into the one of ``beta``.
Coupling keys are ``(to, from)`` pairs, matching the matrix-element order of
``g_{beta alpha}``.  Labels are zero-based here; file and CLI I/O are one-based.

Operator values are complex arrays.  A 2-D array is a dense matrix and a 1-D
array is a diagonal (multiplication) operator, which keeps grid models cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DiagonalCoupling,
    IndexOutOfRange,
    NonHermitianHamiltonian,
    ShapeMismatch,
    ZeroRate,
)

CLAMP_TOL = 1e-12


class Operator:
    """Time-indexed operator provider.

    Providers must be deterministic: the same ``t`` gives a bit-identical array.
    """

    __slots__ = ("_fn", "_value", "time_dependent", "declared_shape", "declared_hermitian")

    def __init__(self, fn: Callable[[float], np.ndarray] | None = None,
                 value: np.ndarray | None = None, time_dependent: bool = True,
                 shape: tuple[int, int] | None = None, hermitian: bool = False):
        self._fn = fn
        self._value = None if value is None else _as_op_array(value)
        self.time_dependent = time_dependent
        self.declared_shape = shape
        self.declared_hermitian = hermitian

    @classmethod
    def constant(cls, value) -> "Operator":
        return cls(value=value, time_dependent=False)

    @classmethod
    def lazy(cls, factory: Callable[[], np.ndarray], shape: tuple[int, int] | None = None,
             hermitian: bool = False) -> "Operator":
        """Constant operator whose array is only built on first use.

        With ``shape`` (and ``hermitian`` for Hamiltonians) declared, model
        validation trusts the declaration instead of building the array.
        """
        return cls(fn=lambda t: factory(), time_dependent=False, shape=shape,
                   hermitian=hermitian)

    @property
    def deferred(self) -> bool:
        return self._value is None and not self.time_dependent and self.declared_shape is not None

    def __call__(self, t: float = 0.0) -> np.ndarray:
        if self._value is not None:
            return self._value
        value = _as_op_array(self._fn(t))
        if not self.time_dependent:
            self._value = value
        return value


def as_operator(obj) -> Operator:
    if isinstance(obj, Operator):
        return obj
    if callable(obj):
        return Operator(fn=obj, time_dependent=True)
    return Operator.constant(obj)


def _as_op_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=complex)
    if arr.ndim not in (1, 2):
        raise ShapeMismatch(f"operator must be 1-D (diagonal) or 2-D, got ndim={arr.ndim}")
    return arr


def op_shape(op: np.ndarray) -> tuple[int, int]:
    if op.ndim == 1:
        return op.shape[0], op.shape[0]
    return op.shape


def op_apply(op: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return op * psi if op.ndim == 1 else op @ psi


def op_dense(op: np.ndarray) -> np.ndarray:
    return np.diag(op) if op.ndim == 1 else op


def _herm_defect(op: np.ndarray) -> float:
    if op.ndim == 1:
        return float(np.max(np.abs(op.imag), initial=0.0))
    return float(np.max(np.abs(op - op.conj().T), initial=0.0))


@dataclass(frozen=True, eq=False)
class HybridModel:
    """Validated, immutable model.  Build it with :func:`build_model`."""

    dims: tuple[int, ...]
    hamiltonians: tuple[Operator, ...]
    couplings: Mapping[tuple[int, int], Operator]
    time_dependent: bool
    hermiticity_tol: float = 1e-10
    # Optional exact flows of the no-jump equation, keyed by classical state.
    propagators: Mapping[int, Any] = field(default_factory=dict)
    name: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)
    _outgoing: tuple = field(default=(), repr=False)
    _lambda_cache: tuple = field(default=(), repr=False)

    @property
    def m(self) -> int:
        return len(self.dims)

    def outgoing(self, alpha: int) -> tuple[tuple[int, Operator], ...]:
        """Couplings out of ``alpha`` as ``(to, operator)`` in ascending ``to``."""
        return self._outgoing[alpha]

    def check_index(self, alpha: int) -> int:
        a = int(alpha)
        if not 0 <= a < self.m:
            raise IndexOutOfRange(f"classical state {alpha} outside 0..{self.m - 1}")
        return a


@dataclass(frozen=True)
class PureHybridState:
    """One classical label plus a quantum vector in that label's space."""

    alpha: int
    psi: np.ndarray
    normalized: bool = True

    @classmethod
    def make(cls, alpha: int, psi, normalize: bool = True) -> "PureHybridState":
        psi = np.asarray(psi, dtype=complex).copy()
        if normalize:
            nrm = np.linalg.norm(psi)
            if nrm == 0:
                raise ValueError("zero vector cannot be normalized")
            psi /= nrm
        return cls(int(alpha), psi, normalize)

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.psi, self.psi).real)


def build_model(m: int, dims: Sequence[int], hamiltonians: Sequence | None,
                couplings: Mapping[tuple[int, int], Any], *,
                hermiticity_tol: float = 1e-10,
                sample_times: Iterable[float] = (),
                propagators: Mapping[int, Any] | None = None,
                name: str = "", meta: Mapping[str, Any] | None = None) -> HybridModel:
    """Validate operators and assemble a :class:`HybridModel`.

    ``hamiltonians`` may be ``None`` (all zero).  Each entry and each coupling
    value may be an array (constant), an :class:`Operator`, or a callable of
    ``t`` (time-dependent).  Time-dependent models are also checked at every
    time in ``sample_times``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    dims = tuple(int(d) for d in dims)
    if len(dims) != m:
        raise ShapeMismatch(f"dims has {len(dims)} entries for m={m}")
    if any(d < 1 for d in dims):
        raise ValueError("every Hilbert space dimension must be >= 1")

    if hamiltonians is None:
        hams = tuple(Operator.constant(np.zeros(d)) for d in dims)
    else:
        if len(hamiltonians) != m:
            raise ShapeMismatch(f"{len(hamiltonians)} Hamiltonians for m={m}")
        hams = tuple(as_operator(h) for h in hamiltonians)

    cpl: dict[tuple[int, int], Operator] = {}
    for key, op in couplings.items():
        to, frm = (int(k) for k in key)
        if to == frm:
            raise DiagonalCoupling(f"coupling ({to}, {frm}) is on the diagonal")
        for a in (to, frm):
            if not 0 <= a < m:
                raise IndexOutOfRange(f"coupling key {key} outside 0..{m - 1}")
        cpl[(to, frm)] = as_operator(op)

    time_dependent = any(h.time_dependent for h in hams) or any(
        g.time_dependent for g in cpl.values())

    times = [0.0] + ([float(t) for t in sample_times] if time_dependent else [])
    for t in times:
        for a, h in enumerate(hams):
            if h.deferred and h.declared_hermitian:
                if tuple(h.declared_shape) != (dims[a], dims[a]):
                    raise ShapeMismatch(f"H[{a}] declares shape {h.declared_shape}")
                continue
            val = h(t)
            if op_shape(val) != (dims[a], dims[a]):
                raise ShapeMismatch(
                    f"H[{a}] has shape {op_shape(val)}, expected {(dims[a], dims[a])}")
            defect = _herm_defect(val)
            if defect > hermiticity_tol:
                raise NonHermitianHamiltonian(
                    f"H[{a}](t={t}) deviates from Hermitian by {defect:.3e}")
        for (to, frm), g in cpl.items():
            val = g(t)
            if val.ndim == 1 and dims[to] != dims[frm]:
                raise ShapeMismatch(
                    f"diagonal coupling ({to}, {frm}) between spaces of dims "
                    f"{dims[frm]} and {dims[to]}")
            if op_shape(val) != (dims[to], dims[frm]):
                raise ShapeMismatch(
                    f"coupling ({to}, {frm}) has shape {op_shape(val)}, "
                    f"expected {(dims[to], dims[frm])}")

    outgoing = tuple(
        tuple(sorted(((to, g) for (to, frm), g in cpl.items() if frm == a),
                     key=lambda item: item[0]))
        for a in range(m))

    model = HybridModel(dims=dims, hamiltonians=hams,
                        couplings=MappingProxyType(cpl),
                        time_dependent=time_dependent,
                        hermiticity_tol=hermiticity_tol,
                        propagators=MappingProxyType(dict(propagators or {})),
                        name=name, meta=MappingProxyType(dict(meta or {})),
                        _outgoing=outgoing)
    if not time_dependent:
        cache = tuple(_sum_gdag_g(model, a, 0.0) for a in range(m))
        object.__setattr__(model, "_lambda_cache", cache)
    return model


def _sum_gdag_g(model: HybridModel, alpha: int, t: float) -> np.ndarray:
    ops = [g(t) for _, g in model.outgoing(alpha)]
    d = model.dims[alpha]
    if all(op.ndim == 1 for op in ops):
        lam = np.zeros(d)
        for op in ops:
            lam = lam + np.abs(op) ** 2
        return lam
    lam = np.zeros((d, d), dtype=complex)
    for op in ops:
        dense = op_dense(op)
        lam += dense.conj().T @ dense
    return lam


def lambda_value(model: HybridModel, alpha: int, t: float = 0.0) -> np.ndarray:
    """Damping operator in compact form (1-D when diagonal)."""
    if model._lambda_cache:
        return model._lambda_cache[alpha]
    return _sum_gdag_g(model, alpha, t)


def lambda_op(model: HybridModel, alpha: int, t: float = 0.0) -> np.ndarray:
    """Dense ``Lambda_alpha(t) = sum_beta g_{beta alpha}^dagger g_{beta alpha}``."""
    alpha = model.check_index(alpha)
    lam = lambda_value(model, alpha, t)
    return np.diag(lam.astype(complex)) if lam.ndim == 1 else lam.copy()


def hamiltonian_value(model: HybridModel, alpha: int, t: float = 0.0) -> np.ndarray:
    return model.hamiltonians[alpha](t)


def _clamp(x: float) -> float:
    return 0.0 if -CLAMP_TOL <= x < 0.0 else x


def jump_rate(model: HybridModel, alpha: int, psi: np.ndarray, t: float = 0.0) -> float:
    """Total event rate ``(psi, Lambda_alpha psi)``; ``psi`` need not be normalized."""
    alpha = model.check_index(alpha)
    if model._lambda_cache:
        lam = model._lambda_cache[alpha]
        value = np.vdot(psi, op_apply(lam, psi)).real
    else:
        value = sum(_branch_weight(g(t), psi) for _, g in model.outgoing(alpha))
    return _clamp(float(value))


def _branch_weight(g: np.ndarray, psi: np.ndarray) -> float:
    v = op_apply(g, psi)
    return float(np.vdot(v, v).real)


def jump_probs(model: HybridModel, alpha: int, psi: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Probability of each target state given that an event occurs now."""
    alpha = model.check_index(alpha)
    probs = np.zeros(model.m)
    for to, g in model.outgoing(alpha):
        probs[to] = _branch_weight(g(t), psi)
    total = probs.sum()
    if total <= 0.0:
        raise ZeroRate(f"no event can leave state {alpha} from this vector (dark state)")
    return probs / total


def check_detailed_balance(model: HybridModel, t: float = 0.0,
                           tol: float = 1e-12) -> tuple[bool, list[tuple[int, int, float]]]:
    """Check ``g_{alpha beta}^dagger == g_{beta alpha}`` for every pair.

    Returns ``(ok, violations)`` with violations as ``(beta, alpha, max_dev)``
    for each unordered pair, listed once with ``beta > alpha``.
    """
    violations = []
    for beta in range(model.m):
        for alpha in range(beta):
            fwd = _dense_or_zero(model, (beta, alpha), t)
            bwd = _dense_or_zero(model, (alpha, beta), t)
            dev = float(np.max(np.abs(bwd.conj().T - fwd), initial=0.0))
            if dev > tol:
                violations.append((beta, alpha, dev))
    return not violations, violations


def _dense_or_zero(model: HybridModel, key: tuple[int, int], t: float) -> np.ndarray:
    to, frm = key
    if key in model.couplings:
        return op_dense(model.couplings[key](t))
    return np.zeros((model.dims[to], model.dims[frm]), dtype=complex)
