"""Deterministic no-jump flow ``psi' = (-i H - Lambda/2) psi`` between events.

Two general-purpose flows are provided:

* :class:`RK4Flow` steps classical fourth-order Runge-Kutta on the fixed grid
  ``t0 + k*h``.  It handles time-dependent operators.
* :class:`ExponentialFlow` uses the exact exponential of a time-independent
  generator (eigendecomposition, or ``expm`` when the eigenbasis is badly
  conditioned).

A model may also ship its own exact flow per classical state through
``HybridModel.propagators``; such objects expose ``advance(psi, t0, t1)`` and
optionally ``norm_sq(psi, t0, t1)``.
"""
from __future__ import annotations

import weakref

import numpy as np
import scipy.linalg

from .errors import RetryCapExceeded, StepRejected
from .model import HybridModel, hamiltonian_value, lambda_value, op_dense

NORM_GROWTH_TOL = 1e-9
EXP_MAX_DIM = 256
EIG_COND_MAX = 1e8


def generator(model: HybridModel, alpha: int, t: float) -> np.ndarray:
    """``-i H_alpha(t) - Lambda_alpha(t)/2``, 1-D when both parts are diagonal."""
    h = hamiltonian_value(model, alpha, t)
    lam = lambda_value(model, alpha, t)
    if h.ndim == 1 and lam.ndim == 1:
        return -1j * h - 0.5 * lam
    return -1j * op_dense(h) - 0.5 * op_dense(lam)


def _mul(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    if a.ndim == 1:
        return a * x if x.ndim == 1 else a[:, None] * x
    return a @ x


def rk4_step(model: HybridModel, alpha: int, psi: np.ndarray, t: float, h: float) -> np.ndarray:
    """One classical RK4 step, operators evaluated at the stage times."""
    a0 = generator(model, alpha, t)
    if model.time_dependent:
        am = generator(model, alpha, t + 0.5 * h)
        a1 = generator(model, alpha, t + h)
    else:
        am = a1 = a0
    k1 = _mul(a0, psi)
    k2 = _mul(am, psi + 0.5 * h * k1)
    k3 = _mul(am, psi + 0.5 * h * k2)
    k4 = _mul(a1, psi + h * k3)
    return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_matrix(model: HybridModel, alpha: int, t: float, h: float) -> np.ndarray:
    """Matrix ``M`` with ``rk4_step(psi) == M @ psi`` (the scheme is linear in psi)."""
    d = model.dims[alpha]
    eye = np.eye(d, dtype=complex)
    return rk4_step(model, alpha, eye, t, h)


def propagate_step(model: HybridModel, alpha: int, psi: np.ndarray, t: float, h: float) -> np.ndarray:
    """RK4 step that refuses to increase the norm.

    Raises :class:`StepRejected` when ``||psi(t+h)|| > ||psi(t)|| (1 + 1e-9)``;
    the caller is expected to halve ``h`` and retry.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    new = rk4_step(model, alpha, psi, t, h)
    before = np.linalg.norm(psi)
    after = np.linalg.norm(new)
    if after > before * (1.0 + NORM_GROWTH_TOL):
        raise StepRejected(f"norm grew from {before:.16g} to {after:.16g} with h={h:g}")
    return new


class RK4Flow:
    exact = False

    def __init__(self, model: HybridModel, base_step: float = 1e-2, max_halvings: int = 40):
        self.model = model
        self.base_step = float(base_step)
        self.max_halvings = int(max_halvings)

    def step(self, alpha: int, psi: np.ndarray, t: float, h: float) -> np.ndarray:
        if h == 0.0:
            return psi
        return self._step(alpha, psi, t, h, 0)

    def _step(self, alpha, psi, t, h, depth):
        try:
            return propagate_step(self.model, alpha, psi, t, h)
        except StepRejected:
            if depth >= self.max_halvings:
                raise RetryCapExceeded(
                    f"step at t={t} rejected after {depth} halvings") from None
        half = 0.5 * h
        mid = self._step(alpha, psi, t, half, depth + 1)
        return self._step(alpha, mid, t + half, h - half, depth + 1)

    def grid(self, t0: float, k: int, t_stop: float) -> float:
        return min(t0 + k * self.base_step, t_stop)

    def advance(self, alpha: int, psi: np.ndarray, t0: float, t1: float) -> np.ndarray:
        # Must visit exactly the grid the event search uses, so replays are bit-identical.
        if t1 <= t0:
            return psi
        k, tk = 0, t0
        while True:
            tn = self.grid(t0, k + 1, t1)
            if tn == t1:
                return self.step(alpha, psi, tk, t1 - tk)
            psi = self.step(alpha, psi, tk, tn - tk)
            tk, k = tn, k + 1

    def norm_sq(self, alpha, psi, t0, t1) -> float:
        v = self.advance(alpha, psi, t0, t1)
        return float(np.vdot(v, v).real)


class ExponentialFlow:
    """Exact flow for time-independent generators of modest dimension."""

    exact = True

    def __init__(self, model: HybridModel, alpha: int):
        if model.time_dependent:
            raise ValueError("exponential flow needs a time-independent model")
        a = generator(model, alpha, 0.0)
        self._diag = a if a.ndim == 1 else None
        self._a = a
        self._eig = None
        if a.ndim == 2:
            mu, v = np.linalg.eig(a)
            if np.linalg.cond(v) < EIG_COND_MAX:
                self._eig = (mu, v, np.linalg.inv(v))

    def advance(self, psi: np.ndarray, t0: float, t1: float) -> np.ndarray:
        tau = t1 - t0
        if tau == 0.0:
            return psi
        if self._diag is not None:
            return np.exp(self._diag * tau) * psi
        if self._eig is not None:
            mu, v, vinv = self._eig
            return v @ (np.exp(mu * tau) * (vinv @ psi))
        return scipy.linalg.expm(self._a * tau) @ psi

    def norm_sq(self, psi, t0, t1) -> float:
        v = self.advance(psi, t0, t1)
        return float(np.vdot(v, v).real)


class Flow:
    """Per-state dispatch between a model's own propagators and the generic flows."""

    def __init__(self, model: HybridModel, method: str = "auto", base_step: float = 1e-2,
                 max_halvings: int = 40):
        if method not in ("auto", "rk4"):
            raise ValueError(f"unknown propagation method {method!r}")
        self.model = model
        self.rk4 = RK4Flow(model, base_step, max_halvings)
        self._exact: dict[int, object] = {}
        for alpha in range(model.m):
            if alpha in model.propagators:
                self._exact[alpha] = model.propagators[alpha]
            elif (method == "auto" and not model.time_dependent
                  and model.dims[alpha] <= EXP_MAX_DIM):
                self._exact[alpha] = ExponentialFlow(model, alpha)

    def is_exact(self, alpha: int) -> bool:
        return alpha in self._exact

    def advance(self, alpha: int, psi: np.ndarray, t0: float, t1: float) -> np.ndarray:
        prop = self._exact.get(alpha)
        if prop is None:
            return self.rk4.advance(alpha, psi, t0, t1)
        return prop.advance(psi, t0, t1)

    def norm_sq(self, alpha: int, psi: np.ndarray, t0: float, t1: float) -> float:
        prop = self._exact.get(alpha)
        if prop is None:
            return self.rk4.norm_sq(alpha, psi, t0, t1)
        if hasattr(prop, "norm_sq"):
            return prop.norm_sq(psi, t0, t1)
        v = prop.advance(psi, t0, t1)
        return float(np.vdot(v, v).real)


_FLOWS: "weakref.WeakKeyDictionary[HybridModel, dict]" = weakref.WeakKeyDictionary()


def get_flow(model: HybridModel, method: str = "auto", base_step: float = 1e-2,
             max_halvings: int = 40) -> Flow:
    """Flow for ``model``, cached so eigendecompositions are done once per model."""
    per_model = _FLOWS.setdefault(model, {})
    key = (method, float(base_step), int(max_halvings))
    flow = per_model.get(key)
    if flow is None:
        flow = per_model[key] = Flow(model, method, base_step, max_halvings)
    return flow
