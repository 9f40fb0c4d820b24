"""Sample histories of individual hybrid systems.

:func:`run_trajectory` is the norm-threshold event algorithm: draw ``r``,
follow the damped flow until ``||psi||^2 == r``, draw ``r1``, pick the target
state from the cumulative branch probabilities, jump, repeat.

:func:`run_trajectory_thinning` samples the same process differently, by small
time steps with a Bernoulli event decision of probability ``rate * dt``.  It
exists to cross-check the first sampler.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

from .errors import InvalidDistribution, ZeroPostJumpNorm
from .model import (
    HybridModel,
    PureHybridState,
    jump_probs,
    jump_rate,
    lambda_value,
    op_apply,
    op_dense,
)
from .propagation import Flow, get_flow, propagate_step, rk4_step_matrix
from .rng import RngStream

__all__ = [
    "EngineConfig", "EventRecord", "TrajectoryRecord", "Crossing",
    "propagate_step", "find_jump_time", "select_channel", "apply_jump",
    "run_trajectory", "run_trajectory_thinning", "run_thinning_batch",
    "simulate_ensemble", "survival_identity_check", "state_at",
]


@dataclass(frozen=True)
class EngineConfig:
    base_step: float = 1e-2
    root_tol: float = 1e-10
    max_halvings: int = 40
    max_root_iter: int = 100
    # "auto" uses exact exponential flows where the model allows, "rk4" forces stepping
    method: str = "auto"

    def flow(self, model: HybridModel) -> Flow:
        return get_flow(model, self.method, self.base_step, self.max_halvings)


DEFAULT_CONFIG = EngineConfig()


@dataclass(frozen=True)
class EventRecord:
    time: float
    from_state: int
    to_state: int
    pre_jump_norm_sq: float
    r: float
    post_jump_psi: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class TrajectoryRecord:
    seed: int
    stream_index: int
    initial: PureHybridState
    t_start: float
    t_end: float
    events: tuple[EventRecord, ...]
    final: PureHybridState
    terminated_without_event: bool
    survival_norm_sq: float

    @property
    def n_events(self) -> int:
        return len(self.events)

    def alpha_at(self, t: float) -> int:
        alpha = self.initial.alpha
        for ev in self.events:
            if ev.time > t:
                break
            alpha = ev.to_state
        return alpha


class Crossing(NamedTuple):
    """Result of a jump-time search.  ``fired`` is False when ``t`` is the horizon."""

    t: float
    psi: np.ndarray
    fired: bool
    norm_sq: float


def _norm_sq(psi: np.ndarray) -> float:
    return float(np.vdot(psi, psi).real)


def find_jump_time(model: HybridModel, state: PureHybridState, t0: float, r: float,
                   t_max: float, cfg: EngineConfig = DEFAULT_CONFIG) -> Crossing:
    """Time at which the damped norm squared first falls to ``r``.

    The norm squared never increases along the flow, so once a step brackets
    ``r`` the root is unique in that step and is refined by Brent's bracketing
    method until the norm residual is within ``cfg.root_tol``.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie in (0, 1)")
    flow = cfg.flow(model)
    alpha, psi = state.alpha, state.psi
    if flow.is_exact(alpha):
        return _find_exact(flow, alpha, psi, t0, r, t_max, cfg)
    return _find_stepped(flow, alpha, psi, t0, r, t_max, cfg)


def _refine(f, lo: float, hi: float, cfg: EngineConfig) -> float:
    if f(hi) == 0.0:
        return hi
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                  maxiter=cfg.max_root_iter)


def _find_exact(flow, alpha, psi, t0, r, t_max, cfg) -> Crossing:
    # Exact flows can be evaluated at any time, so widen the bracket geometrically.
    def f(t):
        return flow.norm_sq(alpha, psi, t0, t) - r

    lo, width = t0, cfg.base_step
    while True:
        hi = min(t0 + width, t_max)
        if f(hi) <= 0.0:
            break
        if hi >= t_max:
            end = flow.advance(alpha, psi, t0, t_max)
            return Crossing(t_max, end, False, _norm_sq(end))
        lo, width = hi, 2.0 * width
    t1 = _refine(f, lo, hi, cfg)
    if t1 <= t0:
        t1 = math.nextafter(t0, math.inf)
    out = flow.advance(alpha, psi, t0, t1)
    return Crossing(t1, out, True, _norm_sq(out))


def _find_stepped(flow, alpha, psi, t0, r, t_max, cfg) -> Crossing:
    rk4 = flow.rk4
    k, tk, psik = 0, t0, psi
    while True:
        tn = rk4.grid(t0, k + 1, t_max)
        psin = rk4.step(alpha, psik, tk, tn - tk)
        nn = _norm_sq(psin)
        if nn <= r:
            base_psi, base_t = psik, tk

            def f(s):
                return _norm_sq(rk4.step(alpha, base_psi, base_t, s)) - r

            s = _refine(f, 0.0, tn - tk, cfg)
            if s <= 0.0:
                s = math.nextafter(0.0, 1.0)
            t1 = tk + s
            # same final sub-step that RK4Flow.advance(t0 -> t1) takes
            out = rk4.step(alpha, psik, tk, t1 - tk)
            return Crossing(t1, out, True, _norm_sq(out))
        if tn >= t_max:
            return Crossing(t_max, psin, False, nn)
        k, tk, psik = k + 1, tn, psin


def select_channel(probs, r1: float) -> int:
    """Smallest index whose cumulative probability reaches ``r1``."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0):
        raise InvalidDistribution("negative probability")
    total = probs.sum()
    if abs(total - 1.0) > 1e-6:
        raise InvalidDistribution(f"probabilities sum to {total!r}")
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if acc >= r1:
            return i
    # rounding left the total just short of r1
    return int(np.flatnonzero(probs > 0)[-1])


def apply_jump(model: HybridModel, state: PureHybridState, t1: float, to: int) -> PureHybridState:
    key = (to, state.alpha)
    if key not in model.couplings:
        raise KeyError(f"no coupling from state {state.alpha} to {to}")
    v = op_apply(model.couplings[key](t1), state.psi)
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        raise ZeroPostJumpNorm(
            f"jump {state.alpha}->{to} at t={t1} annihilates the state")
    return PureHybridState(int(to), v / nrm, True)


def run_trajectory(model: HybridModel, initial: PureHybridState, t_start: float,
                   t_end: float, rng: RngStream, cfg: EngineConfig = DEFAULT_CONFIG) -> TrajectoryRecord:
    """One sample history on ``(t_start, t_end]``."""
    if t_end <= t_start:
        raise ValueError("t_end must exceed t_start")
    if abs(initial.norm_sq - 1.0) > 1e-12:
        raise ValueError("initial state must be normalized")
    flow = cfg.flow(model)
    events: list[EventRecord] = []
    t, state = float(t_start), initial
    while True:
        r = rng.uniform()
        if not model.outgoing(state.alpha):
            end = flow.advance(state.alpha, state.psi, t, t_end)
            cross = Crossing(t_end, end, False, _norm_sq(end))
        else:
            cross = find_jump_time(model, state, t, r, t_end, cfg)
        if not cross.fired:
            final = PureHybridState(state.alpha, cross.psi / math.sqrt(cross.norm_sq), True)
            return TrajectoryRecord(rng.master_seed, rng.stream_index, initial,
                                    float(t_start), float(t_end), tuple(events), final,
                                    True, cross.norm_sq)
        at_jump = PureHybridState(state.alpha, cross.psi, False)
        probs = jump_probs(model, state.alpha, cross.psi, cross.t)
        to = select_channel(probs, rng.uniform())
        new = apply_jump(model, at_jump, cross.t, to)
        events.append(EventRecord(cross.t, state.alpha, to, cross.norm_sq, r, new.psi))
        t, state = cross.t, new
        if t >= t_end:
            return TrajectoryRecord(rng.master_seed, rng.stream_index, initial,
                                    float(t_start), float(t_end), tuple(events), state,
                                    False, 1.0)


def simulate_ensemble(model: HybridModel, initial: PureHybridState, t_start: float,
                      t_end: float, n: int, master_seed: int,
                      cfg: EngineConfig = DEFAULT_CONFIG, first_index: int = 0,
                      jobs: int = 1) -> list[TrajectoryRecord]:
    """``n`` trajectories with stream indices ``first_index .. first_index+n-1``.

    Output order and content do not depend on ``jobs``.
    """
    indices = range(first_index, first_index + n)

    def one(k):
        return run_trajectory(model, initial, t_start, t_end, RngStream(master_seed, k), cfg)

    if jobs <= 1:
        return [one(k) for k in indices]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, indices))


def state_at(model: HybridModel, traj: TrajectoryRecord, t: float,
             cfg: EngineConfig = DEFAULT_CONFIG) -> PureHybridState:
    """Normalized hybrid state of ``traj`` at time ``t``, replayed from its last event."""
    flow = cfg.flow(model)
    alpha, psi, t_last = traj.initial.alpha, traj.initial.psi, traj.t_start
    for ev in traj.events:
        if ev.time > t:
            break
        if ev.post_jump_psi is not None:
            psi = ev.post_jump_psi
        else:
            pre = flow.advance(alpha, psi, t_last, ev.time)
            psi = apply_jump(model, PureHybridState(alpha, pre, False), ev.time,
                             ev.to_state).psi
        alpha, t_last = ev.to_state, ev.time
    out = flow.advance(alpha, psi, t_last, t)
    return PureHybridState(alpha, out / np.linalg.norm(out), True)


# ---------------------------------------------------------------------------
# thinning sampler

_BLOCK = 1024


def _rate_bound(model: HybridModel, t: float) -> float:
    best = 0.0
    for alpha in range(model.m):
        lam = lambda_value(model, alpha, t)
        top = float(lam.max()) if lam.ndim == 1 else float(np.linalg.eigvalsh(lam).max())
        best = max(best, top)
    return best


def run_thinning_batch(model: HybridModel, initial: PureHybridState, t_start: float,
                       t_end: float, streams: Sequence[RngStream], dt: float = 1e-3,
                       max_events: int | None = None) -> list[TrajectoryRecord]:
    """Thinning sampler for many trajectories advanced in lockstep.

    Each trajectory keeps its state normalized, advances by one RK4 step of
    the no-jump equation, then jumps with probability ``rate * dt``.  Step
    decisions use sub-stream 1 of each trajectory's stream and channel choices
    sub-stream 2.  With ``max_events`` a trajectory stops at that event and its
    record's ``t_end`` is the stop time.
    """
    if t_end <= t_start:
        raise ValueError("t_end must exceed t_start")
    n_steps = max(1, math.ceil((t_end - t_start) / dt - 1e-9))
    dt = (t_end - t_start) / n_steps
    bound = _rate_bound(model, t_start)
    if bound * dt > 0.1:
        warnings.warn(f"rate bound {bound:.3g} times dt={dt:g} exceeds 0.1", stacklevel=2)

    nb = len(streams)
    dmax = max(model.dims)
    timing = [s.child(1) for s in streams]
    channel = [s.child(2) for s in streams]
    alpha = np.full(nb, initial.alpha)
    psi = np.zeros((nb, dmax), dtype=complex)
    psi[:, :initial.psi.size] = initial.psi
    active = np.ones(nb, dtype=bool)
    events: list[list[EventRecord]] = [[] for _ in range(nb)]
    stop_t = np.full(nb, float(t_end))
    step_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def operators(a, t):
        if not model.time_dependent and a in step_cache:
            return step_cache[a]
        lam = op_dense(lambda_value(model, a, t + dt))
        ops = (rk4_step_matrix(model, a, t, dt), lam)
        if not model.time_dependent:
            step_cache[a] = ops
        return ops

    draws = np.empty((nb, _BLOCK))
    for k in range(n_steps):
        if k % _BLOCK == 0:
            for b in range(nb):
                draws[b] = timing[b].uniforms(_BLOCK)
        t_now = t_start + k * dt
        t_next = t_start + (k + 1) * dt
        jumped = []
        for a in np.unique(alpha[active]):
            idx = np.flatnonzero(active & (alpha == a))
            d = model.dims[a]
            step, lam = operators(int(a), t_now)
            block = psi[idx, :d] @ step.T
            block /= np.linalg.norm(block, axis=1)[:, None]
            psi[idx, :d] = block
            rates = np.einsum("bi,bi->b", block.conj(), block @ lam.T).real
            hit = draws[idx, k % _BLOCK] < rates * dt
            jumped.extend(idx[hit].tolist())
        for b in sorted(jumped):
            a = int(alpha[b])
            d = model.dims[a]
            v = psi[b, :d]
            to = select_channel(jump_probs(model, a, v, t_next), channel[b].uniform())
            new = apply_jump(model, PureHybridState(a, v.copy(), True), t_next, to)
            events[b].append(EventRecord(t_next, a, to, float("nan"), float("nan"), new.psi))
            alpha[b] = to
            psi[b] = 0.0
            psi[b, :new.psi.size] = new.psi
            if max_events is not None and len(events[b]) >= max_events:
                active[b] = False
                stop_t[b] = t_next
        if not active.any():
            break

    records = []
    for b, s in enumerate(streams):
        a = int(alpha[b])
        final = PureHybridState(a, psi[b, :model.dims[a]].copy(), True)
        records.append(TrajectoryRecord(s.master_seed, s.stream_index, initial,
                                        float(t_start), float(stop_t[b]), tuple(events[b]),
                                        final, active[b] and not events[b], float("nan")))
    return records


def run_trajectory_thinning(model: HybridModel, initial: PureHybridState, t_start: float,
                            t_end: float, rng: RngStream, dt: float = 1e-3,
                            max_events: int | None = None) -> TrajectoryRecord:
    return run_thinning_batch(model, initial, t_start, t_end, [rng], dt, max_events)[0]


def survival_identity_check(model: HybridModel, initial: PureHybridState, t_grid,
                            cfg: EngineConfig = DEFAULT_CONFIG) -> float:
    """Largest gap between ``1 - exp(-int rate)`` and ``1 - ||psi(t)||^2`` on ``t_grid``.

    The rate is evaluated on the normalized flow and integrated with the
    trapezoid rule on the grid itself.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    flow = cfg.flow(model)
    a = initial.alpha
    psi = initial.psi
    norms = np.empty(t_grid.size)
    rates = np.empty(t_grid.size)
    t_prev = t_grid[0]
    for i, t in enumerate(t_grid):
        psi = flow.advance(a, psi, t_prev, t)
        t_prev = t
        n2 = _norm_sq(psi)
        norms[i] = n2
        rates[i] = jump_rate(model, a, psi, t) / n2
    integral = cumulative_trapezoid(rates, t_grid, initial=0.0)
    # both sides expressed as survival probabilities; 1 - x cancels
    return float(np.max(np.abs(np.exp(-integral) - norms / norms[0])))
