import math
from dataclasses import replace

import numpy as np
import pytest

from eventum import (
    DensityFamily,
    EngineConfig,
    PureHybridState,
    RngStream,
    build_model,
    convergence_report,
    estimate_density,
    integrate,
    run_trajectory,
    simulate_ensemble,
    trace_distance,
)
from eventum.engine import state_at
from eventum.ensemble import fit_slope
from eventum.errors import HorizonExceeded, ShapeMismatch
from eventum.models import build_builtin, clock_block_traces
from eventum.propagation import generator

from oracles import taylor_expm


def test_single_eventless_trajectory_is_projector():
    proj = np.diag([1.0, 0.0]).astype(complex)
    h = np.array([[0.0, 0.3], [0.3, 0.0]], dtype=complex)
    model = build_model(2, [2, 2], [h, h], {(1, 0): 0.4 * proj})
    init = PureHybridState(0, np.array([1, 0], dtype=complex))
    tr = run_trajectory(model, init, 0.0, 1.0, RngStream(0, 1))
    assert tr.n_events == 0
    est = estimate_density([tr], model, 0.7)
    v = taylor_expm(generator(model, 0, 0.0) * 0.7) @ init.psi
    v /= np.linalg.norm(v)
    assert np.allclose(est.family.blocks[0], np.outer(v, v.conj()), atol=1e-10)
    assert est.per_block_counts == (1, 0)


def test_estimate_is_valid_family():
    model, init = build_builtin("testtriple")
    trajs = simulate_ensemble(model, init, 0.0, 2.0, 300, 1)
    est = estimate_density(trajs, model, 1.5)
    fam = est.family
    assert sum(est.per_block_counts) == est.n_trajectories == 300
    assert np.allclose(fam.traces, np.array(est.per_block_counts) / 300, atol=1e-12)
    assert abs(fam.total_trace - 1) <= 1e-12
    assert fam.min_eigenvalue() >= -1e-12
    assert fam.hermiticity_defect() <= 1e-14


def test_replay_without_stored_vectors():
    model, init = build_builtin("testpair")
    tr = run_trajectory(model, init, 0.0, 3.0, RngStream(2, 5))
    assert tr.n_events > 0
    bare = replace(tr, events=tuple(replace(e, post_jump_psi=None) for e in tr.events))
    for t in (0.4, 1.7, 3.0):
        a, b = state_at(model, tr, t), state_at(model, bare, t)
        assert a.alpha == b.alpha
        assert np.allclose(a.psi, b.psi, atol=1e-12)


def test_horizon_exceeded():
    model, init = build_builtin("testpair")
    trajs = simulate_ensemble(model, init, 0.0, 1.0, 3, 0)
    with pytest.raises(HorizonExceeded):
        estimate_density(trajs, model, 1.5)


def test_clock_block_traces_within_multinomial_bands():
    kappa, t, i_max, n = 1.0, 2.0, 20, 10_000
    model, init = build_builtin("clock", {"kappa": kappa, "i_max": i_max})
    trajs = simulate_ensemble(model, init, 0.0, t, n, 31)
    est = estimate_density(trajs, model, t)
    p = clock_block_traces(kappa, t, i_max)
    band = 4 * np.sqrt(p * (1 - p) / n) + 1e-12
    assert np.all(np.abs(est.family.traces - p) <= band)
    ref = integrate(model, DensityFamily.from_state(model, init), t)[-1]
    assert np.max(np.abs(ref.traces - p)) <= 1e-9


def test_trace_distance_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = x @ x.conj().T
    rho /= np.trace(rho).real
    a = DensityFamily((rho, np.zeros((2, 2))))
    assert trace_distance(a, a) == 0.0
    e0, e1 = np.diag([1.0, 0, 0]), np.diag([0, 1.0, 0])
    z = np.zeros((2, 2))
    assert trace_distance(DensityFamily((e0, z)), DensityFamily((e1, z))) == pytest.approx(1.0, abs=1e-15)
    # traceless Hermitian perturbation with unit positive and negative parts
    u = np.linalg.qr(x)[0]
    delta = u @ np.diag([1.0, -1.0, 0.0]) @ u.conj().T
    eps = 0.013
    b = DensityFamily((rho + eps * delta, np.zeros((2, 2))))
    assert trace_distance(a, b) == pytest.approx(eps, abs=1e-10)


def test_trace_distance_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        trace_distance(DensityFamily((np.eye(2),)), DensityFamily((np.eye(3),)))
    with pytest.raises(ShapeMismatch):
        trace_distance(DensityFamily((np.eye(2),)), DensityFamily((np.eye(2), np.eye(2))))


def test_fit_slope():
    ns = [100, 1000, 10000]
    assert fit_slope(ns, [3 / math.sqrt(n) for n in ns]) == pytest.approx(-0.5)


def test_zero_coupling_is_deterministic():
    h = np.array([[0.5, 0.2j], [-0.2j, -0.5]])
    model = build_model(2, [2, 2], [h, h], {(1, 0): np.zeros((2, 2))})
    init = PureHybridState.make(0, [1, 1])
    rep = convergence_report(model, init, [0.5, 1.0], [10, 100], seed=3)
    assert np.max(rep["trace_distances"]) <= 1e-8
    assert rep["pass"] and rep["fitted_slope"] is None


def test_convergence_report_testpair():
    model, init = build_builtin("testpair")
    rep = convergence_report(model, init, [0.5, 1.0, 2.0], [100, 1000, 10000], seed=17)
    assert rep["pass"], rep
    assert -0.65 <= rep["fitted_slope"] <= -0.35
    assert set(rep) >= {"checkpoints", "N", "trace_distances", "fitted_slope", "pass"}


def test_batch_means_approach_integrator():
    model, init = build_builtin("testpair")
    t = 1.0
    ref = integrate(model, DensityFamily.from_state(model, init), t)[-1]
    batches = [estimate_density(simulate_ensemble(model, init, 0, t, 400, 99, first_index=400 * b),
                                model, t).family for b in range(10)]
    errs = [trace_distance(DensityFamily(tuple(sum(f.blocks[i] for f in batches[:k]) / k
                                               for i in range(2))), ref) for k in (1, 10)]
    assert errs[1] < errs[0]


def test_estimate_with_rk4_config_matches_exact():
    model, init = build_builtin("testpair")
    trajs = simulate_ensemble(model, init, 0.0, 1.0, 200, 4, EngineConfig(method="rk4"))
    a = estimate_density(trajs, model, 1.0, EngineConfig(method="rk4")).family
    b = estimate_density(trajs, model, 1.0).family
    assert trace_distance(a, b) <= 1e-7
