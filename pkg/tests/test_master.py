import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventum import (
    DensityFamily,
    PureHybridState,
    build_model,
    check_collapsibility,
    integrate,
    master_rhs,
    reduce_to_quantum,
)
from eventum.errors import DimMismatch, ShapeMismatch, ToleranceBreach
from eventum.master import default_dt, quantum_rhs
from eventum.models import (
    ClockSpec,
    DetectorSpec,
    build_builtin,
    build_clock_model,
    build_detector_model,
    clock_block_traces,
    gaussian_packet,
    random_model,
)
from eventum.models.detector import coupling_diag, shift_hamiltonian

from oracles import master_rhs_terms, random_couplings, random_density


def random_family(seed, dims):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(len(dims)))
    return DensityFamily(tuple(random_density(rng, d, wi) for d, wi in zip(dims, w)))


# master_rhs

def test_rhs_without_couplings_is_von_neumann():
    h = [np.diag([1.0, -0.5]), np.array([[0, 1], [1, 0]])]
    model = build_model(2, [2, 2], h, {})
    fam = random_family(1, [2, 2])
    out = master_rhs(model, fam)
    for b in range(2):
        ref = -1j * (h[b] @ fam.blocks[b] - fam.blocks[b] @ h[b])
        assert np.allclose(out.blocks[b], ref, atol=1e-14)


def test_rhs_detector_pair():
    spec = DetectorSpec(kappa=1.3, width=4.0, L=8.0, N=64)
    model = build_detector_model(spec)
    psi = gaussian_packet(spec, -0.5, 0.5)
    rho_on = np.outer(psi, psi.conj())
    rho_off = 0.3 * np.eye(spec.N) / spec.N
    fam = DensityFamily((0.7 * rho_on, rho_off))
    out = master_rhs(model, fam)
    h = shift_hamiltonian(spec)
    g = np.diag(coupling_diag(spec, 0.0))
    lam = g.conj().T @ g
    on = -1j * (h @ fam.blocks[0] - fam.blocks[0] @ h) - 0.5 * (lam @ fam.blocks[0] + fam.blocks[0] @ lam)
    off = -1j * (h @ rho_off - rho_off @ h) + g @ fam.blocks[0] @ g.conj().T
    assert np.max(np.abs(out.blocks[0] - on)) <= 1e-10
    assert np.max(np.abs(out.blocks[1] - off)) <= 1e-10


def test_rhs_random_matches_term_oracle():
    hams, gs = random_couplings(9, 3, 3)
    model = build_model(3, [3, 3, 3], hams, gs)
    fam = random_family(2, [3, 3, 3])
    out = master_rhs(model, fam)
    ref = master_rhs_terms(hams, gs, fam.blocks)
    for a, b in zip(out.blocks, ref):
        assert np.max(np.abs(a - b)) <= 1e-12
    assert abs(sum(np.trace(b) for b in out.blocks)) <= 1e-12


def test_rhs_unequal_dims():
    g = np.array([[1.0, 0.5]])
    model = build_model(2, [2, 1], [np.diag([0.2, -0.2]), np.zeros((1, 1))], {(1, 0): g})
    fam = DensityFamily((np.eye(2) / 2, np.zeros((1, 1))))
    out = master_rhs(model, fam)
    ref = master_rhs_terms([np.diag([0.2, -0.2]), np.zeros((1, 1))], {(1, 0): g.astype(complex)},
                           fam.blocks)
    for a, b in zip(out.blocks, ref):
        assert np.allclose(a, b, atol=1e-14)


def test_rhs_shape_mismatch():
    model = random_model(0, 2, 2)
    with pytest.raises(ShapeMismatch):
        master_rhs(model, DensityFamily((np.eye(3), np.eye(2))))
    with pytest.raises(ShapeMismatch):
        master_rhs(model, DensityFamily((np.eye(2),)))


# integrate

def test_two_site_clock_traces():
    kappa = 0.8
    model = build_clock_model(ClockSpec(kappa=kappa, i_max=1))
    fam0 = DensityFamily.from_state(model, PureHybridState.make(0, [1, 1j]))
    ts = np.linspace(0, 3, 7)
    for fam in integrate(model, fam0, 3.0, t_eval=ts):
        assert fam.traces[0] == pytest.approx(math.exp(-kappa * fam.t), abs=1e-9)
        assert fam.traces[1] == pytest.approx(1 - math.exp(-kappa * fam.t), abs=1e-9)


def test_clock_traces_are_poisson():
    model, init = build_builtin("clock", {"kappa": 1.0, "i_max": 30})
    fam0 = DensityFamily.from_state(model, init)
    for fam in integrate(model, fam0, 5.0, t_eval=[1.0, 2.5, 5.0]):
        assert np.max(np.abs(fam.traces - clock_block_traces(1.0, fam.t, 30))) <= 1e-9


def test_unitary_blocks_keep_trace_and_purity():
    h = [np.array([[1, 0.5j], [-0.5j, -1]]), np.diag([0.3, 2.0])]
    model = build_model(2, [2, 2], h, {})
    fam0 = random_family(4, [2, 2])
    out = integrate(model, fam0, 5.0, t_eval=np.linspace(0, 5, 11))
    for fam in out:
        assert np.allclose(fam.traces, fam0.traces, atol=1e-12)
        assert np.allclose(fam.purities, fam0.purities, atol=1e-8)


def test_step_halving_convergence():
    model, init = build_builtin("testpair")
    fam0 = DensityFamily.from_state(model, init)

    def at(dt):
        return np.array(integrate(model, fam0, 1.0, dt=dt)[-1].blocks)

    coarse = [at(dt) for dt in (0.2, 0.1, 0.05)]
    d1 = np.abs(coarse[0] - coarse[1]).max()
    d2 = np.abs(coarse[1] - coarse[2]).max()
    assert 12 < d1 / d2 < 20  # fourth order: ratio near 16
    assert np.abs(at(1e-3) - at(5e-4)).max() <= 1e-11


def test_output_between_grid_points():
    model, init = build_builtin("testpair")
    fam0 = DensityFamily.from_state(model, init)
    a = integrate(model, fam0, 1.0, dt=1e-3, t_eval=[0.3337, 1.0])
    assert a[0].t == 0.3337
    b = integrate(model, fam0, 0.3337, dt=1e-3)
    assert np.allclose(np.array(a[0].blocks), np.array(b[-1].blocks), atol=1e-12)


def test_default_dt_scales_with_lambda():
    model = build_model(2, [1, 1], None, {(1, 0): np.array([[3.0]])})
    assert default_dt(model) == pytest.approx(1e-3 / 9)
    assert default_dt(random_model(0, 2, 2, g_scale=0.01)) == 1e-3


def test_unstable_step_breaches_tolerance():
    model, init = build_builtin("testpair")
    with pytest.raises(ToleranceBreach):
        integrate(model, DensityFamily.from_state(model, init), 50.0, dt=5.0)


def test_integrate_rejects_bad_eval_times():
    model, init = build_builtin("testpair")
    with pytest.raises(ValueError):
        integrate(model, DensityFamily.from_state(model, init), 1.0, t_eval=[0.5, 0.2])


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 1000), m=st.integers(2, 3), dim=st.integers(1, 3))
def test_trace_and_positivity_long_run(seed, m, dim):
    model = random_model(seed, m, dim)
    psi = np.zeros(dim, dtype=complex)
    psi[-1] = 1
    fam0 = DensityFamily.from_state(model, PureHybridState(0, psi))
    for fam in integrate(model, fam0, 10.0, t_eval=np.linspace(0, 10, 21)):
        assert abs(fam.total_trace - 1) <= 1e-8
        assert fam.min_eigenvalue() >= -1e-7
        assert fam.hermiticity_defect() <= 1e-10


def test_linearity():
    model = random_model(12, 3, 2)
    a, b = random_family(1, [2, 2, 2]), random_family(2, [2, 2, 2])
    ca, cb = 0.3, 0.7
    mix = a.combine(ca, b, cb)
    ia = integrate(model, a, 1.0)[-1]
    ib = integrate(model, b, 1.0)[-1]
    im = integrate(model, mix, 1.0)[-1]
    for x, y, z in zip(ia.blocks, ib.blocks, im.blocks):
        assert np.max(np.abs(ca * x + cb * y - z)) <= 1e-9


def test_unequal_dims_integration():
    g = np.array([[1.0, 0.5]])
    model = build_model(2, [2, 1], [np.diag([0.2, -0.2]), np.zeros((1, 1))], {(1, 0): g})
    fam0 = DensityFamily((np.eye(2) / 2, np.zeros((1, 1))))
    out = integrate(model, fam0, 2.0, t_eval=np.linspace(0, 2, 9))
    assert all(abs(f.total_trace - 1) <= 1e-10 for f in out)
    # the second block has no outflow, so its trace only grows
    lower = [f.traces[1] for f in out]
    assert all(a < b for a, b in zip(lower, lower[1:]))


# quantum reduction

def test_identity_clock_collapses_to_stationary_state():
    spec = ClockSpec(kappa=1.5, i_max=6, cyclic=True)
    model = build_clock_model(spec)
    v = [math.sqrt(1.5) * np.eye(2)]
    ok, report = check_collapsibility(model, v)
    assert ok, report
    psi = PureHybridState.make(0, [1, 1j])
    rho0 = np.outer(psi.psi, psi.psi.conj())
    assert np.allclose(quantum_rhs(rho0, np.zeros((2, 2)), v), 0)
    for fam in integrate(model, DensityFamily.from_state(model, psi), 3.0, t_eval=[1.0, 3.0]):
        assert np.max(np.abs(reduce_to_quantum(model, fam) - rho0)) <= 1e-10


def test_absorbing_clock_is_not_collapsible():
    model = build_clock_model(ClockSpec(kappa=1.0, i_max=3))
    ok, report = check_collapsibility(model, [np.eye(2)])
    assert not ok and report["lambda_dev"] > 0.5


def test_detector_not_collapsible():
    spec = DetectorSpec(N=64, L=8.0, width=4.0)
    model = build_detector_model(spec)
    ok, report = check_collapsibility(model, [np.diag(coupling_diag(spec, 0.0))])
    assert not ok and report["lambda_dev"] > 0


def test_partitioned_v_family_round_trip():
    rng = np.random.default_rng(5)
    d, m = 2, 3
    vs = [0.5 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) for _ in range(2)]
    h = np.diag([0.4, -0.1]).astype(complex)
    # every source state sends V_0 to one target and V_1 to the other, so the
    # summed jump map out of each state is X -> sum_i V_i X V_i^dagger
    couplings = {}
    assign = {0: [(1, 0), (2, 1)], 1: [(0, 0), (2, 1)], 2: [(0, 0), (1, 1)]}
    for frm, pairs in assign.items():
        for to, i in pairs:
            couplings[(to, frm)] = vs[i]
    model = build_model(m, [d] * m, [h] * m, couplings)
    ok, report = check_collapsibility(model, vs)
    assert ok and report["max_dev"] <= 1e-10
    fam0 = random_family(3, [d] * m)
    fam = integrate(model, fam0, 1.0)[-1]
    # integrate the collapsed equation with the same RK4 scheme
    rho = reduce_to_quantum(model, fam0)
    n = 1000
    for _ in range(n):
        f = lambda r: quantum_rhs(r, h, vs)  # noqa: E731
        k1 = f(rho)
        k2 = f(rho + 0.5e-3 * k1)
        k3 = f(rho + 0.5e-3 * k2)
        k4 = f(rho + 1e-3 * k3)
        rho = rho + 1e-3 / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.max(np.abs(reduce_to_quantum(model, fam) - rho)) <= 1e-9


def test_reduce_needs_equal_dims():
    model = build_model(2, [2, 1], None, {(1, 0): np.ones((1, 2))})
    with pytest.raises(DimMismatch):
        reduce_to_quantum(model, DensityFamily((np.eye(2) / 2, np.zeros((1, 1)))))
    with pytest.raises(DimMismatch):
        check_collapsibility(model, [])
