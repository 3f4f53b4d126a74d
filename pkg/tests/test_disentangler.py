import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from qllm.circuit import INPUT, OUTPUT, Circuit, CircuitLayout, Gate, apply_circuit_dense, brickwork
from qllm.disentangler import (
    DisentangleConfig,
    FactorizedOperator,
    disentangle,
    fidelity,
    gate_environment,
    procrustes_gate_update,
    relative_error,
    residual_mpo,
)
from qllm.errors import NonFiniteError
from qllm.layer import reconstruct
from qllm.mpo import MPO, SiteSpec, identity_mpo, mpo_from_matrix, mpo_to_matrix, random_mpo
from qllm.tensor import haar_unitary

from conftest import crandn, dense_mpo, random_circuit, rel

MONOTONE_SLACK = 1e-12


def assert_monotone(fids):
    assert np.all(np.diff(fids) >= -MONOTONE_SLACK), np.diff(fids).min()


def circuits_for(spec, layers_u, layers_v, seed):
    k = spec.num_sites
    u = brickwork(CircuitLayout(k, layers_u), "haar", seed, spec.out_dims, OUTPUT)
    v = brickwork(CircuitLayout(k, layers_v), "haar", seed + 1, spec.in_dims, INPUT)
    return u, v


def test_residual_identity_circuits(rng):
    m = random_mpo(SiteSpec.qubits(4), 3, rng)
    ident = brickwork(CircuitLayout(4, 2))
    ident_in = brickwork(CircuitLayout(4, 2), side=INPUT)
    out, err = residual_mpo(m, ident, ident_in, chi_new=3)
    assert err == 0.0
    assert_allclose(mpo_to_matrix(out), mpo_to_matrix(m), atol=1e-12)


def test_residual_planted(planted_k4):
    w, truth = planted_k4
    out, err = residual_mpo(dense_mpo(w), truth.u, truth.v_dag, chi_new=2)
    assert err <= 1e-9
    assert rel(mpo_to_matrix(out), mpo_to_matrix(truth.core)) <= 1e-9


def test_residual_dense_oracle(rng):
    w = crandn(rng, 16, 16)
    spec = SiteSpec.qubits(4)
    u, v = circuits_for(spec, 2, 2, 3)
    out, _ = residual_mpo(dense_mpo(w), u, v, chi_new=16)
    ref = apply_circuit_dense(v, apply_circuit_dense(u, w, adjoint=True), adjoint=True)
    assert rel(mpo_to_matrix(out), ref) <= 1e-9


def test_environment_at_identity_is_self_overlap(rng):
    m = random_mpo(SiteSpec.qubits(2), 4, rng)
    u = Circuit(2, (2, 2), [[Gate(0, (2, 2), np.eye(4))]], OUTPUT)
    v = Circuit(2, (2, 2), [], INPUT)
    fac = FactorizedOperator(u, m, v, m.site_spec)
    env = gate_environment(m, fac, "u", 0, 0)
    assert_allclose(np.trace(env), np.linalg.norm(mpo_to_matrix(m)) ** 2, rtol=1e-12)


def _overlap_with_gate(w, fac, which, layer, site, g):
    c = getattr(fac, which).replace_gate(layer, site, g)
    f2 = FactorizedOperator(c if which == "u" else fac.u, fac.core,
                            c if which == "v_dag" else fac.v_dag, fac.site_spec)
    return np.vdot(w, reconstruct(f2))


@pytest.mark.parametrize("which,layer,site", [("u", 0, 0), ("u", 1, 1), ("v_dag", 0, 0), ("v_dag", 1, 1)])
def test_environment_linear_form(rng, which, layer, site):
    spec = SiteSpec.qubits(3)
    w = crandn(rng, 8, 8)
    u, v = circuits_for(spec, 2, 2, 21)
    fac = FactorizedOperator(u, random_mpo(spec, 3, rng), v, spec)
    env = gate_environment(dense_mpo(w), fac, which, layer, site)
    for _ in range(20):
        g = haar_unitary(4, rng)
        ov = _overlap_with_gate(w, fac, which, layer, site, g)
        assert abs(np.trace(g @ env).real - ov.real) <= 1e-9


def test_environment_finite_difference(rng):
    spec = SiteSpec.qubits(3)
    w = crandn(rng, 8, 8)
    u, v = circuits_for(spec, 1, 1, 4)
    fac = FactorizedOperator(u, random_mpo(spec, 2, rng), v, spec)
    env = gate_environment(dense_mpo(w), fac, "u", 0, 0)
    g0 = fac.u.gate_at(0, 0).matrix
    h = 1e-6

    def f(g):
        # bypass the unitarity check: the overlap is linear in the entries
        c = fac.u.copy()
        object.__setattr__(c.layers[0][0], "matrix", g)
        r = apply_circuit_dense(fac.v_dag, apply_circuit_dense(c, mpo_to_matrix(fac.core)))
        return np.vdot(w, r).real

    for i, j in [(0, 0), (1, 3), (2, 1)]:
        for step in (h, 1j * h):
            d = np.zeros((4, 4), complex)
            d[i, j] = step
            fd = (f(g0 + d) - f(g0 - d)) / (2 * h)
            an = np.trace(d @ env).real / h
            assert abs(fd - an) <= 1e-5 * max(1.0, abs(an))


def test_procrustes_identity():
    g, obj = procrustes_gate_update(np.eye(4))
    assert_allclose(g, np.eye(4), atol=1e-14)
    assert_allclose(obj, 4.0)


def test_procrustes_perfect_alignment(rng):
    q = haar_unitary(4, rng)
    g, obj = procrustes_gate_update(q.conj().T)
    assert_allclose(g, q, atol=1e-12)
    assert_allclose(obj, 4.0, atol=1e-12)


def test_procrustes_random(rng):
    env = crandn(rng, 4, 4)
    g, obj = procrustes_gate_update(env)
    assert_allclose(obj, np.sum(np.linalg.svd(env, compute_uv=False)), atol=1e-10)
    assert_allclose(np.trace(g @ env).real, obj, atol=1e-10)
    for _ in range(1000):
        assert np.trace(haar_unitary(4, rng) @ env).real <= obj + 1e-12


def test_procrustes_rejects_nan():
    with pytest.raises(NonFiniteError):
        procrustes_gate_update(np.full((4, 4), np.nan))


@pytest.mark.parametrize("method", ["lbfgs", "procrustes"])
def test_disentangle_identity(method):
    m = identity_mpo(SiteSpec.qubits(4))
    fac, rep = disentangle(m, DisentangleConfig(layers_u=1, layers_v=1, chi_new=1, method=method))
    assert rep.final_rel_error <= 1e-10
    assert rep.sweep_fidelities[0] >= 1 - 1e-12
    assert_monotone(rep.sweep_fidelities)


def test_zero_layers_is_plain_mpo(rng):
    w = crandn(rng, 16, 16)
    fac, rep = disentangle(dense_mpo(w), DisentangleConfig(layers_u=0, layers_v=0, chi_new=16))
    assert rep.final_rel_error <= 1e-10
    assert rep.sweeps_used == 0 and rep.converged


def test_report_matches_dense_error(rng):
    w = crandn(rng, 16, 16)
    fac, rep = disentangle(dense_mpo(w), DisentangleConfig(chi_new=2, max_sweeps=20))
    assert_allclose(rel(reconstruct(fac), w), rep.final_rel_error, atol=1e-10)
    assert rep.sweeps_used == len(rep.sweep_fidelities) - 1
    assert_monotone(rep.sweep_fidelities)


def test_planted_recovery_with_restarts(planted_k4):
    w, _ = planted_k4
    fac, rep = disentangle(dense_mpo(w), DisentangleConfig(chi_new=2, target_error=5e-7), restarts=10)
    assert rep.final_rel_error <= 1e-6
    for tr in rep.restart_fidelities:
        assert_monotone(tr)


def test_seeded_determinism(rng):
    m = dense_mpo(crandn(rng, 16, 16))
    cfg = DisentangleConfig(chi_new=2, max_sweeps=10, init="haar", seed=3)
    a, ra = disentangle(m, cfg)
    b, rb = disentangle(m, cfg)
    assert ra.sweep_fidelities == rb.sweep_fidelities
    assert np.array_equal(mpo_to_matrix(a.core), mpo_to_matrix(b.core))


@settings(max_examples=12, deadline=None)
@given(
    st.integers(2, 4),
    st.integers(0, 2),
    st.integers(1, 3),
    st.sampled_from(["lbfgs", "procrustes"]),
    st.sampled_from(["identity", "haar"]),
    st.integers(0, 2**31 - 1),
)
def test_fidelity_trace_monotone(k, layers, chi, method, init, seed):
    w = crandn(np.random.default_rng(seed), 2**k, 2**k)
    cfg = DisentangleConfig(layers_u=layers, layers_v=layers, chi_new=chi, max_sweeps=15,
                            method=method, init=init, seed=seed)
    fac, rep = disentangle(dense_mpo(w), cfg)
    assert_monotone(rep.sweep_fidelities)
    assert all(-1e-12 <= f <= 1 + 1e-12 for f in rep.sweep_fidelities)
    f_final = fidelity(fac, dense_mpo(w))
    assert f_final >= rep.sweep_fidelities[-1] - 1e-9


def test_fidelity_exact_is_one(planted_k4):
    w, truth = planted_k4
    assert_allclose(fidelity(truth, dense_mpo(w)), 1.0, atol=1e-10)


def test_fidelity_orthogonal_is_zero():
    spec = SiteSpec.qubits(2)
    z = np.diag([1.0, 1.0, -1.0, -1.0])
    ident = identity_mpo(spec)
    fac = FactorizedOperator(Circuit(2, (2, 2), [], OUTPUT), ident, Circuit(2, (2, 2), [], INPUT), spec)
    assert abs(fidelity(fac, dense_mpo(z, spec))) <= 1e-10


def test_fidelity_decreases_with_perturbation(rng):
    spec = SiteSpec.qubits(3)
    w = crandn(rng, 8, 8)
    d = crandn(rng, 8, 8)
    d -= np.vdot(w, d) / np.vdot(w, w) * w
    target = dense_mpo(w, spec)
    vals = []
    for eps in [0.0, 0.05, 0.1, 0.3, 1.0, 3.0]:
        core, _ = mpo_from_matrix(w + eps * d, spec)
        fac = FactorizedOperator(Circuit(3, (2,) * 3, [], OUTPUT), core,
                                 Circuit(3, (2,) * 3, [], INPUT), spec)
        vals.append(fidelity(fac, target))
    assert_allclose(vals[0], 1.0, atol=1e-12)
    assert np.all(np.diff(vals) < 0)


def test_relative_error_bound_path(monkeypatch, planted_k4):
    w, truth = planted_k4
    target = dense_mpo(w)
    monkeypatch.setenv("QLLM_DENSE_GUARD", "16")
    err, is_bound = relative_error(truth, target)
    assert is_bound and err <= 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        DisentangleConfig(chi_new=0)
    with pytest.raises(ValueError):
        DisentangleConfig(method="adam")
    with pytest.raises(ValueError):
        DisentangleConfig(init="zeros")
    with pytest.raises(ValueError):
        disentangle(identity_mpo(SiteSpec.qubits(2)), DisentangleConfig(), restarts=0)
