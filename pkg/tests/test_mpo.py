import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from qllm.errors import DimensionError, GuardExceededError
from qllm.mpo import (
    MPO,
    SiteSpec,
    canonicalize,
    entropies,
    fit_mpo,
    identity_mpo,
    isometry_residuals,
    mpo_adjoint,
    mpo_from_matrix,
    mpo_norm,
    mpo_overlap,
    mpo_to_matrix,
    operator_entanglement,
    pad_bonds,
    random_mpo,
    truncate_mpo,
)
from qllm.tensor import EXACT, TruncationPolicy

from conftest import crandn, rel


@pytest.mark.parametrize("k", range(1, 7))
def test_identity_is_product(k):
    spec = SiteSpec.qubits(k)
    m, err = mpo_from_matrix(np.eye(2**k), spec)
    assert m.bond_dims == [1] * (k - 1)
    assert err == 0.0
    assert_allclose(mpo_to_matrix(m), np.eye(2**k), atol=1e-12)


def test_kronecker_bond_one(rng):
    a, b = crandn(rng, 2, 2), crandn(rng, 2, 2)
    w = np.kron(a, b)
    m, _ = mpo_from_matrix(w, SiteSpec.qubits(2))
    assert m.bond_dims == [1]
    assert np.linalg.norm(mpo_to_matrix(m) - w) <= 1e-12 * np.linalg.norm(w)


def test_random_16x16_profile(rng):
    w = crandn(rng, 16, 16)
    m, _ = mpo_from_matrix(w, SiteSpec.qubits(4))
    assert m.bond_dims == [4, 16, 4]
    assert rel(mpo_to_matrix(m), w) <= 1e-10


def test_roundtrip_32(rng):
    w = crandn(rng, 32, 32)
    m, _ = mpo_from_matrix(w, SiteSpec.qubits(5))
    assert rel(mpo_to_matrix(m), w) <= 1e-10


def test_from_matrix_is_right_canonical(rng):
    m, _ = mpo_from_matrix(crandn(rng, 16, 16), SiteSpec.qubits(4))
    assert m.canonical_center == 0
    assert max(isometry_residuals(m)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_roundtrip_rectangular(a, b, seed):
    w = crandn(np.random.default_rng(seed), 2**a, 2**b)
    spec = SiteSpec.for_shape(*w.shape)
    m, err = mpo_from_matrix(w, spec)
    assert err < 1e-12
    assert rel(mpo_to_matrix(m), w) <= 1e-10


def test_for_shape_padding():
    spec = SiteSpec.for_shape(8, 2)
    assert spec.out_dims == (2, 2, 2) and spec.in_dims == (2, 1, 1)
    assert SiteSpec.for_shape(27, 9, 3).num_sites == 3
    with pytest.raises(DimensionError):
        SiteSpec.for_shape(12, 8)


def test_guard_14_sites():
    spec = SiteSpec.qubits(14)
    m = identity_mpo(spec)
    with pytest.raises(GuardExceededError):
        mpo_to_matrix(m, guard=2**26)


def test_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        mpo_from_matrix(crandn(rng, 8, 8), SiteSpec.qubits(4))


def test_canonicalize_idempotent(rng):
    m = random_mpo(SiteSpec.qubits(4), 3, rng)
    c = canonicalize(m, 2)
    c2 = canonicalize(c, 2)
    assert_allclose(mpo_to_matrix(c2), mpo_to_matrix(c), atol=1e-12)
    assert max(isometry_residuals(c2)) <= 1e-10


def test_canonicalize_preserves_operator(rng):
    m = random_mpo(SiteSpec.qubits(4), 3, rng)
    w = mpo_to_matrix(m)
    assert rel(mpo_to_matrix(canonicalize(m, 2)), w) <= 1e-10
    cur = m
    for c in range(4):
        cur = canonicalize(cur, c)
        assert rel(mpo_to_matrix(cur), w) <= 1e-10
        assert max(isometry_residuals(cur)) <= 1e-10


def test_truncate_loose_policy_is_noop(rng):
    m = random_mpo(SiteSpec.qubits(4), 2, rng)
    t, err = truncate_mpo(m, TruncationPolicy(chi_max=8))
    assert err == 0.0
    assert t.bond_dims == m.bond_dims
    assert rel(mpo_to_matrix(t), mpo_to_matrix(m)) <= 1e-12


def test_truncate_inflated_bond(rng):
    m = random_mpo(SiteSpec.qubits(4), 2, rng)
    fat = pad_bonds(m, 4, noise=0.0)
    # mix the padded blocks into the real ones with an invertible gauge
    g = crandn(rng, 4, 4) + 4 * np.eye(4)
    cores = list(fat.cores)
    cores[1] = np.tensordot(cores[1], g, axes=(3, 0))
    cores[2] = np.tensordot(np.linalg.inv(g), cores[2], axes=(1, 0))
    fat = MPO(cores, fat.site_spec)
    assert fat.bond_dims == [4, 4, 4]
    t, err = truncate_mpo(fat, TruncationPolicy(chi_max=2))
    assert err <= 1e-10
    assert rel(mpo_to_matrix(t), mpo_to_matrix(m)) <= 1e-10


def test_truncate_bound_vs_dense(rng):
    w = crandn(rng, 16, 16)
    full, _ = mpo_from_matrix(w, SiteSpec.qubits(4))
    t, bound = truncate_mpo(full, TruncationPolicy(chi_max=2))
    err = rel(mpo_to_matrix(t), w)
    assert bound / 4 <= err <= bound + 1e-12


def test_truncate_is_projection(rng):
    w = crandn(rng, 16, 16)
    full, _ = mpo_from_matrix(w, SiteSpec.qubits(4))
    t, _ = truncate_mpo(full, TruncationPolicy(chi_max=2))
    err2 = np.linalg.norm(mpo_to_matrix(t) - w) ** 2
    assert_allclose(err2, np.linalg.norm(w) ** 2 - mpo_norm(t) ** 2, rtol=1e-9)


def test_entanglement_identity():
    r = operator_entanglement(identity_mpo(SiteSpec.qubits(3)), 1)
    assert len(r.singular_values) == 1
    assert abs(r.entropy_s1) < 1e-14


def test_entanglement_swap():
    swap = np.eye(4)[[0, 2, 1, 3]]
    m, _ = mpo_from_matrix(swap, SiteSpec.qubits(2))
    r = operator_entanglement(m, 0)
    p = r.singular_values**2 / np.sum(r.singular_values**2)
    assert_allclose(p, [0.25] * 4, atol=1e-12)
    assert_allclose(r.entropy_s1, math.log(4), atol=1e-12)
    assert_allclose(r.entropy_s2, math.log(4), atol=1e-12)


def test_entropies_gauge_invariant(rng):
    m = random_mpo(SiteSpec.qubits(4), 3, rng)
    for b in range(3):
        a = operator_entanglement(m, b).entropy_s1
        c = operator_entanglement(canonicalize(m, 3), b).entropy_s1
        assert abs(a - c) <= 1e-10


def test_entropies_of_spectrum():
    s1, s2 = entropies([1.0, 1.0])
    assert_allclose([s1, s2], [math.log(2)] * 2)
    assert entropies([0.0])[0] == 0.0


def test_overlap_self_is_norm(rng):
    m = random_mpo(SiteSpec.qubits(3), 3, rng)
    o = mpo_overlap(m, m)
    assert abs(o.imag) < 1e-12 and o.real > 0
    assert_allclose(o.real, np.linalg.norm(mpo_to_matrix(m)) ** 2, rtol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_overlap_identity_trace(k):
    m = identity_mpo(SiteSpec.qubits(k))
    assert_allclose(mpo_overlap(m, m), 2**k)


def test_overlap_dense_trace(rng):
    spec = SiteSpec.qubits(3)
    a, b = random_mpo(spec, 3, rng), random_mpo(spec, 3, rng)
    ref = np.trace(mpo_to_matrix(a).conj().T @ mpo_to_matrix(b))
    assert_allclose(mpo_overlap(a, b), ref, atol=1e-10)


def test_overlap_spec_mismatch(rng):
    with pytest.raises(DimensionError):
        mpo_overlap(random_mpo(SiteSpec.qubits(3), 2, rng), random_mpo(SiteSpec.qubits(2), 2, rng))


def test_adjoint(rng):
    m = random_mpo(SiteSpec((2, 2), (4, 1)), 2, rng)
    assert_allclose(mpo_to_matrix(mpo_adjoint(m)), mpo_to_matrix(m).conj().T, atol=1e-14)


def test_pad_bonds_unchanged(rng):
    m = random_mpo(SiteSpec.qubits(4), 2, rng)
    p = pad_bonds(m, 4)
    assert p.bond_dims == [4, 4, 4]
    assert_allclose(mpo_to_matrix(p), mpo_to_matrix(m), atol=1e-14)


def test_fit_mpo_improves(rng):
    w = crandn(rng, 16, 16)
    full, _ = mpo_from_matrix(w, SiteSpec.qubits(4))
    init = random_mpo(full.site_spec, 2, rng)
    fit = fit_mpo(init, full, sweeps=3)
    best, _ = truncate_mpo(full, TruncationPolicy(chi_max=2))
    e_fit = rel(mpo_to_matrix(fit), w)
    assert e_fit < rel(mpo_to_matrix(init), w)
    # ALS starting from the truncation cannot get worse
    refit = fit_mpo(best, full, sweeps=2)
    assert rel(mpo_to_matrix(refit), w) <= rel(mpo_to_matrix(best), w) + 1e-12


def test_mpo_validation():
    with pytest.raises(DimensionError):
        MPO([np.zeros((1, 2, 2, 2))], SiteSpec.qubits(1))
    with pytest.raises(DimensionError):
        SiteSpec((2, 2), (2,))
