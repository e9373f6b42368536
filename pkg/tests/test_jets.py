import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvpbench.action_el import ActionConfig
from cvpbench.exceptions import DegenerateBasisError, DimensionMismatchError
from cvpbench.jets import (
    JetField,
    PairTable,
    TestJetBasis,
    assemble_delta,
    delta2,
    load_matrix,
    matrix_digest,
    nabla_L,
    save_matrix,
    save_matrix_csv,
    variation_check,
)
from cvpbench.space_measure import GaussianKernel, JetMetric, LatticeKernel, WeightedMeasure, gaussian_grid

import oracles


def _small_gaussian():
    m = gaussian_grid(2.0, 0.5)
    k = GaussianKernel()
    cfg = ActionConfig(s_param=1.0, volume=m.total_volume)
    basis = TestJetBasis.full(m.n, 2)
    D = assemble_delta(m, k, JetMetric.identity(m.n, 2), basis, cfg)
    return m, k, cfg, basis, D


def _oracle_K(measure, kernel, s_param):
    pts, w = measure.points, measure.weights
    n, d = len(w), pts.shape[1] + 1
    K = np.zeros((n * d, n * d))
    for i in range(n):
        for j in range(n):
            B11, B12, _ = oracles.jet_blocks(kernel, pts[i], pts[j])
            K[i * d:(i + 1) * d, i * d:(i + 1) * d] += w[i] * w[j] * B11
            K[i * d:(i + 1) * d, j * d:(j + 1) * d] += w[i] * w[j] * B12
        K[i * d, i * d] -= s_param * w[i]
    return K


def test_nabla_zero_jet(gaussian):
    z = JetField.zeros(gaussian.measure.n, 2)
    assert nabla_L(gaussian.kernel, gaussian.measure, z, 1, 80, 85) == 0.0


def test_nabla_scalar_jet(gaussian):
    n = gaussian.measure.n
    jet = JetField.from_parts(np.ones(n), np.zeros((n, 2)))
    x, y = gaussian.measure.points[80], gaussian.measure.points[83]
    assert nabla_L(gaussian.kernel, gaussian.measure, jet, 1, 80, 83) == pytest.approx(gaussian.kernel.eval(x, y))


def test_nabla_vector_jet_value(gaussian):
    n = gaussian.measure.n
    vec = np.zeros((n, 2))
    vec[80] = (1.0, 0.0)
    jet = JetField.from_parts(np.zeros(n), vec)
    # point 80 is (0, 0), point 90 is (1, 0)
    val = nabla_L(gaussian.kernel, gaussian.measure, jet, 1, 80, 90)
    assert val == pytest.approx(2 / math.sqrt(math.pi) * math.exp(-1), rel=1e-12)
    assert val == pytest.approx(0.415, abs=5e-4)


def test_delta_of_zero_is_zero(lattice):
    assert np.all(lattice.delta.apply(np.zeros(lattice.delta.matrix.shape[0])).coords == 0)


def test_delta_pairing_matches_expansion_oracle(rng):
    m, k, cfg, basis, D = _small_gaussian()
    for _ in range(10):
        u, v = rng.standard_normal(D.matrix.shape[0]), rng.standard_normal(D.matrix.shape[0])
        ref = oracles.delta_pairing(m, k, 1.0, u, v)
        assert D.pairing(u, v) == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_delta_matrix_entrywise_against_loop_oracle():
    m, k, cfg, basis, D = _small_gaussian()
    K = _oracle_K(m, k, 1.0)
    assert np.abs(D.K - K).max() <= 1e-10 * np.abs(K).max()
    # full jets: Delta = W^{-1} K
    assert np.abs(D.W @ D.matrix - K).max() <= 1e-10 * np.abs(K).max()


def test_riesz_consistency(lattice, rng):
    D = lattice.delta
    E = D.reduced()["E"]
    for _ in range(5):
        u = E @ rng.standard_normal(E.shape[1])
        v = rng.standard_normal(E.shape[0])
        lhs = u @ D.W @ (D.matrix @ v)
        assert lhs == pytest.approx(D.pairing(u, v), rel=1e-12, abs=1e-12)


def test_delta_rows_in_active_span(lattice, rng):
    D = lattice.delta
    E = D.reduced()["E"]
    v = rng.standard_normal(D.matrix.shape[0])
    Dv = D.matrix @ v
    assert np.abs(E @ (D.project() @ Dv) - Dv).max() <= 1e-12 * np.abs(Dv).max()


def test_lattice_sparsity_equals_range_adjacency(lattice):
    D = lattice.delta.reduced()["D"]
    pts = lattice.measure.points
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    within = dist <= lattice.kernel.range_radius + 1e-12
    Lvals = np.array([[lattice.kernel.eval(pts[i], pts[j]) for j in range(400)] for i in (210,)])
    row = np.abs(D[210]) > 0
    assert np.all(within[210][row])
    assert np.all(row[Lvals[0] > 0])


def test_delta2_zero(lattice):
    z = np.zeros(lattice.delta.matrix.shape[0])
    v = np.ones_like(z)
    assert np.all(delta2(lattice.measure, lattice.kernel, lattice.action, z, v, table=lattice.table) == 0)


def test_delta2_scalar_jet_oracle():
    m, k, cfg, basis, D = _small_gaussian()
    n = m.n
    v = JetField.from_parts(np.ones(n), np.zeros((n, 2)))
    vals = delta2(m, k, cfg, v, v)
    rows = np.array([sum(m.weights[j] * k.eval(m.points[i], m.points[j]) for j in range(n)) for i in range(n)])
    np.testing.assert_allclose(vals, 4 * rows - 1.0, rtol=1e-12)
    np.testing.assert_allclose(vals, oracles.delta2_values(m, k, 1.0, v.coords, v.coords), rtol=1e-12)


def test_delta2_general_oracle(rng):
    m, k, cfg, basis, D = _small_gaussian()
    a, b = rng.standard_normal(D.matrix.shape[0]), rng.standard_normal(D.matrix.shape[0])
    np.testing.assert_allclose(delta2(m, k, cfg, a, b), oracles.delta2_values(m, k, 1.0, a, b),
                               rtol=1e-11, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_delta2_symmetric(seed):
    r = np.random.default_rng(seed)
    m = WeightedMeasure(r.uniform(0, 3, (8, 2)), r.uniform(0.1, 1, 8))
    for k in (GaussianKernel(), LatticeKernel()):
        cfg = ActionConfig(s_param=0.7, volume=m.total_volume)
        a, b = r.standard_normal(24), r.standard_normal(24)
        ab, ba = delta2(m, k, cfg, a, b), delta2(m, k, cfg, b, a)
        assert np.abs(ab - ba).max() <= 1e-14 * (1 + np.abs(ab).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_indexed_derivatives_commute(seed):
    r = np.random.default_rng(seed)
    x, y = r.uniform(-2, 2, 2), r.uniform(-2, 2, 2)
    for k in (GaussianKernel(), LatticeKernel()):
        B11, B12, B22 = oracles.jet_blocks(k, x, y)
        assert np.abs(B11 - B11.T).max() <= 1e-13 * (1 + np.abs(B11).max())
        assert np.abs(B22 - B22.T).max() <= 1e-13 * (1 + np.abs(B22).max())


def test_summation_reorder_invariance(rng):
    m, k, cfg, basis, D = _small_gaussian()
    perm = rng.permutation(m.n)
    mp = WeightedMeasure(m.points[perm], m.weights[perm])
    Dp = assemble_delta(mp, k, JetMetric.identity(m.n, 2), TestJetBasis.full(m.n, 2), cfg)
    idx = (perm[:, None] * 3 + np.arange(3)).ravel()
    assert np.abs(Dp.K - D.K[np.ix_(idx, idx)]).max() <= 1e-13 * np.abs(D.K).max()


def test_variation_zero(gaussian):
    v = np.zeros(gaussian.measure.n * 3)
    assert variation_check(gaussian.measure, gaussian.kernel, gaussian.action, v, 1e-4) == 0.0


def test_variation_gaussian(gaussian, rng):
    v = rng.standard_normal(gaussian.measure.n * 3)
    err = variation_check(gaussian.measure, gaussian.kernel, gaussian.action, v, 1e-4)
    assert err < 1e-5


def test_variation_second_order(gaussian, rng):
    v = rng.standard_normal(gaussian.measure.n * 3)
    e1 = variation_check(gaussian.measure, gaussian.kernel, gaussian.action, v, 1e-2)
    e2 = variation_check(gaussian.measure, gaussian.kernel, gaussian.action, v, 5e-3)
    assert 3.5 < e1 / e2 < 4.5


def test_variation_rejects_nonpositive_tau(gaussian):
    with pytest.raises(ValueError):
        variation_check(gaussian.measure, gaussian.kernel, gaussian.action, np.zeros(483), 0.0)


def test_basis_validation():
    with pytest.raises(DegenerateBasisError):
        TestJetBasis(np.zeros((2, 3, 1)))
    dirs = np.zeros((1, 3, 1))
    dirs[0, 1, 0] = 1.0
    with pytest.raises(DegenerateBasisError):
        TestJetBasis(dirs)
    with pytest.raises(DimensionMismatchError):
        JetField(np.zeros(5), 2)


def test_basis_columns_and_jets():
    b = TestJetBasis.combined(4, 2, 1.6)
    assert b.k == 1 and b.size == 4
    j = b.jet(2)
    assert j.tilde[2].tolist() == [1.0, 1.6, 0.0]
    assert list(b.columns_at([1, 3])) == [1, 3]
    assert np.array_equal(b.matrix() @ np.eye(4)[:, 2], j.coords)


def test_matrix_persistence_roundtrip(tmp_path, rng):
    M = rng.standard_normal((7, 5))
    h = save_matrix(tmp_path / "m.cvpm", M, {"stage": "x"})
    M2, h2 = load_matrix(tmp_path / "m.cvpm")
    assert np.array_equal(M, M2) and h == h2
    assert matrix_digest(M) == matrix_digest(M2)
    save_matrix_csv(tmp_path / "m.csv", M)
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "m.csv", delimiter=","), M)
