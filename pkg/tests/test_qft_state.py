import itertools

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from cvpbench import qft_state as qs
from cvpbench.exceptions import (
    DegenerateSymplecticError,
    DegreeOverflowError,
    HypothesisNotMetError,
    IndefiniteFormError,
)

import oracles

TOY_P = np.eye(2)
TOY_SIGMA = np.array([[0.0, 1.0], [-1.0, 0.0]])
# hand-derived: T = Sigma, -T^2 = I, J = -T, Omega = (i T + T J) / 2
TOY_OMEGA = 0.5 * np.array([[1.0, 1j], [-1j, 1.0]])


def _toy_state():
    cs = qs.complex_structure_from_gram(TOY_P, TOY_SIGMA)
    Z = cs.to_z(np.eye(2))
    M = 0.5 * (1j * cs.Tz + cs.Tz @ cs.Jz)
    return cs, Z.T @ M @ Z


# ---------------------------------------------------------------------------
# field space


def test_field_space_shapes(lattice_fields):
    fs = lattice_fields
    assert fs.G_sym.shape == (fs.size, fs.size)
    assert fs.dimension % 2 == 0
    assert fs.dimension + fs.radical.shape[1] == fs.size


def test_gsym_antisymmetric(lattice_fields):
    fs = lattice_fields
    assert np.all(np.diag(fs.G_sym) == 0.0)
    assert fs.antisymmetry <= 1e-8 * np.abs(fs.G_sym).max()


def test_quotient_reproduces_gsym(lattice_fields):
    fs = lattice_fields
    np.testing.assert_allclose(fs.R.T @ fs.G_red @ fs.R, fs.G_sym, atol=1e-10 * np.abs(fs.G_sym).max())
    sv = np.linalg.svd(fs.G_red, compute_uv=False)
    np.testing.assert_allclose(sv, 1.0, atol=1e-8)


def test_representative_independence(lattice, lattice_green, lattice_fields, rng):
    # adding Delta u for a test jet u inside the window leaves G unchanged on the span
    fs = lattice_fields
    D = lattice.delta.reduced()["D"]
    tests = lattice_green.test_columns(lattice.measure.points, lattice.kernel.range_radius)
    W = lattice_green.Wred
    for c in tests[:5]:
        v = rng.standard_normal(fs.size)
        a = np.zeros(400)
        a[fs.columns] = v
        b = a + D[:, c]
        pa = W[fs.columns] @ lattice_green.G @ a
        pb = W[fs.columns] @ lattice_green.G @ b
        assert np.abs(pa - pb).max() <= 1e-8 * max(np.abs(pa).max(), 1.0)


def test_degenerate_field_space(lattice_green):
    with pytest.raises(DegenerateSymplecticError):
        qs.build_field_space(lattice_green, columns=[])


def test_commutator_values(lattice_fields, lattice):
    fs = lattice_fields
    assert qs.commutator_value(fs, 3, 3) == 0
    i, j = np.unravel_index(np.argmax(np.abs(fs.G_sym)), fs.G_sym.shape)
    c = qs.commutator_value(fs, i, j)
    assert c.real == 0 and abs(c.imag) > 1e-3


def test_commutator_matches_sigma(lattice, lattice_fields, lattice_state):
    fr, cs, state = lattice_state
    S = qs.sigma_matrix(lattice_fields, fr)
    i, j = np.unravel_index(np.argmax(np.abs(lattice_fields.G_sym)), S.shape)
    assert qs.commutator_value(lattice_fields, i, j).imag == pytest.approx(S[i, j], rel=1e-6)


def test_commutator_disconnected(lattice, lattice_green, lattice_causal):
    import cvpbench.cauchy_green as cg
    K = [20 * 9 + 3, 20 * 10 + 3]
    B = [20 * 9 + 16, 20 * 10 + 16]
    assert cg.strongly_disconnected(lattice_causal, K, B)
    cols = np.array(K + B)
    assert np.all(np.isin(cols, lattice_green.window_columns()))
    fs = qs.build_field_space(lattice_green, columns=cols)
    assert np.abs(fs.G_sym[:2, 2:]).max() <= 1e-8


@pytest.mark.parametrize("which", [0, 1])
def test_sigma_G_identity(lattice, lattice_green, lattice_green2, which):
    green = (lattice_green, lattice_green2)[which]
    fol = (lattice.fol, lattice.fol2)[which]
    fs = qs.build_field_space(green)
    times = qs.admissible_times(green, lattice.asm, fol)
    assert len(times) == 3
    E = lattice.delta.reduced()["E"]
    for t in times:
        fr = lattice.asm.forms(fol, t).reduced(E)
        assert qs.sigma_G_identity_residual(fs, fr) <= 1e-6 * max(np.abs(fs.G_sym).max(), 1.0)


# ---------------------------------------------------------------------------
# complex structure


def test_toy_complex_structure():
    cs, Om = _toy_state()
    J = cs.Y @ cs.Jz @ cs.Y.T
    np.testing.assert_allclose(J, -TOY_SIGMA, atol=1e-15)
    np.testing.assert_allclose(Om, TOY_OMEGA, atol=1e-15)
    chk = cs.checks()
    assert chk["J2_plus_id"] <= 1e-15 and chk["discarded_T"] == 0


def test_complex_structure_checks_lattice(lattice_state):
    fr, cs, state = lattice_state
    chk = cs.checks()
    assert chk["J2_plus_id"] <= 1e-8
    assert chk["T_antiselfadjoint"] <= 1e-8
    assert chk["sigmaJ_min_eig"] >= -1e-10
    assert chk["chi_idempotent"] <= 1e-8
    assert chk["chi_sum"] <= 1e-12
    assert chk["J_chi_eigen"] <= 1e-8
    assert chk["retained"] > 0


def test_chi_projectors(lattice_state):
    _, cs, _ = lattice_state
    R = cs.retained
    h = cs.chi_hol[np.ix_(R, R)]
    a = cs.chi_ah[np.ix_(R, R)]
    assert np.abs(h @ a).max() <= 1e-8


def test_indefinite_form():
    with pytest.raises(IndefiniteFormError):
        qs.complex_structure_from_gram(np.diag([1.0, -1.0]), TOY_SIGMA)


def test_vanishing_symplectic_form():
    with pytest.raises(DegenerateSymplecticError):
        qs.complex_structure_from_gram(TOY_P, np.zeros((2, 2)))


def test_discarded_directions_recorded():
    P = np.eye(3)
    S = np.zeros((3, 3))
    S[0, 1], S[1, 0] = 1.0, -1.0
    cs = qs.complex_structure_from_gram(P, S)
    assert cs.discarded_T == 1
    assert cs.checks()["retained"] == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
@example(4786241, 4)  # -T^2 spans ten decades; J must not inherit the eigenvalue error
def test_random_gram_complex_structure(seed, half):
    r = np.random.default_rng(seed)
    m = 2 * half
    A = r.standard_normal((m, m))
    P = A @ A.T + 0.1 * np.eye(m)
    B = r.standard_normal((m, m))
    S = B - B.T
    cs = qs.complex_structure_from_gram(P, S)
    chk = cs.checks()
    if chk["retained"] == m:
        assert chk["J2_plus_id"] <= 1e-8
        assert chk["sigmaJ_min_eig"] >= -1e-10


# ---------------------------------------------------------------------------
# two-point function and Wick


def test_two_point_parts(lattice_fields, lattice_state):
    _, _, state = lattice_state
    chk = state.checks(lattice_fields)
    scale = max(np.abs(lattice_fields.G_sym).max(), 1.0)
    assert chk["im_vs_G"] <= 1e-8 * scale
    assert chk["re_min_eig"] >= -1e-10 * scale
    assert chk["hermitian"] <= 1e-8 * scale
    np.testing.assert_allclose(state.imag_part, 0.5 * lattice_fields.G_sym, atol=1e-8 * scale)


def test_two_point_accessor(lattice_state):
    _, _, state = lattice_state
    assert qs.two_point(state, 2, 5) == complex(state.Omega2[2, 5])


def test_pairings_count():
    for n, count in ((0, 1), (1, 0), (2, 1), (4, 3), (6, 15), (8, 105)):
        assert len(qs.pairings(n)) == count
    assert sorted(map(sorted, qs.pairings(4))) == sorted(map(sorted, oracles.pairings(list(range(4)))))


def test_n_point_odd_vanishes(lattice_state):
    _, _, state = lattice_state
    assert qs.n_point(state, [0]) == 0
    assert qs.n_point(state, [0, 1, 2]) == 0


def test_n_point_low_orders(lattice_state):
    _, _, state = lattice_state
    assert qs.n_point(state, []) == 1
    assert qs.n_point(state, [3, 7]) == state.Omega2[3, 7]


def test_n_point_matches_oracle(lattice_state, rng):
    _, _, state = lattice_state
    Om = state.Omega2
    for n in (4, 6):
        idx = list(rng.integers(0, Om.shape[0], n))
        ref = sum(np.prod([Om[idx[a], idx[b]] for a, b in p]) for p in oracles.pairings(list(range(n))))
        assert qs.n_point(state, idx) == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_n_point_degree_overflow(lattice_state):
    _, _, state = lattice_state
    with pytest.raises(DegreeOverflowError):
        qs.n_point(state, [0] * 10)


def test_toy_wick_four_point():
    _, Om = _toy_state()
    # omega(phi_0 phi_1 phi_0 phi_1) = O01 O01 + O00 O11 + O01 O10
    ref = Om[0, 1] * Om[0, 1] + Om[0, 0] * Om[1, 1] + Om[0, 1] * Om[1, 0]
    assert qs.wick(Om, (0, 1, 0, 1)) == pytest.approx(ref, abs=1e-15)


# ---------------------------------------------------------------------------
# field polynomials and positivity


def test_identity_state_is_one(lattice_fields, lattice_state):
    _, _, state = lattice_state
    one = qs.FieldPolynomial.identity(lattice_fields.G_red)
    assert qs.state_value(state.Omega2_q, one) == 1


def test_single_field_square(lattice_fields, lattice_state):
    _, _, state = lattice_state
    G = lattice_fields.G_red
    phi = qs.FieldPolynomial.generator(G, 2)
    val = qs.state_value(state.Omega2_q, phi.star() * phi)
    assert val == pytest.approx(state.Omega2_q[2, 2], rel=1e-12)


def test_positivity(lattice_fields, lattice_state):
    _, _, state = lattice_state
    rep = qs.state_positivity_check(state, lattice_fields, samples=50, seed=0)
    assert rep["min_real"] >= -1e-10
    assert rep["max_abs_imag"] <= 1e-8 * max(1.0, abs(rep["min_real"]))
    assert rep["normalization"] == 1


def test_toy_positivity():
    _, Om = _toy_state()
    G = TOY_SIGMA
    r = np.random.default_rng(0)
    for _ in range(20):
        a = qs.random_polynomial(G, r, [0, 1], 2)
        assert qs.state_value(Om, a.star() * a).real >= -1e-12


def test_normal_order_single_rewrite():
    G = TOY_SIGMA
    p = qs.FieldPolynomial(G, {(1, 0): 1.0})
    assert p.terms == {(0, 1): 1.0, (): 1j * G[1, 0]}


def test_same_generator_square_is_ordered():
    G = TOY_SIGMA
    u = qs.FieldPolynomial.generator(G, 0)
    assert (u * u).terms == {(0, 0): 1.0}


def test_ccr():
    G = np.array([[0.0, 2.0, -1.0], [-2.0, 0.0, 0.5], [1.0, -0.5, 0.0]])
    for a, b in itertools.product(range(3), repeat=2):
        pa, pb = qs.FieldPolynomial.generator(G, a), qs.FieldPolynomial.generator(G, b)
        comm = pa * pb - pb * pa
        assert comm.max_abs_diff(qs.FieldPolynomial.identity(G, 1j * G[a, b])) <= 1e-15


def test_associativity(rng):
    B = rng.standard_normal((4, 4))
    G = B - B.T
    for _ in range(20):
        a, b, c = (qs.random_polynomial(G, rng, [0, 1, 2, 3], 1) for _ in range(3))
        assert ((a * b) * c).max_abs_diff(a * (b * c)) <= 1e-12


def test_star_involution(rng):
    B = rng.standard_normal((3, 3))
    G = B - B.T
    for _ in range(10):
        a = qs.random_polynomial(G, rng, [0, 1, 2], 2)
        b = qs.random_polynomial(G, rng, [0, 1, 2], 2)
        assert a.star().star().max_abs_diff(a) <= 1e-12
        assert (a * b).star().max_abs_diff(b.star() * a.star()) <= 1e-12


def test_degree_overflow():
    G = TOY_SIGMA
    a = qs.random_polynomial(G, np.random.default_rng(0), [0, 1], 3)
    with pytest.raises(DegreeOverflowError):
        a * a
    with pytest.raises(DegreeOverflowError):
        qs.FieldPolynomial(G, {(0,) * 5: 1.0})


def test_require_hyperbolic(gaussian):
    from cvpbench.foliation import hyperbolicity_constant
    res = hyperbolicity_constant(gaussian.measure, gaussian.kernel, gaussian.fol, gaussian.basis,
                                 metric_blocks=gaussian.metric.blocks, s_param=gaussian.action.s_param,
                                 assembler=gaussian.asm)
    with pytest.raises(HypothesisNotMetError):
        qs.require_hyperbolic(res)
