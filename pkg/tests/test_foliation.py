import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvpbench.action_el import fit_s
from cvpbench.foliation import (
    Foliation,
    FormAssembler,
    TimeStrip,
    energy_gamma,
    energy_identity_residual,
    energy_identity_terms,
    greens_formula_residual,
    greens_formula_terms,
    hyperbolicity_constant,
    smooth_step,
    surface_inner,
    symplectic_form,
)
from cvpbench.jets import TestJetBasis
from cvpbench.space_measure import JetMetric, LatticeKernel, lattice_grid

import oracles

# generalized-eigenvalue result for the default lattice and the flat width-2 foliation
LATTICE_C = 403.04523908178976


def _compact(rng, lattice, frac=0.15):
    D = lattice.delta
    E = D.reduced()["E"]
    alpha = rng.standard_normal(E.shape[1]) * (rng.random(E.shape[1]) < frac)
    return E @ alpha


def test_profile_limits():
    S, dS, _ = smooth_step(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    assert S.tolist()[0] == 0.0 and S.tolist()[-1] == 1.0
    assert S[2] == pytest.approx(0.5)
    assert np.all(dS >= 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 1.5, allow_nan=False))
def test_profile_finite(x):
    assert all(np.isfinite(a).all() for a in smooth_step(np.array([x])))


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30, allow_nan=False), st.floats(0.1, 5))
def test_eta_range_theta_nonnegative(t, delta):
    f = Foliation(np.linspace(0, 19, 40), delta)
    eta, theta = f.eta(t), f.theta(t)
    assert np.all((eta >= 0) & (eta <= 1))
    assert np.all(theta >= 0)


def test_coverage(lattice, gaussian):
    for sc in (lattice, gaussian):
        rep = sc.fol.check(sc.cfg["foliation"]["n_t"])
        assert rep["uncovered"] == 0
        assert rep["eta_min"] >= 0 and rep["eta_max"] <= 1 and rep["theta_min"] >= 0


def test_separation_property(lattice):
    f = lattice.fol
    K = np.flatnonzero(f.tau <= 3.0)
    # eta_{s1} = 1 on K needs s1 >= 3 + delta; eta_{s2} = 0 on K needs s2 <= tau_min(K)
    assert f.separation_residual(5.0, 0.0, K) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 10), st.floats(0, 5), st.floats(0, 5))
def test_strip_membership_monotone(s, a, b):
    f = Foliation(np.arange(20.0), 2.0)
    inner = TimeStrip(f, s, s + a)
    outer = TimeStrip(f, s - b, s + a + b)
    assert set(inner.member_indices) <= set(outer.member_indices)
    assert np.array_equal(inner.member_indices, np.flatnonzero(inner.h > inner.strip_tol))


def test_strip_rejects_reversed_times(lattice):
    with pytest.raises(ValueError):
        TimeStrip(lattice.fol, 3.0, 2.0)


def test_surface_inner_zero(lattice, rng):
    v = _compact(rng, lattice)
    assert surface_inner(lattice.measure, lattice.kernel, lattice.fol, 9.0, np.zeros_like(v), v,
                         assembler=lattice.asm) == 0.0


def test_surface_inner_symmetric(lattice, rng):
    u, v = _compact(rng, lattice), _compact(rng, lattice)
    a = surface_inner(lattice.measure, lattice.kernel, lattice.fol, 9.0, u, v, assembler=lattice.asm)
    b = surface_inner(lattice.measure, lattice.kernel, lattice.fol, 9.0, v, u, assembler=lattice.asm)
    assert a == pytest.approx(b, rel=1e-13, abs=1e-13)


def _localized_scalar(lattice, point):
    v = np.zeros(lattice.delta.matrix.shape[0])
    v[3 * point] = 1.0
    return v


def test_surface_forms_brute_force(lattice, rng):
    # two scalar jets straddling the layer around t = 9.5 that share the point (9, 10)
    t = 9.5
    u = _localized_scalar(lattice, 8 * 20 + 10) + _localized_scalar(lattice, 9 * 20 + 10)
    v = _localized_scalar(lattice, 9 * 20 + 10) + _localized_scalar(lattice, 10 * 20 + 10)
    eta = lattice.fol.eta(t)
    ip_ref, sg_ref = oracles.surface_forms(lattice.measure, lattice.kernel, eta, u, v)
    ip = surface_inner(lattice.measure, lattice.kernel, lattice.fol, t, u, v, assembler=lattice.asm)
    sg = symplectic_form(lattice.measure, lattice.kernel, lattice.fol, t, u, v, assembler=lattice.asm)
    assert ip != 0.0 and sg != 0.0
    assert ip == pytest.approx(ip_ref, rel=1e-12, abs=1e-14)
    assert sg == pytest.approx(sg_ref, rel=1e-12, abs=1e-14)


def test_surface_forms_brute_force_random(lattice, rng):
    # the same on random jets supported on a small patch
    idx = [p for p in range(400) if 7 <= p // 20 <= 11 and 8 <= p % 20 <= 12]
    u, v = np.zeros(1200), np.zeros(1200)
    for p in idx:
        u[3 * p:3 * p + 3] = rng.standard_normal(3)
        v[3 * p:3 * p + 3] = rng.standard_normal(3)
    eta = lattice.fol.eta(9.3)
    ip_ref, sg_ref = oracles.surface_forms(lattice.measure, lattice.kernel, eta, u, v)
    F = lattice.asm.forms(lattice.fol, 9.3)
    assert F.inner(u, v) == pytest.approx(ip_ref, rel=1e-12)
    assert F.sigma(u, v) == pytest.approx(sg_ref, rel=1e-12)


def test_symplectic_antisymmetry(lattice, rng):
    u, v = _compact(rng, lattice), _compact(rng, lattice)
    F = lattice.asm.forms(lattice.fol, 9.0)
    assert F.sigma(v, v) == pytest.approx(0.0, abs=1e-13 * np.abs(F.Sigma).max() * (v @ v))
    assert F.sigma(u, v) == pytest.approx(-F.sigma(v, u), rel=1e-13, abs=1e-13)
    assert np.abs(F.P - F.P.T).max() <= 1e-13 * np.abs(F.P).max()
    assert np.abs(F.Sigma + F.Sigma.T).max() == 0.0


def test_symplectic_conservation_on_solutions(lattice, lattice_green):
    g = lattice_green
    cols = g.window_columns()
    E = lattice.delta.reduced()["E"]
    u, v = E @ g.G[:, cols[40]], E @ g.G[:, cols[200]]
    vals = [lattice.asm.forms(lattice.fol, t).sigma(u, v) for t in (8.0, 10.0, 12.0)]
    assert abs(vals[0]) > 1e-3
    assert max(abs(x - vals[0]) for x in vals) <= 1e-8


def test_energy_identity_zero(lattice):
    z = np.zeros(1200)
    assert energy_identity_residual(lattice.measure, lattice.kernel, lattice.fol, lattice.action, z, 9.0, 1e-4,
                                    assembler=lattice.asm) == 0.0


def test_energy_identity_random(lattice, rng):
    v = _compact(rng, lattice)
    lhs, rhs, scale = energy_identity_terms(lattice.asm, lattice.action.s_param, lattice.fol, v, 9.3, 1e-4)
    assert abs(lhs - rhs) < 1e-6 * scale


def test_energy_identity_second_order(lattice, rng):
    v = _compact(rng, lattice)
    r = [abs(np.subtract(*energy_identity_terms(lattice.asm, lattice.action.s_param, lattice.fol, v, 9.3, dt)[:2]))
         for dt in (1e-2, 5e-3)]
    assert 3.5 < r[0] / r[1] < 4.5


def test_hyperbolicity_degenerate_foliation(lattice):
    res = hyperbolicity_constant(lattice.measure, lattice.kernel, lattice.fol, lattice.basis, T_window=(100.0, 101.0),
                                 metric_blocks=lattice.metric.blocks, s_param=lattice.action.s_param, n_t=3,
                                 assembler=lattice.asm)
    assert not res.ok
    assert "vanish" in res.reason


def test_hyperbolicity_lattice_value(lattice):
    res = hyperbolicity_constant(lattice.measure, lattice.kernel, lattice.fol, lattice.basis,
                                 metric_blocks=lattice.metric.blocks, s_param=lattice.action.s_param,
                                 assembler=lattice.asm)
    assert res.ok
    assert res.C == pytest.approx(LATTICE_C, rel=1e-10)
    d = res.to_dict()
    assert set(d) >= {"C", "t_grid", "min_ratio_per_t"}


def test_hyperbolicity_homogeneous_scaling():
    # weights x2 together with metric x2 and the refitted s leave C unchanged
    m = lattice_grid(8, 8, 1.0)
    k = LatticeKernel()
    basis = TestJetBasis.combined(m.n, 2, 1.6)
    f = Foliation.from_points(m.points, 0, 2.0)
    Cs = []
    for factor in (1.0, 2.0):
        mm = m.with_weights(m.weights * factor)
        res = hyperbolicity_constant(mm, k, f, basis, metric_blocks=JetMetric.identity(m.n, 2).blocks * factor,
                                     s_param=fit_s(mm, k)[0])
        Cs.append(res.C)
    assert Cs[0] is not None
    assert Cs[1] == pytest.approx(Cs[0], rel=1e-10)


def test_gaussian_hyperbolicity_fails(gaussian):
    res = hyperbolicity_constant(gaussian.measure, gaussian.kernel, gaussian.fol, gaussian.basis,
                                 metric_blocks=gaussian.metric.blocks, s_param=1.0, assembler=gaussian.asm)
    assert not res.ok and res.to_dict()["status"] == "FAILURE"


def test_energy_gamma_values():
    assert energy_gamma(1.0, 2.0, 2.0, 1.0) == 0.0
    assert energy_gamma(1.0, 0.0, 1.0, 1.0) == pytest.approx(2 * math.exp(3), rel=1e-14)
    assert energy_gamma(1.0, 0.0, 1.0, 1.0) == pytest.approx(40.171, abs=1e-3)
    assert energy_gamma(LATTICE_C, 0.0, 1.0, 1.0) == math.inf
    with pytest.raises(ValueError):
        energy_gamma(0.0, 0.0, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 3), st.floats(0, 2), st.floats(0, 3), st.floats(0.01, 3))
def test_energy_gamma_monotone(C, s_param, L, extra):
    assert energy_gamma(C, 0.0, L, s_param) <= energy_gamma(C, 0.0, L + extra, s_param)


def _green_terms(lattice, strip, u, v):
    F = lattice.asm
    return greens_formula_terms(lattice.delta, F.forms(lattice.fol, strip.t), F.forms(lattice.fol, strip.s), strip, u, v)


def test_greens_formula_same_jet(lattice, rng):
    u = _compact(rng, lattice)
    strip = TimeStrip(lattice.fol, 6.0, 13.0)
    a, b, st_, ss = _green_terms(lattice, strip, u, u)
    assert abs(a - b) <= 1e-12 * max(abs(a), 1.0)
    assert st_ == pytest.approx(0.0, abs=1e-12) and ss == pytest.approx(0.0, abs=1e-12)


def test_greens_formula_random_pairs(lattice, rng):
    strip = TimeStrip(lattice.fol, 6.0, 13.0)
    for _ in range(20):
        u, v = _compact(rng, lattice), _compact(rng, lattice)
        a, b, st_, ss = _green_terms(lattice, strip, u, v)
        scale = abs(a) + abs(b) + abs(st_) + abs(ss)
        assert abs(a - b - st_ + ss) <= 1e-10 * scale
        res = greens_formula_residual(lattice.measure, lattice.kernel, lattice.fol, strip, u, v,
                                      delta=lattice.delta, assembler=lattice.asm)
        assert res <= 1e-10 * scale


def test_greens_formula_enclosing_strip(lattice, rng):
    E = lattice.delta.reduced()["E"]
    alpha = np.zeros(400)
    patch = [p for p in range(400) if 8 <= p // 20 <= 10 and 5 <= p % 20 <= 14]
    alpha[patch] = rng.standard_normal(len(patch))
    beta = np.zeros(400)
    beta[patch] = rng.standard_normal(len(patch))
    u, v = E @ alpha, E @ beta
    # tau of u, v in [8, 10]; ranges reach 2.14; eta_s = 1 and eta_t = 0 there need s <= 5.8 - 2, t >= 12.2
    strip = TimeStrip(lattice.fol, 2.0, 14.0)
    a, b, st_, ss = _green_terms(lattice, strip, u, v)
    assert abs(st_) < 1e-12 and abs(ss) < 1e-12
    assert a == pytest.approx(b, rel=1e-12)


def test_surface_form_psd_on_solutions(lattice, lattice_green):
    g = lattice_green
    cols = g.window_columns()
    E = lattice.delta.reduced()["E"]
    Phi = E @ g.G[:, cols]
    P = Phi.T @ lattice.asm.forms(lattice.fol, 10.0).P @ Phi
    ev = np.linalg.eigvalsh(0.5 * (P + P.T))
    assert ev.min() >= -1e-10 * ev.max()
