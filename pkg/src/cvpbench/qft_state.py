"""Classical field space, complex structure and the quasi-free state.

The field space is built from basis jets inside the window where the
Green's operators are determined. Pairings are taken in reduced coordinates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import (
    DegenerateSymplecticError,
    DegreeOverflowError,
    HypothesisNotMetError,
    IndefiniteFormError,
)

MAX_DEGREE = 4


# ---------------------------------------------------------------------------
# field space


@dataclass
class FieldSpace:
    """Representatives ``u_i`` (basis columns), ``G_sym`` and its quotient.

    Attributes
    ----------
    columns : numpy.ndarray of int
        Reduced basis columns used as representatives.
    G_sym : numpy.ndarray, shape (p, p)
        ``G_sym[i, j] = <u_i, G u_j>_{L2(M)}``.
    radical : numpy.ndarray, shape (p, p - r)
        Orthonormal basis of the radical of ``G_sym``.
    Q : numpy.ndarray, shape (p, r)
        Quotient basis ``q_a = sum_i Q[i, a] u_i`` complementing the radical,
        scaled so that ``G_red`` has unit singular values.
    R : numpy.ndarray, shape (r, p)
        Coordinates of the representatives: ``[u_i] = sum_a R[a, i] [q_a]``.
    G_red : numpy.ndarray, shape (r, r)
        Nonsingular reduced symplectic matrix ``Q^T G_sym Q``.
    complement_dim : int
        Dimension of the part of the span orthogonal to all varied jets
        (zero when the L2 Gram of the span is nonsingular).
    """

    columns: np.ndarray
    G_sym: np.ndarray
    radical: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G_red: np.ndarray
    antisymmetry: float
    complement_dim: int
    green: object = field(repr=False, default=None)

    @property
    def dimension(self):
        return self.Q.shape[1]

    @property
    def size(self):
        return self.columns.size

    def solutions(self):
        """Reduced-coordinate solutions ``G u_i`` for all representatives."""
        return self.green.G[:, self.columns]

    def quotient_solutions(self):
        """Solutions spanned by the quotient basis, ``G (sum_i Q_ia u_i)``."""
        return self.solutions() @ self.Q


def build_field_space(green, columns=None, rank_tol=1e-10):
    """Build ``G_sym``, its radical and a quotient basis.

    Parameters
    ----------
    green : GreenOperators
    columns : array_like of int, optional
        Representatives; default all window columns of ``green``.
    rank_tol : float
        Relative singular-value threshold for the radical.

    Raises
    ------
    DegenerateSymplecticError
        If ``G_sym`` vanishes on the whole span.
    """
    cols = green.window_columns() if columns is None else np.asarray(columns, dtype=int)
    W = green.Wred
    gram = W[np.ix_(cols, cols)]
    ev = np.linalg.eigvalsh(gram)
    complement_dim = int(np.sum(ev <= 1e-12 * max(ev.max(initial=0.0), 1e-300)))
    Gs = W[cols] @ green.G[:, cols]
    anti = float(np.abs(Gs + Gs.T).max(initial=0.0))
    Gs = 0.5 * (Gs - Gs.T)
    U, sv, Vt = np.linalg.svd(Gs)
    if sv.size == 0 or sv[0] == 0.0:
        raise DegenerateSymplecticError("degenerate symplectic space: G vanishes on the span")
    r = int(np.sum(sv > rank_tol * sv[0]))
    root = np.sqrt(sv[:r])
    Q = Vt[:r].T / root
    R = root[:, None] * Vt[:r]
    N = Vt[r:].T
    return FieldSpace(cols, Gs, N, Q, R, Q.T @ Gs @ Q, anti, complement_dim, green)


def commutator_value(fs, i, j):
    """``[phi(u_i), phi(u_j)] = i G([u_i], [u_j])``, returned as a complex number."""
    return 1j * fs.G_sym[i, j]


def sigma_matrix(fs, forms_reduced):
    """``sigma^t(G u_i, G u_j)`` for all representatives."""
    _, Sr = forms_reduced
    Phi = fs.solutions()
    return Phi.T @ Sr @ Phi


def sigma_G_identity_residual(fs, forms_reduced):
    """``max |G_sym[i, j] - sigma^t(G u_i, G u_j)|``.

    Parameters
    ----------
    forms_reduced : (numpy.ndarray, numpy.ndarray)
        ``(P, Sigma)`` in reduced coordinates at the chosen time.
    """
    return float(np.abs(fs.G_sym - sigma_matrix(fs, forms_reduced)).max(initial=0.0))


def forms_supported(green, forms_reduced, tol=0.0):
    """True if the forms are nonzero and only touch points where ``G`` is determined."""
    Pr, Sr = forms_reduced
    k = green.k
    rows = (np.abs(Pr).max(axis=1) > tol) | (np.abs(Sr).max(axis=1) > tol)
    pts = rows.reshape(-1, k).any(axis=1)
    return bool(pts.any() and np.all(green.valid[pts]))


def admissible_times(green, assembler, foliation, n_t=40, count=3):
    """Up to ``count`` evenly spread grid times whose forms live in the window."""
    E = green.E
    ok = []
    for t in foliation.t_grid(n_t):
        if forms_supported(green, assembler.forms(foliation, t).reduced(E)):
            ok.append(float(t))
    if len(ok) <= count:
        return ok
    idx = np.round(np.linspace(0, len(ok) - 1, count)).astype(int)
    return [ok[i] for i in idx]


# ---------------------------------------------------------------------------
# complex structure


@dataclass
class ComplexStructure:
    """Complex structure on the solution span at one time.

    Coordinates: ``c`` are coefficients in the quotient solution basis
    ``Phi = G Q``. On the P-retained part, ``z = Y^T Lambda^{1/2} V^T c`` are
    P-orthonormal coordinates rotated into the eigenbasis ``Y`` of ``-T^2``.
    ``Tz`` and ``Jz`` represent ``T`` and ``J`` in ``z`` coordinates; ``J``
    vanishes on discarded eigendirections.
    """

    t: float
    foliation: str
    P: np.ndarray
    Sigma: np.ndarray
    V: np.ndarray
    lam: np.ndarray
    Y: np.ndarray
    Tz: np.ndarray
    Jz: np.ndarray
    minus_T2_spectrum: np.ndarray
    retained: np.ndarray
    discarded_P: int
    discarded_T: int

    @property
    def dimension(self):
        return self.Jz.shape[0]

    @property
    def chi_hol(self):
        return 0.5 * (np.eye(self.dimension) - 1j * self.Jz)

    @property
    def chi_ah(self):
        return 0.5 * (np.eye(self.dimension) + 1j * self.Jz)

    def to_z(self, C):
        """Map coefficient vectors (columns) to rotated P-orthonormal coordinates."""
        return self.Y.T @ ((np.sqrt(self.lam)[:, None] * self.V.T) @ C)

    def T_operator(self):
        """``T = P^+ Sigma`` in ``c`` coordinates on the P-retained span."""
        return self.V @ ((self.V.T @ self.Sigma) / self.lam[:, None])

    def checks(self):
        """Residuals of the defining identities."""
        R = self.retained
        Jr = self.Jz[np.ix_(R, R)]
        Ir = np.eye(R.size)
        T = self.T_operator()
        PT = self.P @ T
        scale = max(np.abs(self.Sigma).max(initial=0.0), 1e-300)
        gram = self.Tz @ self.Jz
        gram = 0.5 * (gram + gram.T)
        chi = 0.5 * (Ir - 1j * Jr)
        chi_ah = 0.5 * (Ir + 1j * Jr)
        return {
            "J2_plus_id": float(np.abs(Jr @ Jr + Ir).max(initial=0.0)),
            "T_antiselfadjoint": float(np.abs(PT + PT.T).max(initial=0.0) / scale),
            "sigmaJ_min_eig": float(np.linalg.eigvalsh(gram).min()) if gram.size else 0.0,
            "chi_idempotent": float(np.abs(chi @ chi - chi).max(initial=0.0)),
            "chi_sum": float(np.abs(chi + chi_ah - Ir).max(initial=0.0)),
            "J_chi_eigen": float(np.abs(Jr @ chi - 1j * chi).max(initial=0.0)),
            "retained": int(R.size),
            "discarded_P": self.discarded_P,
            "discarded_T": self.discarded_T,
        }


def complex_structure_from_gram(P, Sigma, eps_T=1e-10, eps_P=1e-10, t=0.0, foliation=""):
    """Complex structure from Gram matrices of ``(.,.)^t`` and ``sigma^t``.

    ``T`` solves ``Sigma = P T``. In P-orthonormal coordinates it is the
    antisymmetric matrix ``Lambda^{-1/2} V^T Sigma V Lambda^{-1/2}``, and
    ``J = -(-T^2)^{-1/2} T`` on eigenvalues of ``-T^2`` above
    ``eps_T * max``; smaller ones are discarded and recorded.

    Parameters
    ----------
    P : numpy.ndarray, shape (m, m)
        Symmetric positive semi-definite Gram of the surface inner product.
    Sigma : numpy.ndarray, shape (m, m)
        Antisymmetric Gram of the symplectic form.
    eps_T, eps_P : float
        Relative thresholds for ``-T^2`` and ``P`` eigenvalues.

    Raises
    ------
    IndefiniteFormError
        If ``P`` has a negative eigenvalue beyond ``eps_P`` relative.
    DegenerateSymplecticError
        If ``Sigma`` vanishes.
    """
    P = np.asarray(P, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    P = 0.5 * (P + P.T)
    Sigma = 0.5 * (Sigma - Sigma.T)
    if not np.any(Sigma):
        raise DegenerateSymplecticError("symplectic form vanishes on solutions")
    lam, V = np.linalg.eigh(P)
    top = max(np.abs(lam).max(initial=0.0), 1e-300)
    if lam.min(initial=0.0) < -eps_P * top:
        raise IndefiniteFormError("surface inner product is indefinite on solutions", lam)
    keep = lam > eps_P * top
    V, lam = V[:, keep], lam[keep]
    T0 = (V.T @ Sigma @ V) / np.sqrt(np.outer(lam, lam))
    T0 = 0.5 * (T0 - T0.T)
    mu, Y = np.linalg.eigh(-T0 @ T0)
    ret = mu > eps_T * max(mu.max(initial=0.0), 1e-300)
    Tz = Y.T @ T0 @ Y
    Tz = 0.5 * (Tz - Tz.T)
    # rows of Tz have norm sqrt(mu) to relative accuracy eps |T| / sqrt(mu),
    # while eigh resolves mu itself only to eps |T|^2 / mu
    inv_sqrt = np.zeros_like(mu)
    inv_sqrt[ret] = 1.0 / np.linalg.norm(Tz[ret], axis=1)
    Jz = -inv_sqrt[:, None] * Tz
    Jz[:, ~ret] = 0.0
    return ComplexStructure(
        t=float(t), foliation=foliation, P=P, Sigma=Sigma, V=V, lam=lam, Y=Y,
        Tz=Tz, Jz=Jz, minus_T2_spectrum=mu, retained=np.flatnonzero(ret),
        discarded_P=int((~keep).sum()), discarded_T=int((~ret).sum()),
    )


def build_complex_structure(fs, forms_reduced, eps_T=1e-10, t=0.0, foliation=""):
    """Complex structure on the quotient solution span ``Phi = G Q``."""
    Pr, Sr = forms_reduced
    Phi = fs.quotient_solutions()
    return complex_structure_from_gram(Phi.T @ Pr @ Phi, Phi.T @ Sr @ Phi, eps_T=eps_T,
                                       t=t, foliation=foliation)


# ---------------------------------------------------------------------------
# quasi-free state


@dataclass
class QuasiFreeState:
    """Two-point matrix ``Omega2`` and its Wick extension.

    ``Omega2[i, j] = i sigma^t(G u_i, chi_hol G u_j)`` on the representatives;
    ``Omega2_q`` is the same on the quotient basis (used by the algebra).
    """

    Omega2: np.ndarray
    Omega2_q: np.ndarray
    t: float
    foliation: str

    @property
    def real_part(self):
        return 0.5 * (self.Omega2 + self.Omega2.conj().T).real

    @property
    def imag_part(self):
        return self.Omega2.imag

    def checks(self, fs):
        Re = self.Omega2.real
        Re = 0.5 * (Re + Re.T)
        return {
            "im_vs_G": float(np.abs(2 * self.Omega2.imag - fs.G_sym).max(initial=0.0)),
            "re_min_eig": float(np.linalg.eigvalsh(Re).min()),
            "hermitian": float(np.abs(self.Omega2 - self.Omega2.conj().T).max(initial=0.0)),
        }


def quasi_free_state(fs, cs):
    """Distinguished quasi-free state from the complex structure."""
    # the solution G u_i has quotient coefficients R[:, i]
    Z = cs.to_z(fs.R)
    Zq = cs.to_z(np.eye(fs.Q.shape[1]))
    M = 0.5 * (1j * cs.Tz + cs.Tz @ cs.Jz)
    return QuasiFreeState(Z.T @ M @ Z, Zq.T @ M @ Zq, cs.t, cs.foliation)


def two_point(state, i, j):
    """``omega2([u_i], [u_j])``."""
    return complex(state.Omega2[i, j])


def pairings(n):
    """All perfect pairings of ``range(n)`` as lists of ordered pairs."""
    if n == 0:
        return [[]]
    if n % 2:
        return []
    out = []
    for j in range(1, n):
        rest = [x for x in range(1, n) if x != j]
        for p in pairings(len(rest)):
            out.append([(0, j)] + [(rest[a], rest[b]) for a, b in p])
    return out


def wick(Omega, word):
    """Wick sum of ``Omega`` over ordered pairings of the word positions."""
    word = tuple(word)
    n = len(word)
    if n == 0:
        return 1.0 + 0j
    if n % 2:
        return 0j
    total = 0j
    for p in _pairings_cached(n):
        val = 1.0 + 0j
        for a, b in p:
            val *= Omega[word[a], word[b]]
        total += val
    return total


@lru_cache(maxsize=None)
def _pairings_cached(n):
    return tuple(tuple(p) for p in pairings(n))


def n_point(state, indices, quotient=False):
    """``omega_n`` for a list of representative (or quotient) indices."""
    if len(indices) > 2 * MAX_DEGREE:
        raise DegreeOverflowError(f"n-point functions are limited to n <= {2 * MAX_DEGREE}")
    Om = state.Omega2_q if quotient else state.Omega2
    return wick(Om, indices)


# ---------------------------------------------------------------------------
# field polynomials


class FieldPolynomial:
    """Normal-ordered polynomial in field generators with CCR.

    Terms map nondecreasing index tuples to complex coefficients; the
    commutator of generators is ``[phi_a, phi_b] = i G[a, b]``.

    Parameters
    ----------
    G : numpy.ndarray
        Real antisymmetric commutator matrix of the generators.
    terms : dict, optional
    max_degree : int
    """

    __slots__ = ("G", "terms", "max_degree")

    def __init__(self, G, terms=None, max_degree=MAX_DEGREE):
        self.G = G
        self.max_degree = max_degree
        self.terms = {}
        for word, c in (terms or {}).items():
            for w, cc in _normal_order(G, tuple(word), max_degree).items():
                self.terms[w] = self.terms.get(w, 0j) + c * cc
        self._prune()

    @classmethod
    def identity(cls, G, c=1.0):
        return cls(G, {(): complex(c)})

    @classmethod
    def generator(cls, G, a, c=1.0):
        return cls(G, {(int(a),): complex(c)})

    def _prune(self):
        self.terms = {w: c for w, c in self.terms.items() if c != 0}

    @property
    def degree(self):
        return max((len(w) for w in self.terms), default=0)

    def __add__(self, other):
        out = dict(self.terms)
        for w, c in other.terms.items():
            out[w] = out.get(w, 0j) + c
        p = FieldPolynomial.__new__(FieldPolynomial)
        p.G, p.max_degree, p.terms = self.G, self.max_degree, out
        p._prune()
        return p

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        p = FieldPolynomial.__new__(FieldPolynomial)
        p.G, p.max_degree = self.G, self.max_degree
        p.terms = {w: c * v for w, v in self.terms.items()}
        p._prune()
        return p

    def __mul__(self, other):
        return normal_order_product(self, other)

    def star(self):
        """Adjoint: reverse words and conjugate coefficients (generators are real)."""
        out = {}
        for w, c in self.terms.items():
            for ww, cc in _normal_order(self.G, w[::-1], self.max_degree).items():
                out[ww] = out.get(ww, 0j) + np.conj(c) * cc
        p = FieldPolynomial.__new__(FieldPolynomial)
        p.G, p.max_degree, p.terms = self.G, self.max_degree, out
        p._prune()
        return p

    def max_abs_diff(self, other):
        keys = set(self.terms) | set(other.terms)
        return max((abs(self.terms.get(k, 0) - other.terms.get(k, 0)) for k in keys), default=0.0)


def _normal_order(G, word, max_degree):
    if len(word) > max_degree:
        raise DegreeOverflowError(f"degree {len(word)} exceeds the truncation degree {max_degree}")
    return _normal_order_cached(id(G), G, word)


_NO_CACHE = {}


def _normal_order_cached(key, G, word):
    cache = _NO_CACHE.setdefault(key, ({}, G))[0]
    hit = cache.get(word)
    if hit is not None:
        return hit
    out = {}
    for i in range(len(word) - 1):
        a, b = word[i], word[i + 1]
        if a > b:
            swapped = word[:i] + (b, a) + word[i + 2:]
            shorter = word[:i] + word[i + 2:]
            for w, c in _normal_order_cached(key, G, swapped).items():
                out[w] = out.get(w, 0j) + c
            comm = 1j * G[a, b]
            if comm != 0:
                for w, c in _normal_order_cached(key, G, shorter).items():
                    out[w] = out.get(w, 0j) + comm * c
            break
    else:
        out = {word: 1.0 + 0j}
    if len(_NO_CACHE) > 64:
        _NO_CACHE.clear()
    cache[word] = out
    return out


def normal_order_product(p, q):
    """Product of two normal-ordered polynomials, reduced to normal order.

    Raises
    ------
    DegreeOverflowError
        If the combined degree exceeds the truncation degree.
    """
    if p.degree + q.degree > p.max_degree:
        raise DegreeOverflowError(
            f"product degree {p.degree + q.degree} exceeds {p.max_degree}")
    out = {}
    for w1, c1 in p.terms.items():
        for w2, c2 in q.terms.items():
            for w, c in _normal_order(p.G, w1 + w2, p.max_degree).items():
                out[w] = out.get(w, 0j) + c1 * c2 * c
    r = FieldPolynomial.__new__(FieldPolynomial)
    r.G, r.max_degree, r.terms = p.G, p.max_degree, out
    r._prune()
    return r


def state_value(Omega, poly):
    """``omega(p)`` by Wick sums on each normal-ordered monomial."""
    return sum((c * wick(Omega, w) for w, c in poly.terms.items()), 0j)


def random_polynomial(G, rng, generators, degree=2):
    """Random complex polynomial of degree ``<= degree`` in the given generators."""
    terms = {}
    for d in range(degree + 1):
        for w in itertools.combinations_with_replacement(sorted(generators), d):
            terms[w] = complex(rng.standard_normal(), rng.standard_normal())
    return FieldPolynomial(G, terms)


def state_positivity_check(state, fs, samples=50, seed=0, n_generators=4):
    """Minimum of ``Re omega(a* a)`` and max ``|Im omega(a* a)|`` over random ``a``.

    The generators are quotient basis elements; each sample draws
    ``n_generators`` of them and a random degree-2 polynomial.
    """
    rng = np.random.default_rng(seed)
    G = fs.G_red
    Om = state.Omega2_q
    r = G.shape[0]
    vals = []
    for _ in range(samples):
        gens = rng.choice(r, size=min(n_generators, r), replace=False)
        a = random_polynomial(G, rng, gens, 2)
        vals.append(state_value(Om, a.star() * a))
    vals = np.array(vals)
    norm = state_value(Om, FieldPolynomial.identity(G))
    return {
        "min_real": float(vals.real.min()),
        "max_abs_imag": float(np.abs(vals.imag).max()),
        "normalization": complex(norm),
        "samples": int(samples),
    }


def require_hyperbolic(hyp_result):
    """Refuse state construction when the hyperbolicity stage failed."""
    if not hyp_result.ok:
        raise HypothesisNotMetError(
            f"hyperbolicity failed ({hyp_result.reason}); state construction needs it")
