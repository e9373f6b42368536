"""Jet fields, the linearized field operator Delta and the bilinear form Delta2.

Jet coordinates are point-major and scalar-first: the jet ``(b, v)`` on ``n``
support points is the vector ``[b_0, v_0, b_1, v_1, ...]`` of length
``n (1 + m)``. Per-point slices ``(b_i, v_i)`` are written ``v~(x_i)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .exceptions import DegenerateBasisError, DimensionMismatchError, SingularMetricError


# ---------------------------------------------------------------------------
# jet fields and test bases


@dataclass(frozen=True, eq=False)
class JetField:
    """Jet ``(b, v)`` on the support points in flat coordinates.

    Parameters
    ----------
    coords : array_like, shape (n * (1 + m),)
    m : int
        Dimension of the vector part.
    """

    coords: np.ndarray
    m: int

    def __post_init__(self):
        c = np.array(self.coords, dtype=float, copy=True).reshape(-1)
        if c.size % (self.m + 1):
            raise DimensionMismatchError("coordinate length is not a multiple of 1 + m")
        if not np.all(np.isfinite(c)):
            raise ValueError("jet coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_parts(cls, scalar, vector):
        a = np.asarray(scalar, dtype=float).reshape(-1)
        u = np.asarray(vector, dtype=float).reshape(a.size, -1)
        return cls(np.column_stack([a, u]).ravel(), u.shape[1])

    @classmethod
    def zeros(cls, n, m):
        return cls(np.zeros(n * (m + 1)), m)

    @property
    def n(self):
        return self.coords.size // (self.m + 1)

    @property
    def tilde(self):
        """Per-point slices, shape (n, 1 + m)."""
        return self.coords.reshape(self.n, self.m + 1)

    @property
    def scalar(self):
        return self.tilde[:, 0]

    @property
    def vector(self):
        return self.tilde[:, 1:]


def _coords(v):
    return v.coords if isinstance(v, JetField) else np.asarray(v, dtype=float)


@dataclass(frozen=True, eq=False)
class TestJetBasis:
    """Localized test jets spanning the active jet space.

    Basis jet ``(i, c)`` is supported at point ``i`` with slice
    ``directions[i][:, c]``. The span is ``{E alpha}`` with the block-diagonal
    matrix ``E`` returned by :meth:`matrix`.

    Parameters
    ----------
    directions : array_like, shape (n, 1 + m, k)
        Per-point active directions in ``R x R^m``.
    compactly_supported : bool
        Basis jets have compact (single point) support.
    """

    directions: np.ndarray
    compactly_supported: bool = True
    __test__ = False

    def __post_init__(self):
        E = np.array(self.directions, dtype=float, copy=True)
        if E.ndim != 3:
            raise DimensionMismatchError("directions must have shape (n, 1+m, k)")
        if E.shape[2] == 0 or np.any(np.linalg.matrix_rank(E) < E.shape[2]):
            raise DegenerateBasisError("active directions are linearly dependent at some point")
        if np.any(np.abs(E[:, 0, :]).max(axis=1) == 0):
            raise DegenerateBasisError("scalar component vanishes for all basis jets at some point")
        E.setflags(write=False)
        object.__setattr__(self, "directions", E)

    @classmethod
    def full(cls, n, m):
        """All of ``R x R^m`` at every point."""
        return cls(np.broadcast_to(np.eye(m + 1), (n, m + 1, m + 1)))

    @classmethod
    def combined(cls, n, m, lam, axis=0):
        """One direction ``(1, lam e_axis)`` per point (scalar plus time vector)."""
        e = np.zeros(m + 1)
        e[0] = 1.0
        e[1 + axis] = lam
        return cls(np.broadcast_to(e[:, None], (n, m + 1, 1)))

    @classmethod
    def from_config(cls, cfg, n, m):
        jc = cfg["jets"]
        if jc["directions"] == "full":
            return cls.full(n, m)
        return cls.combined(n, m, jc["lambda"], cfg["foliation"]["time_axis"])

    @property
    def n(self):
        return self.directions.shape[0]

    @property
    def d(self):
        return self.directions.shape[1]

    @property
    def k(self):
        return self.directions.shape[2]

    @property
    def size(self):
        return self.n * self.k

    def matrix(self):
        """Dense block-diagonal embedding ``E`` of shape (n d, n k)."""
        n, d, k = self.directions.shape
        E = np.zeros((n, d, n, k))
        idx = np.arange(n)
        E[idx, :, idx, :] = self.directions
        return E.reshape(n * d, n * k)

    def point_of(self, column):
        """Support point of basis jet ``column``."""
        return int(column) // self.k

    def jet(self, column):
        """Basis jet number ``column`` as a JetField."""
        c = np.zeros(self.n * self.d)
        i, j = divmod(int(column), self.k)
        c[i * self.d:(i + 1) * self.d] = self.directions[i, :, j]
        return JetField(c, self.d - 1)

    def jets(self):
        """All basis jets."""
        return [self.jet(c) for c in range(self.size)]

    def columns_at(self, points):
        """Basis column indices supported on the given point indices."""
        pts = np.asarray(points, dtype=int).reshape(-1)
        return (pts[:, None] * self.k + np.arange(self.k)[None, :]).ravel()


# ---------------------------------------------------------------------------
# pair tables


@dataclass(frozen=True, eq=False)
class PairTable:
    """Kernel jet blocks on all interacting support pairs (including ``i == j``).

    Attributes
    ----------
    I, J : numpy.ndarray
        Support-local indices, lexicographically sorted.
    B11, B12, B22 : numpy.ndarray, shape (P, d, d)
    weights : numpy.ndarray
        Support weights.
    """

    I: np.ndarray
    J: np.ndarray
    B11: np.ndarray
    B12: np.ndarray
    B22: np.ndarray
    weights: np.ndarray
    points: np.ndarray

    @classmethod
    def build(cls, measure, kernel):
        if measure.dimension != kernel.dimension:
            raise DimensionMismatchError("kernel and measure dimensions differ")
        supp = measure.support_indices
        pts = measure.points[supp]
        I, J = kernel.candidate_pairs(pts)
        pd = kernel.pair_derivs(pts[I], pts[J])
        B11, B12, B22 = pd.blocks()
        return cls(I, J, B11, B12, B22, measure.weights[supp].copy(), pts)

    @property
    def n(self):
        return self.weights.size

    @property
    def d(self):
        return self.B11.shape[1]

    @property
    def m(self):
        return self.d - 1

    def pair_weights(self):
        return self.weights[self.I] * self.weights[self.J]


def _assemble_K(table, s_param):
    n, d = table.n, table.d
    ww = table.pair_weights()
    K = np.zeros((n * d, n * d))
    _backend.scatter_blocks(K, table.I, table.J, ww, table.B12)
    diag = np.zeros((n, d, d))
    _backend.scatter_diag_blocks(diag, table.I, ww, table.B11)
    diag[:, 0, 0] -= s_param * table.weights
    idx = np.arange(n)
    K.reshape(n, d, n, d)[idx, :, idx, :] += diag
    return K


def offdiag_K(table):
    """Pair part ``K_off[x, y] = w_x w_y B12(x, y)`` (self pairs included)."""
    n, d = table.n, table.d
    K = np.zeros((n * d, n * d))
    _backend.scatter_blocks(K, table.I, table.J, table.pair_weights(), table.B12)
    return K


def blockdiag(blocks):
    """Dense block-diagonal matrix from a stack of (r, c) blocks."""
    blocks = np.asarray(blocks)
    n, r, c = blocks.shape
    out = np.zeros((n, r, n, c))
    idx = np.arange(n)
    out[idx, :, idx, :] = blocks
    return out.reshape(n * r, n * c)


# ---------------------------------------------------------------------------
# Delta


@dataclass(frozen=True, eq=False)
class DeltaOperator:
    """Linearized field operator in jet coordinates.

    Attributes
    ----------
    matrix : numpy.ndarray, shape (N, N)
        ``Delta`` on full jet coordinates; rows land in the active span.
    K : numpy.ndarray, shape (N, N)
        Symmetric pairing matrix, ``<u, Delta v>_{L2} = u^T K v`` for active ``u``.
    W : numpy.ndarray, shape (N, N)
        Block-diagonal ``L2`` Gram matrix ``w_x G_x``.
    basis : TestJetBasis
    s_param : float
    metadata : dict
    """

    matrix: np.ndarray
    K: np.ndarray
    W: np.ndarray
    basis: "TestJetBasis"
    s_param: float
    metric_blocks: np.ndarray
    weights: np.ndarray
    table: PairTable
    metadata: dict = field(default_factory=dict)
    _reduced: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.weights.size

    @property
    def d(self):
        return self.basis.d

    def apply(self, v):
        """``Delta v`` as a JetField."""
        return JetField(self.matrix @ _coords(v), self.d - 1)

    def l2_inner(self, u, v):
        """``<u, v>_{L2(M)} = u^T W v``."""
        return float(_coords(u) @ self.W @ _coords(v))

    def pairing(self, u, v):
        """``<u, Delta v>_{L2(M)}`` as the functional evaluation ``u^T K v``."""
        return float(_coords(u) @ self.K @ _coords(v))

    # reduced coordinates v = E alpha
    def reduced(self):
        """Active-span representation.

        Returns
        -------
        dict
            ``E`` (N, nk), ``D`` reduced Delta (nk, nk), ``W`` reduced Gram
            (nk, nk, block diagonal), ``Wblocks`` (n, k, k), ``K`` = E^T K E.
        """
        if not self._reduced:
            E = self.basis.matrix()
            Ed = self.basis.directions
            Gr = np.einsum("ndk,nde,nel->nkl", Ed, self.metric_blocks, Ed)
            Wb = self.weights[:, None, None] * Gr
            Kr = E.T @ self.K @ E
            inv = np.linalg.inv(Wb)
            D = blockdiag(inv) @ Kr
            self._reduced.update(E=E, D=D, W=blockdiag(Wb), Wblocks=Wb, K=Kr)
        return self._reduced

    def project(self):
        """Map full coordinates to reduced ones, ``W_red^{-1} E^T W``."""
        r = self.reduced()
        Winv = blockdiag(np.linalg.inv(r["Wblocks"]))
        return Winv @ r["E"].T @ self.W


def nabla_L(kernel, measure, jet, which, x_index, y_index):
    """Jet derivative of the Lagrangian in one slot.

    ``which=1``: ``b(x) L(x, y) + v(x) . grad1 L(x, y)``;
    ``which=2``: ``b(y) L(x, y) + v(y) . grad2 L(x, y)``.
    Indices refer to support points.
    """
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    supp = measure.support_indices
    x = measure.points[supp[x_index]]
    y = measure.points[supp[y_index]]
    pd = kernel.pair_derivs(x[None, :], y[None, :])
    t = jet.tilde
    if which == 1:
        return float(t[x_index, 0] * pd.L[0] + t[x_index, 1:] @ pd.g1[0])
    return float(t[y_index, 0] * pd.L[0] + t[y_index, 1:] @ pd.g2[0])


def assemble_delta(measure, kernel, metric, basis, config, el_threshold=None, table=None):
    """Assemble the linearized field operator.

    For each support point ``x`` the functional
    ``u~(x) -> <u, Delta v>(x)`` is

    ``sum_y w_y [u~(x)^T B11(x,y) v~(x) + u~(x)^T B12(x,y) v~(y)] - s a(x) b(x)``;

    it is inverted through the metric and projected onto the active
    directions (metric-orthogonal Riesz projection).

    Parameters
    ----------
    measure, kernel, metric, basis
        Scenario data; ``metric`` and ``basis`` are given on the support.
    config : ActionConfig
        Supplies ``s_param``.
    el_threshold : float, optional
        Warn when ``max |ell|`` on the support exceeds this value.
    table : PairTable, optional
        Precomputed pair blocks.

    Returns
    -------
    DeltaOperator

    Raises
    ------
    SingularMetricError, DegenerateBasisError
    """
    table = table or PairTable.build(measure, kernel)
    n, d = table.n, table.d
    if basis.n != n or basis.d != d:
        raise DimensionMismatchError("test basis does not match the support")
    G = np.asarray(metric.blocks, dtype=float)
    if G.shape != (n, d, d):
        raise DimensionMismatchError("metric does not match the support")
    if np.linalg.eigvalsh(G).min() <= 0:
        raise SingularMetricError("jet metric is not positive definite")
    s = float(config.s_param)
    if el_threshold is not None:
        r = np.bincount(table.I, weights=table.weights[table.J] * table.B11[:, 0, 0], minlength=n)
        err = float(np.abs(r - s).max())
        if err > el_threshold:
            warnings.warn(f"EL residual {err:.3e} exceeds {el_threshold:.1e}; Delta linearizes a non-critical measure")
    K = _assemble_K(table, s)
    Ed = basis.directions
    Gr = np.einsum("ndk,nde,nel->nkl", Ed, G, Ed)
    if np.linalg.eigvalsh(Gr).min() <= 1e-14 * np.abs(Gr).max():
        raise DegenerateBasisError("restricted metric is singular")
    R = np.einsum("ndk,nkl,nel->nde", Ed, np.linalg.inv(Gr), Ed)
    R = R / table.weights[:, None, None]
    D = np.einsum("nde,nef->ndf", R, K.reshape(n, d, n * d)).reshape(n * d, n * d)
    W = blockdiag(table.weights[:, None, None] * G)
    meta = {
        "measure_hash": measure.digest(),
        "kernel": kernel.identifier(),
        "s_param": s,
        "n": n,
        "d": d,
        "k": basis.k,
    }
    return DeltaOperator(D, K, W, basis, s, G, table.weights.copy(), table, meta)


def delta2_values(table, s_param, v1, v2):
    """``Delta2[v1, v2]`` at every support point from a pair table."""
    n, d = table.n, table.d
    a = _coords(v1).reshape(n, d)
    b = _coords(v2).reshape(n, d)
    I, J = table.I, table.J
    wj = table.weights[J]
    ax, ay, bx, by = a[I], a[J], b[I], b[J]
    terms = (
        np.einsum("pi,pij,pj->p", ax, table.B11, bx)
        + np.einsum("pi,pij,pj->p", ax, table.B12, by)
        + np.einsum("pi,pji,pj->p", ay, table.B12, bx)
        + np.einsum("pi,pij,pj->p", ay, table.B22, by)
    )
    return np.bincount(I, weights=wj * terms, minlength=n) - s_param * a[:, 0] * b[:, 0]


def delta2(measure, kernel, config, v1, v2, table=None):
    """Bilinear second-variation density ``Delta2[v1, v2]`` on the support.

    ``sum_y w_y (nabla_{1,v1} + nabla_{2,v1})(nabla_{1,v2} + nabla_{2,v2}) L(x, y)
    - s b1(x) b2(x)``.

    Returns
    -------
    numpy.ndarray, shape (n,)
    """
    table = table or PairTable.build(measure, kernel)
    return delta2_values(table, float(config.s_param), v1, v2)


def variation_check(measure, kernel, config, v, tau, basis=None):
    """Compare the first variation of the restricted EL functional with Delta.

    The measure is varied to weights ``w_j (1 + tau b_j)`` at positions
    ``y_j + tau v_j``. For each active direction ``u`` at ``x`` the function
    ``f(tau) = (1 + tau b_x) [a ell_tau + u . grad ell_tau](x + tau v_x)``
    has ``f'(0) = <u, Delta v>(x)``; its central difference is compared.

    Returns
    -------
    float
        ``max |fd - exact| / (1 + max |exact|)``.

    Raises
    ------
    ValueError
        If ``tau <= 0``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    from .action_el import ell_jet
    from .space_measure import WeightedMeasure

    supp = measure.support_indices
    pts = measure.points[supp]
    w = measure.weights[supp]
    n, m = pts.shape
    d = m + 1
    vt = _coords(v).reshape(n, d)
    E = basis.directions if basis is not None else np.broadcast_to(np.eye(d), (n, d, d))
    table = PairTable.build(measure, kernel)
    K = _assemble_K(table, float(config.s_param))
    exact = np.einsum("ndk,nd->nk", E, (K @ vt.ravel()).reshape(n, d) / w[:, None])

    def f(t):
        meas = WeightedMeasure(pts + t * vt[:, 1:], w * (1 + t * vt[:, 0]))
        vals, grads = ell_jet(meas, kernel, config)
        jet = np.column_stack([vals, grads]) * (1 + t * vt[:, :1])
        return np.einsum("ndk,nd->nk", E, jet)

    fd = (f(tau) - f(-tau)) / (2 * tau)
    return float(np.abs(fd - exact).max() / (1.0 + np.abs(exact).max()))


# ---------------------------------------------------------------------------
# persistence

_MAGIC = b"CVPM"


def matrix_digest(M):
    return hashlib.sha256(np.ascontiguousarray(M, dtype="<f8").tobytes()).hexdigest()[:16]


def save_matrix(path, M, metadata=None):
    """Write a float64 matrix in a small binary format plus a JSON sidecar.

    Layout: ``b"CVPM"``, uint32 version, uint64 rows, uint64 cols, 16-byte
    ASCII metadata hash, then row-major little-endian doubles.
    """
    M = np.atleast_2d(np.asarray(M, dtype="<f8"))
    meta = dict(metadata or {})
    meta.update(rows=int(M.shape[0]), cols=int(M.shape[1]), digest=matrix_digest(M))
    meta_hash = hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IQQ", 1, M.shape[0], M.shape[1]) + meta_hash.encode())
        fh.write(np.ascontiguousarray(M).tobytes())
    with open(str(path) + ".json", "w") as fh:
        json.dump(dict(meta, metadata_hash=meta_hash), fh, sort_keys=True, indent=1)
    return meta_hash


def load_matrix(path):
    """Read a matrix written by :func:`save_matrix`; returns (matrix, metadata hash)."""
    with open(path, "rb") as fh:
        head = fh.read(4 + 4 + 16 + 16)
        if head[:4] != _MAGIC:
            raise ValueError(f"{path}: not a cvpbench matrix file")
        _, rows, cols = struct.unpack("<IQQ", head[4:24])
        meta_hash = head[24:40].decode()
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(rows, cols).copy(), meta_hash


def save_matrix_csv(path, M):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(M):
            writer.writerow([repr(float(x)) for x in row])
