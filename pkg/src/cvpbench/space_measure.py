"""Weighted point clouds, Lagrangian kernels with derivatives, and jet metrics."""

from __future__ import annotations

import csv
import functools
import hashlib
import math
import operator
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _backend
from .exceptions import DimensionMismatchError, ScenarioError, SingularMetricError


# ---------------------------------------------------------------------------
# measures


def _ordered_sum(values):
    return functools.reduce(operator.add, (float(v) for v in values), 0.0)


@dataclass(frozen=True, eq=False)
class WeightedMeasure:
    """Discrete measure ``sum_i w_i delta_{x_i}`` on R^m.

    Parameters
    ----------
    points : array_like, shape (n, m)
        Point coordinates.
    weights : array_like, shape (n,)
        Nonnegative weights.
    """

    points: np.ndarray
    weights: np.ndarray
    support_indices: np.ndarray = field(init=False)
    total_volume: float = field(init=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float, copy=True).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise DimensionMismatchError(
                f"{pts.shape[0]} points but {w.shape[0]} weights"
            )
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        pts.setflags(write=False)
        w.setflags(write=False)
        supp = np.flatnonzero(w > 0)
        supp.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "support_indices", supp)
        object.__setattr__(self, "total_volume", _ordered_sum(w))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dimension(self):
        return self.points.shape[1]

    def restricted_to_support(self):
        """Return the measure with zero-weight points removed."""
        idx = self.support_indices
        return WeightedMeasure(self.points[idx], self.weights[idx])

    def with_weights(self, weights):
        return WeightedMeasure(self.points, weights)

    def with_points(self, points):
        return WeightedMeasure(points, self.weights)

    def digest(self):
        """Short content hash of points and weights."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points).tobytes())
        h.update(np.ascontiguousarray(self.weights).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, path):
        """Write one row per point: coordinates then weight."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{k}" for k in range(self.dimension)] + ["weight"])
            for p, w in zip(self.points, self.weights):
                writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])


# ---------------------------------------------------------------------------
# kernels


@dataclass
class PairDerivs:
    """Kernel values and derivatives on a batch of pairs."""

    L: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    H11: np.ndarray
    H12: np.ndarray
    H22: np.ndarray

    def blocks(self):
        """Jet pairing blocks ``B11, B12, B22`` of shape (P, 1+m, 1+m).

        ``u~(x)^T B11 v~(x)`` is the iterated derivative ``D_{1,u} D_{1,v} L``,
        ``u~(x)^T B12 v~(y)`` is ``D_{1,u} D_{2,v} L`` and
        ``u~(y)^T B22 v~(y)`` is ``D_{2,u} D_{2,v} L``, where ``u~ = (a, u)``.
        """
        P, m = self.g1.shape
        d = m + 1
        B11 = np.empty((P, d, d))
        B12 = np.empty((P, d, d))
        B22 = np.empty((P, d, d))
        for B, gl, gr, H in (
            (B11, self.g1, self.g1, self.H11),
            (B12, self.g1, self.g2, self.H12),
            (B22, self.g2, self.g2, self.H22),
        ):
            B[:, 0, 0] = self.L
            B[:, 0, 1:] = gr
            B[:, 1:, 0] = gl
            B[:, 1:, 1:] = H
        return B11, B12, B22


class LagrangianKernel:
    """Symmetric nonnegative kernel with first and second derivatives.

    Subclasses implement :meth:`pair_derivs` (batched) and
    :meth:`eval_pairs`; single-pair accessors are derived from them.

    Attributes
    ----------
    dimension : int
        Dimension m of the ambient space.
    range_radius : float
        Distance beyond which the kernel vanishes (``inf`` if unbounded).
    derivative_mode : str
        ``"analytic"`` or ``"finite-difference"``.
    """

    name = "kernel"
    dimension = 2
    range_radius = math.inf
    derivative_mode = "analytic"

    def params(self):
        return {}

    def identifier(self):
        items = ",".join(f"{k}={v!r}" for k, v in sorted(self.params().items()))
        return f"{self.name}({items})"

    # batched interface
    def eval_pairs(self, X, Y):
        return self.pair_derivs(X, Y).L

    def pair_derivs(self, X, Y):
        raise NotImplementedError

    # single pair interface
    def _one(self, x, y):
        x = self._check(x)
        y = self._check(y)
        return self.pair_derivs(x[None, :], y[None, :])

    def _check(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"point of dimension {x.shape[0]} for a kernel on R^{self.dimension}"
            )
        return x

    def eval(self, x, y):
        x = self._check(x)
        y = self._check(y)
        return float(self.eval_pairs(x[None, :], y[None, :])[0])

    def grad1(self, x, y):
        return self._one(x, y).g1[0]

    def grad2(self, x, y):
        return self._one(x, y).g2[0]

    def hess11(self, x, y):
        return self._one(x, y).H11[0]

    def hess12(self, x, y):
        return self._one(x, y).H12[0]

    def hess22(self, x, y):
        return self._one(x, y).H22[0]

    def candidate_pairs(self, points):
        """Ordered pairs ``(i, j)`` (including ``i == j``) that may interact.

        Returns
        -------
        I, J : numpy.ndarray of int64
            Lexicographically sorted index arrays.
        """
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        if not math.isfinite(self.range_radius):
            I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            return I.ravel().astype(np.int64), J.ravel().astype(np.int64)
        tree = cKDTree(self._range_coords(points))
        pairs = tree.query_pairs(self.range_radius * (1 + 1e-12), output_type="ndarray")
        I = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        J = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        order = np.lexsort((J, I))
        return I[order].astype(np.int64), J[order].astype(np.int64)

    def _range_coords(self, points):
        return points


class GaussianKernel(LagrangianKernel):
    """``exp(-(x - x')^2) (1 + y^2)(1 + y'^2) / sqrt(pi)`` on R^2, truncated.

    Parameters
    ----------
    truncation_tol : float
        The Gaussian factor is set to zero where it falls below this value,
        i.e. for ``|x - x'| > sqrt(-ln truncation_tol)``.
    """

    name = "gaussian_example"
    dimension = 2

    def __init__(self, truncation_tol=1e-14):
        if not 0 < truncation_tol < 1:
            raise ScenarioError("truncation_tol must lie in (0, 1)")
        self.truncation_tol = float(truncation_tol)
        self.range_radius = math.sqrt(-math.log(self.truncation_tol))

    def params(self):
        return {"truncation_tol": self.truncation_tol}

    def pair_derivs(self, X, Y):
        return PairDerivs(*_backend.gaussian_pair_derivs(X, Y, self.range_radius))

    def _range_coords(self, points):
        # range is measured along the spatial axis; the support lies on y = 0
        return points[:, :1]


class LatticeKernel(LagrangianKernel):
    """Compactly supported cone-profile kernel on (time, space) coordinates.

    ``L = c * bump(dt / T0) * bump(max(0, |dx| - slope |dt|) / W0)`` with a
    C-infinity plateau bump equal to one on ``|r| <= r0``.

    Parameters
    ----------
    c, T0, W0, slope, r0 : float
        Amplitude, temporal width, spatial width, cone slope, plateau radius.
    """

    name = "causal_lattice"
    dimension = 2

    def __init__(self, c=1.0, T0=1.7, W0=1.3, slope=0.0, r0=0.2):
        if c <= 0 or T0 <= 0 or W0 <= 0 or slope < 0 or not 0 <= r0 < 1:
            raise ScenarioError("invalid lattice kernel parameters")
        self.c, self.T0, self.W0 = float(c), float(T0), float(W0)
        self.slope, self.r0 = float(slope), float(r0)
        self.range_radius = math.hypot(self.T0, self.W0 + self.slope * self.T0)

    def params(self):
        return {"c": self.c, "T0": self.T0, "W0": self.W0, "slope": self.slope, "r0": self.r0}

    def pair_derivs(self, X, Y):
        return PairDerivs(
            *_backend.lattice_pair_derivs(X, Y, self.c, self.T0, self.W0, self.slope, self.r0)
        )


class ConstantKernel(LagrangianKernel):
    """``L == c`` on R^m (all derivatives vanish)."""

    name = "constant"

    def __init__(self, c=1.0, dimension=2):
        self.c = float(c)
        self.dimension = int(dimension)

    def params(self):
        return {"c": self.c, "dimension": self.dimension}

    def pair_derivs(self, X, Y):
        X = np.asarray(X, dtype=float)
        P, m = X.shape
        z1 = np.zeros((P, m))
        z2 = np.zeros((P, m, m))
        return PairDerivs(np.full(P, self.c), z1, z1.copy(), z2, z2.copy(), z2.copy())


class FiniteDifferenceKernel(LagrangianKernel):
    """Wrap a kernel and replace its derivatives by central differences.

    Parameters
    ----------
    base : LagrangianKernel
        Kernel providing values.
    h : float, optional
        Relative step; the actual step at ``x`` is ``h * (1 + |x|)``.
    """

    derivative_mode = "finite-difference"

    def __init__(self, base, h=1e-5):
        if h <= 0:
            raise ValueError("finite-difference step must be positive")
        self.base = base
        self.h = float(h)
        self.dimension = base.dimension
        self.range_radius = base.range_radius
        self.name = f"fd[{base.name}]"

    def params(self):
        return {"base": self.base.identifier(), "h": self.h}

    def eval_pairs(self, X, Y):
        return self.base.eval_pairs(X, Y)

    def _range_coords(self, points):
        return self.base._range_coords(points)

    def pair_derivs(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        P, m = X.shape
        f = self.base.eval_pairs
        L = f(X, Y)
        hx = self.h * (1.0 + np.linalg.norm(X, axis=1))
        hy = self.h * (1.0 + np.linalg.norm(Y, axis=1))
        g1 = np.empty((P, m))
        g2 = np.empty((P, m))
        H11 = np.empty((P, m, m))
        H12 = np.empty((P, m, m))
        H22 = np.empty((P, m, m))
        eye = np.eye(m)
        for i in range(m):
            ex = hx[:, None] * eye[i]
            ey = hy[:, None] * eye[i]
            g1[:, i] = (f(X + ex, Y) - f(X - ex, Y)) / (2 * hx)
            g2[:, i] = (f(X, Y + ey) - f(X, Y - ey)) / (2 * hy)
            for j in range(m):
                fx = hx[:, None] * eye[j]
                fy = hy[:, None] * eye[j]
                H11[:, i, j] = (
                    f(X + ex + fx, Y) - f(X + ex - fx, Y) - f(X - ex + fx, Y) + f(X - ex - fx, Y)
                ) / (4 * hx * hx)
                H22[:, i, j] = (
                    f(X, Y + ey + fy) - f(X, Y + ey - fy) - f(X, Y - ey + fy) + f(X, Y - ey - fy)
                ) / (4 * hy * hy)
                H12[:, i, j] = (
                    f(X + ex, Y + fy) - f(X + ex, Y - fy) - f(X - ex, Y + fy) + f(X - ex, Y - fy)
                ) / (4 * hx * hy)
        return PairDerivs(L, g1, g2, H11, H12, H22)


def kernel_eval(kernel, x, y):
    """Evaluate ``L(x, y)``.

    Raises
    ------
    DimensionMismatchError
        If ``x`` or ``y`` does not live in R^m of the kernel.
    """
    return kernel.eval(x, y)


def kernel_derivative_check(kernel, sample_pairs, h=1e-5):
    """Compare kernel derivatives against central differences.

    Parameters
    ----------
    kernel : LagrangianKernel
    sample_pairs : array_like, shape (P, 2, m)
        Pairs ``(x, y)``.
    h : float
        Absolute difference step.

    Returns
    -------
    dict
        Max over pairs of ``|D - D_fd| / (1 + |D|)`` for each of
        ``grad1, grad2, hess11, hess12, hess22``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    pairs = np.asarray(sample_pairs, dtype=float)
    X, Y = pairs[:, 0, :], pairs[:, 1, :]
    P, m = X.shape
    pd = kernel.pair_derivs(X, Y)
    eye = np.eye(m)
    fd = {k: np.empty_like(v) for k, v in
          (("grad1", pd.g1), ("grad2", pd.g2), ("hess11", pd.H11), ("hess12", pd.H12), ("hess22", pd.H22))}
    for i in range(m):
        e = h * eye[i]
        fd["grad1"][:, i] = (kernel.eval_pairs(X + e, Y) - kernel.eval_pairs(X - e, Y)) / (2 * h)
        fd["grad2"][:, i] = (kernel.eval_pairs(X, Y + e) - kernel.eval_pairs(X, Y - e)) / (2 * h)
        pp, pm = kernel.pair_derivs(X + e, Y), kernel.pair_derivs(X - e, Y)
        qp, qm = kernel.pair_derivs(X, Y + e), kernel.pair_derivs(X, Y - e)
        fd["hess11"][:, :, i] = (pp.g1 - pm.g1) / (2 * h)
        fd["hess12"][:, :, i] = (qp.g1 - qm.g1) / (2 * h)
        fd["hess22"][:, :, i] = (qp.g2 - qm.g2) / (2 * h)
    analytic = {"grad1": pd.g1, "grad2": pd.g2, "hess11": pd.H11, "hess12": pd.H12, "hess22": pd.H22}
    report = {}
    for key, a in analytic.items():
        err = np.abs(a - fd[key]) / (1.0 + np.abs(a))
        report[key] = float(err.max()) if err.size else 0.0
    return report


# ---------------------------------------------------------------------------
# jet metric


@dataclass(frozen=True, eq=False)
class JetMetric:
    """Per-point symmetric positive definite metric on R x R^m.

    Parameters
    ----------
    blocks : array_like, shape (n, 1+m, 1+m)
    """

    blocks: np.ndarray

    def __post_init__(self):
        B = np.array(self.blocks, dtype=float, copy=True)
        if B.ndim != 3 or B.shape[1] != B.shape[2]:
            raise DimensionMismatchError("metric blocks must have shape (n, d, d)")
        if not np.allclose(B, np.swapaxes(B, 1, 2), rtol=0, atol=1e-14 * max(1.0, np.abs(B).max())):
            raise SingularMetricError("metric blocks are not symmetric")
        if B.shape[0] and np.linalg.eigvalsh(B).min() <= 0:
            raise SingularMetricError("metric block is not positive definite")
        B.setflags(write=False)
        object.__setattr__(self, "blocks", B)

    @classmethod
    def identity(cls, n, m, scalar_scale=1.0, vector_scale=1.0):
        """Euclidean metric with optional scalar and vector scale factors."""
        diag = np.concatenate([[scalar_scale], np.full(m, vector_scale)])
        return cls(np.broadcast_to(np.diag(diag), (n, m + 1, m + 1)))

    @property
    def n(self):
        return self.blocks.shape[0]

    @property
    def d(self):
        return self.blocks.shape[1]

    def scaled(self, factor):
        return JetMetric(self.blocks * factor)


# ---------------------------------------------------------------------------
# scenarios


def gaussian_grid(R, delta):
    """Points ``(-R + i delta, 0)`` on ``[-R, R]`` with weight ``delta``."""
    if R <= 0 or delta <= 0:
        raise ScenarioError("gaussian_example requires R > 0 and delta > 0")
    count = int(round(2 * R / delta)) + 1
    x = -R + delta * np.arange(count)
    pts = np.column_stack([x, np.zeros(count)])
    return WeightedMeasure(pts, np.full(count, float(delta)))


def lattice_grid(nt, nx, spacing):
    """Grid ``(i spacing, j spacing)`` in time-major order, weight ``spacing^2``."""
    if nt <= 0 or nx <= 0 or spacing <= 0:
        raise ScenarioError("causal_lattice requires positive nt, nx, spacing")
    t, x = np.meshgrid(np.arange(nt) * spacing, np.arange(nx) * spacing, indexing="ij")
    pts = np.column_stack([t.ravel(), x.ravel()])
    return WeightedMeasure(pts, np.full(nt * nx, float(spacing) ** 2))


def make_kernel(kind, params, dimension=2):
    """Construct a kernel from its type name and parameter dict."""
    params = dict(params or {})
    mode = params.pop("derivative_mode", "analytic")
    h = params.pop("fd_step", 1e-5)
    if kind == "gaussian_example":
        kern = GaussianKernel(**params)
    elif kind == "causal_lattice":
        kern = LatticeKernel(**params)
    elif kind == "constant":
        kern = ConstantKernel(dimension=dimension, **params)
    else:
        raise ScenarioError(f"unknown kernel type {kind!r}")
    if mode == "finite-difference":
        kern = FiniteDifferenceKernel(kern, h=h)
    elif mode != "analytic":
        raise ScenarioError(f"unknown derivative_mode {mode!r}")
    return kern


def build_scenario(cfg):
    """Build measure, kernel and jet metric from a scenario description.

    Parameters
    ----------
    cfg : dict
        Scenario config (see :mod:`cvpbench.config`). ``cfg["scenario"]``
        is ``"gaussian_example"``, ``"causal_lattice"`` or ``"custom"``.

    Returns
    -------
    measure : WeightedMeasure
    kernel : LagrangianKernel
    metric : JetMetric
    """
    name = cfg.get("scenario")
    kparams = dict(cfg.get("kernel", {}))
    metric_cfg = cfg.get("metric", {})
    if name == "gaussian_example":
        grid = cfg.get("grid", {})
        measure = gaussian_grid(grid.get("R", 8.0), grid.get("delta", 0.1))
        kparams.setdefault("truncation_tol", cfg.get("truncation_tol", 1e-14))
        kernel = make_kernel("gaussian_example", kparams)
    elif name == "causal_lattice":
        lat = cfg.get("lattice", {})
        measure = lattice_grid(lat.get("nt", 20), lat.get("nx", 20), lat.get("spacing", 1.0))
        kernel = make_kernel("causal_lattice", kparams)
    elif name == "custom":
        measure = WeightedMeasure(cfg["points"], cfg["weights"])
        kind = kparams.pop("type", "constant")
        kernel = make_kernel(kind, kparams, dimension=measure.dimension)
    else:
        raise ScenarioError(f"unknown scenario {name!r}")
    if measure.dimension != kernel.dimension:
        raise DimensionMismatchError("kernel and measure dimensions differ")
    metric = JetMetric.identity(
        measure.n,
        measure.dimension,
        metric_cfg.get("scalar_scale", 1.0),
        metric_cfg.get("vector_scale", 1.0),
    )
    return measure, kernel, metric
