"""Independent brute-force references used by the tests.

Everything here is written with explicit Python loops over point pairs and
single-pair kernel accessors, so it shares no assembly code with the package.
"""

import math

import numpy as np


def gaussian_L(x, y):
    """Closed form of the Gaussian-example Lagrangian (no truncation)."""
    return math.exp(-(x[0] - y[0]) ** 2) * (1 + x[1] ** 2) * (1 + y[1] ** 2) / math.sqrt(math.pi)


def jet_blocks(kernel, x, y):
    """``B11, B12, B22`` for one pair from single-pair accessors."""
    L = kernel.eval(x, y)
    g1, g2 = np.asarray(kernel.grad1(x, y)), np.asarray(kernel.grad2(x, y))
    H11, H12, H22 = (np.asarray(h) for h in (kernel.hess11(x, y), kernel.hess12(x, y), kernel.hess22(x, y)))
    m = g1.size
    B11 = np.zeros((m + 1, m + 1))
    B12 = np.zeros((m + 1, m + 1))
    B22 = np.zeros((m + 1, m + 1))
    B11[0, 0] = B12[0, 0] = B22[0, 0] = L
    B11[0, 1:] = B11[1:, 0] = g1
    B22[0, 1:] = B22[1:, 0] = g2
    B12[0, 1:] = g2
    B12[1:, 0] = g1
    B11[1:, 1:], B12[1:, 1:], B22[1:, 1:] = H11, H12, H22
    return B11, B12, B22


def _interacting(points, radius):
    n = len(points)
    for i in range(n):
        for j in range(n):
            if radius == math.inf or np.linalg.norm(points[i] - points[j]) <= radius + 1e-12:
                yield i, j


def delta_pairing(measure, kernel, s_param, u, v):
    """``sum_x w_x <u, Delta v>(x)`` by the jet-derivative expansion.

    ``<u, Delta v>(x) = a(x) [sum_y w_y (nabla_{1,v} + nabla_{2,v}) L - b(x) s]
    + sum_y w_y D_u (nabla_{1,v} + nabla_{2,v}) L``.
    """
    pts, w = measure.points, measure.weights
    n, d = len(w), pts.shape[1] + 1
    U, V = np.asarray(u).reshape(n, d), np.asarray(v).reshape(n, d)
    total = 0.0
    for i in range(n):
        inner, deriv = 0.0, 0.0
        for j in range(n):
            L = kernel.eval(pts[i], pts[j])
            g1 = np.asarray(kernel.grad1(pts[i], pts[j]))
            g2 = np.asarray(kernel.grad2(pts[i], pts[j]))
            H11 = np.asarray(kernel.hess11(pts[i], pts[j]))
            H12 = np.asarray(kernel.hess12(pts[i], pts[j]))
            bx, vx, by, vy = V[i, 0], V[i, 1:], V[j, 0], V[j, 1:]
            inner += w[j] * (bx * L + vx @ g1 + by * L + vy @ g2)
            ux = U[i, 1:]
            deriv += w[j] * (bx * (ux @ g1) + ux @ H11 @ vx + by * (ux @ g1) + ux @ H12 @ vy)
        inner -= V[i, 0] * s_param
        total += w[i] * (U[i, 0] * inner + deriv)
    return total


def delta2_values(measure, kernel, s_param, v1, v2):
    """Per-point ``sum_y w_y (nabla_1 + nabla_2)_{v1} (nabla_1 + nabla_2)_{v2} L - s b1 b2``."""
    pts, w = measure.points, measure.weights
    n, d = len(w), pts.shape[1] + 1
    A, B = np.asarray(v1).reshape(n, d), np.asarray(v2).reshape(n, d)
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            B11, B12, B22 = jet_blocks(kernel, pts[i], pts[j])
            acc += w[j] * (A[i] @ B11 @ B[i] + A[i] @ B12 @ B[j] + A[j] @ B12.T @ B[i] + A[j] @ B22 @ B[j])
        out[i] = acc - s_param * A[i, 0] * B[i, 0]
    return out


def surface_forms(measure, kernel, eta, u, v):
    """``(u, v)^t`` and ``sigma^t(u, v)`` as double sums with weight ``eta(x)(1 - eta(y))``."""
    pts, w = measure.points, measure.weights
    n, d = len(w), pts.shape[1] + 1
    U, V = np.asarray(u).reshape(n, d), np.asarray(v).reshape(n, d)
    ip, sg = 0.0, 0.0
    for i, j in _interacting(pts, kernel.range_radius):
        c = w[i] * w[j] * eta[i] * (1 - eta[j])
        if c == 0:
            continue
        B11, B12, B22 = jet_blocks(kernel, pts[i], pts[j])
        ip += c * (U[i] @ B11 @ V[i] - U[j] @ B22 @ V[j])
        sg += c * (U[i] @ B12 @ V[j] - V[i] @ B12 @ U[j])
    return ip, sg


def pairings(indices):
    """All perfect pairings of a list as lists of ordered pairs (recursive)."""
    if not indices:
        return [[]]
    first, rest = indices[0], indices[1:]
    out = []
    for k, other in enumerate(rest):
        remaining = rest[:k] + rest[k + 1:]
        for p in pairings(remaining):
            out.append([(first, other)] + p)
    return out
