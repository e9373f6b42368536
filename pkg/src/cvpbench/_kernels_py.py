"""Pure numpy implementations of the hot kernels.

Mirrors the compiled module ``_ckernels``; both expose the same functions
with the same signatures and array layouts.
"""

import numpy as np

from .profile import plateau_bump

INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


def gaussian_pair_derivs(X, Y, cutoff):
    """Derivatives of the Gaussian example Lagrangian on a batch of pairs.

    ``L(x, y) = exp(-(x1 - y1)^2) (1 + x2^2) (1 + y2^2) / sqrt(pi)``,
    set to zero when ``|x1 - y1| > cutoff``.

    Parameters
    ----------
    X, Y : numpy.ndarray, shape (P, 2)
        First and second arguments.
    cutoff : float
        Truncation distance along the first axis.

    Returns
    -------
    L : numpy.ndarray, shape (P,)
    g1, g2 : numpy.ndarray, shape (P, 2)
    H11, H12, H22 : numpy.ndarray, shape (P, 2, 2)
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    d = X[:, 0] - Y[:, 0]
    x2 = X[:, 1]
    y2 = Y[:, 1]
    E = np.exp(-d * d) * INV_SQRT_PI
    E = np.where(np.abs(d) > cutoff, 0.0, E)
    A = 1.0 + x2 * x2
    B = 1.0 + y2 * y2
    EAB = E * A * B
    P = X.shape[0]
    g1 = np.empty((P, 2))
    g2 = np.empty((P, 2))
    H11 = np.empty((P, 2, 2))
    H12 = np.empty((P, 2, 2))
    H22 = np.empty((P, 2, 2))
    g1[:, 0] = -2.0 * d * EAB
    g1[:, 1] = 2.0 * x2 * E * B
    g2[:, 0] = 2.0 * d * EAB
    g2[:, 1] = 2.0 * y2 * E * A
    H11[:, 0, 0] = (4.0 * d * d - 2.0) * EAB
    H11[:, 0, 1] = -4.0 * d * x2 * E * B
    H11[:, 1, 0] = H11[:, 0, 1]
    H11[:, 1, 1] = 2.0 * E * B
    H22[:, 0, 0] = H11[:, 0, 0]
    H22[:, 0, 1] = 4.0 * d * y2 * E * A
    H22[:, 1, 0] = H22[:, 0, 1]
    H22[:, 1, 1] = 2.0 * E * A
    H12[:, 0, 0] = -H11[:, 0, 0]
    H12[:, 0, 1] = -4.0 * d * y2 * E * A
    H12[:, 1, 0] = 4.0 * d * x2 * E * B
    H12[:, 1, 1] = 4.0 * x2 * y2 * E
    return EAB, g1, g2, H11, H12, H22


def lattice_pair_derivs(X, Y, c, T0, W0, slope, r0):
    """Derivatives of the cone-profile lattice Lagrangian on a batch of pairs.

    ``L = c * bump(a / T0) * bump(max(0, |b| - slope |a|) / W0)`` with
    ``(a, b) = x - y`` in (time, space) coordinates.

    Parameters
    ----------
    X, Y : numpy.ndarray, shape (P, 2)
        First and second arguments.
    c, T0, W0, slope, r0 : float
        Kernel parameters.

    Returns
    -------
    L, g1, g2, H11, H12, H22
        As in :func:`gaussian_pair_derivs`.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    a = X[:, 0] - Y[:, 0]
    b = X[:, 1] - Y[:, 1]
    f, fr, frr = plateau_bump(a / T0, r0)
    fa = fr / T0
    faa = frr / T0**2
    q = np.abs(b) - slope * np.abs(a)
    pos = q > 0.0
    g, gr, grr = plateau_bump(np.where(pos, q, 0.0) / W0, r0)
    gq = np.where(pos, gr / W0, 0.0)
    gqq = np.where(pos, grr / W0**2, 0.0)
    qa = -slope * np.sign(a)
    qb = np.sign(b)
    L = c * f * g
    La = c * (fa * g + f * gq * qa)
    Lb = c * f * gq * qb
    Laa = c * (faa * g + 2.0 * fa * gq * qa + f * gqq * qa * qa)
    Lab = c * (fa * gq * qb + f * gqq * qa * qb)
    Lbb = c * f * gqq * qb * qb
    P = X.shape[0]
    g1 = np.empty((P, 2))
    g1[:, 0] = La
    g1[:, 1] = Lb
    H11 = np.empty((P, 2, 2))
    H11[:, 0, 0] = Laa
    H11[:, 0, 1] = Lab
    H11[:, 1, 0] = Lab
    H11[:, 1, 1] = Lbb
    return L, g1, -g1, H11, -H11, H11.copy()


def scatter_blocks(out, I, J, coef, B):
    """Accumulate ``out[I_p block, J_p block] += coef_p * B_p``.

    Parameters
    ----------
    out : numpy.ndarray, shape (n*d, n*d)
        Dense target, modified in place.
    I, J : numpy.ndarray of int, shape (P,)
        Block row and column indices.
    coef : numpy.ndarray, shape (P,)
        Per-pair scalar weights.
    B : numpy.ndarray, shape (P, d, d)
        Per-pair blocks.
    """
    d = B.shape[1]
    n = out.shape[0] // d
    out4 = out.reshape(n, d, n, d)
    ar = np.arange(d)
    np.add.at(
        out4,
        (I[:, None, None], ar[None, :, None], J[:, None, None], ar[None, None, :]),
        coef[:, None, None] * B,
    )


def scatter_diag_blocks(out, I, coef, B):
    """Accumulate ``out[I_p] += coef_p * B_p`` into a stack of blocks.

    Parameters
    ----------
    out : numpy.ndarray, shape (n, d, d)
        Block stack, modified in place.
    I : numpy.ndarray of int, shape (P,)
        Block indices.
    coef : numpy.ndarray, shape (P,)
        Per-pair scalar weights.
    B : numpy.ndarray, shape (P, d, d)
        Per-pair blocks.
    """
    np.add.at(out, I, coef[:, None, None] * B)
