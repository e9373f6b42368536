"""Smooth step profile and plateau bump used by foliations and lattice kernels."""

import numpy as np
from scipy.special import expit


def smooth_step(x):
    """C-infinity step S with S = 0 for x <= 0, S = 1 for x >= 1.

    On (0, 1) the profile is ``1 / (1 + exp(1/x - 1/(1-x)))``, the usual
    ``exp(-1/x)`` gluing written as a logistic for numerical stability.

    Parameters
    ----------
    x : array_like
        Evaluation points.

    Returns
    -------
    s, ds, dds : numpy.ndarray
        S, S' and S'' at ``x`` (same shape as ``x``).
    """
    x = np.asarray(x, dtype=float)
    s = np.zeros_like(x)
    ds = np.zeros_like(x)
    dds = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    # 1 / xi overflows to inf for subnormal xi; expit handles +-inf exactly
    with np.errstate(over="ignore", divide="ignore"):
        g = 1.0 / xi - 1.0 / (1.0 - xi)
    si = expit(-g)
    ss = si * expit(g)
    # near the ends ss underflows to 0 while the polynomial factors overflow;
    # the exact derivatives vanish there
    live = ss > 0.0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        m1 = 1.0 / xi**2 + 1.0 / (1.0 - xi) ** 2
        m2 = -2.0 / xi**3 + 2.0 / (1.0 - xi) ** 3
        d1 = np.where(live, ss * m1, 0.0)
        d2 = np.where(live, ss * (1.0 - 2.0 * si) * m1**2 + ss * m2, 0.0)
    s[inside] = si
    ds[inside] = d1
    dds[inside] = d2
    s[x >= 1.0] = 1.0
    return s, ds, dds


def plateau_bump(r, r0):
    """Even C-infinity bump equal to 1 on ``|r| <= r0`` and 0 on ``|r| >= 1``.

    Parameters
    ----------
    r : array_like
        Evaluation points.
    r0 : float
        Plateau radius, ``0 <= r0 < 1``.

    Returns
    -------
    b, db, ddb : numpy.ndarray
        Bump value and its first two derivatives with respect to ``r``.
    """
    r = np.asarray(r, dtype=float)
    scale = 1.0 / (1.0 - r0)
    s, ds, dds = smooth_step((1.0 - np.abs(r)) * scale)
    return s, -np.sign(r) * ds * scale, dds * scale**2
