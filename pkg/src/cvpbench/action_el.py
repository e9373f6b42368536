"""Causal action, the function ell, Euler-Lagrange reports and action minimization."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError
from .space_measure import WeightedMeasure


@dataclass(frozen=True)
class ActionConfig:
    """Lagrange parameter, volume constraint and numerical controls.

    Attributes
    ----------
    s_param : float
        Lagrange parameter of the volume constraint.
    volume : float
        Fixed total volume.
    max_iters, grad_tol, kappa_w, frozen_margin, armijo, max_backtracks
        Controls of :func:`minimize_action`.
    interior_margin, probe_axes, probe_offsets, probe_reference
        Controls of :func:`el_report`.
    """

    s_param: float
    volume: float
    max_iters: int = 200
    grad_tol: float = 1e-6
    kappa_w: float = 0.01
    frozen_margin: float = 0.0
    armijo: float = 1e-4
    max_backtracks: int = 40
    interior_margin: float = 4.0
    probe_axes: tuple = (1,)
    probe_offsets: tuple = (0.25, 0.5, 1.0)
    probe_reference: str | None = None

    def __post_init__(self):
        if not self.volume > 0:
            raise ValueError("volume must be positive")
        if not math.isfinite(self.s_param):
            raise ValueError("s_param must be finite")

    @classmethod
    def from_config(cls, cfg, measure, kernel):
        """Build from a resolved scenario config; ``s_param=None`` fits s."""
        act, el = cfg["action"], cfg["el"]
        s = act["s_param"]
        if s is None:
            s, _ = fit_s(measure, kernel)
        return cls(
            s_param=float(s),
            volume=measure.total_volume,
            max_iters=int(act["max_iters"]),
            grad_tol=float(act["grad_tol"]),
            kappa_w=float(act["kappa_w"]),
            frozen_margin=float(act["frozen_margin"]),
            armijo=float(act["armijo"]),
            max_backtracks=int(act["max_backtracks"]),
            interior_margin=float(el["interior_margin"]),
            probe_axes=tuple(el["probe_axes"]),
            probe_offsets=tuple(el["probe_offsets"]),
            probe_reference=el["probe_reference"],
        )


@dataclass
class ELReport:
    """Euler-Lagrange diagnostics of a measure.

    Attributes
    ----------
    max_abs_ell_on_M : float
        ``max |ell|`` over interior support points.
    min_ell_off_M : float
        Minimum of ``ell`` over the off-support probe set.
    restricted_residual : float
        ``max |nabla_u ell|`` over interior points and basis directions.
    action_value : float
        Causal action of the measure.
    """

    max_abs_ell_on_M: float
    min_ell_off_M: float
    restricted_residual: float
    action_value: float
    s_param: float = 0.0
    n_interior: int = 0
    probe_max_deviation: float = float("nan")
    row_sum_spread: float = 0.0
    probe_values: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# sums


def _pairs(measure, kernel):
    if measure.dimension != kernel.dimension:
        raise DimensionMismatchError(
            f"measure lives in R^{measure.dimension}, kernel in R^{kernel.dimension}"
        )
    I, J = kernel.candidate_pairs(measure.points)
    return I, J


def row_sums(measure, kernel):
    """``r_i = sum_j w_j L(x_i, x_j)`` for every point, in ascending j order."""
    I, J = _pairs(measure, kernel)
    L = kernel.eval_pairs(measure.points[I], measure.points[J])
    return np.bincount(I, weights=measure.weights[J] * L, minlength=measure.n)


def action(measure, kernel):
    """Causal action ``sum_i sum_j w_i w_j L(x_i, x_j)``.

    Raises
    ------
    DimensionMismatchError
        If kernel and measure dimensions differ.
    """
    r = row_sums(measure, kernel)
    return float(np.dot(measure.weights, r))


def fit_s(measure, kernel):
    """Fit the Lagrange parameter as the mean row sum over the support.

    Returns
    -------
    s : float
    spread : float
        ``max - min`` of the row sums over the support.
    """
    r = row_sums(measure, kernel)[measure.support_indices]
    return float(r.mean()), float(r.max() - r.min())


def ell(measure, kernel, config, x):
    """``ell(x) = sum_j w_j L(x, x_j) - s`` at one or several points.

    Parameters
    ----------
    x : array_like, shape (m,) or (Q, m)

    Returns
    -------
    float or numpy.ndarray
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != kernel.dimension or measure.dimension != kernel.dimension:
        raise DimensionMismatchError("point dimension does not match the kernel")
    supp = measure.support_indices
    Y = measure.points[supp]
    w = measure.weights[supp]
    Q, n = pts.shape[0], Y.shape[0]
    L = kernel.eval_pairs(np.repeat(pts, n, axis=0), np.tile(Y, (Q, 1))).reshape(Q, n)
    vals = L @ w - config.s_param
    return float(vals[0]) if single else vals


def ell_jet(measure, kernel, config):
    """``ell`` and its gradient at every point of the measure.

    Returns
    -------
    values : numpy.ndarray, shape (n,)
    grads : numpy.ndarray, shape (n, m)
    """
    I, J = _pairs(measure, kernel)
    pd = kernel.pair_derivs(measure.points[I], measure.points[J])
    wj = measure.weights[J]
    n, m = measure.n, measure.dimension
    vals = np.bincount(I, weights=wj * pd.L, minlength=n) - config.s_param
    grads = np.column_stack(
        [np.bincount(I, weights=wj * pd.g1[:, k], minlength=n) for k in range(m)]
    )
    return vals, grads


def interior_mask(points, margin):
    """Points at distance >= margin from the hull ends along every spread axis."""
    pts = np.asarray(points, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    mask = np.ones(pts.shape[0], dtype=bool)
    for k in range(pts.shape[1]):
        if hi[k] - lo[k] > 0:
            mask &= (pts[:, k] - lo[k] >= margin - 1e-12) & (hi[k] - pts[:, k] >= margin - 1e-12)
    return mask


def el_report(measure, kernel, config, test_basis=None):
    """Evaluate the EL equations on the support and at off-support probes.

    Parameters
    ----------
    measure : WeightedMeasure
    kernel : LagrangianKernel
    config : ActionConfig
    test_basis : TestJetBasis, optional
        Per-point active directions; full jets when omitted.

    Returns
    -------
    ELReport
    """
    vals, grads = ell_jet(measure, kernel, config)
    supp = measure.support_indices
    inner = interior_mask(measure.points[supp], config.interior_margin)
    idx = supp[inner]
    if idx.size == 0:
        idx = supp
    jet = np.column_stack([vals, grads])
    if test_basis is not None:
        E = test_basis.directions[np.searchsorted(supp, idx)]
        restricted = np.einsum("ndk,nd->nk", E, jet[idx])
    else:
        restricted = jet[idx]
    probes, offsets = [], []
    m = measure.dimension
    for axis in config.probe_axes:
        for off in config.probe_offsets:
            for sign in (1.0, -1.0):
                shift = np.zeros(m)
                shift[axis] = sign * off
                probes.append(measure.points[idx] + shift)
                offsets.append(np.full(idx.size, off))
    probe_vals, probe_dev, probe_table = np.array([np.inf]), float("nan"), {}
    if probes:
        P = np.vstack(probes)
        offs = np.concatenate(offsets)
        probe_vals = ell(measure, kernel, config, P)
        for off in config.probe_offsets:
            sel = offs == off
            probe_table[repr(float(off))] = [float(probe_vals[sel].min()), float(probe_vals[sel].max())]
        if config.probe_reference == "offset_squared":
            probe_dev = float(np.abs(probe_vals - offs**2).max())
    r = vals[supp] + config.s_param
    return ELReport(
        max_abs_ell_on_M=float(np.abs(vals[idx]).max()),
        min_ell_off_M=float(probe_vals.min()),
        restricted_residual=float(np.abs(restricted).max()),
        action_value=action(measure, kernel),
        s_param=float(config.s_param),
        n_interior=int(idx.size),
        probe_max_deviation=probe_dev,
        row_sum_spread=float(r.max() - r.min()),
        probe_values=probe_table,
    )


# ---------------------------------------------------------------------------
# minimization


def project_simplex(v, volume):
    """Euclidean projection onto ``{w >= 0, sum w = volume}``.

    Sorting uses a stable order so ties are broken by index.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    order = np.argsort(-v, kind="stable")
    u = v[order]
    css = np.cumsum(u) - volume
    k = np.arange(1, v.size + 1)
    cond = u - css / k > 0
    rho = int(np.flatnonzero(cond)[-1])
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


@dataclass
class MinimizeTrace:
    """Iteration trace of :func:`minimize_action`."""

    rows: list
    converged: bool
    status: str

    @property
    def actions(self):
        return np.array([r["action"] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "action", "max_ell", "step"])
            for r in self.rows:
                writer.writerow([r["iter"], repr(r["action"]), repr(r["max_ell"]), repr(r["step"])])


def _frozen(points, margin):
    if margin <= 0:
        return np.zeros(points.shape[0], dtype=bool)
    return ~interior_mask(points, margin)


def minimize_action(initial, kernel, config):
    """Projected-gradient descent of the action at fixed total volume.

    Weights step along ``-kappa_w * dS/dw`` followed by projection onto the
    simplex slice, positions along ``-dS/dx_i / w_i``; the joint step is
    chosen by Armijo backtracking from ``alpha = 1``. Points within
    ``frozen_margin`` of the hull ends keep their position and weight.

    Parameters
    ----------
    initial : WeightedMeasure
    kernel : LagrangianKernel
    config : ActionConfig

    Returns
    -------
    measure : WeightedMeasure
        Best iterate (the last accepted one).
    trace : MinimizeTrace
        Non-increasing action values, one row per accepted iterate.
    """
    if abs(initial.total_volume - config.volume) > 1e-12 * config.volume:
        raise ValueError("initial total volume differs from config.volume")
    pts = initial.points.copy()
    w = initial.weights.copy()
    frozen = _frozen(pts, config.frozen_margin)
    free = ~frozen
    free_volume = config.volume - float(w[frozen].sum())

    def evaluate(p, wt):
        meas = WeightedMeasure(p, wt)
        vals, grads = ell_jet(meas, kernel, config)
        S = float(np.dot(wt, vals + config.s_param))
        return meas, S, vals, grads

    meas, S, vals, grads = evaluate(pts, w)
    rows = [{"iter": 0, "action": S, "max_ell": float(np.abs(vals[w > 0]).max()), "step": 0.0}]
    status, converged = "max_iters", False
    for it in range(1, config.max_iters + 1):
        gw = 2.0 * (vals + config.s_param)
        dx = np.where((free & (w > 0))[:, None], 2.0 * grads, 0.0)

        def trial(alpha):
            wn = w.copy()
            wn[free] = project_simplex(w[free] - alpha * config.kappa_w * gw[free], free_volume)
            return pts - alpha * dx, wn

        p1, w1 = trial(1.0)
        stat = max(
            float(np.abs(w - w1).max()) / config.kappa_w if free.any() else 0.0,
            float(np.abs(dx).max()),
        )
        if stat < config.grad_tol:
            status, converged = "converged", True
            break
        alpha, accepted = 1.0, False
        for _ in range(config.max_backtracks):
            pn, wn = trial(alpha)
            decrease = float(np.dot(gw, w - wn) + np.sum(dx * (pts - pn) * w[:, None]))
            mn, Sn, vn, gn = evaluate(pn, wn)
            if Sn <= S - config.armijo * decrease and Sn <= S:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            status = "line_search_failed"
            break
        pts, w, meas, S, vals, grads = pn, wn, mn, Sn, vn, gn
        rows.append(
            {"iter": it, "action": S, "max_ell": float(np.abs(vals[w > 0]).max()), "step": alpha}
        )
    return meas, MinimizeTrace(rows=rows, converged=converged, status=status)


def perturbed_gaussian(measure, amplitude=0.1):
    """Displace the second coordinate to ``amplitude * sin(x_1)``."""
    pts = measure.points.copy()
    pts[:, 1] = amplitude * np.sin(pts[:, 0])
    return measure.with_points(pts)
