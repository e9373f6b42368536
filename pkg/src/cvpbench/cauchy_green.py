"""Weak Cauchy solver on time strips, Green's operators and causal structure.

All solves work in reduced coordinates: a jet in the active span is
``E alpha`` with the block-diagonal direction matrix ``E`` of the test basis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DeltaContainmentError, ShieldingNotObservedError
from .foliation import Foliation, TimeStrip
from .jets import _coords


def _sym_sqrt_blocks(Wb):
    """Upper Cholesky factors ``R_x`` with ``R_x^T R_x = W_x``."""
    return np.swapaxes(np.linalg.cholesky(Wb), 1, 2)


def _rep(mask, k):
    return np.repeat(mask, k)


# ---------------------------------------------------------------------------
# constrained spaces and strip solves


@dataclass
class ConstrainedJetSpace:
    """Orthonormal basis ``U`` (reduced coordinates) of a constrained jet space.

    Attributes
    ----------
    U : numpy.ndarray, shape (n k, r)
    side : str
        ``"future"`` for the space built at the upper time ``t`` (jets
        supported where ``eta_t = 1``), ``"past"`` for the mirrored space at ``s``.
    residuals : dict
        Max constraint residuals of the returned columns.
    threshold : float
        Singular-value cutoff used for the null space.
    """

    U: np.ndarray
    side: str
    residuals: dict
    threshold: float

    @property
    def dimension(self):
        return self.U.shape[1]

    @property
    def empty(self):
        return self.U.shape[1] == 0


def constrained_space(strip, side, delta, assembler, null_tol=1e-10):
    """Null space of the stacked support, Delta, P and Sigma constraints.

    For ``side="future"`` with ``eta = eta_t``: ``(1 - eta) v = 0``,
    ``(1 - eta) Delta v = 0``, ``(u, v)^t = 0`` and ``sigma^t(u, v) = 0`` for
    all active ``u``. For ``side="past"`` with ``eta = eta_s``: ``eta v = 0``,
    ``eta Delta v = 0`` and the same forms at ``s``.

    Parameters
    ----------
    strip : TimeStrip
    side : {"future", "past"}
    delta : DeltaOperator
    assembler : FormAssembler
    null_tol : float
        Relative singular-value threshold.

    Returns
    -------
    ConstrainedJetSpace
    """
    if side not in ("future", "past"):
        raise ValueError("side must be 'future' or 'past'")
    red = delta.reduced()
    E, D = red["E"], red["D"]
    k = delta.basis.k
    fol = strip.foliation
    time = strip.t if side == "future" else strip.s
    eta = fol.eta(time)
    off = (1.0 - eta) if side == "future" else eta
    allowed = _rep(off <= 0.0, k)
    forms = assembler.forms(fol, time)
    Pr, Sr = forms.reduced(E)
    cols = np.flatnonzero(allowed)
    nk = D.shape[0]
    if cols.size == 0:
        return ConstrainedJetSpace(np.zeros((nk, 0)), side, {}, 0.0)
    weight = _rep(off, k)
    active_rows = weight > 0
    C = np.vstack([
        (weight[:, None] * D)[active_rows][:, cols],
        Pr[:, cols],
        Sr[:, cols],
    ])
    C = C[np.abs(C).max(axis=1) > 0] if C.size else C
    if C.shape[0] == 0:
        Uc = np.eye(cols.size)
        thr = 0.0
    else:
        _, sv, Vt = np.linalg.svd(C, full_matrices=True)
        thr = null_tol * sv[0] if sv.size else 0.0
        rank = int(np.sum(sv > thr))
        Uc = Vt[rank:].T
    U = np.zeros((nk, Uc.shape[1]))
    U[cols] = Uc
    res = {
        "support": float(np.abs(weight[:, None] * U).max(initial=0.0)),
        "delta": float(np.abs(weight[:, None] * (D @ U)).max(initial=0.0)),
        "inner": float(np.abs(Pr @ U).max(initial=0.0)),
        "sigma": float(np.abs(Sr @ U).max(initial=0.0)),
    }
    return ConstrainedJetSpace(U, side, res, thr)


@dataclass
class StripSolution:
    """Batched weak solutions on one time strip (reduced coordinates)."""

    v: np.ndarray
    strip: TimeStrip
    weak_residual: float
    condition: float
    space_dim: int
    determined: np.ndarray
    rank: int
    norms: dict = field(default_factory=dict)


def _strip_weights(strip, Wb):
    h = np.clip(strip.h, 0.0, None)
    R = _sym_sqrt_blocks(Wb)
    return h, R


def solve_strip_retarded(strip, w, delta, assembler, *, space=None, null_tol=1e-10,
                         solve_tol=1e-10, determined_tol=1e-8):
    """Weak retarded solution ``v = Delta V`` on a time strip.

    Solves ``<Delta U_k, v>_{L2(L)} = <U_k, w>_{L2(L)}`` for all ``U_k`` in the
    future constrained space through the Gram system ``M c = r`` with
    ``M_kl = <Delta U_k, Delta U_l>_{L2(L)}``. The pseudo-inverse is taken via
    the SVD of the weighted matrix ``sqrt(h W) Delta U``.

    Parameters
    ----------
    strip : TimeStrip
    w : numpy.ndarray, shape (n k,) or (n k, q)
        Sources in reduced coordinates (batched in columns).
    delta : DeltaOperator
    assembler : FormAssembler

    Returns
    -------
    StripSolution
        ``v`` is zero outside the strip members; ``determined`` flags points
        where the weak equations fix ``v`` uniquely.
    """
    red = delta.reduced()
    D, Wb = red["D"], red["Wblocks"]
    n, k = Wb.shape[0], Wb.shape[1]
    W = np.atleast_2d(np.asarray(w, dtype=float).T).T
    if space is None:
        space = constrained_space(strip, "future", delta, assembler, null_tol)
    U = space.U
    h, R = _strip_weights(strip, Wb)
    members = _rep(strip.h > strip.strip_tol, k)
    if U.shape[1] == 0:
        return StripSolution(np.zeros_like(W), strip, 0.0, 1.0, 0, np.zeros(n, bool), 0)
    DU = D @ U
    sqrtHW = np.sqrt(h)[:, None, None] * R
    A = np.einsum("nkl,nlq->nkq", sqrtHW, DU.reshape(n, k, -1)).reshape(n * k, -1)
    HW = h[:, None, None] * Wb
    HWw = np.einsum("nkl,nlq->nkq", HW, W.reshape(n, k, -1)).reshape(n * k, -1)
    r = U.T @ HWw
    Q, sa, Rt = np.linalg.svd(A, full_matrices=False)
    if sa.size == 0 or sa[0] == 0:
        return StripSolution(np.zeros_like(W), strip, 0.0, 1.0, U.shape[1], np.zeros(n, bool), 0)
    keep = sa > null_tol * sa[0]
    rank = int(keep.sum())
    Vk = Rt[:rank].T
    c = Vk @ ((Vk.T @ r) / sa[:rank, None] ** 2)
    v = DU @ c
    v[~members] = 0.0
    # energy norms of the constrained basis: ||U_k||_{L2(L)} / ||Delta U_k||_{L2(L)}
    nU = np.sqrt(np.einsum("nkq,nkl,nlq->q", U.reshape(n, k, -1), HW, U.reshape(n, k, -1)))
    nDU = np.linalg.norm(A, axis=0)
    # jets supported where h = 0 have zero norm on both sides and are skipped
    live = nU > 1e-12 * max(nU.max(initial=0.0), 1e-300)
    if np.any(live & (nDU <= 1e-12 * max(nDU.max(initial=0.0), 1e-300))):
        ratio = math.inf
    else:
        ratio = float(np.max(nU[live] / nDU[live], initial=0.0))
    norms = {"basis_ratio": ratio, "skipped": int((~live).sum())}
    M = A.T @ A
    res = np.abs(M @ c - r).max() / max(np.abs(r).max(), 1e-300)
    # uniqueness region: null space of the weak system in v over the members
    Esys = np.einsum("nkq,nkl->qnl", DU.reshape(n, k, -1), HW).reshape(-1, n * k)[:, members]
    _, se, Vte = np.linalg.svd(Esys, full_matrices=True)
    erank = int(np.sum(se > null_tol * se[0])) if se.size else 0
    null = Vte[erank:].T
    amb = np.zeros((n * k, null.shape[1]))
    amb[members] = null
    undetermined = np.abs(amb).reshape(n, k, -1).max(axis=(1, 2), initial=0.0) > determined_tol
    determined = (strip.h > strip.strip_tol) & ~undetermined
    return StripSolution(
        v=v, strip=strip, weak_residual=float(res), condition=float(sa[0] / sa[rank - 1]),
        space_dim=U.shape[1], determined=determined, rank=rank, norms=norms,
    )


def energy_estimate_check(solution, gamma):
    """Check ``||v||_{L2(L)} <= Gamma ||Delta v||_{L2(L)}`` over the constrained basis.

    Returns a dict with the empirical worst ratio, ``Gamma`` and the verdict.
    """
    ratio = solution.norms.get("basis_ratio", math.nan)
    return {"gamma": gamma, "max_ratio": ratio, "ok": bool(ratio <= gamma),
            "s": solution.strip.s, "t": solution.strip.t}


# ---------------------------------------------------------------------------
# global solutions


def strip_bounds(foliation):
    """Largest strip on which the weak system is consistent on finite M.

    ``s >= tau_min + delta`` keeps the bottom layer in ``{eta_s = 1}`` and
    ``t <= tau_max`` keeps ``eta_t`` below one on the top layer.
    """
    return float(foliation.tau.min() + foliation.delta), float(foliation.tau.max())


def nested_schedule(foliation, step=2.0, min_fraction=1.0 / 3.0):
    """Nested strips ``(lo + j step, hi - j step)`` shrinking from :func:`strip_bounds`.

    Anchoring at the bounds keeps the strip edges at the same offsets from
    the layer positions as the outermost strip; offsets in between make the
    weak system nearly degenerate on lattices. Returned innermost first.
    """
    lo, hi = strip_bounds(foliation)
    width = hi - lo
    out = []
    j = 0
    while j == 0 or width - 2 * j * step >= min_fraction * width:
        out.append((lo + j * step, hi - j * step))
        j += 1
    return out[::-1]


@dataclass
class GlobalSolution:
    """Limit of nested strip solutions with the sign convention ``S w = -lim v``.

    Attributes
    ----------
    values : numpy.ndarray, shape (n k, q)
    valid : numpy.ndarray of bool, shape (n,)
        Points where the value is fixed by the weak equations or lies in the
        past of the final strip.
    source_ok : numpy.ndarray of bool, shape (q,)
        Sources lying in the interior of the final strip.
    log : list of dict
        Per-strip ``s, t, delta`` (max change on the commonly determined region).
    """

    values: np.ndarray
    valid: np.ndarray
    source_ok: np.ndarray
    log: list
    final: StripSolution
    foliation: str


def _interior(strip, tol=1e-12):
    return strip.h >= 1.0 - tol


def global_retarded(w, delta, assembler, foliation, schedule=None, *, solver=None):
    """Global retarded solution ``S^wedge w`` by nested strip stabilization.

    Parameters
    ----------
    w : numpy.ndarray, shape (n k,) or (n k, q)
        Sources in reduced coordinates.
    schedule : list of (s, t), optional
        Nested strips; default :func:`nested_schedule`.
    solver : dict, optional
        ``null_tol``, ``solve_tol``, ``stabilize_tol``, ``strip_tol``, ``strip_step``.

    Returns
    -------
    GlobalSolution

    Raises
    ------
    ShieldingNotObservedError
        If the last two strips disagree by more than ``stabilize_tol``
        (relative) on their commonly determined region.
    """
    opts = {"null_tol": 1e-10, "solve_tol": 1e-10, "stabilize_tol": 1e-10,
            "strip_tol": 1e-12, "strip_step": 2.0}
    opts.update(solver or {})
    W = np.atleast_2d(np.asarray(w, dtype=float).T).T
    k = delta.basis.k
    n = delta.n
    if schedule is None:
        schedule = nested_schedule(foliation, opts["strip_step"])
    src_pts = np.abs(W).reshape(n, k, -1).max(axis=1) > 0
    log, prev, prev_ok = [], None, None
    scale = 0.0
    sol = None
    for idx, (s, t) in enumerate(schedule):
        strip = TimeStrip(foliation, s, t, opts["strip_tol"])
        sol = solve_strip_retarded(strip, W, delta, assembler, null_tol=opts["null_tol"],
                                   solve_tol=opts["solve_tol"])
        interior = _interior(strip)
        ok = ~np.any(src_pts & ~interior[:, None], axis=0)
        scale = max(scale, float(np.abs(sol.v[:, ok]).max(initial=0.0)))
        entry = {"strip": idx, "s": s, "t": t, "space_dim": sol.space_dim,
                 "weak_residual": sol.weak_residual, "condition": sol.condition,
                 "basis_ratio": sol.norms.get("basis_ratio", math.nan),
                 "delta": float("nan")}
        if prev is not None:
            common = _rep(prev.determined & sol.determined, k)
            both = ok & prev_ok
            if both.any() and common.any():
                diff = np.abs(sol.v[common][:, both] - prev.v[common][:, both]).max()
                entry["delta"] = float(diff / max(scale, 1e-300))
        log.append(entry)
        prev, prev_ok = sol, ok
    if len(log) > 1:
        last = log[-1]["delta"]
        if not (last <= opts["stabilize_tol"]):
            raise ShieldingNotObservedError(
                f"shielding not observed: last strip delta {last:.3e} exceeds "
                f"{opts['stabilize_tol']:.1e}", log)
    past = foliation.eta(schedule[-1][0]) >= 1.0
    valid = sol.determined | (past & (sol.strip.h <= opts["strip_tol"]))
    return GlobalSolution(-sol.v, valid, prev_ok, log, sol, foliation.name)


def global_advanced(w, delta, assembler, foliation, schedule=None, *, solver=None):
    """Global advanced solution ``S^vee w``: the retarded construction for the
    time-reversed foliation ``eta'_t = 1 - eta_{-t}``."""
    return global_retarded(w, delta, assembler, foliation.reversed(), schedule, solver=solver)


# ---------------------------------------------------------------------------
# Green's operators


@dataclass
class GreenOperators:
    """Retarded, advanced and causal Green's operators in reduced coordinates.

    ``S_ret[:, j]`` is ``S^wedge`` applied to basis jet ``j``; ``G = S_ret - S_adv``.

    Attributes
    ----------
    valid : numpy.ndarray of bool, shape (n,)
        Points where both retarded and advanced values are determined.
    source_ok : numpy.ndarray of bool, shape (n k,)
        Basis sources admissible for both constructions.
    """

    S_ret: np.ndarray
    S_adv: np.ndarray
    G: np.ndarray
    valid_ret: np.ndarray
    valid_adv: np.ndarray
    source_ok: np.ndarray
    log_ret: list
    log_adv: list
    foliation: str
    E: np.ndarray
    Wred: np.ndarray
    k: int

    @property
    def valid(self):
        return self.valid_ret & self.valid_adv

    def window_columns(self, margin_points=None):
        """Basis columns whose support lies in the valid window."""
        ok = self.source_ok & _rep(self.valid, self.k)
        if margin_points is not None:
            ok &= _rep(margin_points, self.k)
        return np.flatnonzero(ok)

    def test_columns(self, points, range_radius):
        """Basis columns whose range neighbourhood lies in the valid window,
        so that ``Delta u`` only sees determined values."""
        inner = interior_of(self.valid, points, range_radius)
        return self.window_columns(inner)

    def full(self, which="G", projector=None):
        """Matrix on full jet coordinates, ``E S Pi`` with ``Pi`` the projection."""
        M = {"G": self.G, "ret": self.S_ret, "adv": self.S_adv}[which]
        if projector is None:
            return self.E @ M
        return self.E @ M @ projector

    def log_rows(self):
        rows = []
        for kind, log in (("retarded", self.log_ret), ("advanced", self.log_adv)):
            for e in log:
                rows.append([kind, e["strip"], e["s"], e["t"], e["delta"]])
        return rows

    def write_log_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "strip", "s", "t", "delta"])
            for r in self.log_rows():
                writer.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3])), repr(float(r[4]))])


def build_green_operators(delta, assembler, foliation, solver=None, schedule=None):
    """Assemble ``S^wedge``, ``S^vee`` and ``G`` columnwise over the basis.

    All basis sources are solved as one batched right-hand side per strip.
    """
    red = delta.reduced()
    nk = red["D"].shape[0]
    I = np.eye(nk)
    ret = global_retarded(I, delta, assembler, foliation, schedule, solver=solver)
    rev = foliation.reversed()
    rsched = None if schedule is None else [(-t - foliation.delta, -s - foliation.delta) for s, t in schedule]
    adv = global_retarded(I, delta, assembler, rev, rsched, solver=solver)
    k = delta.basis.k
    return GreenOperators(
        S_ret=ret.values, S_adv=adv.values, G=ret.values - adv.values,
        valid_ret=ret.valid, valid_adv=adv.valid,
        source_ok=ret.source_ok & adv.source_ok,
        log_ret=ret.log, log_adv=adv.log, foliation=foliation.name,
        E=red["E"], Wred=red["W"], k=k,
    )


def fundamental_solution(green, w):
    """``G w = S^wedge w - S^vee w`` for a reduced source (or batch)."""
    return green.G @ np.asarray(w, dtype=float)


def homogeneity_residual(green, delta, columns, tests):
    """``max |<G w_j, Delta u_i>_{L2}|`` for sources ``j`` and tests ``i``."""
    red = delta.reduced()
    DU = red["D"][:, tests]
    vals = green.G[:, columns].T @ red["W"] @ DU
    return float(np.abs(vals).max(initial=0.0))


def retarded_weak_residual(green, delta, columns, tests):
    """``max |<S^wedge w_j, Delta u_i> + <w_j, u_i>|`` (global weak solution)."""
    red = delta.reduced()
    W = red["W"]
    lhs = green.S_ret[:, columns].T @ W @ red["D"][:, tests]
    rhs = W[np.ix_(columns, tests)]
    return float(np.abs(lhs + rhs).max(initial=0.0))


def adjoint_residual(green, u, v):
    """``|<S^wedge u, v>_{L2} - <u, S^vee v>_{L2}|`` for reduced jets."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    W = green.Wred
    return abs(float((green.S_ret @ u) @ W @ v - u @ W @ (green.S_adv @ v)))


def retardation_residual(green, foliation, columns, which="ret"):
    """Largest value of a unit-source solution on the wrong side of the source.

    For ``which="ret"``: ``max |S^wedge e_j|`` over points with ``eta_t = 1``
    at the largest ``t`` with ``eta_t e_j = 0`` (that is ``t = tau(source)``).
    For ``which="adv"``: ``max |S^vee e_j|`` over points with ``eta_t = 0`` at
    the smallest ``t`` with ``(1 - eta_t) e_j = 0`` (``t = tau + delta``).
    """
    k = green.k
    M = green.S_ret if which == "ret" else green.S_adv
    valid = green.valid_ret if which == "ret" else green.valid_adv
    worst = 0.0
    for c in np.asarray(columns, dtype=int):
        t_src = foliation.tau[c // k]
        if which == "ret":
            side = foliation.eta(t_src) >= 1.0
        else:
            side = foliation.eta(t_src + foliation.delta) <= 0.0
        side &= valid
        vals = np.abs(M[:, c]).reshape(-1, k).max(axis=1)
        worst = max(worst, float(vals[side].max(initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# causal structure


@dataclass
class CausalStructure:
    """Relations generated by a finite family of foliations on a time grid.

    Attributes
    ----------
    foliations : list of Foliation
    t_grids : list of numpy.ndarray
    chronological : numpy.ndarray of bool, shape (n, n)
        ``chronological[x, y]`` iff ``x << y``.
    causal : numpy.ndarray of bool, shape (n, n)
        ``causal[x, y]`` iff ``x < y`` (causally precedes).
    r_K : float
        Radius of the neighbourhoods ``K(W)``.
    """

    foliations: list
    t_grids: list
    chronological: np.ndarray
    causal: np.ndarray
    r_K: float
    points: np.ndarray
    etas: np.ndarray = field(repr=False, default=None)
    labels: list = field(default_factory=list)
    cone_r_K: float = None

    def neighbourhood(self, idx, radius=None):
        """Indices within ``r_K`` (or ``radius``) of the index set (the set ``K(W)``)."""
        idx = np.asarray(idx, dtype=int).reshape(-1)
        r = self.r_K if radius is None else radius
        tree = cKDTree(self.points)
        hits = tree.query_ball_point(self.points[idx], r * (1 + 1e-12))
        return np.unique(np.concatenate([np.asarray(h, dtype=int) for h in hits] + [idx]))

    def future_cone(self, idx, kind="causal"):
        rel = self.causal if kind == "causal" else self.chronological
        return np.flatnonzero(rel[np.asarray(idx, dtype=int)].any(axis=0))

    def past_cone(self, idx, kind="causal"):
        rel = self.causal if kind == "causal" else self.chronological
        return np.flatnonzero(rel[:, np.asarray(idx, dtype=int)].any(axis=1))

    def J(self, idx):
        return np.union1d(self.future_cone(idx), self.past_cone(idx))


def causal_structure(points, foliations, n_t=40, r_K=None, default_range=None):
    """Tabulate chronological and causal relations over foliations and times.

    ``x << y`` iff ``eta_t(x) < 1`` implies ``eta_t(y) = 0`` for all sampled
    ``(eta, t)``; ``x < y`` iff ``eta_t(x) = 0`` implies ``eta_t(y) < 1``.
    """
    pts = np.asarray(points, dtype=float)
    grids, etas, labels = [], [], []
    for fol in foliations:
        grid = fol.t_grid(n_t)
        grids.append(grid)
        for t in grid:
            etas.append(fol.eta(t))
            labels.append((fol.name, float(t)))
    H = np.array(etas)
    lt1 = (H < 1.0).astype(np.int64)
    gt0 = (H > 0.0).astype(np.int64)
    eq0 = (H == 0.0).astype(np.int64)
    eq1 = (H >= 1.0).astype(np.int64)
    chrono = (lt1.T @ gt0) == 0
    causal = (eq0.T @ eq1) == 0
    if r_K is None:
        r_K = (default_range or 0.0) + 2 * max(f.delta for f in foliations)
    return CausalStructure(list(foliations), grids, chrono, causal, float(r_K), pts, H, labels)


def causal_family(points, foliation_cfg):
    """Default foliation family: flat layers of width ``delta`` and ``2 delta``
    plus tilted layers ``tau + kappa (x - x_c)`` for both signs of the tilt."""
    axis = foliation_cfg["time_axis"]
    dl = float(foliation_cfg["delta"])
    kappa = float(foliation_cfg["tilt"])
    fols = [Foliation.from_points(points, axis, dl), Foliation.from_points(points, axis, 2 * dl)]
    if kappa > 0 and np.asarray(points).shape[1] > 1:
        fols.append(Foliation.from_points(points, axis, dl, tilt=kappa))
        fols.append(Foliation.from_points(points, axis, dl, tilt=-kappa))
    return fols


def resolve_radius(value, range_radius, delta):
    """``None`` means ``range_radius + 2 delta``; ``"range"`` means ``range_radius``."""
    if value is None:
        return float(range_radius + 2 * delta)
    if value == "range":
        return float(range_radius)
    return float(value)


def build_causal_structure(measure, kernel, cfg):
    """Causal structure of the support from a resolved configuration."""
    fcfg = cfg["foliation"]
    pts = measure.restricted_to_support().points
    fols = causal_family(pts, fcfg)
    r_K = resolve_radius(cfg["causal"]["r_K"], kernel.range_radius, fcfg["delta"])
    cs = causal_structure(pts, fols, n_t=fcfg["n_t"], r_K=r_K)
    cs.cone_r_K = resolve_radius(cfg["causal"].get("cone_r_K"), kernel.range_radius, fcfg["delta"])
    return cs


def causal_relations(structure, i, j):
    """``{"chronological": i << j, "causal": i < j}``."""
    return {
        "chronological": bool(structure.chronological[i, j]),
        "causal": bool(structure.causal[i, j]),
    }


def causally_disconnected(structure, K, B):
    """``B`` does not meet ``J(K)`` (equivalently ``K`` does not meet ``J(B)``)."""
    return np.intersect1d(structure.J(K), np.asarray(B, dtype=int)).size == 0


def separating_witness(structure, K, B):
    """First ``(foliation, t)`` with ``eta_t = 0`` on ``K(K)`` and ``= 1`` on ``K(B)``."""
    nK = structure.neighbourhood(K)
    nB = structure.neighbourhood(B)
    H = structure.etas
    ok = np.all(H[:, nK] == 0.0, axis=1) & np.all(H[:, nB] >= 1.0, axis=1)
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return None
    name, t = structure.labels[hits[0]]
    return {"foliation": name, "t": t}


def strongly_disconnected(structure, K, B, return_witness=False):
    """Strong causal disconnection ``K _|_ B``.

    Requires causal disconnection and separating layers in both orders over
    the ``r_K``-neighbourhoods.
    """
    K = np.asarray(K, dtype=int).reshape(-1)
    B = np.asarray(B, dtype=int).reshape(-1)
    result, witness = False, None
    if np.intersect1d(K, B).size == 0 and causally_disconnected(structure, K, B):
        w1 = separating_witness(structure, K, B)
        w2 = separating_witness(structure, B, K)
        if w1 is not None and w2 is not None:
            result, witness = True, {"K_future": w1, "B_future": w2}
    return (result, witness) if return_witness else result


def strong_causal_cone(structure, K, radius=None):
    """``J_S(K) = M \\ {y : {y} _|_ K}`` as a boolean mask.

    ``radius`` overrides the neighbourhood radius; by default the structure's
    ``cone_r_K`` is used when set, else ``r_K``.
    """
    K = np.asarray(K, dtype=int).reshape(-1)
    n = structure.points.shape[0]
    H = structure.etas
    if radius is None:
        radius = structure.cone_r_K if structure.cone_r_K is not None else structure.r_K
    nK = structure.neighbourhood(K, radius)
    zero_K = np.all(H[:, nK] == 0.0, axis=1)
    one_K = np.all(H[:, nK] >= 1.0, axis=1)
    JK = np.zeros(n, dtype=bool)
    JK[structure.J(K)] = True
    tree = cKDTree(structure.points)
    hits = tree.query_ball_point(structure.points, radius * (1 + 1e-12))
    cone = np.ones(n, dtype=bool)
    for y in range(n):
        if JK[y] or y in K:
            continue
        ny = np.asarray(hits[y], dtype=int)
        one_y = np.all(H[:, ny] >= 1.0, axis=1)
        zero_y = np.all(H[:, ny] == 0.0, axis=1)
        if np.any(zero_K & one_y) and np.any(zero_y & one_K):
            cone[y] = False
    return cone


# ---------------------------------------------------------------------------
# time slice


def interior_of(mask, points, radius):
    """Points of ``mask`` whose ``radius``-neighbourhood stays inside ``mask``."""
    pts = np.asarray(points, dtype=float)
    tree = cKDTree(pts)
    out = np.zeros(len(pts), dtype=bool)
    for i in np.flatnonzero(mask):
        out[i] = bool(np.all(mask[tree.query_ball_point(pts[i], radius * (1 + 1e-12))]))
    return out


def delta_contained(inner_mask, outer_mask, points, range_radius):
    """Margin check: every point within ``range_radius`` of the inner set lies
    in the outer set. Returns ``(ok, shortfall)``."""
    pts = np.asarray(points, dtype=float)
    tree = cKDTree(pts)
    inner = np.flatnonzero(inner_mask)
    reach = tree.query_ball_point(pts[inner], range_radius * (1 + 1e-12))
    reached = np.unique(np.concatenate([np.asarray(r, dtype=int) for r in reach] + [inner]))
    missing = reached[~outer_mask[reached]]
    return missing.size == 0, int(missing.size)


@dataclass
class TimeSliceResult:
    """Representative ``v'`` of a source inside the outer strip."""

    v_prime: np.ndarray
    t_cut: float
    outside_support: float
    pairing_residual: float
    inner_members: np.ndarray
    outer_members: np.ndarray


def time_slice_representative(v, inner, outer, delta, green, foliation, range_radius,
                              tests=None, t_cut=None):
    """Move a source into the outer strip by a cutoff of its causal solution.

    With ``pi = eta_{t'}`` for ``t'`` in ``[s + delta, t - delta]`` of the
    inner strip (a cutoff in the inner strip), ``v' = Delta(pi G v)``,
    evaluated as the commutator ``Delta(pi G v) - pi Delta(G v)``, is
    supported in the range neighbourhood of the inner strip and
    ``G v' = G v`` on the window.

    Parameters
    ----------
    v : numpy.ndarray, shape (n k,)
        Source in reduced coordinates.
    inner, outer : TimeStrip
        ``inner`` must be Delta-contained in ``outer``.
    tests : array_like of int, optional
        Basis columns for the pairing check (default: the valid window).

    Raises
    ------
    DeltaContainmentError
        If the range neighbourhood of the inner strip leaves the outer strip.
    """
    k = green.k
    pts = delta.table.points
    ok, missing = delta_contained(inner.h > inner.strip_tol, outer.h > outer.strip_tol, pts, range_radius)
    lo, hi = inner.s + foliation.delta, inner.t - foliation.delta
    if not ok or lo > hi:
        raise DeltaContainmentError(
            f"inner strip [{inner.s:g}, {inner.t:g}] is not Delta-contained in "
            f"[{outer.s:g}, {outer.t:g}]: {missing} range points outside, cutoff interval "
            f"[{lo:g}, {hi:g}]")
    if t_cut is None:
        t_cut = 0.5 * (lo + hi)
    red = delta.reduced()
    Gv = green.G @ v
    pi = _rep(foliation.eta(t_cut), k)
    # commutator form: Delta(G v) = 0 on the window, and subtracting it removes
    # the undetermined values of G v outside the window
    vp = red["D"] @ (pi * Gv) - pi * (red["D"] @ Gv)
    outer_mask = _rep(outer.h > outer.strip_tol, k)
    outside = float(np.abs(vp[~outer_mask]).max(initial=0.0))
    if tests is None:
        tests = green.window_columns()
    diff = green.G @ (vp - v)
    pair = float(np.abs((red["W"] @ diff)[tests]).max(initial=0.0))
    return TimeSliceResult(vp, float(t_cut), outside, pair,
                           inner.member_indices, outer.member_indices)
