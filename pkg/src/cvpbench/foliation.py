"""Foliations, time strips, surface-layer forms, energy identity and hyperbolicity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .jets import PairTable, _coords, blockdiag, delta2_values, offdiag_K
from .profile import smooth_step


@dataclass(frozen=True, eq=False)
class Foliation:
    """Smooth cutoff family ``eta_t(x) = S((t - tau(x)) / delta)``.

    ``eta_t = 1`` in the past of the layer and ``0`` in its future;
    ``theta_t = d eta_t / dt = S' / delta``.

    Parameters
    ----------
    tau : array_like, shape (n,)
        Time function on the support.
    delta : float
        Layer width.
    name : str
        Identifier used in reports.
    """

    tau: np.ndarray
    delta: float
    name: str = "flat"

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float, copy=True).reshape(-1)
        if not self.delta > 0:
            raise ValueError("foliation width must be positive")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @classmethod
    def from_points(cls, points, time_axis=0, delta=2.0, tilt=0.0, center=None, name=None):
        """Time coordinate plus an optional linear tilt in the other axes."""
        pts = np.asarray(points, dtype=float)
        tau = pts[:, time_axis].copy()
        if tilt:
            other = [k for k in range(pts.shape[1]) if k != time_axis]
            if center is None:
                center = 0.5 * (pts[:, other].min(axis=0) + pts[:, other].max(axis=0))
            tau = tau + tilt * (pts[:, other] - center).sum(axis=1)
        if name is None:
            name = f"flat(delta={delta:g})" if not tilt else f"tilt({tilt:+g},delta={delta:g})"
        return cls(tau, delta, name)

    def eta(self, t):
        return smooth_step((t - self.tau) / self.delta)[0]

    def theta(self, t):
        return smooth_step((t - self.tau) / self.delta)[1] / self.delta

    def dtheta(self, t):
        return smooth_step((t - self.tau) / self.delta)[2] / self.delta**2

    def reversed(self):
        """Time-reversed foliation with ``eta'_t = 1 - eta_{-t}``."""
        return Foliation(-self.tau - self.delta, self.delta, f"reversed[{self.name}]")

    def window(self):
        """Times at which some surface layer meets the support."""
        return float(self.tau.min()), float(self.tau.max() + self.delta)

    def t_grid(self, n_t=40):
        lo, hi = self.window()
        return np.linspace(lo, hi, n_t)

    def check(self, n_t=40):
        """Sampled invariants: range of eta, theta >= 0, coverage.

        Returns
        -------
        dict
            ``eta_min``, ``eta_max``, ``theta_min``, ``uncovered`` (count of
            points with theta = 0 at every grid time) and the sampled window.
        """
        grid = self.t_grid(n_t)
        etas = np.array([self.eta(t) for t in grid])
        thetas = np.array([self.theta(t) for t in grid])
        return {
            "eta_min": float(etas.min()),
            "eta_max": float(etas.max()),
            "theta_min": float(thetas.min()),
            "uncovered": int(np.sum(thetas.max(axis=0) <= 0)),
            "window": [float(grid[0]), float(grid[-1])],
        }

    def separation_residual(self, s1, s2, K):
        """``max |eta_s1 eta_s2 - eta_s2|`` when ``eta_s1 = 1`` and ``eta_s2 = 0`` on K."""
        e1, e2 = self.eta(s1), self.eta(s2)
        return float(np.abs(e1 * e2 - e2).max())


@dataclass(frozen=True, eq=False)
class TimeStrip:
    """Region swept by the surface layers between times ``s <= t``.

    Attributes
    ----------
    h : numpy.ndarray
        Strip weight ``eta_t - eta_s``.
    member_indices : numpy.ndarray
        Points with ``h > strip_tol``.
    """

    foliation: Foliation
    s: float
    t: float
    strip_tol: float = 1e-12
    h: np.ndarray = field(init=False)
    member_indices: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.s > self.t:
            raise ValueError("time strip needs s <= t")
        h = self.foliation.eta(self.t) - self.foliation.eta(self.s)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "member_indices", np.flatnonzero(h > self.strip_tol))


@dataclass(frozen=True, eq=False)
class SurfaceForms:
    """Surface-layer inner product ``P`` and symplectic form ``Sigma`` at time t.

    Both act on full jet coordinates; ``P`` is block diagonal.
    """

    t: float
    P: np.ndarray
    Sigma: np.ndarray
    Pblocks: np.ndarray
    foliation_name: str = ""

    def inner(self, u, v):
        return float(_coords(u) @ self.P @ _coords(v))

    def sigma(self, u, v):
        return float(_coords(u) @ self.Sigma @ _coords(v))

    def reduced(self, E):
        return E.T @ self.P @ E, E.T @ self.Sigma @ E


class FormAssembler:
    """Caches pair blocks so that forms at many times are cheap.

    Parameters
    ----------
    measure, kernel
        Scenario data.
    table : PairTable, optional
    """

    def __init__(self, measure=None, kernel=None, table=None):
        self.table = table or PairTable.build(measure, kernel)
        self._Koff = None

    @property
    def Koff(self):
        if self._Koff is None:
            self._Koff = offdiag_K(self.table)
        return self._Koff

    def P_blocks(self, eta):
        """``P_z = w_z sum_y w_y (eta(z) - eta(y)) B11(z, y)``."""
        tb = self.table
        coef = tb.pair_weights() * (eta[tb.I] - eta[tb.J])
        out = np.zeros((tb.n, tb.d, tb.d))
        _backend.scatter_diag_blocks(out, tb.I, coef, tb.B11)
        return out

    def Sigma(self, eta):
        """``Sigma[x, y] = w_x w_y (eta(x) - eta(y)) B12(x, y)``."""
        H = np.repeat(eta, self.table.d)
        return H[:, None] * self.Koff - self.Koff * H[None, :]

    def forms(self, foliation, t):
        eta = foliation.eta(t)
        Pb = self.P_blocks(eta)
        return SurfaceForms(float(t), blockdiag(Pb), self.Sigma(eta), Pb, foliation.name)


def _assembler(measure, kernel, assembler):
    return assembler if assembler is not None else FormAssembler(measure, kernel)


def surface_inner(measure, kernel, foliation, t, u, v, assembler=None):
    """Surface-layer inner product ``(u, v)^t``.

    ``sum_x sum_y w_x w_y eta_t(x) (1 - eta_t(y))
    (nabla_{1,u} nabla_{1,v} - nabla_{2,u} nabla_{2,v}) L(x, y)``.
    """
    asm = _assembler(measure, kernel, assembler)
    tb = asm.table
    Pb = asm.P_blocks(foliation.eta(t))
    a = _coords(u).reshape(tb.n, tb.d)
    b = _coords(v).reshape(tb.n, tb.d)
    return float(np.einsum("ni,nij,nj->", a, Pb, b))


def symplectic_form(measure, kernel, foliation, t, u, v, assembler=None):
    """Symplectic form ``sigma^t(u, v)``.

    ``sum_x sum_y w_x w_y eta_t(x) (1 - eta_t(y))
    (nabla_{1,u} nabla_{2,v} - nabla_{1,v} nabla_{2,u}) L(x, y)``.
    """
    asm = _assembler(measure, kernel, assembler)
    return float(_coords(u) @ asm.Sigma(foliation.eta(t)) @ _coords(v))


def energy_identity_terms(asm, s_param, foliation, v, t, dt):
    """Finite-difference and closed-form sides of the energy identity."""
    tb = asm.table
    vc = _coords(v)
    vt = vc.reshape(tb.n, tb.d)

    def energy(tt):
        Pb = asm.P_blocks(foliation.eta(tt))
        return float(np.einsum("ni,nij,nj->", vt, Pb, vt))

    lhs = (energy(t + dt) - energy(t - dt)) / (2 * dt)
    theta = foliation.theta(t)
    from .jets import _assemble_K

    K = _assemble_K(tb, s_param)
    Kv = (K @ vc).reshape(tb.n, tb.d)
    pair_term = 2.0 * float(np.sum(theta * np.einsum("ni,ni->n", vt, Kv)))
    d2 = delta2_values(tb, s_param, vc, vc)
    d2_term = float(np.sum(theta * tb.weights * d2))
    b2_term = s_param * float(np.sum(theta * tb.weights * vt[:, 0] ** 2))
    rhs = pair_term - d2_term + b2_term
    return lhs, rhs, abs(pair_term) + abs(d2_term) + abs(b2_term)


def energy_identity_residual(measure, kernel, foliation, config, v, t, dt, assembler=None):
    """``|d/dt (v, v)^t - [2 <v, Delta v>_t - Delta2[v, v]_t + s (b^2)_t]|``.

    Subscript ``t`` denotes integration against ``theta_t drho``; the time
    derivative is a central difference with step ``dt``.
    """
    asm = _assembler(measure, kernel, assembler)
    lhs, rhs, _ = energy_identity_terms(asm, float(config.s_param), foliation, v, t, dt)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# hyperbolicity


@dataclass
class HyperbolicityResult:
    """Outcome of :func:`hyperbolicity_constant`.

    ``C`` is ``None`` when the check fails; ``reason`` explains why.
    """

    C: float | None
    t_grid: list
    min_ratio_per_t: list
    reason: str = ""
    foliation: str = ""

    @property
    def ok(self):
        return self.C is not None

    def to_dict(self):
        return {
            "C": self.C,
            "status": "ok" if self.ok else "FAILURE",
            "reason": self.reason,
            "foliation": self.foliation,
            "t_grid": [float(t) for t in self.t_grid],
            "min_ratio_per_t": [float(r) for r in self.min_ratio_per_t],
        }


def _pencil_min(Pz, Qz, tol, scale):
    """Infimum of ``x^T P x / x^T Q x`` over ``x`` with ``x^T Q x > 0``.

    Eigenvalues below ``tol * scale`` count as zero. Returns ``-inf`` if the
    quotient is unbounded below.
    """
    ql, qv = np.linalg.eigh(Qz)
    rng = ql > tol * scale
    if not rng.any():
        pl = np.linalg.eigvalsh(Pz)
        return np.inf if pl.min() >= -tol * scale else -np.inf
    Pt = qv.T @ Pz @ qv
    R, N = np.flatnonzero(rng), np.flatnonzero(~rng)
    Prr = Pt[np.ix_(R, R)]
    if N.size:
        Pnn = Pt[np.ix_(N, N)]
        Prn = Pt[np.ix_(R, N)]
        nl, nv = np.linalg.eigh(Pnn)
        if nl.min() < -tol * scale:
            return -np.inf
        pos = nl > tol * scale
        coup = Prn @ nv[:, ~pos]
        if np.abs(coup).max(initial=0.0) > 1e-9 * scale:
            return -np.inf
        Prn = Prn @ nv[:, pos]
        Prr = Prr - Prn @ np.diag(1.0 / nl[pos]) @ Prn.T
    qs = 1.0 / np.sqrt(ql[R])
    return float(np.linalg.eigvalsh(qs[:, None] * Prr * qs[None, :]).min())


def hyperbolicity_blocks(asm, s_param, foliation, basis, metric_blocks, t):
    """Per-point reduced blocks ``P_x`` and majorant ``Q_x`` at time t."""
    tb = asm.table
    n = tb.n
    Ed = basis.directions
    eta = foliation.eta(t)
    theta = foliation.theta(t)
    Pb = asm.P_blocks(eta)
    Pr = np.einsum("ndk,nde,nel->nkl", Ed, Pb, Ed)
    tw = theta * tb.weights
    Gr = np.einsum("ndk,nde,nel->nkl", Ed, metric_blocks, Ed)
    e0 = Ed[:, 0, :]
    Q = tw[:, None, None] * (Gr + s_param * np.einsum("nk,nl->nkl", e0, e0))
    # |Delta2[v, v](x)| <= sum_y w_y |.| with |a b| <= (a^2 + b^2) / 2 per entry
    I, J = tb.I, tb.J
    coef = tw[I] * tb.weights[J]
    EI, EJ = Ed[I], Ed[J]
    A11 = np.abs(np.einsum("pdk,pde,pel->pkl", EI, tb.B11, EI))
    A12 = np.abs(np.einsum("pdk,pde,pel->pkl", EI, tb.B12, EJ))
    A22 = np.abs(np.einsum("pdk,pde,pel->pkl", EJ, tb.B22, EJ))
    k = Ed.shape[2]
    diagI = A11.sum(axis=2) + A12.sum(axis=2)
    diagJ = A22.sum(axis=2) + A12.sum(axis=1)
    maj = np.zeros((n, k))
    # the two cross terms (B12 and its transpose) each contribute half
    # row sums at x and half column sums at y; together a full share each
    np.add.at(maj, I, coef[:, None] * diagI)
    np.add.at(maj, J, coef[:, None] * diagJ)
    Q[:, np.arange(k), np.arange(k)] += maj
    return Pr, Q


def hyperbolicity_constant(measure, kernel, foliation, basis, T_window=None, *,
                           metric_blocks=None, s_param=None, n_t=40, tol=1e-10,
                           assembler=None):
    """Quantitative hyperbolicity check on a sampled time grid.

    For every sampled ``t`` the smallest ratio of ``(v, v)^t`` to a quadratic
    majorant of ``int (||v||^2 + |Delta2[v, v]|) d rho_t`` is computed by
    per-point generalized eigenproblems over the active span.

    Parameters
    ----------
    T_window : (float, float), optional
        Sampled time interval; defaults to the foliation window.
    metric_blocks : numpy.ndarray, shape (n, d, d)
    s_param : float
    tol : float
        Relative threshold (against the largest block entry at each ``t``)
        below which eigenvalues of ``P`` and of the majorant count as zero.

    Returns
    -------
    HyperbolicityResult
        ``C = 1 / min ratio`` or FAILURE (``C is None``).
    """
    asm = _assembler(measure, kernel, assembler)
    tb = asm.table
    if metric_blocks is None:
        metric_blocks = np.broadcast_to(np.eye(tb.d), (tb.n, tb.d, tb.d))
    if s_param is None:
        from .action_el import fit_s

        s_param = fit_s(measure, kernel)[0]
    lo, hi = T_window if T_window is not None else foliation.window()
    grid = np.linspace(lo, hi, n_t)
    ratios = []
    reason = ""
    for t in grid:
        Pr, Q = hyperbolicity_blocks(asm, s_param, foliation, basis, metric_blocks, t)
        if np.abs(Pr).max() == 0 and np.abs(Q).max() == 0:
            ratios.append(np.inf)
            continue
        scale = max(np.abs(Pr).max(), np.abs(Q).max())
        r = min(_pencil_min(Pr[x], Q[x], tol, scale) for x in range(tb.n))
        ratios.append(r)
        if not r > 0 and not reason:
            reason = f"surface-layer form not positive at t={t:.6g} (min ratio {r:.3e})"
    finite = [r for r in ratios if np.isfinite(r)]
    if reason:
        return HyperbolicityResult(None, list(grid), ratios, reason, foliation.name)
    if not finite:
        return HyperbolicityResult(None, list(grid), ratios, "all forms vanish on the sampled grid", foliation.name)
    C = 1.0 / min(finite)
    return HyperbolicityResult(C, list(grid), ratios, "", foliation.name)


def energy_gamma(C, s, t, s_param):
    """``Gamma = 2 C exp(2 C^2 (1 + s_param^2 / 2)(t - s)) (t - s)``.

    Evaluated in log space; returns ``inf`` on overflow.
    """
    if not C > 0 or t < s:
        raise ValueError("energy_gamma needs C > 0 and t >= s")
    L = t - s
    if L == 0:
        return 0.0
    log_g = math.log(2 * C) + 2 * C * C * (1 + 0.5 * s_param * s_param) * L + math.log(L)
    if log_g > 709.0:
        return math.inf
    return math.exp(log_g)


# ---------------------------------------------------------------------------
# Green's formula


def greens_formula_terms(delta, forms_t, forms_s, strip, u, v):
    """The four terms ``<u, Dv>_h, <Du, v>_h, sigma^t(u, v), sigma^s(u, v)``."""
    uc, vc = _coords(u), _coords(v)
    H = np.repeat(strip.h, delta.d)
    Wh = H[:, None] * delta.W
    lhs = float(uc @ Wh @ (delta.matrix @ vc))
    rhs = float((delta.matrix @ uc) @ Wh @ vc)
    return lhs, rhs, forms_t.sigma(uc, vc), forms_s.sigma(uc, vc)


def greens_formula_residual(measure, kernel, foliation, strip, u, v, *, delta, assembler=None):
    """Absolute residual of Green's formula on a time strip.

    ``<u, Delta v>_{L2(L)} - <Delta u, v>_{L2(L)} - sigma^t(u, v) + sigma^s(u, v)``
    where ``L2(L)`` weights by ``eta_t - eta_s``. ``u`` and ``v`` must lie in
    the active span of ``delta``.
    """
    asm = _assembler(measure, kernel, assembler)
    a, b, st, ss = greens_formula_terms(
        delta, asm.forms(foliation, strip.t), asm.forms(foliation, strip.s), strip, u, v
    )
    return abs(a - b - st + ss)
