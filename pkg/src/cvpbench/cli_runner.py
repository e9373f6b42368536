"""Pipeline orchestration, artifacts and the ``cvp`` command line."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import click
import numpy as np

from . import cauchy_green as cg
from . import config as config_mod
from . import qft_state as qs
from .action_el import ActionConfig, el_report, minimize_action, perturbed_gaussian
from .exceptions import ConfigError, CVPError, StageFailure
from .foliation import (
    Foliation,
    FormAssembler,
    TimeStrip,
    energy_gamma,
    energy_identity_terms,
    greens_formula_terms,
    hyperbolicity_constant,
)
from .jets import PairTable, TestJetBasis, assemble_delta, save_matrix, variation_check
from .space_measure import build_scenario

STAGES = ("minimize", "verify-el", "assemble-delta", "surface-forms", "greens", "algebra", "state")
DYNAMICS = ("greens", "algebra", "state")
RUN_ROOT_ENV = "CVP_RUN_ROOT"

PASS, FAIL, SKIP, REPORT = "pass", "fail", "skipped", "report"


# ---------------------------------------------------------------------------
# serialization helpers


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _criterion(value, tol, ok=None, **extra):
    ok = bool(value <= tol) if ok is None else bool(ok)
    return dict({"value": value, "tol": tol, "pass": ok}, **extra)


# ---------------------------------------------------------------------------
# manifest


@dataclass
class StageResult:
    """Outcome of one pipeline stage."""

    name: str
    status: str = PASS
    residuals: dict = field(default_factory=dict)
    criteria: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    message: str = ""
    wall_time: float = 0.0

    def to_dict(self, timings=True):
        d = {
            "name": self.name,
            "status": self.status,
            "residuals": self.residuals,
            "criteria": self.criteria,
            "artifacts": list(self.artifacts),
            "message": self.message,
        }
        if timings:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class RunManifest:
    """Scenario id, config hash and ordered stage results of one run."""

    scenario: str
    config_hash: str
    run_dir: str
    stages: list = field(default_factory=list)

    @property
    def stage_names(self):
        return [s.name for s in self.stages]

    def stage(self, name):
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def exit_code(self):
        statuses = [s.status for s in self.stages]
        if FAIL in statuses:
            return 1
        if SKIP in statuses:
            return 2
        return 0

    def criteria(self):
        out = {}
        for s in self.stages:
            for cid, c in s.criteria.items():
                out[cid] = dict(c, stage=s.name)
        return out

    def to_dict(self, timings=True):
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "stages": [s.to_dict(timings) for s in self.stages],
            "exit_code": self.exit_code,
        }

    def write(self):
        write_json(Path(self.run_dir) / "manifest.json", self.to_dict(True))
        write_json(Path(self.run_dir) / "manifest_core.json", self.to_dict(False))


# ---------------------------------------------------------------------------
# shared computation context


class Context:
    """Lazily built scenario objects shared by the stages of one run."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._greens = {}
        self._hyp = {}

    @cached_property
    def scenario(self):
        return build_scenario(self.cfg)

    @property
    def measure(self):
        return self.scenario[0]

    @property
    def kernel(self):
        return self.scenario[1]

    @property
    def metric(self):
        return self.scenario[2]

    @cached_property
    def action_config(self):
        return ActionConfig.from_config(self.cfg, self.measure, self.kernel)

    @cached_property
    def basis(self):
        return TestJetBasis.from_config(self.cfg, self.measure.n, self.measure.dimension)

    @cached_property
    def table(self):
        return PairTable.build(self.measure, self.kernel)

    @cached_property
    def delta(self):
        return assemble_delta(self.measure, self.kernel, self.metric, self.basis,
                              self.action_config, table=self.table)

    @cached_property
    def assembler(self):
        return FormAssembler(table=self.table)

    @cached_property
    def foliations(self):
        """The two flat foliations (widths delta and 2 delta) used for dynamics."""
        f = self.cfg["foliation"]
        pts = self.measure.points
        return [Foliation.from_points(pts, f["time_axis"], f["delta"]),
                Foliation.from_points(pts, f["time_axis"], 2 * f["delta"])]

    @cached_property
    def family(self):
        return cg.causal_family(self.measure.points, self.cfg["foliation"])

    def hyperbolicity(self, fol):
        if fol.name not in self._hyp:
            self._hyp[fol.name] = hyperbolicity_constant(
                self.measure, self.kernel, fol, self.basis,
                metric_blocks=self.metric.blocks, s_param=self.action_config.s_param,
                n_t=self.cfg["foliation"]["n_t"], assembler=self.assembler)
        return self._hyp[fol.name]

    @property
    def primary_ok(self):
        return self.hyperbolicity(self.foliations[0]).ok

    def green(self, fol):
        if fol.name not in self._greens:
            self._greens[fol.name] = cg.build_green_operators(
                self.delta, self.assembler, fol, self.cfg["solver"])
        return self._greens[fol.name]

    @cached_property
    def causal(self):
        return cg.build_causal_structure(self.measure, self.kernel, self.cfg)

    @cached_property
    def field_space(self):
        return qs.build_field_space(self.green(self.foliations[0]))

    def point_index(self, coords):
        pts = self.measure.points
        d = np.linalg.norm(pts - np.asarray(coords, dtype=float)[None, :], axis=1)
        return int(np.argmin(d))


# ---------------------------------------------------------------------------
# stages


def _rng(cfg, salt):
    return np.random.default_rng([int(cfg["seed"]), salt])


def stage_minimize(ctx, out, res):
    cfg = ctx.cfg
    ac = ctx.action_config
    if cfg["scenario"] == "gaussian_example":
        start = perturbed_gaussian(ctx.measure, 0.1)
        final, trace = minimize_action(start, ctx.kernel, ac)
        acts = trace.actions
        monotone = bool(np.all(np.diff(acts) <= 0))
        max_y = float(np.abs(final.points[:, 1]).max())
        res.residuals.update(max_abs_y=max_y, monotone=monotone, status=trace.status,
                             iterations=len(trace.rows) - 1, final_action=float(acts[-1]),
                             volume_error=abs(final.total_volume - ac.volume))
        res.criteria["2"] = _criterion(max_y, 1e-3, ok=(max_y <= 1e-3 and monotone),
                                       monotone=monotone)
        res.status = PASS if res.criteria["2"]["pass"] else FAIL
    else:
        ac_short = ActionConfig(**{**ac.__dict__, "max_iters": min(ac.max_iters, 20)})
        final, trace = minimize_action(ctx.measure, ctx.kernel, ac_short)
        acts = trace.actions
        res.residuals.update(initial_action=float(acts[0]), final_action=float(acts[-1]),
                             monotone=bool(np.all(np.diff(acts) <= 0)), status=trace.status,
                             iterations=len(trace.rows) - 1)
        res.status = REPORT
        res.message = "report only: downstream stages use the scenario measure"
    trace.to_csv(out / "trace.csv")
    final.to_csv(out / "measure.csv")
    res.artifacts += ["trace.csv", "measure.csv"]


def stage_verify_el(ctx, out, res):
    cfg = ctx.cfg
    rep = el_report(ctx.measure, ctx.kernel, ctx.action_config, ctx.basis)
    res.residuals.update(rep.to_dict())
    if cfg["el"]["report_only"]:
        res.status = REPORT
        res.message = "report only: the scenario measure is not a critical point"
    else:
        tol = cfg["el"]["ell_tol"]
        ok_ell = rep.max_abs_ell_on_M <= tol
        crit = {"ell_interior": rep.max_abs_ell_on_M, "ell_tol": tol}
        ok_probe = True
        if cfg["el"]["probe_reference"] is not None:
            ok_probe = rep.probe_max_deviation <= cfg["el"]["probe_tol"]
            crit.update(probe_deviation=rep.probe_max_deviation, probe_tol=cfg["el"]["probe_tol"])
        ok = bool(ok_ell and ok_probe)
        if cfg["scenario"] == "gaussian_example":
            res.criteria["1"] = _criterion(rep.max_abs_ell_on_M, tol, ok=ok, **crit)
        res.status = PASS if ok else FAIL
    write_json(out / "el_report.json", rep.to_dict())
    res.artifacts.append("el_report.json")


def stage_assemble_delta(ctx, out, res):
    D = ctx.delta
    red = D.reduced()
    rng = _rng(ctx.cfg, 3)
    v = rng.standard_normal(D.matrix.shape[0]) * np.repeat(rng.random(D.n) < 0.3, D.d)
    v = D.basis.matrix() @ (D.project() @ v)
    e1 = variation_check(ctx.measure, ctx.kernel, ctx.action_config, v, 1e-3, ctx.basis)
    e2 = variation_check(ctx.measure, ctx.kernel, ctx.action_config, v, 5e-4, ctx.basis)
    ratio = e1 / e2 if e2 > 0 else math.inf
    sym = float(np.abs(D.K - D.K.T).max())
    res.residuals.update(s_param=D.s_param, n=D.n, d=D.d, k=D.basis.k,
                         variation_mismatch=[e1, e2], variation_ratio=ratio,
                         K_symmetry=sym, metadata=D.metadata)
    res.status = PASS if (ratio > 2.0 and sym <= 1e-12 * np.abs(D.K).max()) else FAIL
    save_matrix(out / "delta.cvpm", D.matrix, dict(D.metadata, stage="assemble-delta"))
    save_matrix(out / "delta_reduced.cvpm", red["D"], dict(D.metadata, stage="assemble-delta"))
    res.artifacts += ["delta.cvpm", "delta.cvpm.json", "delta_reduced.cvpm", "delta_reduced.cvpm.json"]


def _random_compact(rng, n, d, frac=0.3):
    return rng.standard_normal(n * d) * np.repeat(rng.random(n) < frac, d)


def stage_surface_forms(ctx, out, res):
    cfg = ctx.cfg
    D = ctx.delta
    asm = ctx.assembler
    fol = ctx.foliations[0]
    lo, hi = fol.window()
    s, t = lo + 0.3 * (hi - lo), lo + 0.7 * (hi - lo)
    strip = TimeStrip(fol, s, t)
    Ft, Fs = asm.forms(fol, t), asm.forms(fol, s)
    rng = _rng(cfg, 4)
    E, Pi = D.basis.matrix(), D.project()
    worst = 0.0
    for _ in range(20):
        u = E @ (Pi @ _random_compact(rng, D.n, D.d))
        v = E @ (Pi @ _random_compact(rng, D.n, D.d))
        a, b, st, ss = greens_formula_terms(D, Ft, Fs, strip, u, v)
        worst = max(worst, abs(a - b - st + ss) / max(abs(a) + abs(b) + abs(st) + abs(ss), 1e-300))
    tol = cfg["tolerances"]["green_formula"]
    res.criteria["3"] = _criterion(worst, tol, strip=[s, t])
    v = E @ (Pi @ _random_compact(rng, D.n, D.d))
    tm = 0.5 * (s + t)
    l1, r1, sc = energy_identity_terms(asm, D.s_param, fol, v, tm, 1e-3)
    l2, r2, _ = energy_identity_terms(asm, D.s_param, fol, v, tm, 5e-4)
    res.residuals["energy_identity"] = {"dt": [1e-3, 5e-4], "residual": [abs(l1 - r1), abs(l2 - r2)],
                                        "scale": sc}
    hyp = {}
    for f in [*ctx.foliations, *ctx.family[2:]]:
        h = ctx.hyperbolicity(f)
        hyp[f.name] = {"status": "ok" if h.ok else "FAILURE", "C": h.C, "reason": h.reason}
        write_json(out / f"hyperbolicity_{_slug(f.name)}.json", h.to_dict())
        res.artifacts.append(f"hyperbolicity_{_slug(f.name)}.json")
    res.residuals["hyperbolicity"] = hyp
    res.residuals["coverage"] = {f.name: f.check(cfg["foliation"]["n_t"]) for f in ctx.foliations}
    covered = all(c["uncovered"] == 0 for c in res.residuals["coverage"].values())
    rows = []
    for tt in fol.t_grid(cfg["foliation"]["n_t"]):
        eta = fol.eta(tt)
        rows += [[i, float(tt), float(eta[i])] for i in range(D.n)]
    write_csv(out / "layers.csv", ["point", "t", "eta"], rows)
    res.artifacts.append("layers.csv")
    res.status = PASS if (res.criteria["3"]["pass"] and covered) else FAIL
    if not covered:
        res.message = "foliation does not cover the support"


def _slug(name):
    return "".join(c if c.isalnum() else "_" for c in name).strip("_")


def _time_slice(ctx, green, fol):
    D = ctx.delta
    r = ctx.kernel.range_radius
    dl = fol.delta
    valid_tau = fol.tau[green.valid]
    lo, hi = float(valid_tau.min()), float(valid_tau.max())
    s1 = lo
    s0 = s1 + r + 0.5
    t0 = s0 + 2 * dl + 0.5
    t1 = t0 + r + 0.5
    L0, L1 = TimeStrip(fol, s0, t0), TimeStrip(fol, s1, t1)
    k = green.k
    cols = green.window_columns()
    top = cols[fol.tau[cols // k] >= hi - 1e-9]
    v = np.zeros(D.reduced()["D"].shape[0])
    v[top] = 1.0
    if fol.tau[top[0] // k] <= t1:
        raise StageFailure("greens", {"time_slice": "window too short for a source beyond the outer strip"})
    rep = cg.time_slice_representative(v, L0, L1, D, green, fol, r)
    return rep, (s0, t0, s1, t1)


def stage_greens(ctx, out, res):
    cfg = ctx.cfg
    tol = cfg["tolerances"]
    D = ctx.delta
    f1, f2 = ctx.foliations
    h1, h2 = ctx.hyperbolicity(f1), ctx.hyperbolicity(f2)
    g1 = ctx.green(f1)
    k = g1.k
    cols = g1.window_columns()
    tests = g1.test_columns(ctx.measure.points, ctx.kernel.range_radius)
    # criterion 4: energy estimate on every strip solve
    worst_ratio, gammas, ok4 = 0.0, [], True
    for fol, h, g in ((f1, h1, g1), (f2, h2, ctx.green(f2) if h2.ok else None)):
        if g is None:
            continue
        for kind, log in (("retarded", g.log_ret), ("advanced", g.log_adv)):
            for e in log:
                gam = energy_gamma(h.C, e["s"], e["t"], D.s_param) if e["t"] > e["s"] else 0.0
                gammas.append(gam)
                worst_ratio = max(worst_ratio, e["basis_ratio"])
                ok4 &= bool(e["basis_ratio"] <= gam)
    res.criteria["4"] = _criterion(worst_ratio, min(gammas), ok=ok4, C=h1.C,
                                   note="value is the largest ||v||/||Delta v|| over constrained bases; tol is the smallest Gamma")
    # criterion 5: retardation and its advanced mirror
    r_ret = cg.retardation_residual(g1, f1, cols, "ret")
    r_adv = cg.retardation_residual(g1, f1, cols, "adv")
    res.criteria["5"] = _criterion(max(r_ret, r_adv), tol["retarded"], retarded=r_ret, advanced=r_adv)
    # criterion 6: adjointness on 20 random pairs
    rng = _rng(cfg, 6)
    nk = g1.G.shape[0]
    worst6, scale6 = 0.0, 0.0
    for _ in range(20):
        u, v = np.zeros(nk), np.zeros(nk)
        u[cols] = rng.standard_normal(cols.size)
        v[cols] = rng.standard_normal(cols.size)
        worst6 = max(worst6, cg.adjoint_residual(g1, u, v))
        scale6 = max(scale6, abs(float((g1.S_ret @ u) @ g1.Wred @ v)))
    res.criteria["6"] = _criterion(worst6 / max(scale6, 1.0), tol["adjoint"], absolute=worst6, scale=scale6)
    # criterion 7: foliation independence
    if h1.ok and h2.ok:
        g2 = ctx.green(f2)
        common = np.intersect1d(cols, g2.window_columns())
        rows = np.repeat(g1.valid_ret & g2.valid_ret, k)
        A, B = g1.S_ret[rows][:, common], g2.S_ret[rows][:, common]
        rel = float(np.abs(A - B).max() / max(np.abs(A).max(), 1e-300))
        res.criteria["7"] = _criterion(rel, tol["foliation_independence"], foliations=[f1.name, f2.name])
    else:
        res.criteria["7"] = {"value": None, "tol": tol["foliation_independence"], "pass": None,
                             "skipped": "hyperbolicity not met for both foliations"}
    # weak-solution contracts
    res.residuals["homogeneity"] = cg.homogeneity_residual(g1, D, cols, tests)
    res.residuals["retarded_weak"] = cg.retarded_weak_residual(g1, D, cols, tests)
    res.residuals["window_points"] = int(g1.valid.sum())
    res.residuals["window_columns"] = int(cols.size)
    # criterion 12: time slice
    rep, strips = _time_slice(ctx, g1, f1)
    ok12 = rep.outside_support <= tol["time_slice_support"] and rep.pairing_residual <= tol["time_slice_pairing"]
    res.criteria["12"] = _criterion(rep.pairing_residual, tol["time_slice_pairing"], ok=ok12,
                                    outside_support=rep.outside_support,
                                    support_tol=tol["time_slice_support"], t_cut=rep.t_cut,
                                    inner=list(strips[:2]), outer=list(strips[2:]))
    # J_S support of G w
    cs = ctx.causal
    leak = 0.0
    for c in cols[:: max(1, cols.size // 40)]:
        cone = cg.strong_causal_cone(cs, [c // k])
        outside = np.repeat(~cone & g1.valid, k)
        leak = max(leak, float(np.abs(g1.G[outside, c]).max(initial=0.0)))
    res.residuals["J_S_support"] = {"max_outside": leak, "cone_r_K": cs.cone_r_K, "tol": 1e-10}
    # artifacts
    g1.write_log_csv(out / "stabilization.csv")
    meta = {"stage": "greens", "foliation": f1.name, "config_hash": config_mod.config_hash(cfg)}
    for name, M in (("S_ret", g1.S_ret), ("S_adv", g1.S_adv), ("G", g1.G)):
        save_matrix(out / f"{name}.cvpm", M, meta)
        res.artifacts += [f"{name}.cvpm", f"{name}.cvpm.json"]
    write_csv(out / "validity.csv", ["point", "valid_ret", "valid_adv"],
              [[i, int(a), int(b)] for i, (a, b) in enumerate(zip(g1.valid_ret, g1.valid_adv))])
    res.artifacts += ["stabilization.csv", "validity.csv"]
    checks = [res.criteria[c]["pass"] for c in ("4", "5", "6", "12")]
    checks.append(res.criteria["7"]["pass"] is not False)
    checks.append(res.residuals["homogeneity"] <= tol["homogeneity"])
    res.status = PASS if all(checks) else FAIL


def _probe_sets(ctx):
    c = ctx.cfg["causal"]
    if c.get("probe_K") and c.get("probe_B"):
        return [ctx.point_index(p) for p in c["probe_K"]], [ctx.point_index(p) for p in c["probe_B"]]
    g = ctx.green(ctx.foliations[0])
    axis = ctx.cfg["foliation"]["time_axis"]
    pts = ctx.measure.points
    valid = np.flatnonzero(g.valid)
    tau = pts[valid, axis]
    mid = np.sort(np.unique(tau))[len(np.unique(tau)) // 2 - 1: len(np.unique(tau)) // 2 + 1]
    other = [a for a in range(pts.shape[1]) if a != axis][0]
    K, B = [], []
    for tv in mid:
        row = valid[tau == tv]
        order = row[np.argsort(pts[row, other], kind="stable")]
        K.append(int(order[min(3, order.size - 1)]))
        B.append(int(order[max(order.size - 4, 0)]))
    return K, B


def stage_algebra(ctx, out, res):
    cfg = ctx.cfg
    fs = ctx.field_space
    g = ctx.green(ctx.foliations[0])
    k = g.k
    res.residuals.update(representatives=fs.size, quotient_dim=fs.dimension,
                         radical_dim=int(fs.radical.shape[1]), antisymmetry=fs.antisymmetry,
                         complement_dim=fs.complement_dim,
                         even_dimension=bool(fs.dimension % 2 == 0))
    K, B = _probe_sets(ctx)
    ok, witness = cg.strongly_disconnected(ctx.causal, K, B, return_witness=True)
    pos = {c: i for i, c in enumerate(fs.columns)}
    kc = [pos.get(p * k + j) for p in K for j in range(k)]
    bc = [pos.get(p * k + j) for p in B for j in range(k)]
    if None in kc or None in bc:
        raise StageFailure("algebra", {"microlocality": "probe supports outside the Green window"})
    vals = [abs(qs.commutator_value(fs, i, j)) for i in kc for j in bc]
    worst = float(max(vals))
    res.criteria["11"] = _criterion(worst, cfg["tolerances"]["microlocality"],
                                    ok=(ok and worst <= cfg["tolerances"]["microlocality"]),
                                    strongly_disconnected=bool(ok), witness=witness,
                                    K=[ctx.measure.points[i].tolist() for i in K],
                                    B=[ctx.measure.points[i].tolist() for i in B],
                                    r_K=ctx.causal.r_K)
    save_matrix(out / "G_sym.cvpm", fs.G_sym, {"stage": "algebra"})
    write_csv(out / "representatives.csv", ["column", "point"] + [f"x{a}" for a in range(ctx.measure.dimension)],
              [[int(c), int(c // k)] + [float(x) for x in ctx.measure.points[c // k]] for c in fs.columns])
    res.artifacts += ["G_sym.cvpm", "G_sym.cvpm.json", "representatives.csv"]
    struct_ok = fs.antisymmetry <= 1e-10 * max(np.abs(fs.G_sym).max(), 1.0) and fs.dimension % 2 == 0
    res.status = PASS if (res.criteria["11"]["pass"] and struct_ok) else FAIL


def _wick_check(state, rng, count=20):
    r = state.Omega2_q.shape[0]
    worst = 0.0
    for _ in range(count):
        a, b, c, d = (int(x) for x in rng.integers(0, r, 4))
        Om = state.Omega2_q
        explicit = Om[a, b] * Om[c, d] + Om[a, c] * Om[b, d] + Om[a, d] * Om[b, c]
        worst = max(worst, abs(qs.n_point(state, [a, b, c, d], quotient=True) - explicit))
    return worst


def stage_state(ctx, out, res, times=None, foliation_id=None):
    cfg = ctx.cfg
    tol = cfg["tolerances"]
    E = ctx.delta.reduced()["E"]
    fols = [f for f in ctx.foliations if ctx.hyperbolicity(f).ok]
    if foliation_id is not None:
        fols = [f for f in fols if f.name == foliation_id or _slug(f.name) == foliation_id]
        if not fols:
            raise StageFailure("state", {"foliation": f"unknown or non-hyperbolic foliation {foliation_id!r}"})
    worst8, worst9, worst10 = 0.0, {}, {}
    per = []
    omegas = {}
    primary = None
    for fol in fols:
        g = ctx.green(fol)
        fs = ctx.field_space if fol is ctx.foliations[0] else qs.build_field_space(g)
        ts = times or cfg["state"]["times"] or qs.admissible_times(g, ctx.assembler, fol, cfg["foliation"]["n_t"])
        for t in ts:
            fr = ctx.assembler.forms(fol, t).reduced(E)
            r8 = qs.sigma_G_identity_residual(fs, fr)
            cs = qs.build_complex_structure(fs, fr, cfg["state"]["eps_T"], t, fol.name)
            st = qs.quasi_free_state(fs, cs)
            c9, c10 = cs.checks(), st.checks(fs)
            worst8 = max(worst8, r8)
            for key in ("J2_plus_id", "T_antiselfadjoint"):
                worst9[key] = max(worst9.get(key, 0.0), c9[key])
            worst9["sigmaJ_min_eig"] = min(worst9.get("sigmaJ_min_eig", math.inf), c9["sigmaJ_min_eig"])
            worst10["im_vs_G"] = max(worst10.get("im_vs_G", 0.0), c10["im_vs_G"])
            worst10["re_min_eig"] = min(worst10.get("re_min_eig", math.inf), c10["re_min_eig"])
            per.append({"foliation": fol.name, "t": t, "sigma_G": r8, **c9, **c10})
            omegas[(fol.name, t)] = (fs.columns, st.Omega2)
            if primary is None or (fol is ctx.foliations[0] and t == ts[len(ts) // 2]):
                primary = (fol, t, fs, st)
    n_eval = len(per)
    res.residuals["evaluations"] = per
    res.criteria["8"] = _criterion(worst8, tol["sigma_G"], ok=(worst8 <= tol["sigma_G"] and n_eval >= 1),
                                   evaluations=n_eval)
    ok9 = (worst9["J2_plus_id"] <= tol["complex_structure"]
           and worst9["T_antiselfadjoint"] <= tol["complex_structure"]
           and worst9["sigmaJ_min_eig"] >= -tol["psd"])
    res.criteria["9"] = _criterion(max(worst9["J2_plus_id"], worst9["T_antiselfadjoint"]),
                                   tol["complex_structure"], ok=ok9, **worst9)
    fol, t, fs, st = primary
    pos = qs.state_positivity_check(st, fs, cfg["state"]["n_samples"], cfg["state"]["seed"])
    wick = _wick_check(st, _rng(cfg, 10))
    ok10 = (worst10["im_vs_G"] <= tol["two_point"] and worst10["re_min_eig"] >= -tol["psd"]
            and pos["min_real"] >= -tol["psd"] and wick <= tol["wick"])
    res.criteria["10"] = _criterion(worst10["im_vs_G"], tol["two_point"], ok=ok10,
                                    re_min_eig=worst10["re_min_eig"], positivity=pos, wick=wick)
    # spread of the two-point function across times and foliations (reported)
    keys = list(omegas)
    base_cols, base = omegas[keys[0]]
    spread = 0.0
    for key in keys[1:]:
        c2, O2 = omegas[key]
        common, ia, ib = np.intersect1d(base_cols, c2, return_indices=True)
        spread = max(spread, float(np.abs(base[np.ix_(ia, ia)] - O2[np.ix_(ib, ib)]).max(initial=0.0)))
    res.residuals["spread_across_t"] = spread
    report = {"min_eig_re": worst10["re_min_eig"], "max_im_residual": worst10["im_vs_G"],
              "ccr_residual": worst8, "spread_across_t": spread,
              "foliation": fol.name, "t": t}
    write_json(out / "state_report.json", report)
    O = st.Omega2
    write_csv(out / "omega2_real.csv", [f"c{j}" for j in range(O.shape[1])], O.real.tolist())
    write_csv(out / "omega2_imag.csv", [f"c{j}" for j in range(O.shape[1])], O.imag.tolist())
    res.artifacts += ["state_report.json", "omega2_real.csv", "omega2_imag.csv"]
    res.status = PASS if all(res.criteria[c]["pass"] for c in ("8", "9", "10")) else FAIL


STAGE_FUNCS = {
    "minimize": stage_minimize,
    "verify-el": stage_verify_el,
    "assemble-delta": stage_assemble_delta,
    "surface-forms": stage_surface_forms,
    "greens": stage_greens,
    "algebra": stage_algebra,
    "state": stage_state,
}


# ---------------------------------------------------------------------------
# pipeline


def resolve_config(config):
    """Accept a resolved dict, a user dict, a JSON path or a scenario name."""
    if isinstance(config, dict):
        return config_mod.resolve(config)
    path = Path(str(config))
    if path.exists():
        return config_mod.load(path)
    if str(config) in config_mod.SCENARIOS:
        return config_mod.resolve({"scenario": str(config)})
    raise ConfigError(f"config {config!r} is neither a file nor a scenario name", "<path>")


def run_root(explicit=None):
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _parse_stages(stages):
    if stages is None:
        return list(STAGES)
    if isinstance(stages, str):
        stages = [s.strip() for s in stages.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stage(s) {bad}; known: {list(STAGES)}", "stages")
    return [s for s in STAGES if s in stages]


def run_pipeline(config, stages=None, root=None, context=None, stage_kwargs=None):
    """Run the requested stages in dependency order and write the manifest.

    Parameters
    ----------
    config : dict or path or scenario name
    stages : list of str or comma-separated str, optional
        Subset of :data:`STAGES`; dependencies are computed on demand.
    root : path, optional
        Run directory root; default ``$CVP_RUN_ROOT`` or ``./runs``.

    Returns
    -------
    RunManifest
    """
    cfg = resolve_config(config)
    h = config_mod.config_hash(cfg)
    run_dir = run_root(root) / h
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "config.json", cfg)
    ctx = context or Context(cfg)
    manifest = RunManifest(cfg["scenario"], h, str(run_dir))
    halted = False
    for name in _parse_stages(stages):
        res = StageResult(name)
        out = run_dir / name
        out.mkdir(exist_ok=True)
        t0 = time.perf_counter()
        if halted:
            res.status, res.message = SKIP, "not run: an earlier stage failed"
        elif name in DYNAMICS and not ctx.primary_ok:
            h1 = ctx.hyperbolicity(ctx.foliations[0])
            res.status = SKIP
            res.message = f"skipped (hypothesis not met): hyperbolicity FAILURE for {h1.foliation}: {h1.reason}"
        else:
            try:
                STAGE_FUNCS[name](ctx, out, res, **((stage_kwargs or {}).get(name, {})))
            except StageFailure as exc:
                res.status, res.message = FAIL, str(exc)
                res.residuals.setdefault("failure", exc.report)
            except CVPError as exc:
                res.status, res.message = FAIL, f"{type(exc).__name__}: {exc}"
        res.wall_time = time.perf_counter() - t0
        write_json(out / "report.json", res.to_dict(timings=False))
        res.artifacts.insert(0, "report.json")
        manifest.stages.append(res)
        if res.status == FAIL:
            halted = True
    manifest.write()
    return manifest


# ---------------------------------------------------------------------------
# plot data


def emit_plots(manifest, context=None, source=None, times=None):
    """Write plot-data CSVs next to a run: layer profiles, cones and ``|G w|``.

    Parameters
    ----------
    manifest : RunManifest
    source : int, optional
        Support point used for the cone and ``|G w|`` pictures (default: the
        window point closest to the centre).

    Returns
    -------
    list of str
        Written file paths relative to the run directory.
    """
    run_dir = Path(manifest.run_dir)
    cfg = json.loads((run_dir / "config.json").read_text())
    ctx = context or Context(cfg)
    out = run_dir / "plots"
    out.mkdir(exist_ok=True)
    pts = ctx.measure.points
    fol = ctx.foliations[0]
    files = []
    grid = fol.t_grid(cfg["foliation"]["n_t"]) if times is None else np.asarray(times, dtype=float)
    rows = []
    for i in range(ctx.measure.n):
        rows += [[i, *map(float, pts[i]), float(t), float(fol.eta(t)[i])] for t in grid]
    coords = [f"x{a}" for a in range(pts.shape[1])]
    write_csv(out / "layer_profiles.csv", ["point", *coords, "t", "eta"], rows)
    files.append("plots/layer_profiles.csv")
    cs = ctx.causal
    if source is None:
        centre = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        source = int(np.argmin(np.linalg.norm(pts - centre, axis=1)))
    cone_rows = []
    for y in range(ctx.measure.n):
        cone_rows.append([y, *map(float, pts[y]), int(cs.chronological[source, y]), int(cs.causal[source, y]),
                          int(cs.chronological[y, source]), int(cs.causal[y, source])])
    write_csv(out / "cones.csv", ["point", *coords, "I_future", "J_future", "I_past", "J_past"], cone_rows)
    files.append("plots/cones.csv")
    if ctx.primary_ok:
        g = ctx.green(fol)
        k = g.k
        cone = cg.strong_causal_cone(cs, [source])
        col = source * k
        heat = np.abs(g.G[:, col]).reshape(-1, k).max(axis=1)
        write_csv(out / "green_heat.csv", ["point", *coords, "abs_Gw", "valid", "in_J_S"],
                  [[y, *map(float, pts[y]), float(heat[y]), int(g.valid[y]), int(cone[y])]
                   for y in range(ctx.measure.n)])
        files.append("plots/green_heat.csv")
    return files


# ---------------------------------------------------------------------------
# command line


def _echo_manifest(manifest):
    for s in manifest.stages:
        click.echo(f"{s.name:15s} {s.status:8s} {s.message}")
        for cid, c in sorted(s.criteria.items(), key=lambda kv: int(kv[0])):
            verdict = {True: "pass", False: "FAIL", None: "skip"}[c["pass"]]
            click.echo(f"    criterion {cid:>2s}: {verdict}  value={c['value']!r} tol={c['tol']!r}")
    click.echo(f"run directory: {manifest.run_dir}")


def _finish(manifest):
    _echo_manifest(manifest)
    raise SystemExit(manifest.exit_code)


_config_arg = click.argument("config")
_root_opt = click.option("--run-root", default=None, help=f"Run directory root (default ${RUN_ROOT_ENV} or ./runs).")


@click.group()
def main():
    """Discrete causal variational principles: pipeline runner."""


@main.command()
@_config_arg
@click.option("--stages", default=None, help="Comma-separated subset of stages.")
@_root_opt
def run(config, stages, run_root):
    """Run the full pipeline (or a subset of stages)."""
    _finish(_guard(lambda: run_pipeline(config, stages, run_root)))


def _single(stage):
    @main.command(name=stage, help=f"Run the {stage} stage only.")
    @_config_arg
    @_root_opt
    def _cmd(config, run_root):
        _finish(_guard(lambda: run_pipeline(config, [stage], run_root)))
    return _cmd


for _stage in ("minimize", "verify-el", "assemble-delta", "surface-forms", "algebra"):
    _single(_stage)


@main.command()
@_config_arg
@click.option("--source", default=None, help="Source point as an index or comma-separated coordinates.")
@_root_opt
def greens(config, source, run_root):
    """Green's operators; optionally write one source column."""
    def go():
        cfg = resolve_config(config)
        ctx = Context(cfg)
        manifest = run_pipeline(cfg, ["greens"], run_root, context=ctx)
        if source is not None and ctx.primary_ok:
            parts = [float(p) for p in source.split(",")]
            idx = int(parts[0]) if len(parts) == 1 else ctx.point_index(parts)
            g = ctx.green(ctx.foliations[0])
            k = g.k
            path = Path(manifest.run_dir) / "greens" / f"source_{idx}.csv"
            pts = ctx.measure.points
            rows = [[y, *map(float, pts[y]), float(g.S_ret[y * k, idx * k]), float(g.S_adv[y * k, idx * k]),
                     float(g.G[y * k, idx * k]), int(g.valid[y])] for y in range(ctx.measure.n)]
            write_csv(path, ["point", *[f"x{a}" for a in range(pts.shape[1])], "S_ret", "S_adv", "G", "valid"], rows)
            click.echo(f"wrote {path}")
        return manifest
    _finish(_guard(go))


@main.command()
@_config_arg
@click.option("--t", "t", type=float, default=None, help="Time of the surface layer.")
@click.option("--foliation", default=None, help="Foliation id, e.g. 'flat(delta=2)'.")
@_root_opt
def state(config, t, foliation, run_root):
    """Complex structure and quasi-free state."""
    kw = {"state": {"times": [t] if t is not None else None, "foliation_id": foliation}}
    _finish(_guard(lambda: run_pipeline(config, ["state"], run_root, stage_kwargs=kw)))


@main.command()
@_config_arg
@click.option("--source", type=int, default=None, help="Support point index for cones and |Gw|.")
@click.option("--run-root", "run_root_opt", default=None, help="Run directory root.")
def plots(config, source, run_root_opt):
    """Write plot-data CSVs (layer profiles, cones, |Gw| heat values)."""
    def go():
        cfg = resolve_config(config)
        run_dir = run_root(run_root_opt) / config_mod.config_hash(cfg)
        run_dir.mkdir(parents=True, exist_ok=True)
        write_json(run_dir / "config.json", cfg)
        manifest = RunManifest(cfg["scenario"], config_mod.config_hash(cfg), str(run_dir))
        for f in emit_plots(manifest, Context(cfg), source):
            click.echo(f"wrote {run_dir / f}")
    _guard(go)


def _guard(fn):
    try:
        return fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        raise SystemExit(1)


if __name__ == "__main__":
    main()
