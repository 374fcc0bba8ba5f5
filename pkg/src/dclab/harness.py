"""Experiment driver: refinement ladders, diagnostics, verdicts, artifacts.

run_config() executes one validated configuration.  Each refinement level
gets a freshly generated mesh at h0 / 2^k (so corner grading deepens with
h rather than being frozen at the coarse level), the requested solves and
per-corner diagnostics run on it, and deterministic CSV artifacts are
written.  After the ladder, cross-level trends are computed and the
configured expectations are turned into PASS/FAIL verdict lines.

Exit codes follow the CLI convention: 0 all expectations hold, 1 some
verdict failed, 3 a solver or mesh generator failed.  Config errors (2)
are raised before this module runs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import validate_config
from .control import (CallableTarget, ConstantTarget, ControlError,
                      ControlProblem, solve_constrained, solve_unconstrained)
from .exports import (write_boundary_csv, write_extraction_csv,
                      write_field_csv, write_gnuplot_script,
                      write_iteration_csv, write_mesh_csv, write_summary)
from .fem import DiscontinuityLine, FemError, FemSystem, solve_dirichlet
from .geometry import UNBOUNDED, SingularBoundaryData, build_domain
from .meshing import (MeshError, boundary_trace_space, structured_mesh,
                      triangulate)
from .singular import (AnalysisError, classify_H_sets,
                       control_singular_profile, extract_coefficients,
                       flatness_diagnostic, holder_quotient,
                       predicted_control_terms, singular_boundary_values,
                       structural_fit_control, structure_refinement_trend,
                       verify_singular_expansion, wedge_lift)

#: allowed relative excess of max|y| over max|u| in the maximum principle
MAX_PRINCIPLE_SLACK = 1e-10


@dataclass
class LevelRecord:
    """Everything measured at one refinement level."""

    index: int
    h: float
    n_nodes: int
    n_triangles: int
    solves: dict = field(default_factory=dict)      # tag -> summary dict
    fits: dict = field(default_factory=dict)        # corner -> CoefficientFit
    skipped: dict = field(default_factory=dict)     # corner -> reason
    flatness: dict = field(default_factory=dict)    # corner -> FlatnessVerdict
    terms: dict = field(default_factory=dict)       # corner -> {m: a_m}
    structure: dict = field(default_factory=dict)   # corner -> report
    holder: dict = field(default_factory=dict)      # corner -> (raw, rem)
    slopes: dict = field(default_factory=dict)      # corner -> log-log slope
    expansion = None                                # SingularDataReport
    profile = None                                  # (arc, u, perimeter)


@dataclass
class RunResult:
    name: str
    exit_code: int
    verdicts: list                                  # (label, ok, detail)
    levels: list
    trends: dict
    outdir: str
    error: str | None = None


def _g6(x) -> str:
    return format(float(x), ".6g")


def _make_domain(cfg):
    spec = cfg["domain"]
    if isinstance(spec, dict):
        return build_domain(spec["vertices"], r_overrides=cfg["corner_radii"])
    return build_domain(spec, r_overrides=cfg["corner_radii"])


def _make_mesh(domain, cfg, level):
    m = cfg["mesh"]
    h = m["h0"] / 2.0 ** level
    if m["kind"] == "structured":
        return structured_mesh(domain, h)
    return triangulate(domain, h, grading=m["grading"],
                       lattice_angle=m["lattice_angle"])


def _make_target(domain, tcfg):
    if tcfg["kind"] == "constant":
        return ConstantTarget(tcfg["value"])
    # odd step across the corner bisector: +value for theta < omega/2,
    # -value beyond, with the jump line declared for exact quadrature
    c = domain.corners[tcfg["corner"]]
    v = float(tcfg["value"])
    bis = c.frame_angle + 0.5 * c.angle
    nrm = (-math.sin(bis), math.cos(bis))
    vx, vy = c.vertex

    def fn(x, y):
        s = (x - vx) * nrm[0] + (y - vy) * nrm[1]
        return np.where(s < 0.0, v, -v)

    line = DiscontinuityLine(point=(vx, vy), normal=nrm)
    return CallableTarget(fn, discontinuity=line)


def _solve_summary(sol):
    u = np.asarray(sol.u, dtype=float)
    y = sol.y.values
    max_u = float(np.max(np.abs(u)))
    max_y = float(np.max(np.abs(y)))
    return {
        "iterations": sol.iterations,
        "converged": sol.converged,
        "method": sol.method,
        "kkt": sol.kkt.stationarity_max,
        "feasibility": sol.kkt.feasibility,
        "max_u": max_u,
        "max_y": max_y,
        "max_principle_ok": max_y <= max_u * (1.0 + MAX_PRINCIPLE_SLACK)
        + 1e-14,
        "objective": sol.objective,
    }


def _corner_log_slope(domain, mesh, u, j, drop: float = 1e-12):
    """Log-log slope of |u| against corner distance on [1.5 r_min, R/2]."""
    tr = boundary_trace_space(mesh)
    c = domain.corners[j]
    r = np.linalg.norm(tr.points - np.asarray(c.vertex), axis=1)
    u = np.asarray(u, dtype=float)
    pos = r > 1e-14
    if not np.any(pos):
        return None
    lo = 1.5 * r[pos].min()
    sel = (r >= lo) & (r <= 0.5 * c.radius) & (np.abs(u) > drop)
    if np.count_nonzero(sel) < 4:
        return None
    return float(np.polyfit(np.log(r[sel]), np.log(np.abs(u[sel])), 1)[0])


def _profile_diff(coarse, fine):
    """Max nodal difference of two boundary profiles via arc interpolation."""
    arc_c, u_c, _ = coarse
    arc_f, u_f, per_f = fine
    arc = np.concatenate([arc_f, [per_f]])
    vals = np.concatenate([u_f, [u_f[0]]])
    return float(np.max(np.abs(np.interp(arc_c, arc, vals) - u_c)))


def _run_control_level(domain, mesh, cfg, rec, leveldir):
    prob = cfg["problem"]
    ana = cfg["analysis"]
    system = FemSystem(mesh)
    target = _make_target(domain, prob["target"])
    lo = -UNBOUNDED if prob["lower"] is None else prob["lower"]
    hi = UNBOUNDED if prob["upper"] is None else prob["upper"]
    mode = prob["solve"]

    sols = {}
    if mode in ("constrained", "both"):
        p = ControlProblem(system, prob["nu"], target, lower=lo, upper=hi)
        sols["constrained"] = solve_constrained(p)
    if mode in ("unconstrained", "both"):
        p = ControlProblem(system, prob["nu"], target)
        sols["unconstrained"] = solve_unconstrained(p)
    primary = "unconstrained" if mode != "constrained" else "constrained"
    twin = ({"constrained", "unconstrained"} - {primary}).pop() \
        if mode == "both" else None

    for tag, sol in sols.items():
        rec.solves[tag] = _solve_summary(sol)
        if not sol.converged:
            raise ControlError(f"{tag} solve did not converge at level "
                               f"{rec.index}")
    main = sols[primary]
    tr = system.trace
    rec.profile = (tr.arc.copy(), np.asarray(main.u, dtype=float),
                   tr.perimeter())

    # per-corner diagnostics on the primary solve's adjoint and control
    for j in ana["corners"]:
        try:
            rec.fits[j] = extract_coefficients(domain, mesh, main.phi.values,
                                               j, modes=tuple(ana["modes"]))
        except AnalysisError as exc:
            rec.skipped[j] = str(exc)

    if ana["flatness"] and "constrained" in sols:
        uc = sols["constrained"].u
        for j in ana["corners"]:
            fit = rec.fits.get(j)
            c1 = fit.coefficients.get(1) if fit is not None else None
            if c1 is not None and math.isnan(c1):
                c1 = None
            try:
                rec.flatness[j] = flatness_diagnostic(domain, mesh, uc, lo,
                                                      hi, j, c1=c1)
            except AnalysisError as exc:
                rec.skipped.setdefault(j, str(exc))

    if ana["structure"]:
        for j in ana["corners"]:
            fit = rec.fits.get(j)
            if fit is None:
                continue
            fl = rec.flatness.get(j)
            if fl is not None and fl.verdict in ("flat-at-a", "flat-at-b"):
                # locally constant control: nothing singular to subtract
                terms = {}
            elif primary == "unconstrained":
                terms = predicted_control_terms(domain, j, fit.coefficients,
                                                prob["nu"], -UNBOUNDED,
                                                UNBOUNDED)
            else:
                terms = predicted_control_terms(domain, j, fit.coefficients,
                                                prob["nu"], lo, hi)
            rec.terms[j] = terms
            try:
                rec.structure[j] = structural_fit_control(domain, mesh,
                                                          main.u, j, terms)
            except AnalysisError as exc:
                rec.skipped.setdefault(j, str(exc))
            c = domain.corners[j]
            alpha = 2.0 * c.lam - 1.0
            if c.reentrant and 0.0 < alpha < 1.0:
                q_raw = holder_quotient(domain, mesh, main.u, j, alpha)
                pred = control_singular_profile(domain, mesh, j, terms)
                q_rem = holder_quotient(domain, mesh, main.u - pred, j, alpha)
                rec.holder[j] = (q_raw, q_rem)
            if c.reentrant:
                s = _corner_log_slope(domain, mesh, main.u, j)
                if s is not None:
                    rec.slopes[j] = s

    # artifacts
    fields = {"state": main.y.values, "adjoint": main.phi.values}
    bnd = {"u": main.u, "flux": main.flux}
    if twin is not None:
        fields["state_twin"] = sols[twin].y.values
        fields["adjoint_twin"] = sols[twin].phi.values
        bnd["u_twin"] = sols[twin].u
        bnd["flux_twin"] = sols[twin].flux
    if rec.terms:
        sing = np.zeros(tr.n)
        for j, terms in sorted(rec.terms.items()):
            sing += control_singular_profile(domain, mesh, j, terms)
        bnd["u_sing"] = sing
    write_field_csv(os.path.join(leveldir, "fields.csv"), mesh, fields)
    write_boundary_csv(os.path.join(leveldir, "boundary.csv"), mesh, bnd)
    if "constrained" in sols:
        write_iteration_csv(os.path.join(leveldir, "iterations.csv"),
                            sols["constrained"].history)


def _run_singular_level(domain, mesh, cfg, rec, leveldir):
    d = cfg["singular_data"]
    data = SingularBoundaryData(corner=d["corner"], n=d["n"], eta=d["eta"],
                                amplitude=d["amplitude"])
    system = FemSystem(mesh)
    g = singular_boundary_values(domain, mesh, data)
    y = solve_dirichlet(system, g)
    lift = wedge_lift(domain, mesh, data)
    try:
        rec.expansion = verify_singular_expansion(
            domain, mesh, y.values, data, modes=tuple(cfg["analysis"]["modes"]))
    except AnalysisError as exc:
        rec.skipped[d["corner"]] = str(exc)
    write_field_csv(os.path.join(leveldir, "fields.csv"), mesh,
                    {"state": y.values, "lift": lift,
                     "remainder": y.values - lift})
    write_boundary_csv(os.path.join(leveldir, "boundary.csv"), mesh,
                       {"g": g})


def _collect_trends(domain, cfg, levels):
    ana = cfg["analysis"]
    trends = {"coeff": {}, "flat_radius": {}, "slope": {}, "holder": {},
              "structure": {}, "profile_diffs": []}

    history = [rec.fits for rec in levels if rec.fits]
    if history:
        trends["h_sets"] = classify_H_sets(domain, ana["s_star"], history)

    for j in ana["corners"]:
        per_mode = {}
        for m in ana["modes"]:
            vals = []
            for rec in levels:
                fit = rec.fits.get(j)
                if fit is None or m not in fit.coefficients:
                    continue
                cm = fit.coefficients[m]
                if not math.isnan(cm):
                    vals.append(cm)
            per_mode[m] = vals
        trends["coeff"][j] = per_mode
        trends["flat_radius"][j] = [
            rec.flatness[j].radius if j in rec.flatness else None
            for rec in levels]
        slopes = [rec.slopes[j] for rec in levels if j in rec.slopes]
        if slopes:
            trends["slope"][j] = slopes[-1]
        holders = [rec.holder[j] for rec in levels if j in rec.holder]
        if holders:
            trends["holder"][j] = holders[-1]
        reports = [rec.structure[j] for rec in levels if j in rec.structure]
        if len(reports) >= 2:
            try:
                trends["structure"][j] = structure_refinement_trend(
                    reports[-2], reports[-1])
            except AnalysisError:
                pass

    profiles = [rec.profile for rec in levels if rec.profile is not None]
    for a, b in zip(profiles, profiles[1:]):
        trends["profile_diffs"].append(_profile_diff(a, b))
    return trends


def _check(label, ok, detail):
    return (label, bool(ok), detail)


def _evaluate(cfg, levels, trends):
    """Turn the configured expectations into verdict rows."""
    exp = cfg["expectations"]
    ana = cfg["analysis"]
    rows = []
    solved = [(rec, tag, s) for rec in levels
              for tag, s in sorted(rec.solves.items())]

    if "control_max" in exp:
        worst = max((s["max_u"] for _, _, s in solved), default=math.nan)
        rows.append(_check("control_max", worst <= exp["control_max"],
                           f"max |u| = {_g6(worst)} (tol "
                           f"{_g6(exp['control_max'])})"))
    if "kkt_max" in exp:
        worst = max((s["kkt"] for _, _, s in solved), default=math.nan)
        rows.append(_check("kkt_max", worst <= exp["kkt_max"],
                           f"max stationarity = {_g6(worst)} (tol "
                           f"{_g6(exp['kkt_max'])})"))
    if "max_principle" in exp:
        bad = [(rec.index, tag) for rec, tag, s in solved
               if not s["max_principle_ok"]]
        ok = not bad and bool(solved)
        detail = "max |y| <= max |u| in every solve" if ok else \
            f"violated at {bad}"
        rows.append(_check("max_principle", ok == bool(exp["max_principle"]),
                           detail))

    if "flat_verdict" in exp:
        want = exp["flat_verdict"]
        got, det = None, "no flatness data"
        for j in ana["corners"]:
            for rec in reversed(levels):
                if j in rec.flatness:
                    v = rec.flatness[j]
                    got = v.verdict
                    det = (f"corner {j} level {rec.index}: {v.verdict}, "
                           f"radius {_g6(v.radius)}")
                    break
            if got is not None:
                break
        rows.append(_check("flat_verdict", got == want,
                           det + f" (expected {want})"))
    if "flat_radius_stable" in exp:
        tol = exp["flat_radius_stable"]
        ok, det = False, "fewer than 2 flatness radii"
        for j in ana["corners"]:
            radii = [r for r in trends["flat_radius"].get(j, []) if r]
            if len(radii) >= 2 and radii[-2] > 0:
                change = abs(radii[-1] - radii[-2]) / radii[-2]
                ok = change <= tol
                det = (f"corner {j} radii {[_g6(r) for r in radii]}, last "
                       f"change {_g6(100 * change)}% (tol {_g6(100 * tol)}%)")
        rows.append(_check("flat_radius_stable", ok, det))
    if "sign_consistent" in exp:
        ok, det = False, "no flatness data"
        for j in ana["corners"]:
            for rec in reversed(levels):
                if j in rec.flatness:
                    v = rec.flatness[j]
                    ok = v.consistent and not v.contradiction
                    det = (f"corner {j}: verdict {v.verdict}, predicted "
                           f"bound {v.predicted_bound}")
                    break
        rows.append(_check("sign_consistent", ok == exp["sign_consistent"],
                           det))

    if "slope_range" in exp:
        lo, hi = exp["slope_range"]
        ok, det = False, "no slope measured"
        for j in ana["corners"]:
            if j in trends["slope"]:
                s = trends["slope"][j]
                ok = lo <= s <= hi
                det = (f"corner {j} log-log slope {_g6(s)} "
                       f"(range [{_g6(lo)}, {_g6(hi)}])")
        rows.append(_check("slope_range", ok, det))
    if "twin_bounded" in exp:
        prob = cfg["problem"]
        cap = max(abs(prob["lower"] or 0.0), abs(prob["upper"] or 0.0))
        vals = [s["max_u"] for rec in levels
                for tag, s in rec.solves.items() if tag == "constrained"]
        ok = bool(vals) and max(vals) <= cap * (1.0 + 1e-10)
        det = (f"constrained max |u| per level "
               f"{[_g6(v) for v in vals]} (bound {_g6(cap)})")
        rows.append(_check("twin_bounded", ok == exp["twin_bounded"], det))

    def c_hist(m):
        for j in ana["corners"]:
            vals = trends["coeff"].get(j, {}).get(m, [])
            if vals:
                return j, vals
        return None, []

    if "c1_decay_factor" in exp:
        f = exp["c1_decay_factor"]
        j, c1 = c_hist(1)
        pairs = list(zip(c1, c1[1:]))
        ok = bool(pairs) and all(abs(b) <= abs(a) / f for a, b in pairs)
        det = (f"corner {j} |c1| history "
               f"{[_g6(abs(v)) for v in c1]} (factor {_g6(f)})")
        rows.append(_check("c1_decay_factor", ok, det))
    if "c2_stable_within" in exp:
        tol = exp["c2_stable_within"]
        j, c2 = c_hist(2)
        ok = (len(c2) >= 2 and abs(c2[0]) > 0
              and all(abs(abs(v) - abs(c2[0])) <= tol * abs(c2[0])
                      for v in c2))
        det = (f"corner {j} c2 history {[_g6(v) for v in c2]} "
               f"(tol {_g6(100 * tol)}%)")
        rows.append(_check("c2_stable_within", ok, det))
    if "c1_min" in exp:
        j, c1 = c_hist(1)
        ok = bool(c1) and min(abs(v) for v in c1) >= exp["c1_min"]
        det = (f"corner {j} |c1| history {[_g6(abs(v)) for v in c1]} "
               f"(floor {_g6(exp['c1_min'])})")
        rows.append(_check("c1_min", ok, det))
    if "c1_stable_within" in exp:
        tol = exp["c1_stable_within"]
        j, c1 = c_hist(1)
        ok = (len(c1) >= 2 and abs(c1[0]) > 0
              and all(abs(abs(v) - abs(c1[0])) <= tol * abs(c1[0])
                      for v in c1))
        det = (f"corner {j} c1 history {[_g6(v) for v in c1]} "
               f"(tol {_g6(100 * tol)}%)")
        rows.append(_check("c1_stable_within", ok, det))

    if "structure_decays" in exp:
        ok, det = False, "no structure trend"
        for j in ana["corners"]:
            if j in trends["structure"]:
                ratios, decayed = trends["structure"][j]
                ok = decayed
                det = (f"corner {j} inner-shell remainder ratios "
                       f"{[(_g6(r), _g6(q)) for r, q in ratios]}")
        rows.append(_check("structure_decays", ok == exp["structure_decays"],
                           det))
    if "holder_ratio_max" in exp:
        ok, det = False, "no quotient measured"
        for j in ana["corners"]:
            if j in trends["holder"]:
                q_raw, q_rem = trends["holder"][j]
                if q_raw > 1e-14:
                    ratio = q_rem / q_raw
                    ok = ratio <= exp["holder_ratio_max"]
                    det = (f"corner {j} quotient {_g6(q_raw)} -> "
                           f"{_g6(q_rem)} (ratio {_g6(ratio)}, tol "
                           f"{_g6(exp['holder_ratio_max'])})")
        rows.append(_check("holder_ratio_max", ok, det))
    if "h2" in exp:
        want = set(exp["h2"])
        rep = trends.get("h_sets")
        if rep is None:
            rows.append(_check("h2", False, "no extraction history"))
        else:
            ok = rep.h2 == want and not rep.undetermined
            det = (f"h2 = {sorted(rep.h2)} (expected {sorted(want)}), "
                   f"undetermined = {sorted(rep.undetermined)}")
            rows.append(_check("h2", ok, det))

    if "expansion_ok" in exp:
        reps = [rec.expansion for rec in levels if rec.expansion is not None]
        if len(reps) < 2:
            rows.append(_check("expansion_ok", False,
                               "fewer than 2 expansion reports"))
        else:
            d = cfg["singular_data"]
            sgn = 1.0 if d["n"] == 1 else -1.0
            last = reps[-2:]
            decay = all(r.slope > r.eta for r in last)
            bres = all(r.boundary_residual < 1e-10 for r in last)
            endp = all(abs(r.endpoint_value - sgn) < 1e-9 for r in last)
            ok = decay and bres and endp
            det = (f"slopes {[_g6(r.slope) for r in last]} vs eta "
                   f"{_g6(d['eta'])}, boundary residual "
                   f"{_g6(max(r.boundary_residual for r in last))}, "
                   f"endpoint {_g6(last[-1].endpoint_value)}")
            rows.append(_check("expansion_ok", ok == exp["expansion_ok"],
                               det))
    return rows


def _info_rows(cfg, levels, trends):
    rows = []
    if cfg["problem"] is not None:
        rows.append("level  h          nodes    tris     solve          "
                    "iters  kkt          max|u|      objective")
        for rec in levels:
            for tag in sorted(rec.solves):
                s = rec.solves[tag]
                rows.append(
                    f"{rec.index:<6d} {rec.h:<10.6g} {rec.n_nodes:<8d} "
                    f"{rec.n_triangles:<8d} {tag:<14s} "
                    f"{s['iterations']:<6d} {s['kkt']:<12.3e} "
                    f"{s['max_u']:<11.6g} {s['objective']:.6g}")
    else:
        rows.append("level  h          nodes    tris     slope    "
                    "boundary_residual")
        for rec in levels:
            r = rec.expansion
            srep = f"{r.slope:<8.4g} {r.boundary_residual:.3e}" \
                if r is not None else "(skipped)"
            rows.append(f"{rec.index:<6d} {rec.h:<10.6g} {rec.n_nodes:<8d} "
                        f"{rec.n_triangles:<8d} {srep}")
    rows.append("")

    for j, per_mode in sorted(trends["coeff"].items()):
        for m, vals in sorted(per_mode.items()):
            if vals:
                rows.append(f"corner {j} c{m} history: "
                            f"{[_g6(v) for v in vals]}")
    for j, radii in sorted(trends["flat_radius"].items()):
        if any(r is not None for r in radii):
            rows.append(f"corner {j} flat radius per level: "
                        f"{[None if r is None else _g6(r) for r in radii]}")
    for j, s in sorted(trends["slope"].items()):
        rows.append(f"corner {j} finest log-log control slope: {_g6(s)}")
    for j, (q_raw, q_rem) in sorted(trends["holder"].items()):
        rows.append(f"corner {j} Holder quotient raw {_g6(q_raw)} "
                    f"remainder {_g6(q_rem)}")
    for j, (ratios, decayed) in sorted(trends["structure"].items()):
        rows.append(f"corner {j} structure remainder ratios "
                    f"{[(_g6(r), _g6(q)) for r, q in ratios]} "
                    f"decayed={decayed}")
    rep = trends.get("h_sets")
    if rep is not None:
        rows.append(f"H-sets: h1={sorted(rep.h1)} h2={sorted(rep.h2)} "
                    f"h3={sorted(rep.h3)} "
                    f"undetermined={sorted(rep.undetermined)}")
    if trends["profile_diffs"]:
        rows.append("control profile max diff between levels: "
                    f"{[_g6(d) for d in trends['profile_diffs']]}")
    skips = [(rec.index, j, why) for rec in levels
             for j, why in sorted(rec.skipped.items())]
    for idx, j, why in skips:
        rows.append(f"note: level {idx} corner {j}: {why}")
    return rows


def _write_trends_csv(path, cfg, levels):
    import csv as _csv
    corners = cfg["analysis"]["corners"]
    modes = cfg["analysis"]["modes"]
    header = ["level", "h", "nodes", "triangles"]
    if cfg["problem"] is not None:
        header += ["iterations", "kkt", "max_u", "objective"]
        for j in corners:
            header += [f"c{m}_corner{j}" for m in modes]
            header += [f"flat_radius_corner{j}", f"slope_corner{j}"]
    else:
        header += ["slope", "boundary_residual", "endpoint"]
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(header)
        for rec in levels:
            row = [rec.index, format(rec.h, ".17g"), rec.n_nodes,
                   rec.n_triangles]
            if cfg["problem"] is not None:
                tags = sorted(rec.solves)
                main = rec.solves[tags[-1]] if tags else None
                if main is None:
                    row += ["", "", "", ""]
                else:
                    row += [main["iterations"], format(main["kkt"], ".17g"),
                            format(main["max_u"], ".17g"),
                            format(main["objective"], ".17g")]
                for j in corners:
                    fit = rec.fits.get(j)
                    for m in modes:
                        cm = fit.coefficients.get(m) if fit else None
                        row.append("" if cm is None
                                   else format(cm, ".17g"))
                    v = rec.flatness.get(j)
                    row.append("" if v is None else format(v.radius, ".17g"))
                    s = rec.slopes.get(j)
                    row.append("" if s is None else format(s, ".17g"))
            else:
                r = rec.expansion
                if r is None:
                    row += ["", "", ""]
                else:
                    row += [format(r.slope, ".17g"),
                            format(r.boundary_residual, ".17g"),
                            format(r.endpoint_value, ".17g")]
            w.writerow(row)


def run_config(cfg, outdir) -> RunResult:
    """Execute one configuration and write its artifacts into outdir."""
    cfg = validate_config(cfg)
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")

    domain = _make_domain(cfg)
    levels = []
    try:
        for k in range(cfg["mesh"]["levels"]):
            mesh = _make_mesh(domain, cfg, k)
            rec = LevelRecord(index=k, h=cfg["mesh"]["h0"] / 2.0 ** k,
                              n_nodes=mesh.n_nodes,
                              n_triangles=mesh.n_triangles)
            leveldir = os.path.join(outdir, f"level{k}")
            os.makedirs(leveldir, exist_ok=True)
            write_mesh_csv(leveldir, mesh)
            if cfg["problem"] is not None:
                _run_control_level(domain, mesh, cfg, rec, leveldir)
            else:
                _run_singular_level(domain, mesh, cfg, rec, leveldir)
            levels.append(rec)
    except (ControlError, FemError, MeshError) as exc:
        msg = f"solver failure at level {len(levels)}: {exc}"
        write_summary(os.path.join(outdir, "summary.txt"), cfg["name"],
                      [("run", False, msg)], [])
        return RunResult(name=cfg["name"], exit_code=3, verdicts=[],
                         levels=levels, trends={}, outdir=outdir, error=msg)

    trends = _collect_trends(domain, cfg, levels)
    verdicts = _evaluate(cfg, levels, trends)
    info = _info_rows(cfg, levels, trends)
    write_summary(os.path.join(outdir, "summary.txt"), cfg["name"],
                  verdicts, info)
    _write_trends_csv(os.path.join(outdir, "trends.csv"), cfg, levels)
    fits_by_level = [rec.fits for rec in levels]
    if any(fits_by_level):
        write_extraction_csv(os.path.join(outdir, "extraction.csv"),
                             fits_by_level)
    if cfg["problem"] is not None:
        write_gnuplot_script(os.path.join(outdir, "profile.gp"),
                             len(levels), cfg["name"])
    code = 0 if all(ok for _, ok, _ in verdicts) else 1
    return RunResult(name=cfg["name"], exit_code=code, verdicts=verdicts,
                     levels=levels, trends=trends, outdir=outdir)


def run_preset(name, outdir, levels=None):
    """Run every sub-configuration of a preset; list of RunResults."""
    from .presets import expand_preset
    results = []
    for subname, cfg in expand_preset(name, levels):
        sub_out = os.path.join(outdir, subname) if subname else outdir
        results.append(run_config(cfg, sub_out))
    return results
