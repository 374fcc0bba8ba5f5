"""Run-configuration schema: validation and normalization.

A configuration is a JSON-compatible dict describing one experiment: a
domain, a mesh ladder, either a control problem or a singular boundary
datum, the analyses to run, and optional expectations the harness turns
into pass/fail verdicts.  Validation reports the offending field path.
"""

from __future__ import annotations

import json
import math


class ConfigError(ValueError):
    """Invalid configuration; the message names the field."""


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _get(d, key, path, types, required=False, default=None):
    # an explicit JSON null counts as absent, which also makes
    # re-validating an already normalized config a no-op
    if key not in d or d[key] is None:
        if required:
            _fail(f"{path}.{key}", "required field missing")
        return default
    v = d[key]
    if types is not None and not isinstance(v, types):
        tn = " or ".join(t.__name__ for t in (types if isinstance(types, tuple) else (types,)))
        _fail(f"{path}.{key}", f"expected {tn}, got {type(v).__name__}")
    return v


def _number(d, key, path, required=False, default=None, positive=False):
    v = _get(d, key, path, (int, float), required=required, default=default)
    if v is None:
        return None
    if isinstance(v, bool):
        _fail(f"{path}.{key}", "expected a number, got a boolean")
    v = float(v)
    if not math.isfinite(v):
        _fail(f"{path}.{key}", "must be finite")
    if positive and v <= 0.0:
        _fail(f"{path}.{key}", "must be positive")
    return v


def _corner_map(raw, path):
    out = {}
    for k, v in raw.items():
        try:
            j = int(k)
        except (TypeError, ValueError):
            _fail(path, f"corner index {k!r} is not an integer")
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            _fail(f"{path}[{k}]", "expected a number")
        out[j] = float(v)
    return out


_TARGET_KINDS = {"constant", "skew-step"}
_SOLVE_MODES = {"constrained", "unconstrained", "both"}
_MESH_KINDS = {"triangulated", "structured"}

_EXPECTATION_KEYS = {
    "control_max", "kkt_max", "flat_verdict", "flat_radius_stable",
    "sign_consistent", "slope_range", "twin_bounded", "c1_decay_factor",
    "c2_stable_within", "c1_min", "c1_stable_within", "structure_decays",
    "holder_ratio_max", "expansion_ok", "max_principle", "h2",
}


def validate_config(cfg) -> dict:
    """Normalize and validate a configuration dict.

    Returns a new dict with defaults filled in; raises ConfigError with a
    field path on the first problem found.
    """
    if not isinstance(cfg, dict):
        _fail("config", "top level must be an object")
    out = {}
    out["name"] = _get(cfg, "name", "config", str, default="run")

    dom = _get(cfg, "domain", "config", (str, dict), required=True)
    if isinstance(dom, dict):
        verts = _get(dom, "vertices", "config.domain", list, required=True)
        if len(verts) < 3:
            _fail("config.domain.vertices", "need at least 3 vertices")
        for i, v in enumerate(verts):
            if (not isinstance(v, (list, tuple)) or len(v) != 2
                    or not all(isinstance(c, (int, float)) for c in v)):
                _fail(f"config.domain.vertices[{i}]", "expected [x, y]")
        out["domain"] = {"vertices": [[float(a), float(b)] for a, b in verts]}
    else:
        out["domain"] = dom
    radii = _get(cfg, "corner_radii", "config", dict, default=None)
    out["corner_radii"] = _corner_map(radii, "config.corner_radii") if radii else None

    mesh = _get(cfg, "mesh", "config", dict, required=True)
    m = {}
    m["kind"] = _get(mesh, "kind", "config.mesh", str, default="triangulated")
    if m["kind"] not in _MESH_KINDS:
        _fail("config.mesh.kind", f"must be one of {sorted(_MESH_KINDS)}")
    m["h0"] = _number(mesh, "h0", "config.mesh", required=True, positive=True)
    levels = _get(mesh, "levels", "config.mesh", int, default=1)
    if isinstance(levels, bool) or levels < 1:
        _fail("config.mesh.levels", "must be an integer >= 1")
    m["levels"] = levels
    grading = _get(mesh, "grading", "config.mesh", dict, default=None)
    if grading:
        g = _corner_map(grading, "config.mesh.grading")
        for j, mu in g.items():
            if not 0.0 < mu <= 1.0:
                _fail(f"config.mesh.grading[{j}]", "exponent must lie in (0, 1]")
        if m["kind"] == "structured":
            _fail("config.mesh.grading", "structured meshes do not support grading")
        m["grading"] = g
    else:
        m["grading"] = None
    m["lattice_angle"] = _number(mesh, "lattice_angle", "config.mesh", default=0.0)
    out["mesh"] = m

    data = _get(cfg, "singular_data", "config", dict, default=None)
    prob = _get(cfg, "problem", "config", dict, default=None)
    if (data is None) == (prob is None):
        _fail("config", "exactly one of 'problem' or 'singular_data' is required")

    if data is not None:
        d = {}
        corner = _get(data, "corner", "config.singular_data", int, required=True)
        d["corner"] = corner
        n = _get(data, "n", "config.singular_data", int, required=True)
        if n not in (1, 2):
            _fail("config.singular_data.n", "parity must be 1 or 2")
        d["n"] = n
        d["eta"] = _number(data, "eta", "config.singular_data", required=True)
        d["amplitude"] = _number(data, "amplitude", "config.singular_data",
                                 default=1.0)
        out["singular_data"] = d
        out["problem"] = None
    else:
        p = {}
        p["nu"] = _number(prob, "nu", "config.problem", required=True, positive=True)
        lower = _get(prob, "lower", "config.problem", (int, float), default=None)
        upper = _get(prob, "upper", "config.problem", (int, float), default=None)
        p["lower"] = None if lower is None else float(lower)
        p["upper"] = None if upper is None else float(upper)
        if (p["lower"] is not None and p["upper"] is not None
                and p["lower"] > p["upper"]):
            _fail("config.problem", "lower bound exceeds upper bound")
        tgt = _get(prob, "target", "config.problem", dict, required=True)
        kind = _get(tgt, "kind", "config.problem.target", str, required=True)
        if kind not in _TARGET_KINDS:
            _fail("config.problem.target.kind",
                  f"must be one of {sorted(_TARGET_KINDS)}")
        t = {"kind": kind}
        if kind == "constant":
            t["value"] = _number(tgt, "value", "config.problem.target",
                                 required=True)
        else:
            t["corner"] = _get(tgt, "corner", "config.problem.target", int,
                               required=True)
            t["value"] = _number(tgt, "value", "config.problem.target",
                                 default=1.0)
        p["target"] = t
        solve = _get(prob, "solve", "config.problem", str, default=None)
        if solve is None:
            solve = ("constrained" if (p["lower"] is not None
                                       or p["upper"] is not None)
                     else "unconstrained")
        if solve not in _SOLVE_MODES:
            _fail("config.problem.solve", f"must be one of {sorted(_SOLVE_MODES)}")
        p["solve"] = solve
        out["problem"] = p
        out["singular_data"] = None

    ana = _get(cfg, "analysis", "config", dict, default=None) or {}
    a = {}
    corners = _get(ana, "corners", "config.analysis", list, default=[])
    for i, j in enumerate(corners):
        if not isinstance(j, int) or isinstance(j, bool):
            _fail(f"config.analysis.corners[{i}]", "expected an integer")
    a["corners"] = list(corners)
    modes = _get(ana, "modes", "config.analysis", list, default=[1, 2])
    for i, mm in enumerate(modes):
        if not isinstance(mm, int) or isinstance(mm, bool) or mm < 1:
            _fail(f"config.analysis.modes[{i}]", "expected a positive integer")
    a["modes"] = modes
    a["flatness"] = bool(_get(ana, "flatness", "config.analysis", bool,
                              default=False))
    a["structure"] = bool(_get(ana, "structure", "config.analysis", bool,
                               default=False))
    a["s_star"] = _number(ana, "s_star", "config.analysis", default=4.0)
    if a["s_star"] < 2.0:
        _fail("config.analysis.s_star", "must be >= 2")
    out["analysis"] = a

    exp = _get(cfg, "expectations", "config", dict, default=None) or {}
    for k in exp:
        if k not in _EXPECTATION_KEYS:
            _fail(f"config.expectations.{k}", "unknown expectation")
    out["expectations"] = dict(exp)

    out["seed"] = _get(cfg, "seed", "config", int, default=0)

    known = {"name", "domain", "corner_radii", "mesh", "problem",
             "singular_data", "analysis", "expectations", "seed"}
    for k in cfg:
        if k not in known:
            _fail(f"config.{k}", "unknown field")
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return validate_config(raw)
