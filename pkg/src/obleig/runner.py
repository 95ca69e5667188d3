"""Scenario loading and task dispatch for the command-line front end.

A scenario is a JSON document (schema 1) naming a task and the domain,
operator, boundary, reaction and numerics blocks it needs. Optional
"variants" override blocks of the base scenario; optional "expected"
entries compare result fields against reference values.
"""

import copy
import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from . import bounds as bnd
from . import eigensolver as eig
from . import geometry as geo
from . import parabolic as par
from .errors import ConfigError
from .operators import assemble, make_boundary, make_operator

SCHEMA = 1
TASKS = ("eig", "sweep", "global_sweep", "certify", "simulate", "classify", "averages",
         "geometry_audit", "relations_audit")
PROVENANCE = ("PAPER", "TRIVIAL", "DERIVED")
SCENARIO_DIR = Path(__file__).parent / "scenarios"


# loading -------------------------------------------------------------------

def builtin_names():
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def load_scenario(name_or_path):
    p = Path(str(name_or_path))
    if p.suffix == ".json" and p.exists():
        path = p
    else:
        path = SCENARIO_DIR / f"{name_or_path}.json"
        if not path.exists():
            raise ConfigError(f"unknown scenario {name_or_path!r}")
    try:
        with open(path) as fh:
            s = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    validate(s)
    return s


def validate(s):
    if not isinstance(s, dict):
        raise ConfigError("scenario must be a JSON object")
    if s.get("schema") != SCHEMA:
        raise ConfigError(f"unsupported schema {s.get('schema')!r}")
    if "name" not in s:
        raise ConfigError("scenario needs a name")
    if s.get("task") not in TASKS:
        raise ConfigError(f"unknown task {s.get('task')!r}")
    for e in s.get("expected", []):
        if e.get("provenance") not in PROVENANCE:
            raise ConfigError(f"expected entry {e.get('key')!r} lacks a provenance tag")
        if "key" not in e:
            raise ConfigError("expected entry without key")
    names = [v.get("name") for v in s.get("variants", [])]
    if any(n is None for n in names) or len(set(names)) != len(names):
        raise ConfigError("variants need unique names")
    return s


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("domain",):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def expand_variants(s):
    base = {k: v for k, v in s.items() if k not in ("variants", "expected")}
    if not s.get("variants"):
        return [(None, base)]
    out = []
    for v in s["variants"]:
        over = {k: val for k, val in v.items() if k != "name"}
        out.append((v["name"], deep_merge(base, over)))
    return out


def apply_overrides(s, h=None, dt=None, radii=None, tol=None):
    """Command-line overrides of the numerics block (applied to every variant)."""
    s = copy.deepcopy(s)
    over = {}
    if h is not None:
        over["h"] = float(h)
    if dt is not None:
        over["dt"] = float(dt)
    if radii is not None:
        over["radii"] = [float(r) for r in radii]
    if tol is not None:
        over["tol"] = float(tol)
    if over:
        s["numerics"] = dict(s.get("numerics", {}), **over)
        for v in s.get("variants", []):
            if "numerics" in v:
                v["numerics"] = dict(v["numerics"], **over)
    return s


# helpers -------------------------------------------------------------------

def _dim(s):
    return geo.make_domain(s["domain"]).dimension


def _ops(s):
    d = _dim(s)
    return make_operator(s.get("operator", {}), d), make_boundary(s.get("boundary", {"kind": "neumann"}), d)


def _center(s, d):
    return [float(t) for t in s.get("numerics", {}).get("center", [0.0] * d)]


def _floats(x):
    if isinstance(x, (list, tuple)):
        return [_floats(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return _floats(x.tolist())
    if isinstance(x, dict):
        return {k: _floats(v) for k, v in x.items()}
    return x


def is_selfadjoint(s):
    """L and B in self-adjoint form: divergence form (or constant isotropic A without drift)
    together with a conormal (or, for isotropic A, normal) boundary vector, or Dirichlet."""
    op = s.get("operator", {})
    bd = s.get("boundary", {"kind": "neumann"})
    A = op.get("A", 1.0)
    isotropic = isinstance(A, (int, float))
    no_drift = not op.get("b") or all(v in (0, 0.0) for v in op.get("b"))
    divergence = op.get("form") == "selfadjoint_divergence" or (isotropic and no_drift)
    if not divergence:
        return False
    if bd.get("kind") == "dirichlet":
        return True
    beta = bd.get("beta", "normal")
    return beta == "conormal" or (beta == "normal" and isotropic)


def oblique_positive(s):
    """Hypothesis of chain (iv): uniformly positive beta.nu or gamma, or an empty boundary."""
    dom = s["domain"]
    if dom.get("shape") == "whole_space":
        return True
    bd = s.get("boundary", {"kind": "neumann"})
    if bd.get("kind") == "dirichlet":
        return False
    beta = bd.get("beta", "normal")
    if beta in ("normal", "conormal"):
        return True
    return bool(bd.get("bounds", {}).get("inf_beta_nu", 0) > 0)


def _certificates(s, L, B):
    out, bundle = {}, []
    for c in s.get("certificates", []):
        cert = eig.Certificate(c["phi"], float(c["lambda"]), c["sense"], set(c["classes"]),
                               c["box"], float(c["h"]), float(c.get("margin", 1e-12)),
                               float(c.get("bound", math.inf)),
                               s["domain"],
                               c["name"])
        rep = eig.verify_certificate(L, B, cert, tol=float(c.get("tol", 1e-8)))
        out[c["name"]] = rep.to_json()
        if rep.passed and rep.implied_bound:
            ib = rep.implied_bound
            bundle.append({"quantity": ib["quantity"], "side": ib["side"], "value": ib["value"],
                           "source": f"certificate {c['name']}"})
    return out, bundle


def _csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


# tasks -----------------------------------------------------------------------

def task_eig(s, bundle_only=False):
    L, B = _ops(s)
    num = s["numerics"]
    d = L.dimension
    grid = geo.truncate(s["domain"], _center(s, d), num["r"], num["h"])
    system = assemble(grid, L, B)
    res = eig.principal_eigenpair(system, tol=num.get("tol", 1e-8))
    out = {"lambda": res.lam, "residual": res.residual, "iterations": res.iterations,
           "positivity_margin": res.positivity_margin, "scale": res.scale, "nodes": system.size,
           "symmetric": system.symmetric}
    if L.selfadjoint and system.symmetric and not L.A.has_cross_terms() and B.kind == "oblique":
        out["rayleigh_quotient"] = eig.rayleigh_quotient(grid, L, B.gamma, system.extend(res.eigenfunction))
    return out, {}, [{"quantity": "lambda", "side": "upper", "value": res.lam,
                      "source": f"lambda(y, {num['r']})"}]


def _sweep_rows(sw):
    return _csv_text(sw.rows(), ["center_x", "center_y", "r", "h", "lambda", "residual", "iterations"])


def task_sweep(s, bundle_only=False):
    L, B = _ops(s)
    num = s["numerics"]
    d = L.dimension
    sw = eig.truncation_sweep(s["domain"], _center(s, d), L, B, num["radii"], num["h"], num.get("tol", 1e-8))
    scale = np.nanmax(sw.scales) if np.any(np.isfinite(sw.scales)) else 1.0
    out = {"radii": sw.radii, "lambdas": sw.lambdas, "lambdaB_estimate": sw.lambdaB_estimate,
           "monotonicity_violation": sw.monotonicity_violation,
           "monotone_ok": bool(sw.monotonicity_violation <= 1e-8 * scale),
           "extrapolation": sw.extrapolation, "errors": sw.errors, "residuals": sw.residuals,
           "positivity_margins": sw.positivity_margins}
    b = [{"quantity": "lambda", "side": "estimate", "value": sw.lambdaB_estimate, "source": "sweep estimate"}]
    finite = [v for v in sw.lambdas if math.isfinite(v)]
    if finite:
        b.append({"quantity": "lambda", "side": "upper", "value": min(finite), "source": "sweep min over r"})
    return out, {"sweep.csv": _sweep_rows(sw)}, b


def task_global_sweep(s, bundle_only=False):
    L, B = _ops(s)
    num = s["numerics"]
    sw = eig.lambda_global_sweep(s["domain"], num["centers"], L, B, num["radii"], num["h"],
                                 num.get("tol", 1e-8))
    scale = np.nanmax(sw.scales) if np.any(np.isfinite(sw.scales)) else 1.0
    out = {"radii": sw.radii, "lambdas": sw.lambdas, "lambdaB_estimate": sw.lambdaB_estimate,
           "sup_lambdas": sw.sup_lambdas, "LambdaB_estimate": sw.LambdaB_estimate,
           "argmax_centers": sw.argmax_centers, "center_estimates": sw.center_estimates,
           "monotonicity_violation": sw.monotonicity_violation,
           "monotone_ok": bool(sw.monotonicity_violation <= 1e-8 * scale), "errors": sw.errors}
    b = [{"quantity": "lambda", "side": "estimate", "value": sw.lambdaB_estimate, "source": "sweep estimate"},
         {"quantity": "Lambda", "side": "estimate", "value": sw.LambdaB_estimate,
          "source": "global sweep estimate"}]
    return out, {"sweep.csv": _sweep_rows(sw)}, b


def task_certify(s, bundle_only=False):
    return {}, {}, []


def _sim_config(s):
    L, B = _ops(s)
    num = s["numerics"]
    d = L.dimension
    grid = geo.truncate(s["domain"], _center(s, d), num["r"], num["h"])
    u0 = num.get("u0", {"bump": {"center": _center(s, d), "radius": 1.0, "amplitude": 1.0}})
    return par.SimConfig(grid, L, B, num["dt"], num["T"], _initial(u0, d),
                         num.get("snapshot_every")), grid


def _initial(spec, d):
    if isinstance(spec, dict) and "bump" in spec:
        b = spec["bump"]
        return par.bump(b.get("center", [0.0] * d), b.get("radius", 1.0), b.get("amplitude", 1.0))
    return par.initial_field(spec)


def _envelope_csv(traj, window):
    m = traj.window(window) if window is not None else np.ones(traj.points.shape[0], dtype=bool)
    rows = []
    idx = np.searchsorted(traj.step_times, traj.times - 1e-9)
    for t, vals, k in zip(traj.times, traj.values, idx):
        rows.append({"t": float(t), "sup": float(traj.sup_trace[min(k, len(traj.sup_trace) - 1)]),
                     "window_sup": float(np.max(vals[m])), "window_min": float(np.min(vals[m]))})
    return _csv_text(rows, ["t", "sup", "window_sup", "window_min"])


def task_simulate(s, bundle_only=False):
    if bundle_only:
        return {}, {}, []
    num = s["numerics"]
    reaction = par.make_reaction(s["reaction"])
    if num.get("experiment") == "hair_trigger":
        d = _dim(s)
        rep = par.hair_trigger_experiment(s["domain"], s.get("operator", {}).get("A", 1.0), reaction,
                                          _initial(num["u0"], d), num["T"], num["windows"],
                                          num["radii"], num["h"], num["dt"], _center(s, d),
                                          s.get("boundary"), s.get("operator", {}).get("b"))
        out = {"inf_liminf_estimate": rep.inf_liminf_estimate,
               "per_window_envelopes": rep.per_window_envelopes,
               "larger_envelopes": rep.larger_envelopes,
               "truncation_sensitive": rep.truncation_sensitive, "radii": list(rep.radii),
               "final_sup": rep.final_sup}
        return out, {}, []
    cfg, grid = _sim_config(s)
    traj = par.evolve(cfg, reaction)
    window = num.get("window")
    out = {"final_sup": float(traj.sup_trace[-1]), "min_value": float(np.min(traj.min_trace)),
           "positivity_ok": bool(np.min(traj.min_trace) >= -1e-12),
           "mass_drift": float(np.max(np.abs(np.diff(traj.mass_trace)))) if len(traj.mass_trace) > 1 else 0.0,
           "nodes": int(traj.points.shape[0]), "steps": int(len(traj.step_times) - 1)}
    if window is not None:
        m = traj.window(window)
        out["window_final_sup"] = float(np.max(traj.final[m]))
    arts = {"envelope.csv": _envelope_csv(traj, window)}
    front = num.get("front")
    if front:
        level = float(front.get("level", 0.5))
        win = front.get("window")
        out["front_speed"] = par.measure_front_speed(traj, level, win)
        t, x = par.front_positions(traj, level, 0, win)
        arts["front.csv"] = _csv_text([{"t": float(a), "position": float(b)} for a, b in zip(t, x)],
                                      ["t", "position"])
    buf = io.BytesIO()
    par.write_oblp(traj, buf)
    arts["trajectory.oblp"] = buf.getvalue()
    return out, arts, []


def task_classify(s, bundle_only=False):
    if bundle_only:
        return {}, {}, []
    num = s["numerics"]
    reaction = par.make_reaction(s["reaction"])
    cfg, grid = _sim_config(s)
    blow = False
    try:
        traj = par.evolve(cfg, reaction)
    except par.BlowUp as exc:
        traj, blow = exc.trajectory, True
    probes = num.get("probes") or par.default_probes(grid)
    v = par.classify_trajectory(traj, probes, num.get("thresholds"), blow)
    out = v.to_json()
    out["positivity_ok"] = bool(np.min(traj.min_trace) >= -1e-12)
    return out, {"envelope.csv": _envelope_csv(traj, probes[0])}, []


def task_averages(s, bundle_only=False):
    num = s["numerics"]
    d = _dim(s)
    c = s.get("operator", {}).get("c", 0.0)
    y = _center(s, d)
    mean = bnd.mean_of(s["domain"], y, c, num["mean_radii"], num.get("mean_h", num.get("h", 0.1)))
    centers = num.get("centers", [y])
    least = bnd.least_mean_of(s["domain"], centers, c, num.get("least_radii", num["mean_radii"]),
                              num.get("h", 0.1))
    rep = bnd.combine(mean, least)
    out = {"mean_sequence": rep.mean_sequence, "mean_estimate": rep.mean_estimate,
           "least_mean_sequence": rep.least_mean_sequence, "least_mean_estimate": rep.least_mean_estimate,
           "coverage_spacing": rep.coverage_spacing,
           "least_below_mean": bool(rep.least_mean_estimate <= rep.mean_estimate + 1e-9)}
    arts = {"averages.csv": _csv_text(rep.rows(), ["r", "mean", "least_mean", "argmin_center"])}
    b = []
    if "sweep" in num:
        L, B = _ops(s)
        sw = eig.truncation_sweep(s["domain"], y, L, B, num["sweep"]["radii"], num["sweep"]["h"])
        ok, slack, info = eig.average_bound_audit(sw, rep, tol=float(num["sweep"].get("tol", 0.1)))
        out["sweep_lambdas"] = sw.lambdas
        out["lambdaB_estimate"] = sw.lambdaB_estimate
        out["audit"] = dict(info, ok=ok)
        b.append({"quantity": "lambda", "side": "estimate", "value": sw.lambdaB_estimate,
                  "source": "sweep estimate"})
        arts["sweep.csv"] = _sweep_rows(sw)
    return out, arts, b


def task_geometry_audit(s, bundle_only=False):
    num = s["numerics"]
    out = {"growth": {}, "interior_ball": {}, "transversality": {}}
    arts = {}
    all_ok = True
    for case in num.get("growth_cases", []):
        audit = geo.measured_growth_ratios(case["domain"], case["y"], float(case.get("f", 1.0)),
                                           int(case["n"]), float(case["h"]))
        out["growth"][case["label"]] = {"ratios": audit.ratios, "min_ratio": min(audit.ratios),
                                        "bound": audit.bound, "slack": audit.slack, "ok": audit.ok}
        all_ok &= audit.ok
        rows = [{"m": m + 1, "ratio": r, "bound": audit.bound} for m, r in enumerate(audit.ratios)]
        arts[f"geometry_{case['label']}.csv"] = _csv_text(rows, ["m", "ratio", "bound"])
    for case in num.get("ball_cases", []):
        rep = geo.interior_ball_bounds(case["domain"], case["y"], float(case["rho"]), float(case["h"]))
        out["interior_ball"][case["label"]] = {"omega1_ok": rep["omega1_ok"], "annulus_ok": rep["annulus_ok"],
                                               "omega1": rep["omega1"],
                                               "omega1_required": rep["omega1_required"]}
        if case.get("honest", True):
            all_ok &= rep["omega1_ok"] and rep["annulus_ok"]
    for case in num.get("transversality_cases", []):
        ok, align = geo.transversality_check(case["domain"], case["y"], float(case["r"]))
        out["transversality"][case["label"]] = {"ok": ok, "alignment": align}
    cov = num.get("covering")
    if cov:
        R, r, step = float(cov["R"]), float(cov["r"]), float(cov["step"])
        ax = np.arange(-R, R + step / 2, step)
        mesh = np.meshgrid(ax, ax, indexing="ij")
        E = np.stack([m.ravel() for m in mesh], axis=1)
        E = E[np.linalg.norm(E, axis=1) < R]
        rep = geo.internal_covering(E, r, R)
        sound = rep.covers(E)
        out["covering"] = {"cardinality": rep.cardinality, "lattice_bound": rep.lattice_bound,
                           "sound": sound, "within_bound": rep.cardinality <= rep.lattice_bound}
        all_ok &= sound and rep.cardinality <= rep.lattice_bound
    out["all_ok"] = bool(all_ok)
    return out, arts, []


def task_relations_audit(s, bundle_only=False):
    num = s.get("numerics", {})
    tol = float(num.get("tol", 1e-2))
    per, total = {}, 0
    for name in s["scenarios"]:
        sub = load_scenario(name)
        for vname, v in expand_variants(sub):
            res, _, bundle, flags = run_variant(v, bundle_only=True)
            rep = bnd.relations_audit(bundle, flags["selfadjoint"], flags["oblique_positive"], tol)
            key = name if vname is None else f"{name}/{vname}"
            per[key] = {"bundle": bundle, "checked": len(rep.checked), "violations": len(rep.violations),
                        "details": rep.violations, "selfadjoint": flags["selfadjoint"]}
            total += len(rep.violations)
    return {"bundles": per, "total_violations": total}, {}, []


TASK_FUNCS = {"eig": task_eig, "sweep": task_sweep, "global_sweep": task_global_sweep,
              "certify": task_certify, "simulate": task_simulate, "classify": task_classify,
              "averages": task_averages, "geometry_audit": task_geometry_audit,
              "relations_audit": task_relations_audit}


def run_variant(s, bundle_only=False):
    """Run one (variant-expanded) scenario; returns (result, artifacts, bundle, flags)."""
    res, arts, bundle = TASK_FUNCS[s["task"]](s, bundle_only)
    if s.get("certificates"):
        L, B = _ops(s)
        certs, cb = _certificates(s, L, B)
        res["certificates"] = certs
        bundle = bundle + cb
    flags = {}
    if s["task"] not in ("relations_audit", "geometry_audit"):
        flags = {"selfadjoint": is_selfadjoint(s), "oblique_positive": oblique_positive(s)}
        res["bundle"] = bundle
        res.update(flags)
    return res, arts, bundle, flags


# expectations ------------------------------------------------------------------

def lookup(result, key):
    cur = result
    for part in key.split("."):
        if isinstance(cur, dict):
            if part not in cur:
                raise KeyError(key)
            cur = cur[part]
        elif isinstance(cur, list):
            cur = cur[int(part)]
        else:
            raise KeyError(key)
    return cur


def check_expected(expected, result):
    out = []
    for e in expected:
        entry = {"key": e["key"], "provenance": e["provenance"], "anchor": e.get("anchor", "")}
        try:
            val = lookup(result, e["key"])
        except (KeyError, IndexError, ValueError):
            entry.update(ok=False, actual=None, reason="missing")
            out.append(entry)
            continue
        ok = True
        if "equals" in e:
            ok = val == e["equals"]
            entry["target"] = e["equals"]
        if "value" in e:
            tol = e.get("tolerance")
            if tol is None:
                tol = abs(e["value"]) * e.get("rel_tol", 0.0)
            ok &= isinstance(val, (int, float)) and abs(val - e["value"]) <= tol
            entry["target"] = e["value"]
            entry["tolerance"] = tol
        if "min" in e:
            ok &= isinstance(val, (int, float)) and val >= e["min"]
            entry["min"] = e["min"]
        if "max" in e:
            ok &= isinstance(val, (int, float)) and val <= e["max"]
            entry["max"] = e["max"]
        entry.update(ok=bool(ok), actual=_floats(val))
        out.append(entry)
    return out


# running -------------------------------------------------------------------------

def run_scenario(s):
    """Execute a validated scenario; returns (result, artifacts)."""
    variants = expand_variants(s)
    arts = {}
    if len(variants) == 1 and variants[0][0] is None:
        res, arts, _, _ = run_variant(variants[0][1])
    else:
        res = {"variants": {}}
        for vname, v in variants:
            r, a, _, _ = run_variant(v)
            res["variants"][vname] = r
            arts.update({f"{vname}_{k}": val for k, val in a.items()})
    res = _floats(res)
    res["name"] = s["name"]
    res["task"] = s["task"]
    res["schema"] = SCHEMA
    exp = check_expected(s.get("expected", []), res)
    res["expectations"] = exp
    res["status"] = "pass" if all(e["ok"] for e in exp) else "expectation_miss"
    return res, arts


def to_json(result):
    return json.dumps(result, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_artifacts(out_dir, result, arts):
    out = Path(out_dir) / result["name"]
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(to_json(result))
    for name, content in sorted(arts.items()):
        path = out / name
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content)
    return out
