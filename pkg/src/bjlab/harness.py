"""Scenario driver: run a pipeline of checks on a domain and write a JSON report."""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import manifolds as Mf
from . import perturb as P
from .billiard import PhasePoint, generating_length, next_hit_array, one_step_differential, transport
from .domain import RadiusProfile, check_admissibility
from .errors import BjlError
from .normal_forms import birkhoff_normal_form, lazutkin_check
from .orbits import check_absolute_periodicity_order, classify, find_birkhoff_orbit


class ScenarioError(ValueError):
    """Malformed scenario file or unknown operation."""


def tol_scale() -> float:
    raw = os.environ.get("BJL_TOL_SCALE", "1")
    try:
        v = float(raw)
    except ValueError:
        raise ScenarioError(f"BJL_TOL_SCALE={raw!r} is not a number")
    if not v > 0:
        raise ScenarioError("BJL_TOL_SCALE must be positive")
    return v


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if hasattr(x, "to_dict"):
        return jsonable(x.to_dict())
    return x


# ---------------------------------------------------------------------------
# domains


def load_domain(desc, base_dir: Path | None = None) -> RadiusProfile:
    """Domain from a JSON dict, a file path, or a named builtin ("circle", "ellipse:<aspect>").

    A dict may carry ``"base"`` naming a builtin; its harmonics are then added to the builtin's.
    """
    if isinstance(desc, str):
        if desc == "circle":
            return RadiusProfile.circle()
        if desc.startswith("ellipse:"):
            return RadiusProfile.ellipse(float(desc.split(":", 1)[1]))
        path = Path(desc)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ScenarioError(f"domain file {desc!r} not found")
        desc = json.loads(path.read_text())
    if not isinstance(desc, dict):
        raise ScenarioError("domain must be a dict, a path or a builtin name")
    if "base" in desc:
        base = load_domain(desc["base"], base_dir)
        extra = RadiusProfile.from_dict({"mean_radius": base.mean_radius, **{k: v for k, v in desc.items() if k != "base"}})
        return RadiusProfile(base.mean_radius, base.harmonics + extra.harmonics, base.bumps + extra.bumps)
    if "mean_radius" not in desc:
        raise ScenarioError("domain dict needs mean_radius")
    return RadiusProfile.from_dict(desc)


# ---------------------------------------------------------------------------
# checks and reports


def check(name: str, value, tol, oracle: str, mode: str = "le") -> dict:
    """One numeric claim with its tolerance and the oracle it is compared against."""
    if mode == "le":
        ok = bool(abs(value) <= tol)
    elif mode == "ge":
        ok = bool(value >= tol)
    elif mode == "in":
        ok = bool(tol[0] <= value <= tol[1])
    elif mode == "true":
        ok = bool(value)
    else:
        raise ScenarioError(f"unknown comparison {mode!r}")
    return {"name": name, "value": value, "tolerance": tol, "mode": mode, "oracle": oracle, "passed": ok}


@dataclass
class StepResult:
    op: str
    params: dict
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    error: str | None = None
    seconds: float = 0.0

    @property
    def passed(self):
        return self.error is None and all(c["passed"] for c in self.checks)

    def failures(self):
        if self.error is not None:
            return [f"{self.op}: {self.error}"]
        return [f"{self.op}: {c['name']} = {c['value']!r} violates {c['mode']} {c['tolerance']!r} ({c['oracle']})"
                for c in self.checks if not c["passed"]]

    def to_dict(self, timing=False):
        d = {"op": self.op, "params": self.params, "status": "pass" if self.passed else ("error" if self.error else "fail"),
             "checks": self.checks, "data": self.data}
        if self.error is not None:
            d["error"] = self.error
        if timing:
            d["seconds"] = self.seconds
        return d


@dataclass
class Report:
    name: str
    steps: list
    provenance: dict

    @property
    def passed(self):
        return all(s.passed for s in self.steps)

    def failures(self):
        return [f for s in self.steps for f in s.failures()]

    def to_dict(self, timing=False):
        return jsonable({"scenario": self.name, "passed": self.passed, "provenance": self.provenance,
                         "steps": [s.to_dict(timing) for s in self.steps], "failures": self.failures()})

    def to_json(self, timing=False):
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=1)


class Context:
    """Mutable state shared by the steps of one scenario run."""

    def __init__(self, profile, tolerances=None, seed=0, outdir: Path | None = None):
        self.profile = profile
        self.tolerances = dict(tolerances or {})
        self.scale = tol_scale()
        self.rng = np.random.default_rng(seed)
        self.outdir = outdir
        self.orbits = {}

    def tol(self, name, default):
        return self.tolerances.get(name, default) * self.scale

    def orbit(self, params):
        key = params.get("orbit")
        if key is not None:
            if key not in self.orbits:
                raise ScenarioError(f"orbit {key!r} not defined by an earlier orbit.find step")
            return self.orbits[key]
        p, q = int(params.get("p", 1)), int(params["q"])
        return classify(self.profile, find_birkhoff_orbit(self.profile, p, q, params.get("seed", 0.0), params.get("mode", "max")))

    def artifact(self, name):
        if self.outdir is None:
            return None
        self.outdir.mkdir(parents=True, exist_ok=True)
        return self.outdir / name


def emit_plot_data(series, path) -> Path:
    """Two whitespace-separated columns at 17 significant digits."""
    path = Path(path)
    if isinstance(series, tuple) and len(series) == 2:
        arr = np.column_stack([np.asarray(series[0], float), np.asarray(series[1], float)])
    else:
        arr = np.asarray(series, float).reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise ValueError("series must be finite")
    with open(path, "w") as fh:
        for a, b in arr:
            fh.write(f"{a:.17g} {b:.17g}\n")
    return path


# ---------------------------------------------------------------------------
# operations

OPERATIONS: dict[str, Callable] = {}


def operation(name):
    def deco(fn):
        OPERATIONS[name] = fn
        return fn

    return deco


@operation("domain.check")
def op_domain_check(ctx: Context, params):
    rep = check_admissibility(ctx.profile, ctx.tol("closure", 1e-12))
    return [
        check("min_rho", rep.min_rho, 0.0, "positive radius of curvature", "ge"),
        check("closure_residual", rep.closure_residual, ctx.tol("closure", 1e-12), "vanishing first harmonic moments"),
        check("length_error", rep.length_error, ctx.tol("length", 1e-12), "unit boundary length"),
    ], rep.to_dict()


@operation("circle.suite")
def op_circle_suite(ctx: Context, params):
    circ = RadiusProfile.circle()
    tol = ctx.tol("circle", 1e-10)
    rng = ctx.rng
    s0, phi0 = rng.uniform(0, 1, 64), rng.uniform(0.05, math.pi - 0.05, 64)
    s1, phi1 = next_hit_array(circ, s0, phi0)
    ds = (s1 - (s0 + phi0 / math.pi) + 0.5) % 1.0 - 0.5
    D = one_step_differential(circ, PhasePoint(0.3, 0.8))
    checks = [
        check("map_s", float(np.max(np.abs(ds))), tol, "s1 = s0 + phi0 / pi"),
        check("map_phi", float(np.max(np.abs(phi1 - phi0))), tol, "phi1 = phi0"),
        check("differential", float(np.max(np.abs(D - np.array([[1, 1 / math.pi], [0, 1]])))), tol, "[[1, 1/pi], [0, 1]]"),
        check("generating_length", abs(generating_length(circ, 0.0, 0.5)[0] - 1 / math.pi), tol, "L(0, 1/2) = 1/pi"),
    ]
    for q in params.get("periods", (2, 3, 4, 8)):
        orb = find_birkhoff_orbit(circ, 1, q)
        gaps = np.diff(np.concatenate([orb.s, [orb.s[0] + 1.0]])) % 1.0
        err = max(float(np.max(np.abs(gaps - 1.0 / q))), float(np.max(np.abs(orb.phi - math.pi / q))))
        checks.append(check(f"polygon_q{q}", err, tol, "regular q-gon: gaps 1/q, phi = pi/q"))
    return checks, {}


@operation("twist.sample")
def op_twist(ctx: Context, params):
    n = int(params.get("n", 2000))
    prof = ctx.profile
    s0 = ctx.rng.uniform(0, prof.length, n)
    phi0 = ctx.rng.uniform(0.05, math.pi - 0.05, n)
    det_err, twist = 0.0, math.inf
    for s, p in zip(s0, phi0):
        pt = PhasePoint(float(s), float(p))
        D = one_step_differential(prof, pt)
        s1, p1 = next_hit_array(prof, s, p)
        det_err = max(det_err, abs(np.linalg.det(D) - math.sin(p) / math.sin(float(p1[0]))))
        twist = min(twist, D[0, 1])
    return [
        check("det_minus_sine_ratio", det_err, ctx.tol("area", 1e-11), "det df = sin phi0 / sin phi1"),
        check("min_ds1_dphi0", twist, 0.0, "twist: ds1/dphi0 > 0", "ge"),
    ], {"n": n}


@operation("orbit.find")
def op_orbit_find(ctx: Context, params):
    orb = ctx.orbit({k: v for k, v in params.items() if k != "orbit"})
    name = params.get("name", f"{params.get('p', 1)}/{params['q']}")
    ctx.orbits[name] = orb
    return [check("reflection_residual", orb.residual, ctx.tol("orbit", 1e-10), "reflection law at every impact")], orb.to_dict()


@operation("orbit.identities")
def op_orbit_identities(ctx: Context, params):
    orb = ctx.orbit(params)
    rep = check_absolute_periodicity_order(ctx.profile, orb, int(params.get("n", 1)))
    tol = ctx.tol("identities", 1e-9)
    return [
        check("dL_ds0", rep.identity_residual_s, tol, "dL/ds0 = cos phi_q ds_q/ds0 - cos phi0"),
        check("dL_dphi0", rep.identity_residual_phi, tol, "dL/dphi0 = cos phi_q ds_q/dphi0"),
    ], rep.to_dict()


@operation("perturb.slope_law")
def op_slope_law(ctx: Context, params):
    orb = ctx.orbit(params)
    seg = P.Segment(ctx.profile, orb.points[0], orb.q)
    k = int(params.get("k", 1))
    pred = P.predict_delta_differential(seg, k, 1.0)
    errs = []
    for eps in params.get("eps", (1e-3, 1e-4, 1e-5)):
        newp, _ = P.apply_targets(ctx.profile, seg.points, {k: [eps]}, orbit_points=orb.points, jet_match="linear")
        D = P.Segment(newp, orb.points[0], orb.q).D[orb.q]
        errs.append(float(np.max(np.abs((D - seg.D[orb.q]) / eps - pred))))
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    lo, hi = ctx.tolerances.get("ratio_band", (6.0, 14.0))
    return [check(f"error_ratio_{i}", r, [lo, hi], "first-order remainder: error shrinks tenfold per decade", "in")
            for i, r in enumerate(ratios)], {"errors": errs, "ratios": ratios}


def _generic_segment(ctx, params):
    n = int(params.get("n", 0))
    x0 = PhasePoint(float(params.get("s0", 0.05)), float(params.get("phi0", 1.0)))
    return n, P.Segment(ctx.profile, x0, n + 3, n + 1)


@operation("perturb.certificate")
def op_certificate(ctx: Context, params):
    n, seg = _generic_segment(ctx, params)
    M = P.assemble_M(seg, n)
    cert = P.det_via_reduction(M, seg, rtol=ctx.tol("certificate", 1e-7))
    cert_rel = max(cert["closed_form_rel_err"], cert.get("diagonal_rel_err", 0.0) or 0.0)
    return [
        check("reduced_product_rel_err", cert_rel, ctx.tol("certificate", 1e-7), "LU determinant vs reduced product"),
        check("det_nonzero", abs(M.direct_det) > 0.0, True, "det M != 0", "true"),
    ], {"M": M.to_dict(), "certificate": cert}


@operation("perturb.solve")
def op_solve(ctx: Context, params):
    n, seg = _generic_segment(ctx, params)
    scale = float(params.get("scale", 1e-4))
    checks, data = [], {"leakage": [], "lower": []}
    for j in range(n + 2):
        target = np.zeros(n + 2)
        target[j] = scale
        plan = P.solve_epsilons_for_target(seg, n, target)
        r = P.verify_plan(ctx.profile, seg, plan)
        got = np.asarray(r["achieved"]) / scale
        leak = float(np.max(np.abs(np.delete(got, j)))) if n + 2 > 1 else 0.0
        lower = float(np.max(np.abs(r["lower_change"]))) if len(r["lower_change"]) else 0.0
        data["leakage"].append(leak)
        data["lower"].append(lower)
        checks.append(check(f"unit_change_{j}", abs(got[j] - 1.0), ctx.tol("leakage", 0.1), "targeted coefficient moves by the requested amount"))
        checks.append(check(f"leakage_{j}", leak, ctx.tol("leakage", 0.1), "other targeted coefficients stay put"))
        checks.append(check(f"lower_order_{j}", lower, ctx.tol("lower_order", 100.0) * scale**2, "lower orders move at O(eps^2)"))
    return checks, data


@operation("perturb.recover")
def op_recover(ctx: Context, params):
    m = int(params.get("m", 3))
    x0 = PhasePoint(float(params.get("s0", 0.05)), float(params.get("phi0", 1.0)))
    s, f, _ = transport(ctx.profile, x0, int(params.get("steps", 4)), m + 1)[-1]
    rec = P.recover_phi_partials(s, f, m, x0.phi)
    tru = np.array([f.partial(m - k, k) for k in range(m)])
    err = float(np.max(np.abs(rec - tru)) / max(1.0, float(np.max(np.abs(tru)))))
    return [check("relative_error", err, ctx.tol("recover", 1e-7), "direct jet coefficients")], {"recovered": rec, "direct": tru}


@operation("perturb.rotate")
def op_rotate(ctx: Context, params):
    orb = ctx.orbit(params)
    delta, n = float(params.get("delta", 1e-3)), int(params.get("n", 1))
    plans, _, rep = P.rotate_differential(ctx.profile, orb, delta, n)
    checks = [check("order1_error", rep["order1_error"], ctx.tol("rotation", 1e-5), "R_delta df^q")]
    if n >= 1:
        checks.append(check("order2_free_drift", rep["order2_free_drift"], ctx.tol("restore", 100.0) * delta**2,
                            "original free second-order coefficients"))
    return checks, {"report": rep, "plans": plans}


@operation("lift.scaling")
def op_lift(ctx: Context, params):
    orb = ctx.orbit(params)
    eta = float(params.get("eta", 1e-2))
    Wu = Mf.unstable_at(ctx.profile, orb, 0, int(params.get("sign", 1)))
    newp, _ = P.apply_targets(ctx.profile, orb.points, {0: [eta]}, orbit_points=orb.points)
    Wp = Mf.unstable_at(newp, orb, 0, int(params.get("sign", 1)))
    rep = Mf.verify_tangency_lift(Wu, Wp, Wu.seed_radius * Wu.lam ** float(params.get("start", 1.5)), int(params.get("n_fit", 5)))
    out = ctx.artifact("lift.dat")
    if out is not None:
        emit_plot_data((rep.k, np.log(rep.displacement)), out)
    return [check("slope_rel_err", rep.slope_rel_err, ctx.tol("lift", 0.1), "-log lambda")], rep.to_dict()


@operation("lazutkin")
def op_lazutkin(ctx: Context, params):
    rep = lazutkin_check(ctx.profile, tuple(params.get("y_range", (1e-3, 1e-1))))
    checks = [check("exponent_gap", rep.exponent_gap, [1.0 - ctx.tol("lazutkin", 0.2), 1.0 + ctx.tol("lazutkin", 0.2)],
                    "r2 one order higher than r1", "in")]
    if "min_exponent" in params:
        checks.append(check("exponent_r1", rep.exponent_r1, float(params["min_exponent"]), "configured slope", "ge"))
    return checks, rep.to_dict()


@operation("normal_form")
def op_normal_form(ctx: Context, params):
    orb = ctx.orbit(params)
    nf = birkhoff_normal_form(Mf.BilliardReturn(ctx.profile, orb, 0), int(params.get("K", 1)))
    return [check("relative_residual", nf.relative_residual, ctx.tol("normal_form", 1e-8), "conjugacy identity G h = h N")], nf.to_dict()


@operation("manifold.grow")
def op_manifold(ctx: Context, params):
    orb = ctx.orbit(params)
    kind, sign, idx = params.get("kind", "unstable"), int(params.get("sign", 1)), int(params.get("index", 0))
    arc = (Mf.unstable_at if kind == "unstable" else Mf.stable_at)(ctx.profile, orb, idx, sign)
    arc = Mf.globalize(arc, int(params.get("steps", 4)), tol=float(params.get("chord_tol", 1e-3)))
    out = ctx.artifact(f"{kind}_{idx}_{sign}.csv")
    if out is not None:
        arc.to_csv(out)
    return [check("seed_defect", arc.seed_defect, ctx.tol("seed", 1e-10), "F(W(t)) = W(mu t) on the seed"),
            check("invariance_defect", Mf.invariance_defect(arc), ctx.tol("invariance", 1e-6), "image of arc lies on arc")], arc.to_dict()


@operation("injectivity")
def op_injectivity(ctx: Context, params):
    orbits = params.get("sets") or [list(ctx.orbit({"q": q}).s) for q in params.get("periods", ())]
    res = Mf.injectivity_check(orbits, float(params.get("delta", 1e-3)))
    want = params.get("expect")
    checks = []
    if want is not None:
        checks.append(check("orbit_ok", res["orbit_ok"] == list(want), True, "expected per-orbit verdicts", "true"))
    return checks, {"orbit_ok": res["orbit_ok"], "points": [v.__dict__ for v in res["points"]], "truncated": res["truncated"]}


@operation("fail")
def op_fail(ctx: Context, params):
    """Always-failing check, used to exercise exit codes."""
    return [check("forced", 1.0, float(params.get("tol", 0.0)) * ctx.scale, "forced failure")], {}


# ---------------------------------------------------------------------------
# scenarios


def validate_scenario(sc: dict):
    if not isinstance(sc, dict):
        raise ScenarioError("scenario must be a JSON object")
    pipe = sc.get("pipeline", [])
    if not isinstance(pipe, list):
        raise ScenarioError("pipeline must be a list")
    for i, step in enumerate(pipe):
        if not isinstance(step, dict) or "op" not in step:
            raise ScenarioError(f"pipeline step {i} needs an 'op'")
        if step["op"] not in OPERATIONS:
            raise ScenarioError(f"pipeline step {i}: unknown operation {step['op']!r}")
        if not isinstance(step.get("params", {}), dict):
            raise ScenarioError(f"pipeline step {i}: params must be an object")
    if not isinstance(sc.get("tolerances", {}), dict):
        raise ScenarioError("tolerances must be an object")
    if not isinstance(sc.get("seed", 0), int):
        raise ScenarioError("seed must be an integer")


def run_pipeline(sc: dict, base_dir: Path | None = None, outdir: Path | None = None) -> Report:
    validate_scenario(sc)
    prof = load_domain(sc.get("domain", "circle"), base_dir)
    ctx = Context(prof, sc.get("tolerances"), sc.get("seed", 0), outdir)
    steps = []
    for step in sc.get("pipeline", []):
        params = step.get("params", {})
        res = StepResult(step["op"], params)
        t0 = time.perf_counter()
        try:
            res.checks, res.data = OPERATIONS[step["op"]](ctx, params)
        except (BjlError, ValueError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            res.error = f"{type(exc).__name__}: {exc}"
        res.seconds = time.perf_counter() - t0
        steps.append(res)
    prov = {"domain_hash": prof.digest(), "version": __version__, "seed": sc.get("seed", 0), "tol_scale": ctx.scale}
    return Report(sc.get("name", "scenario"), steps, prov)


def run_scenario(path, outdir=None, timing=False) -> Report:
    """Run a scenario file; the JSON report goes to ``outdir/report.json`` (default: next to the file)."""
    path = Path(path)
    try:
        sc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}")
    outdir = Path(outdir) if outdir is not None else path.parent / (path.stem + "_out")
    rep = run_pipeline(sc, path.parent, outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(rep.to_json(timing))
    return rep


def builtin_scenario(name: str) -> dict:
    """Named scenarios used by ``verify all``."""
    if name == "circle-suite":
        return {"name": name, "domain": "circle", "pipeline": [{"op": "domain.check"}, {"op": "circle.suite"}]}
    if name == "quick":
        return {
            "name": name,
            "domain": {"mean_radius": 1 / (2 * math.pi), "harmonics": [{"k": 2, "cos": 0.3 / (2 * math.pi), "sin": 0.0},
                                                                       {"k": 3, "cos": 0.05 / (2 * math.pi), "sin": 0.02 / (2 * math.pi)}]},
            "seed": 0,
            "pipeline": [
                {"op": "domain.check"},
                {"op": "circle.suite"},
                {"op": "twist.sample", "params": {"n": 500}},
                {"op": "orbit.find", "params": {"p": 1, "q": 5, "name": "q5"}},
                {"op": "orbit.identities", "params": {"orbit": "q5"}},
                {"op": "perturb.slope_law", "params": {"orbit": "q5", "k": 2}},
                {"op": "perturb.certificate", "params": {"n": 1}},
                {"op": "perturb.solve", "params": {"n": 1}},
                {"op": "perturb.recover", "params": {"m": 3}},
                {"op": "perturb.rotate", "params": {"orbit": "q5", "delta": 1e-3, "n": 1}},
            ],
        }
    if name == "saddle":
        base = RadiusProfile.ellipse(0.8)
        return {
            "name": name,
            "domain": {"base": "ellipse:0.8", "harmonics": [{"k": 3, "cos": 1e-4 * base.mean_radius, "sin": 3e-5 * base.mean_radius}]},
            "pipeline": [
                {"op": "orbit.find", "params": {"p": 1, "q": 2, "name": "q2"}},
                {"op": "manifold.grow", "params": {"orbit": "q2", "steps": 3}},
                {"op": "lift.scaling", "params": {"orbit": "q2"}},
                {"op": "normal_form", "params": {"orbit": "q2", "K": 1}},
                {"op": "lazutkin"},
            ],
        }
    raise ScenarioError(f"unknown builtin scenario {name!r}")
