"""Command line entry point.  Exit codes: 0 pass, 1 numeric failure, 2 usage error."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness as H
from . import manifolds as Mf
from . import perturb as P
from .domain import TWO_PI, RadiusProfile, check_admissibility
from .errors import BjlError
from .orbits import classify, find_birkhoff_orbit, monodromy

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _emit(obj, out=None):
    text = json.dumps(H.jsonable(obj), sort_keys=True, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _domain(args) -> RadiusProfile:
    try:
        return H.load_domain(args.domain)
    except H.ScenarioError as exc:
        raise UsageError(str(exc))
    except json.JSONDecodeError as exc:
        raise UsageError(f"domain file is not JSON: {exc}")


def _orbit(args, prof):
    if getattr(args, "orbit", None):
        d = json.loads(Path(args.orbit).read_text())
        seeds = np.asarray(d["s"], float)
        return classify(prof, find_birkhoff_orbit(prof, int(d["p"]), int(d["q"]), seeds, mode="saddle"))
    return classify(prof, find_birkhoff_orbit(prof, args.p, args.q, args.seed, args.mode))


def _orbit_args(p):
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--seed", type=float, default=0.0, help="arc length of the first impact guess")
    p.add_argument("--mode", choices=("max", "saddle"), default="max")
    p.add_argument("--orbit", help="JSON orbit record (overrides --p/--q)")


# ---------------------------------------------------------------------------
# handlers


def cmd_domain(args):
    prof = _domain(args)
    rep = check_admissibility(prof, 1e-12 * H.tol_scale())
    if args.action == "check":
        _emit(rep.to_dict(), args.out)
        return EXIT_OK if rep.passed else EXIT_FAIL
    th = np.linspace(0.0, TWO_PI, args.n, endpoint=False)
    xy = prof.position(th)
    _emit({"profile": prof.to_dict(), "digest": prof.digest(), "admissibility": rep.to_dict(),
           "theta": th, "rho": prof.rho(th), "x": xy[0], "y": xy[1]}, args.out)
    return EXIT_OK


def cmd_orbit(args):
    prof = _domain(args)
    orb = _orbit(args, prof)
    if args.action == "find":
        _emit(orb.to_dict(), args.out)
    elif args.action == "classify":
        e = orb.eigen
        _emit({"classification": e.classification, "trace": e.trace, "eigenvalues": [complex(v).real for v in e.eigenvalues],
               "eigenvector_angles": e.eigenvector_angles, "rotation_angle": e.rotation_angle, "orbit": orb.to_dict()}, args.out)
    else:
        _emit(monodromy(prof, orb, args.order).to_dict(), args.out)
    return EXIT_OK if orb.residual <= 1e-10 * H.tol_scale() else EXIT_FAIL


def cmd_perturb(args):
    prof = _domain(args)
    orb = _orbit(args, prof)
    if args.action == "predict":
        seg = P.Segment(prof, orb.points[0], orb.q)
        pred = P.predict_delta_differential(seg, args.k, args.eps)
        newp, _ = P.apply_targets(prof, seg.points, {args.k: [args.eps]}, orbit_points=orb.points, jet_match="linear")
        got = P.Segment(newp, orb.points[0], orb.q).D[orb.q] - seg.D[orb.q]
        _emit({"predicted": pred, "measured": got, "max_error": float(np.max(np.abs(got - pred)))}, args.out)
        return EXIT_OK
    if args.action == "apply":
        plan = json.loads(Path(args.plan).read_text())
        seg = P.Segment(prof, orb.points[0], orb.q)
        targets = {int(k): [float(x) for x in v] for k, v in plan["targets"].items()}
        newp, patches = P.apply_targets(prof, seg.points, targets, orbit_points=orb.points)
        rep = check_admissibility(newp)
        _emit({"profile": newp.to_dict(), "patches": patches, "admissibility": rep.to_dict()}, args.out)
        return EXIT_OK if rep.min_rho > 0 else EXIT_FAIL
    if args.action == "solve":
        seg = P.Segment(prof, orb.points[0], args.n + 3, args.n + 1)
        target = np.array(args.target if args.target else [0.0] * (args.n + 1) + [1e-4], float)
        if target.size != args.n + 2:
            raise UsageError(f"--target needs {args.n + 2} values")
        M = P.assemble_M(seg, args.n)
        cert = P.det_via_reduction(M, seg)
        plan = P.solve_epsilons_for_target(seg, args.n, target)
        _emit({"plan": plan, "M": M, "certificate": cert}, args.out)
        return EXIT_OK if cert["passed"] else EXIT_FAIL
    plans, newp, rep = P.rotate_differential(prof, orb, args.delta, args.n)
    ok = rep["order1_error"] <= 1e-5 * H.tol_scale() and (args.n < 1 or rep["order2_free_drift"] <= 100 * args.delta**2 * H.tol_scale())
    _emit({"plans": plans, "report": rep, "profile": newp.to_dict()}, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_manifold(args):
    prof = _domain(args)
    orb = _orbit(args, prof)
    if orb.eigen.classification != "hyperbolic":
        raise BjlError(f"orbit is {orb.eigen.classification}, need hyperbolic")
    maker = Mf.unstable_at if args.kind == "unstable" else Mf.stable_at
    arc = Mf.globalize(maker(prof, orb, args.index, args.sign), args.steps, tol=args.chord_tol)
    if args.csv:
        arc.to_csv(args.csv)
    d = arc.to_dict()
    d["invariance_defect"] = Mf.invariance_defect(arc)
    _emit(d, args.out)
    return EXIT_OK


def _family(desc):
    """Family members: base domain plus one harmonic whose coefficient is the parameter."""
    base = H.load_domain(desc["domain"])
    k, which = int(desc["harmonic"]), desc.get("part", "cos")
    r0 = base.mean_radius
    p, q = int(desc.get("p", 1)), int(desc.get("q", 2))
    i_u, i_s = int(desc.get("unstable_index", 0)), int(desc.get("stable_index", 1))

    def make(mu):
        h = (k, mu * r0, 0.0) if which == "cos" else (k, 0.0, mu * r0)
        prof = RadiusProfile(r0, base.harmonics + (h,), base.bumps)
        orb = classify(prof, find_birkhoff_orbit(prof, p, q))
        return Mf.unstable_at(prof, orb, i_u, 1), Mf.stable_at(prof, orb, i_s, 1)

    return make


def cmd_tangency(args):
    try:
        desc = json.loads(Path(args.family).read_text())
        make = _family(desc)
        params = np.linspace(*desc["scan"]) if "scan" in desc else np.asarray(desc["params"], float)
    except (OSError, KeyError, json.JSONDecodeError, H.ScenarioError) as exc:
        raise UsageError(f"bad family file: {exc}")
    Wu, Ws = make(float(params[0]))
    win, tw = Mf.connection_window(Wu, Ws)
    lam = Wu.lam
    win = (win[0] * lam**-0.25, win[1] * lam**0.25)
    tw = (tw[0] * lam**0.5, tw[1] / lam**0.5)
    sc = Mf.tangency_scan(make, params, win, tw, n=args.n)
    if args.plot and sc.mu is not None:
        Wu, Ws = make(sc.mu)
        S = Mf.SplittingEvaluator(Wu, Ws, win, tw).samples(args.n)
        H.emit_plot_data((S.t, S.phi), args.plot)
    _emit(sc.to_dict(), args.out)
    rec = sc.record
    ok = rec is not None and abs(rec.value) < 1e-8 * H.tol_scale() and abs(rec.derivatives[1]) < 1e-6 * H.tol_scale()
    return EXIT_OK if ok else EXIT_FAIL


def cmd_injectivity(args):
    try:
        sets = json.loads(Path(args.orbits).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad orbit set file: {exc}")
    sets = [o["s"] if isinstance(o, dict) else o for o in sets]
    res = Mf.injectivity_check(sets, args.delta)
    _emit({"orbit_ok": res["orbit_ok"], "points": [v.__dict__ for v in res["points"]], "delta": args.delta,
           "truncated": res["truncated"]}, args.out)
    return EXIT_OK if all(res["orbit_ok"]) else EXIT_FAIL


def cmd_verify(args):
    names = ["circle-suite", "quick"] + ([] if args.quick else ["saddle"])
    ok = True
    reports = []
    for name in names:
        rep = H.run_pipeline(H.builtin_scenario(name))
        reports.append(rep.to_dict(args.timing))
        ok &= rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'} {name}", file=sys.stderr)
        for f in rep.failures():
            print(f"  {f}", file=sys.stderr)
    if args.out:
        _emit(reports, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_run(args):
    try:
        rep = H.run_scenario(args.scenario, args.outdir, args.timing)
    except OSError as exc:
        raise UsageError(str(exc))
    print(f"{'PASS' if rep.passed else 'FAIL'} {rep.name}", file=sys.stderr)
    for f in rep.failures():
        print(f"  {f}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser():
    ap = _Parser(prog="bjlab", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def with_domain(p):
        p.add_argument("--domain", default="circle", help="JSON domain file, 'circle' or 'ellipse:<aspect>'")
        p.add_argument("--out", help="write JSON here instead of stdout")
        return p

    d = with_domain(sub.add_parser("domain", help="admissibility and geometry"))
    d.add_argument("action", choices=("check", "show"))
    d.add_argument("--n", type=int, default=64, help="sample count for show")
    d.set_defaults(fn=cmd_domain)

    o = with_domain(sub.add_parser("orbit", help="periodic orbits"))
    o.add_argument("action", choices=("find", "classify", "jet"))
    _orbit_args(o)
    o.add_argument("--order", type=int, default=2)
    o.set_defaults(fn=cmd_orbit)

    p = with_domain(sub.add_parser("perturb", help="curvature perturbations"))
    p.add_argument("action", choices=("predict", "apply", "solve", "rotate"))
    _orbit_args(p)
    p.add_argument("--k", type=int, default=1, help="impact index (predict)")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--plan", help="JSON file with {'targets': {impact: [dkappa, ...]}} (apply)")
    p.add_argument("--n", type=int, default=0, help="jet order (solve, rotate)")
    p.add_argument("--target", type=float, nargs="*", help="n+2 target changes (solve)")
    p.add_argument("--delta", type=float, default=1e-3, help="rotation angle (rotate)")
    p.set_defaults(fn=cmd_perturb)

    m = with_domain(sub.add_parser("manifold", help="invariant manifolds"))
    m.add_argument("action", choices=("grow",))
    _orbit_args(m)
    m.add_argument("--kind", choices=("unstable", "stable"), default="unstable")
    m.add_argument("--index", type=int, default=0)
    m.add_argument("--sign", type=int, choices=(-1, 1), default=1)
    m.add_argument("--steps", type=int, default=4)
    m.add_argument("--chord-tol", type=float, default=1e-3)
    m.add_argument("--csv", help="CSV polyline output")
    m.set_defaults(fn=cmd_manifold)

    t = sub.add_parser("tangency", help="tangency search along a family")
    t.add_argument("action", choices=("scan",))
    t.add_argument("--family", required=True, help="JSON family file")
    t.add_argument("--n", type=int, default=97)
    t.add_argument("--plot", help="(t, Phi) plot data at the tangency parameter")
    t.add_argument("--out")
    t.set_defaults(fn=cmd_tangency)

    i = sub.add_parser("injectivity", help="strip injectivity verdicts")
    i.add_argument("--orbits", required=True, help="JSON list of s-coordinate lists (or orbit records)")
    i.add_argument("--delta", type=float, required=True)
    i.add_argument("--out")
    i.set_defaults(fn=cmd_injectivity)

    v = sub.add_parser("verify", help="built-in verification scenarios")
    v.add_argument("action", choices=("all",))
    v.add_argument("--quick", action="store_true", help="skip the saddle-connection scenario")
    v.add_argument("--timing", action="store_true")
    v.add_argument("--out")
    v.set_defaults(fn=cmd_verify)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--outdir")
    r.add_argument("--timing", action="store_true", help="include step timings (breaks byte-identical reports)")
    r.set_defaults(fn=cmd_run)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except (UsageError, H.ScenarioError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BjlError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
