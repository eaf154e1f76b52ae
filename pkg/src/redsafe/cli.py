"""Command-line frontend.

Subcommands: reduce | bounds | transform-spec | reach | verify | verify-pss |
bench | gen.  Exit codes: 0 = Safe (or plain success), 1 = Unsafe,
2 = Indeterminate, 3 = usage or input error, 4 = internal numeric failure.
Outputs are pure functions of (manifest bytes, flags, seed); wall times are
zeroed unless --timing is given.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .balancing import balance, hankel_singular_values, truncate
from .benchmarks import MOTOR_MANIFEST
from .generate import random_problem
from .model import (LtiSystem, ManifestError, ModelError, PssSystem,
                    VerificationProblem, parse_problem, serialize_problem,
                    spec_to_json, parse_spec_json)
from .reach import default_step, reach_lti
from .spectransform import TransformedSpec, transform_spec
from .verifier import VerifyOptions, bound_candidates, verify, verify_pss

EXIT_USAGE = 3
EXIT_INTERNAL = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which collides with Indeterminate
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(doc, args, text_renderer=None, csv_renderer=None) -> None:
    fmt = args.format
    if fmt == "json":
        payload = json.dumps(doc, indent=2) + "\n"
    elif fmt == "csv":
        if csv_renderer is None:
            raise ModelError("--format csv is not supported for this subcommand")
        payload = csv_renderer(doc)
    else:
        payload = text_renderer(doc) if text_renderer else json.dumps(doc, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(payload)
    else:
        sys.stdout.write(payload)


def _options_from(args) -> VerifyOptions:
    kwargs = {}
    for name in ("k0", "k_max", "gamma", "step_h", "step_lh", "order_cap",
                 "witness_budget", "vertex_cap", "seed", "time_budget"):
        val = getattr(args, name, None)
        if val is not None:
            kwargs[name] = val
    if getattr(args, "e1", None):
        kwargs["e1_methods"] = tuple(dict.fromkeys(args.e1))
    if getattr(args, "e2", None):
        kwargs["e2_methods"] = tuple(dict.fromkeys(args.e2))
    if getattr(args, "no_split", False):
        kwargs["e2_input_split"] = False
    if getattr(args, "geometric", False):
        kwargs["geometric_schedule"] = True
    return VerifyOptions(**kwargs)


def _ts(ts: TransformedSpec) -> dict:
    doc = {"delta_used": ts.delta_used.tolist(),
           "Delta": ts.Delta.tolist() if isinstance(ts.Delta, np.ndarray) else ts.Delta,
           "safe_region": spec_to_json((ts.safe_region,)) if ts.safe_region else None,
           "unsafe_region": spec_to_json((ts.unsafe_region,)),
           "witness_region": spec_to_json((ts.witness_region,)) if ts.witness_region else None}
    if ts.basis is not None:
        doc["eigenbasis_rows"] = ts.basis.tolist()
    return doc


# --------------------------------------------------------------------------
# Subcommands.
# --------------------------------------------------------------------------

def cmd_reduce(args) -> int:
    problem = parse_problem(args.manifest)
    doc = {"format_version": 1, "name": problem.name}
    if isinstance(problem.system, PssSystem):
        hsv = [hankel_singular_values(mode).tolist() for mode in problem.system.modes]
        doc["hsv"] = hsv
        if args.k is not None:
            modes, durs, boxes = [], list(problem.system.durations), []
            for mode, box in zip(problem.system.modes, problem.system.mode_initial_sets):
                abstraction = truncate(balance(mode), args.k, box)
                modes.append(abstraction.reduced)
                boxes.append(abstraction.x0_reduced)
            reduced = VerificationProblem(
                system=PssSystem(tuple(modes), tuple(durs), tuple(boxes)),
                x0=None, inputs=problem.inputs, spec=problem.spec,
                t_f=problem.t_f, name=problem.name + f"-k{args.k}")
            doc["reduced_manifest"] = str(serialize_problem(
                reduced, args.reduced or _default_reduced_path(args)))
    else:
        doc["hsv"] = hankel_singular_values(problem.system).tolist()
        if args.k is not None:
            abstraction = truncate(balance(problem.system), args.k, problem.x0)
            reduced = VerificationProblem(
                system=abstraction.reduced, x0=abstraction.x0_reduced,
                inputs=problem.inputs, spec=problem.spec, t_f=problem.t_f,
                name=problem.name + f"-k{args.k}")
            doc["reduced_manifest"] = str(serialize_problem(
                reduced, args.reduced or _default_reduced_path(args)))

    def text(d):
        lines = [f"name: {d['name']}"]
        hsv = d["hsv"]
        rows = hsv if hsv and isinstance(hsv[0], list) else [hsv]
        for i, sig in enumerate(rows):
            label = f"mode {i} " if len(rows) > 1 else ""
            lines.append(label + "hsv: " + "  ".join(f"{s:.6e}" for s in sig))
        if "reduced_manifest" in d:
            lines.append(f"reduced manifest: {d['reduced_manifest']}")
        return "\n".join(lines) + "\n"

    _emit(doc, args, text)
    return 0


def _default_reduced_path(args) -> Path:
    src = Path(args.manifest)
    return src.with_name(f"{src.stem}_k{args.k}.json")


def cmd_bounds(args) -> int:
    problem = parse_problem(args.manifest)
    opts = _options_from(args)
    ks = [args.k] if args.k is not None else \
        list(range(problem.system.p + 1, problem.system.n + 1))
    rows = []
    if isinstance(problem.system, PssSystem):
        parts = [(f"mode{i}", mode, box, dur)
                 for i, (mode, box, dur) in enumerate(
                     zip(problem.system.modes, problem.system.mode_initial_sets,
                         problem.system.durations))]
    else:
        parts = [("", problem.system, problem.x0, problem.t_f)]
    for label, sys_, x0, horizon in parts:
        bal = balance(sys_)
        for k in ks:
            t0 = time.perf_counter()
            pairs, delta_min, _, notes = bound_candidates(
                bal, k, x0, problem.inputs, horizon, opts)
            dt = time.perf_counter() - t0 if args.timing else 0.0
            for plabel, b in pairs:
                rows.append({"system": problem.name + (f"[{label}]" if label else ""),
                             "k": k, "method": plabel,
                             "e1": b.e1.tolist(), "e2": b.e2.tolist(),
                             "delta": b.delta.tolist(), "time_s": round(dt, 6)})
            if delta_min is not None:
                rows.append({"system": problem.name + (f"[{label}]" if label else ""),
                             "k": k, "method": "min", "e1": None, "e2": None,
                             "delta": delta_min.tolist(), "time_s": round(dt, 6)})
            for note in notes:
                print(f"note: k={k} {note}", file=sys.stderr)
    doc = {"format_version": 1, "rows": rows}
    _emit(doc, args, _bounds_text, _bounds_csv)
    return 0


def _fmt_vec(v) -> str:
    if v is None:
        return "-"
    return "[" + " ".join(f"{x:.4e}" for x in v) + "]"


def _bounds_text(doc) -> str:
    header = f"{'system':<28} {'k':>3} {'method':<32} {'e1':<26} {'e2':<26} {'delta':<26} {'t(s)':>8}"
    lines = [header, "-" * len(header)]
    for r in doc["rows"]:
        lines.append(f"{r['system']:<28} {r['k']:>3} {r['method']:<32} "
                     f"{_fmt_vec(r['e1']):<26} {_fmt_vec(r['e2']):<26} "
                     f"{_fmt_vec(r['delta']):<26} {r['time_s']:>8.3f}")
    return "\n".join(lines) + "\n"


def _bounds_csv(doc) -> str:
    lines = ["system,k,method,output,e1,e2,delta,time_s"]
    for r in doc["rows"]:
        for i, d in enumerate(r["delta"]):
            e1 = r["e1"][i] if r["e1"] is not None else ""
            e2 = r["e2"][i] if r["e2"] is not None else ""
            lines.append(f"{r['system']},{r['k']},{r['method']},{i},{e1},{e2},{d},{r['time_s']}")
    return "\n".join(lines) + "\n"


def cmd_transform_spec(args) -> int:
    doc_in = json.loads(Path(args.spec_json).read_text())
    if "spec" not in doc_in or "delta" not in doc_in:
        raise ManifestError("transform-spec input needs 'spec' and 'delta' fields")
    specs = parse_spec_json(doc_in["spec"])
    delta = doc_in["delta"]
    if delta and isinstance(delta[0], list):
        transformed = [[_ts(transform_spec(s, np.asarray(d, dtype=float)))
                        for s in specs] for d in delta]
        doc = {"format_version": 1, "per_mode": transformed}
    else:
        doc = {"format_version": 1,
               "transformed": [_ts(transform_spec(s, np.asarray(delta, dtype=float)))
                               for s in specs]}
    _emit(doc, args, None)
    return 0


def cmd_reach(args) -> int:
    problem = parse_problem(args.manifest)
    if not isinstance(problem.system, LtiSystem):
        raise ManifestError("reach expects an LTI manifest (reduce a PSS per mode first)")
    sys_ = problem.system
    step_h = args.step_h or default_step(problem.t_f, sys_.A, lh=args.step_lh or 0.1)
    steps = reach_lti(sys_, problem.x0, problem.inputs, problem.t_f,
                      step_h, args.order_cap or 20)
    doc = {"format_version": 1, "name": problem.name, "step_h": step_h,
           "steps": [{"t0": s.t0, "t1": s.t1,
                      "center": s.outputs.center.tolist(),
                      "generators": s.outputs.generators.tolist()} for s in steps]}

    def csv(d):
        p = len(d["steps"][0]["center"]) if d["steps"] else 0
        cols = ",".join(f"y{i}_lo,y{i}_hi" for i in range(p))
        lines = [f"t0,t1,{cols}"]
        for s in steps:
            hull = s.outputs.interval_hull()
            vals = ",".join(f"{lo},{hi}" for lo, hi in zip(hull.lb, hull.ub))
            lines.append(f"{s.t0},{s.t1},{vals}")
        return "\n".join(lines) + "\n"

    def text(d):
        lines = [f"name: {d['name']}  steps: {len(d['steps'])}  step_h: {d['step_h']:.3e}"]
        for s in steps:
            hull = s.outputs.interval_hull()
            rng = "  ".join(f"[{lo:.4e}, {hi:.4e}]" for lo, hi in zip(hull.lb, hull.ub))
            lines.append(f"t in [{s.t0:.4f}, {s.t1:.4f}]  y in {rng}")
        return "\n".join(lines) + "\n"

    _emit(doc, args, text, csv)
    return 0


def _verdict_doc(verdict) -> dict:
    doc = {"format_version": 1, "outcome": verdict.outcome, "k_used": verdict.k_used,
           "delta_used": verdict.delta_used.tolist() if verdict.delta_used is not None else None,
           "per_k_log": [{"k": e.k, "bounds": e.bounds, "outcome": e.outcome,
                          "seconds": e.seconds, "notes": list(e.notes)}
                         for e in verdict.per_k_log]}
    if verdict.delta is not None:
        doc["delta"] = {"e1": verdict.delta.e1.tolist(), "e2": verdict.delta.e2.tolist(),
                        "delta": verdict.delta.delta.tolist(), "rho": verdict.delta.rho,
                        "e1_method": verdict.delta.e1_method,
                        "e2_method": verdict.delta.e2_method,
                        "gamma": verdict.delta.gamma}
    if verdict.mode_deltas is not None:
        doc["mode_deltas"] = [d.tolist() for d in verdict.mode_deltas]
    if verdict.witness is not None:
        w = verdict.witness
        doc["witness"] = {"init_state": w.init_state.tolist(), "margin": w.margin,
                          "predicate_index": w.predicate_index,
                          "time": float(w.times[w.sample_index]),
                          "output": w.outputs[w.sample_index].tolist()}
    return doc


def _verdict_text(doc) -> str:
    lines = [f"outcome: {doc['outcome']}"]
    if doc.get("k_used") is not None:
        lines.append(f"k used: {doc['k_used']}")
    if doc.get("delta_used") is not None:
        lines.append(f"delta used: {_fmt_vec(doc['delta_used'])}")
    if "witness" in doc:
        w = doc["witness"]
        lines.append(f"witness at t={w['time']:.6g} with margin {w['margin']:.3e}")
    for e in doc["per_k_log"]:
        note = ("  " + "; ".join(e["notes"])) if e["notes"] else ""
        lines.append(f"  k={e['k']}: {e['outcome']}{note}")
    return "\n".join(lines) + "\n"


def cmd_verify(args) -> int:
    problem = parse_problem(args.manifest)
    opts = _options_from(args)
    verdict = verify(problem, opts)
    doc = _verdict_doc(verdict)
    if not args.timing:
        for e in doc["per_k_log"]:
            e["seconds"] = 0.0
    _emit(doc, args, _verdict_text)
    return verdict.exit_code


def cmd_verify_pss(args) -> int:
    problem = parse_problem(args.manifest)
    opts = _options_from(args)
    verdict = verify_pss(problem, opts)
    doc = _verdict_doc(verdict)
    if not args.timing:
        for e in doc["per_k_log"]:
            e["seconds"] = 0.0
    _emit(doc, args, _verdict_text)
    return verdict.exit_code


def cmd_bench(args) -> int:
    method_sets = {
        "theoretical": VerifyOptions(e1_methods=(bnd.E1_THEOREM1,),
                                     e2_methods=(bnd.E2_THEOREM3,)),
        "mixed": VerifyOptions(e1_methods=(bnd.E1_THEOREM2,),
                               e2_methods=(bnd.SIMULATION,)),
    }
    manifests = [MOTOR_MANIFEST] + [Path(x) for x in (args.extra or [])]
    rows = []
    for mpath in manifests:
        if not Path(mpath).is_file():
            print(f"notice: benchmark manifest {mpath} not found, skipped", file=sys.stderr)
            continue
        problem = parse_problem(mpath)
        ks = args.ks or [4, 5]
        if isinstance(problem.system, PssSystem):
            parts = [(f"[mode{i}]", mode, box, dur)
                     for i, (mode, box, dur) in enumerate(
                         zip(problem.system.modes, problem.system.mode_initial_sets,
                             problem.system.durations))]
        else:
            parts = [("", problem.system, problem.x0, problem.t_f)]
        for label, sys_, x0, horizon in parts:
            bal = balance(sys_)
            for k in ks:
                if not (sys_.p < k <= sys_.n):
                    continue
                for mname, opts in method_sets.items():
                    t0 = time.perf_counter()
                    pairs, delta_min, best, _ = bound_candidates(
                        bal, k, x0, problem.inputs, horizon, opts)
                    dt = time.perf_counter() - t0 if args.timing else 0.0
                    if best is None:
                        continue
                    rows.append({"system": problem.name + label, "k": k, "method": mname,
                                 "e1": best.e1.tolist(), "e2": best.e2.tolist(),
                                 "delta": best.delta.tolist(), "time_s": round(dt, 6)})
    doc = {"format_version": 1, "rows": rows}
    _emit(doc, args, _bounds_text, _bounds_csv)
    return 0


def cmd_gen(args) -> int:
    problem = random_problem(args.seed, args.n, args.m, args.p,
                             free_dims=args.free_dims, spec_scale=args.spec_scale)
    out = Path(args.output or f"random_n{args.n}_seed{args.seed}.json")
    serialize_problem(problem, out)
    doc = {"format_version": 1, "manifest": str(out), "n": args.n, "m": args.m,
           "p": args.p, "seed": args.seed}
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    return 0


# --------------------------------------------------------------------------
# Parser assembly.
# --------------------------------------------------------------------------

def _add_common(sp, manifest=True):
    if manifest:
        sp.add_argument("manifest", help="path to a problem manifest (JSON)")
    sp.add_argument("--seed", type=int, default=0, help="seed for randomized steps")
    sp.add_argument("--threads", type=int, default=1,
                    help="worker hint (vectorized math already runs parallel)")
    sp.add_argument("--output", help="write the result to this file instead of stdout")
    sp.add_argument("--format", choices=("json", "text", "csv"), default="text",
                    help="output rendering (default text; csv only for "
                         "bounds, reach and bench)")
    sp.add_argument("--timing", action="store_true",
                    help="include measured wall times (breaks byte-for-byte determinism)")


def _add_verify_opts(sp):
    sp.add_argument("--k0", type=int, help="initial abstraction order (default p+1)")
    sp.add_argument("--k-max", dest="k_max", type=int, help="largest order to try (default n)")
    sp.add_argument("--e1", action="append",
                    choices=(bnd.E1_THEOREM1, bnd.E1_THEOREM2, bnd.SIMULATION),
                    help="enable a zero-input bound method (repeatable)")
    sp.add_argument("--e2", action="append",
                    choices=(bnd.E2_THEOREM3, bnd.SIMULATION),
                    help="enable a zero-state bound method (repeatable)")
    sp.add_argument("--no-split", action="store_true",
                    help="disable the center+deviation refinement of the e2 simulation")
    sp.add_argument("--gamma", type=float, help="bloat factor for simulation bounds")
    sp.add_argument("--step-h", dest="step_h", type=float, help="reach step size override")
    sp.add_argument("--step-lh", dest="step_lh", type=float,
                    help="reach step control ||A||*h (default 0.1)")
    sp.add_argument("--order-cap", dest="order_cap", type=int,
                    help="zonotope order cap per dimension (default 20)")
    sp.add_argument("--witness-budget", dest="witness_budget", type=int,
                    help="max candidate trajectories in the witness search")
    sp.add_argument("--vertex-cap", dest="vertex_cap", type=int,
                    help="vertex budget of the e1 simulation bound")
    sp.add_argument("--time-budget", dest="time_budget", type=float,
                    help="wall-clock budget in seconds; overrun yields Indeterminate")
    sp.add_argument("--geometric", action="store_true",
                    help="grow k geometrically instead of by 1")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="redsafe",
                     description="Safety verification of high-dimensional linear systems "
                                 "via balanced-truncation output abstractions")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("reduce", parents=[], help="balance, report Hankel values, "
                        "and optionally write a reduced-order manifest")
    _add_common(sp)
    sp.add_argument("-k", type=int, help="truncation order (omit for Hankel values only)")
    sp.add_argument("--reduced", help="path of the reduced manifest")
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("bounds", help="error bounds per method at one or all orders")
    _add_common(sp)
    _add_verify_opts(sp)
    sp.add_argument("-k", type=int, help="abstraction order (default: all valid orders)")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("transform-spec", help="transform a spec with a given delta")
    sp.add_argument("spec_json", help="JSON file with 'spec' and 'delta' fields "
                    "(delta may be a per-mode list of vectors)")
    _add_common(sp, manifest=False)
    sp.set_defaults(func=cmd_transform_spec)

    sp = sub.add_parser("reach", help="output reach step sets of an LTI manifest")
    _add_common(sp)
    sp.add_argument("--step-h", dest="step_h", type=float, help="step size override")
    sp.add_argument("--step-lh", dest="step_lh", type=float, help="step control ||A||*h")
    sp.add_argument("--order-cap", dest="order_cap", type=int, help="zonotope order cap")
    sp.set_defaults(func=cmd_reach)

    sp = sub.add_parser("verify", help="run the verification semi-algorithm (LTI)")
    _add_common(sp)
    _add_verify_opts(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("verify-pss", help="run the verification semi-algorithm (PSS)")
    _add_common(sp)
    _add_verify_opts(sp)
    sp.set_defaults(func=cmd_verify_pss)

    sp = sub.add_parser("bench", help="bound tables for the bundled motor benchmark "
                        "plus any user-supplied manifests")
    _add_common(sp, manifest=False)
    sp.add_argument("--extra", nargs="*", help="additional benchmark manifests "
                    "(e.g. SLICOT models wrapped in a manifest); missing files are skipped")
    sp.add_argument("--ks", type=int, nargs="*", help="orders to tabulate (default 4 5)")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("gen", help="generate a random stable test instance")
    _add_common(sp, manifest=False)
    sp.add_argument("-n", type=int, required=True, help="state dimension")
    sp.add_argument("-m", type=int, default=1, help="input count")
    sp.add_argument("-p", type=int, default=1, help="output count")
    sp.add_argument("--free-dims", dest="free_dims", type=int,
                    help="number of non-degenerate initial-box coordinates")
    sp.add_argument("--spec-scale", dest="spec_scale", type=float, default=3.0,
                    help="safe-box size relative to the estimated output range")
    sp.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, ModelError) as exc:
        print(f"redsafe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # numeric failures, solver breakdowns
        print(f"redsafe: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
