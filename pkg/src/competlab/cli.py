"""Command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 geometry/precondition error,
4 solver non-convergence.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import acf, almgren, blowup, pipeline
from .config import load_config
from .errors import LabError
from .grid import lift_state
from .io import load_state, save_state, write_csv, write_json
from .solver import solve

log = logging.getLogger("competlab")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in _floats(text)]


def _emit(args, name, cert_or_dict):
    d = cert_or_dict.as_dict() if hasattr(cert_or_dict, "as_dict") else cert_or_dict
    if args.out:
        write_json(Path(args.out) / f"{name}.json", d)
    print(json.dumps(d, indent=2, sort_keys=True, default=str))


def cmd_solve(args):
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    results = solve(cfg.solve, cfg.spec)
    for r in results:
        stem = save_state(r.state, out / "states" / f"beta{pipeline._tag(r.beta)}")
        print(f"beta={r.beta:g} iterations={r.iterations} residual={r.residual_norm:.3e} -> {stem}")
    return 0


def cmd_almgren(args):
    st = load_state(args.state)
    if args.lift:
        st = lift_state(st)
    h = st.grid.h
    radii = almgren.geometric_ladder(h, args.r_max, args.ratio, args.r_min)
    prof = almgren.monotonicity_report(st, radii, pohozaev=args.pohozaev)
    head, data = prof.rows()
    if args.out:
        write_csv(Path(args.out) / "almgren.csv", head, data)
    _emit(args, "almgren", almgren.monotonicity_certificate(prof))
    return 0


def cmd_acf(args):
    st = load_state(args.state)
    fr = pipeline.acf_frame(st)
    v = fr.state
    lo, hi = max(1.0, 4 * v.grid.h), v.grid.half_width / 3
    if hi <= lo * 1.05:
        print(f"radius window [{lo:.3g}, {hi:.3g}] is empty in the blowup frame; nothing to certify")
        return 0
    radii = almgren.geometric_ladder(v.grid.h, hi, r_min=lo)
    prof = acf.acf_profile(v, radii, acf.AcfParams(M=fr.M_comp, eta=args.eta))
    cert = acf.acf_monotonicity_report(prof)
    if args.out:
        head, data = prof.rows()
        write_csv(Path(args.out) / "acf.csv", head, data)
    _emit(args, "acf", cert)
    return 0


def cmd_fh(args):
    cert = acf.friedman_hayman_check(args.caps)
    d = cert.as_dict()
    for k in ("theta", "sums", "lambda"):
        d["fitted"].pop(k, None)
    _emit(args, "friedman_hayman", d)
    return 0 if cert.passed else 1


def cmd_stereo(args):
    reps = pipeline.stereo_suite(_ints(args.res))
    d = {"gaps": [r["gaps"].tolist() for r in reps], "orders": [r["orders"].tolist() for r in reps]}
    _emit(args, "stereographic", d)
    return 0


def cmd_blowup(args):
    st = load_state(args.state)
    center = "auto" if args.center == "auto" else np.array(_floats(args.center))
    fr = blowup.blowup_scale(st, center, args.radius)
    d = {"x0": fr.x0.tolist(), "L": fr.L, "r_scale": fr.r_scale, "M_comp": fr.M_comp,
         "origin_sum": fr.origin_sum, "interp_error": fr.interp_error}
    if args.out:
        save_state(fr.state, Path(args.out) / "blowup_frame")
    _emit(args, "blowup", d)
    return 0


def cmd_blowdown(args):
    st = load_state(args.state)
    fr = pipeline.acf_frame(st)
    rows = blowup.blowdown_ladder(fr.state, _floats(args.rho_ladder))
    if args.out:
        write_csv(Path(args.out) / "blowdown.csv", ["rho", "residual", "a", "b"],
                  [[r["rho"], r["residual"], r["a"], r["b"]] for r in rows])
    _emit(args, "blowdown", {"ladder": [{k: (v.tolist() if hasattr(v, "tolist") else v) for k, v in r.items()}
                                        for r in rows]})
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    summary = pipeline.run_experiment(cfg, args.out, plots=not args.no_plots)
    for c in summary["certificates"]:
        flag = "SKIP" if c["skipped"] else ("PASS" if c["pass"] else "FAIL")
        print(f"{flag}  {c['id']}  (criterion {c['criterion']})")
    return 0


def cmd_report(args):
    bundle = Path(args.bundle)
    summary = json.loads((bundle / "summary.json").read_text())
    for c in summary["certificates"]:
        if c["id"] in pipeline.CRITERIA:
            flag = "PASS" if c["pass"] else "FAIL"
            print(f"criterion {c['criterion']:>2}  {flag}  {c['id']}")
    for p in pipeline.emit_plots(bundle):
        print(f"wrote {p}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="competlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve the beta schedule of a config and store snapshots")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("almgren", help="frequency profile and monotonicity certificate of a snapshot")
    s.add_argument("--state", required=True)
    s.add_argument("--r-min", type=float, help="default 4h")
    s.add_argument("--r-max", type=float, default=0.8)
    s.add_argument("--ratio", type=float, default=1.05)
    s.add_argument("--lift", action="store_true", help="analyse the constant extension to N = 3")
    s.add_argument("--pohozaev", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_almgren)

    s = sub.add_parser("acf", help="two-phase monotonicity at the interface point of a snapshot")
    s.add_argument("--state", required=True)
    s.add_argument("--eta", type=float, default=0.24)
    s.add_argument("--out")
    s.set_defaults(func=cmd_acf)

    s = sub.add_parser("fh-check", help="antipodal cap partition bound")
    s.add_argument("--caps", type=int, default=64)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fh)

    s = sub.add_parser("stereo-check", help="stereographic divergence identity convergence")
    s.add_argument("--res", default="64,128,256")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stereo)

    s = sub.add_parser("blowup", help="blowup frame of a snapshot")
    s.add_argument("--state", required=True)
    s.add_argument("--center", default="auto", help="'auto' or comma-separated coordinates")
    s.add_argument("--radius", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_blowup)

    s = sub.add_parser("blowdown", help="blowdown ladder and one-dimensional profile fit")
    s.add_argument("--state", required=True)
    s.add_argument("--rho-ladder", default="2,4,8")
    s.add_argument("--out")
    s.set_defaults(func=cmd_blowdown)

    s = sub.add_parser("sweep", help="run a full experiment config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="print the acceptance table of a bundle and emit plots")
    s.add_argument("--bundle", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except LabError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
