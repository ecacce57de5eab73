"""Run an experiment config end to end and print its certificate table.

    python scripts/run_sweep.py configs/sweep.yaml --out out/sweep
"""
import argparse
import json

from competlab import pipeline
from competlab.config import load_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--no-plots", action="store_true")
    args = p.parse_args()
    cfg = load_config(args.config)
    summary = pipeline.run_experiment(cfg, args.out, plots=not args.no_plots)
    for c in summary["certificates"]:
        flag = "SKIP" if c["skipped"] else ("PASS" if c["pass"] else "FAIL")
        print(f"{flag}  criterion {c['criterion']:>2}  {c['id']}")
    if summary["errors"]:
        print(json.dumps(summary["errors"], indent=2))


if __name__ == "__main__":
    main()
