"""Synthetic desk-scale run: generate, ingest, train the ensemble and the baselines, evaluate.

    python scripts/desk_scale.py --seeds 0 1 2 3 --scale 0.25 --work runs/desk
"""

import argparse
import json
import os
import time

from netprofile import cli


def step(*argv):
    code = cli.main([str(a) for a in argv])
    if code != 0:
        raise SystemExit(f"{argv[0]} failed with exit code {code}")


def run_seed(seed, scale, work, models, batches):
    root = os.path.join(work, f"seed{seed}")
    t0 = time.perf_counter()
    step("synth", "--scale", scale, "--seed", seed, "--users", 0, "--out", f"{root}/data")
    step("ingest", "--data", f"{root}/data", "--out", f"{root}/streams")
    out = {}
    for kind in models:
        extra = ["--batches", batches] if kind == "lstm" else []
        step("train", "--streams", f"{root}/streams/streams.jsonl", "--model", kind, "--seed", seed, "--out", f"{root}/{kind}", *extra)
        step("eval", "--bundle", f"{root}/{kind}", "--streams", f"{root}/streams/streams.jsonl", "--out", f"{root}/eval_{kind}")
        with open(f"{root}/eval_{kind}/metrics.json") as fh:
            m = json.load(fh)
        out[kind] = {"app": m["app"]["accuracy"], "activity": {a: t["accuracy"] for a, t in m["activity"].items()}}
    out["seconds"] = round(time.perf_counter() - t0, 1)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--scale", type=float, default=0.25)
    ap.add_argument("--batches", type=int, default=2000)
    ap.add_argument("--models", nargs="+", default=["lstm", "forest", "svm"])
    ap.add_argument("--work", default="runs/desk")
    args = ap.parse_args()
    summary = {}
    for seed in args.seeds:
        summary[seed] = run_seed(seed, args.scale, args.work, args.models, args.batches)
        print(seed, json.dumps(summary[seed]))
    os.makedirs(args.work, exist_ok=True)
    with open(os.path.join(args.work, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
