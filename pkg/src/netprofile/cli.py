"""Command line entry point: ``netprofile <command> [options]``.

Commands: synth, ingest, train, eval, profile, gradcheck. Exit codes: 0 on
success (and for --help), 64 for usage errors, 2 for bad input data, 70 for
internal failures, 1 when a gradient check fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import traceback
from typing import Dict, List, Optional, Sequence

import numpy as np

from netprofile.config import RunConfig, read_kv
from netprofile.errors import BadConfig, DataError
from netprofile.fsutil import atomic_write, atomic_write_bytes

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_DATA = 2
EXIT_USAGE = 64
EXIT_INTERNAL = 70

log = logging.getLogger("netprofile")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="netprofile", description="Encrypted-traffic app/activity classification and user profiling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset and user event logs")
    _common(p)
    p.add_argument("--scale", type=float, help="multiply every class count")
    p.add_argument("--users", type=int, help="synthetic users for profiling (0 to skip)")
    p.add_argument("--events-per-user", type=int)

    p = sub.add_parser("ingest", help="turn pcap files into a streams JSONL")
    _common(p)
    p.add_argument("pcaps", nargs="*", help="capture files")
    p.add_argument("--data", help="ingest every .pcap in this directory (labels.jsonl there is used when present)")
    p.add_argument("--labels", help="label sidecar JSONL joined by flow key")
    p.add_argument("--device-ip")

    p = sub.add_parser("train", help="train a model bundle on a streams JSONL")
    _common(p)
    p.add_argument("--streams", required=True)
    p.add_argument("--model", choices=("lstm", "forest", "svm"), default="lstm")
    p.add_argument("--batches", type=int, help="training batches for the recurrent ensemble")
    p.add_argument("--gate-depth", type=int)

    p = sub.add_parser("eval", help="score a model bundle on held-out streams")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--streams", required=True)
    p.add_argument("--all", action="store_true", help="score every labeled stream, not only the held-out split")

    p = sub.add_parser("profile", help="train or apply naive Bayes trait models from event logs")
    _common(p)
    p.add_argument("mode", choices=("train", "predict"))
    p.add_argument("--events", required=True, help='event log JSONL {"user", "ts", "app", "activity"}')
    p.add_argument("--traits", help="trait config JSON (train)")
    p.add_argument("--labels", help="per-user ground-truth labels JSON (train)")
    p.add_argument("--model", help="trait model JSON (predict)")

    p = sub.add_parser("gradcheck", help="compare BPTT gradients with finite differences")
    _common(p)
    p.add_argument("--hidden", type=int, default=6)
    p.add_argument("--inputs", type=int, default=5)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--gate-depth", type=int)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--corrupt", action="store_true", help="negative control: perturb the analytic gradient")
    return parser


def load_config(args) -> RunConfig:
    kv = read_kv(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig.from_kv(kv)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "scale", None) is not None:
        cfg.scale = args.scale
    if getattr(args, "batches", None) is not None:
        cfg.n_batches = args.batches
    if getattr(args, "gate_depth", None) is not None:
        cfg.gate_depth = args.gate_depth
    cfg.validate()
    return cfg


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _out_dir(args, cfg: RunConfig, default: str) -> str:
    d = args.out or default
    os.makedirs(d, exist_ok=True)
    return d


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    from netprofile import synth

    cfg = load_config(args)
    scfg = synth.SynthConfig.from_kv(cfg.extra, scale=cfg.scale, seed=cfg.seed)
    scfg.device_ip = cfg.device_ip
    out = _out_dir(args, cfg, cfg.data_dir)
    res = synth.gen_dataset(scfg)
    files: Dict[str, bytes] = dict(res["files"])
    users = args.users if args.users is not None else cfg.users
    per_user = args.events_per_user if args.events_per_user is not None else cfg.events_per_user
    if users > 0:
        pop = synth.default_population(users)
        events, truth = synth.gen_users(pop, per_user, cfg.seed)
        files["events.jsonl"] = "".join(json.dumps(e, sort_keys=True) + "\n" for e in events).encode()
        files["users.json"] = _json(truth).encode()
        files["traits.json"] = _json(synth.population_traits(pop)).encode()
    for name, blob in sorted(files.items()):
        atomic_write_bytes(os.path.join(out, name), blob)
    manifest = {
        "seed": cfg.seed,
        "scale": scfg.scale,
        "config_sha256": _sha256(json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()),
        "counts": scfg.scaled_counts(),
        "files": {name: _sha256(blob) for name, blob in sorted(files.items())},
    }
    atomic_write(os.path.join(out, "manifest.json"), _json(manifest))
    print(f"wrote {len(files)} files and manifest.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- ingest

def cmd_ingest(args) -> int:
    from netprofile.capture import dump_streams_jsonl
    from netprofile.pipeline import ingest_files, read_labels

    cfg = load_config(args)
    paths: List[str] = list(args.pcaps)
    labels_path = args.labels
    if args.data:
        paths += sorted(os.path.join(args.data, f) for f in os.listdir(args.data) if f.endswith(".pcap"))
        side = os.path.join(args.data, "labels.jsonl")
        if labels_path is None and os.path.exists(side):
            labels_path = side
    if not paths and not args.data:
        raise UsageError("ingest: give pcap files or --data")
    labels = read_labels(labels_path) if labels_path else None
    # everything is parsed before anything is written, so a bad file leaves no output
    streams, report = ingest_files(paths, args.device_ip or cfg.device_ip, labels)
    out = _out_dir(args, cfg, cfg.out_dir)
    atomic_write(os.path.join(out, "streams.jsonl"), dump_streams_jsonl(streams))
    atomic_write(os.path.join(out, "ingest_report.json"), _json(report))
    print(f"{report['streams']} streams ({report['kept_streams']} kept, {report['labeled_streams']} labeled) -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train / eval

def _load_dataset(path: str, cfg: RunConfig):
    from netprofile.capture import load_streams_jsonl
    from netprofile.dataset import from_streams

    try:
        with open(path) as fh:
            streams = load_streams_jsonl(fh.read())
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise BadConfig(f"{path}: not a streams JSONL ({exc})") from None
    return from_streams(streams, cfg.size_cap, cfg.delay_cap)


def cmd_train(args) -> int:
    from netprofile.baselines import train_baseline
    from netprofile.dataset import split_indices
    from netprofile.models import Ensemble, train
    from netprofile.rng import substream

    cfg = load_config(args)
    data = _load_dataset(args.streams, cfg)
    if len(data) == 0:
        raise BadConfig("no labeled streams to train on")
    tr, te = split_indices(len(data), substream(cfg.seed, "split"), cfg.test_fraction)
    train_set = data.subset(tr)
    out = _out_dir(args, cfg, cfg.model_dir)
    if args.model == "lstm":
        ens = Ensemble.init(cfg.seed, cfg.gate_depth, cfg.tau)

        def progress(step, lg):
            if (step + 1) % 100 == 0:
                log.info("batch %d: app loss %.4f", step + 1, float(np.mean(lg.app[-100:])))

        lg = train(ens, train_set, cfg.n_batches, cfg.batch_size, cfg.seed, cfg.lr, progress=progress)
        ens.meta.update(seed=cfg.seed, n_batches=cfg.n_batches, batch_size=cfg.batch_size, lr=cfg.lr, gate_depth=cfg.gate_depth)
        ens.save(out)
        losses = {"app": lg.app[-1] if lg.app else None}
    else:
        model = train_baseline(
            args.model,
            train_set,
            cfg.seed,
            app_forest=(cfg.app_trees, cfg.app_depth),
            activity_forest=(cfg.activity_trees, cfg.activity_depth),
            svm_lambda=cfg.svm_lambda,
            svm_epochs=cfg.svm_epochs,
        )
        model.meta["seed"] = cfg.seed
        model.save(out)
        losses = {}
    bundle = {
        "model": args.model,
        "seed": cfg.seed,
        "size_cap": cfg.size_cap,
        "delay_cap": cfg.delay_cap,
        "test_fraction": cfg.test_fraction,
        "train_keys": sorted(train_set.keys),
        "test_keys": sorted(data.keys[i] for i in te),
    }
    atomic_write(os.path.join(out, "bundle.json"), _json(bundle))
    print(f"trained {args.model} on {len(train_set)} streams ({len(te)} held out) -> {out} {losses}")
    return EXIT_OK


def load_bundle(directory: str):
    from netprofile.baselines import StatsBaseline
    from netprofile.models import Ensemble

    try:
        with open(os.path.join(directory, "bundle.json")) as fh:
            bundle = json.load(fh)
    except OSError:
        raise BadConfig(f"{directory}: no bundle.json") from None
    kind = bundle["model"]
    model = Ensemble.load(directory) if kind == "lstm" else StatsBaseline.load(directory, kind)
    return bundle, model


def prediction_rows(model, data) -> List[dict]:
    """Per-stream predictions; the activity column uses the true-app classifier."""
    from netprofile.dataset import ACTIVITIES, APPS, ROUTED_APPS

    app_pred = np.asarray(model.predict_app(data))
    act_pred = np.full(len(data), -1)
    for app in ROUTED_APPS:
        idx = data.of_app(app)
        if len(idx):
            act_pred[idx] = model.predict_activity(app, data.subset(idx))
    rows = []
    for i in range(len(data)):
        app = APPS[data.app[i]]
        acts = ACTIVITIES[app]
        rows.append(
            {
                "key": data.keys[i],
                "app": app,
                "app_pred": APPS[app_pred[i]],
                "activity": acts[data.act[i]] if data.act[i] >= 0 else None,
                "activity_pred": acts[act_pred[i]] if act_pred[i] >= 0 and app in ROUTED_APPS else None,
            }
        )
    return rows


def cmd_eval(args) -> int:
    from netprofile.models import confusion_csv, evaluate

    cfg = load_config(args)
    bundle, model = load_bundle(args.bundle)
    cfg.size_cap, cfg.delay_cap = bundle["size_cap"], bundle["delay_cap"]
    data = _load_dataset(args.streams, cfg)
    if not args.all:
        wanted = set(bundle["test_keys"])
        data = data.subset([i for i, k in enumerate(data.keys) if k in wanted])
    metrics = evaluate(model, data)
    metrics["model"] = bundle["model"]
    metrics["n_streams"] = len(data)
    if bundle["model"] == "svm":
        metrics["note"] = "linear SVM stand-in; not comparable with kernel SVM figures"
    out = _out_dir(args, cfg, cfg.out_dir)
    atomic_write(os.path.join(out, "metrics.json"), _json(metrics))
    atomic_write(os.path.join(out, "confusion_app.csv"), confusion_csv(metrics["app"]))
    for app, task in metrics["activity"].items():
        atomic_write(os.path.join(out, f"confusion_activity_{app}.csv"), confusion_csv(task))
    rows = prediction_rows(model, data)
    atomic_write(os.path.join(out, "predictions.jsonl"), "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    acts = {a: t["accuracy"] for a, t in metrics["activity"].items()}
    print(f"app accuracy {metrics['app']['accuracy']}, activity accuracy {acts} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- profile

def cmd_profile(args) -> int:
    from netprofile import profiler

    cfg = load_config(args)
    out = _out_dir(args, cfg, cfg.out_dir)
    records = profiler.replay(profiler.read_events(args.events))
    if args.mode == "train":
        traits_path = args.traits or cfg.trait_config
        if not traits_path or not args.labels:
            raise UsageError("profile train needs --traits (or trait_config) and --labels")
        traits = profiler.load_traits(traits_path)
        truth = profiler.load_user_labels(args.labels)
        pairs = [(records.get(u, profiler.ProfileRecord(u)), lab) for u, lab in sorted(truth.items())]
        models = profiler.nb_train(pairs, traits, cfg.nb_alpha)
        doc = {t: m.to_json() for t, m in models.items()}
        atomic_write(os.path.join(out, "trait_models.json"), _json(doc))
        print(f"trained {len(models)} trait models on {len(pairs)} users -> {out}")
    else:
        if not args.model:
            raise UsageError("profile predict needs --model")
        with open(args.model) as fh:
            models = {t: profiler.TraitModel.from_json(d) for t, d in json.load(fh).items()}
        post = {u: {t: profiler.nb_predict(m, r) for t, m in models.items()} for u, r in sorted(records.items())}
        if not post:
            post = {"": {t: profiler.nb_predict(m, profiler.ProfileRecord("")) for t, m in models.items()}}
        atomic_write(os.path.join(out, "posteriors.json"), _json(post))
        print(f"posteriors for {len(post)} users -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

def _corrupted(model, seq, label):
    from netprofile.nn import bptt_grads

    loss, grads = bptt_grads(model, seq, label)
    name = sorted(grads)[0]
    grads[name] = grads[name] * 1.01 + 1e-3
    return loss, grads


def cmd_gradcheck(args) -> int:
    from netprofile import nn
    from netprofile.rng import substream

    cfg = load_config(args)
    rng = substream(cfg.seed, "gradcheck")
    depth = args.gate_depth or cfg.gate_depth
    model = nn.SequenceClassifier(
        nn.LstmParams.init(args.hidden, args.inputs, rng, depth), nn.DenseParams.init(3, args.hidden, rng)
    )
    seq = rng.normal(size=(args.steps, args.inputs))
    label = int(rng.integers(0, 3))
    errors = nn.grad_check(model, seq, label, args.eps, _corrupted if args.corrupt else nn.bptt_grads)
    worst = max(errors.values())
    report = {
        "hidden": args.hidden,
        "inputs": args.inputs,
        "steps": args.steps,
        "gate_depth": depth,
        "eps": args.eps,
        "threshold": 1e-4,
        "max_relative_error": worst,
        "per_tensor": dict(sorted(errors.items())),
        "passed": worst < 1e-4,
    }
    text = _json(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write(os.path.join(args.out, "gradcheck.json"), text)
    sys.stdout.write(text)
    return EXIT_OK if report["passed"] else EXIT_GRADCHECK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "profile": cmd_profile,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
