"""Command-line front door: meter, synth, train, classify, evaluate.

Every command is deterministic given its inputs and --seed, and writes a
manifest recording the resolved configuration plus sha256 hashes of every
artifact, so a rerun can be checked for byte-identical outputs. Exit codes:
0 success, 2 input/usage error, 3 integrity/audit error.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .dataset import DatasetSpec, FlowDataset, build_dataset
from .encoding import BENIGN_LABEL
from .experiments import (
    run_cascade_experiment,
    run_clean_experiment,
    run_noise_sweep,
    run_tier_comparison,
    run_unseen_experiment,
)
from .meter import CSV_HEADER, MeterConfig, assemble_flows, flow_to_csv_row, read_flow_csv
from .nn import Network, TrainConfig, grid_search
from .pcap import CaptureError, parse_capture_file
from .pipeline import HostStream, TierBundle, run_all_tiers
from .synth import EVAL_RATIOS_BINARY, EVAL_RATIOS_MULTI, Universe, default_universe
from .trainer import (
    QuarantineError,
    TierTrainSettings,
    prepare_tier_front_end,
    train_tier_bundle,
)
from .util import atomic_write_json, atomic_write_text, sha256_file, stage_seed

OUT_DIR_ENV = "FLOWCASCADE_OUT"
EXIT_USAGE = 2
EXIT_AUDIT = 3


class _Manifest:
    def __init__(self, command, config):
        self.doc = {
            "command": command,
            "config": config,
            "artifacts": {},
            "timings": {},
        }
        self._t0 = time.perf_counter()

    def time_stage(self, name):
        self.doc["timings"][name] = round(time.perf_counter() - self._t0, 3)
        self._t0 = time.perf_counter()

    def add_artifact(self, path):
        self.doc["artifacts"][os.path.basename(path)] = sha256_file(path)

    def write(self, path):
        atomic_write_json(path, self.doc, indent=1)


def _usage_error(msg):
    print(f"error: {msg}", file=sys.stderr)
    return SystemExit(EXIT_USAGE)


def _resolve_out(value, fallback_name=None):
    if value:
        return value
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return os.path.join(env, fallback_name) if fallback_name else env
    raise _usage_error("no output path given (use -o or set $" + OUT_DIR_ENV + ")")


def cmd_meter(args):
    config = MeterConfig(
        idle_timeout=args.idle_timeout,
        active_timeout=args.active_timeout,
        max_payload=args.max_payload,
    )
    try:
        packets, stats = parse_capture_file(args.pcap)
    except FileNotFoundError:
        raise _usage_error(f"no such capture file: {args.pcap}")
    except CaptureError as e:
        raise _usage_error(f"cannot parse {args.pcap}: {e}")
    flows = assemble_flows(packets, config)
    out = _resolve_out(args.out, "flows.csv")
    lines = [CSV_HEADER] + [flow_to_csv_row(f) for f in flows]
    atomic_write_text(out, "\n".join(lines) + "\n")
    manifest = _Manifest(
        "meter",
        {
            "pcap": os.path.basename(args.pcap),
            "idle_timeout": config.idle_timeout,
            "active_timeout": config.active_timeout,
            "max_payload": config.max_payload,
        },
    )
    manifest.add_artifact(out)
    manifest.time_stage("meter")
    manifest.write(out + ".manifest.json")
    print(
        f"flows={len(flows)} packets={stats.packets} skipped={stats.skipped}"
        + (" truncated" if stats.truncated else "")
    )
    return 0


def cmd_synth(args):
    out_dir = _resolve_out(args.out)
    if args.profiles:
        with open(args.profiles, "r", encoding="utf-8") as fh:
            universe = Universe.from_json(fh.read())
    else:
        universe = default_universe(seed=stage_seed(args.seed, "universe"))
    spec = DatasetSpec(
        windows_per_family_train=args.train_windows,
        windows_per_family_test=args.test_windows,
        tiers=tuple(args.tiers),
        pool_train_size=args.pool_size,
        pool_test_size=args.pool_size,
        cap_per_class=args.cap,
        seed=stage_seed(args.seed, "dataset"),
    )
    manifest = _Manifest("synth", {"seed": args.seed, "spec": spec.to_dict()})
    dataset = build_dataset(universe, spec)
    manifest.time_stage("generate")
    os.makedirs(out_dir, exist_ok=True)
    dataset.save(out_dir)
    for name in ("flows.csv", "dataset.json", "profiles.json"):
        manifest.add_artifact(os.path.join(out_dir, name))
    manifest.time_stage("write")
    manifest.write(os.path.join(out_dir, "manifest.json"))
    print(
        f"families={len(universe.known)} unseen={len(universe.unseen)} "
        f"flows={len(dataset.flows)} -> {out_dir}"
    )
    return 0


def _load_settings(args):
    settings = TierTrainSettings(seed=stage_seed(args.seed, "train"))
    if args.train_config:
        with open(args.train_config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        base = settings.to_dict()
        base.update(doc)
        settings = TierTrainSettings.from_dict(base)
        settings.seed = stage_seed(args.seed, "train")
    return settings


def _run_grid(dataset, tier, settings, grid_path):
    """Pick classifier hyperparameters by validation loss on a held-out fifth
    of the binary training latents; returns (settings, grid record, front_end)."""
    with open(grid_path, "r", encoding="utf-8") as fh:
        candidates = json.load(fh)["candidates"]
    if not candidates:
        raise ValueError("grid file has no candidates")
    fe = prepare_tier_front_end(dataset, tier, settings)
    labels = np.array(
        [0.0 if fam is None else 1.0 for fam in fe.train_windows.families]
    ).reshape(-1, 1)
    rng = np.random.default_rng(stage_seed(settings.seed, "grid-split"))
    order = rng.permutation(len(labels))
    n_val = max(1, len(order) // 5)
    val_idx, train_idx = order[:n_val], order[n_val:]

    def build(cand):
        hidden = tuple(cand.get("clf_hidden", settings.clf_hidden))
        net = Network.create(
            [fe.latents.shape[1], *hidden, 1],
            ["relu"] * len(hidden) + ["sigmoid"],
            "binary-cross-entropy",
            seed=stage_seed(settings.seed, f"grid-init:{json.dumps(cand, sort_keys=True)}"),
        )
        cfg = TrainConfig(
            batch_size=cand.get("batch_size", settings.batch_size),
            epochs=cand.get("clf_epochs", settings.clf_epochs),
            learning_rate=cand.get("learning_rate", settings.learning_rate),
            shuffle_seed=stage_seed(settings.seed, "grid-shuffle"),
        )
        return net, cfg

    result = grid_search(
        candidates,
        build,
        fe.latents[train_idx],
        labels[train_idx],
        fe.latents[val_idx],
        labels[val_idx],
    )
    winner = result.best_candidate
    for key in ("clf_hidden",):
        if key in winner:
            settings.clf_hidden = tuple(winner[key])
    for key in ("clf_epochs", "learning_rate", "batch_size"):
        if key in winner:
            setattr(settings, key, winner[key])
    record = {
        "candidates": candidates,
        "val_losses": result.val_losses,
        "winner_index": result.best_index,
        "winner": winner,
    }
    return settings, record, fe


def cmd_train(args):
    out_dir = _resolve_out(args.out)
    dataset = FlowDataset.load(args.dataset)
    settings = _load_settings(args)
    manifest = _Manifest(
        "train",
        {"seed": args.seed, "tiers": list(args.tiers), "settings": settings.to_dict(),
         "binary_only": args.binary_only},
    )
    os.makedirs(out_dir, exist_ok=True)
    front_end = None
    if args.grid:
        settings, grid_record, front_end = _run_grid(dataset, args.tiers[0], settings, args.grid)
        manifest.doc["grid"] = grid_record
        manifest.doc["config"]["settings"] = settings.to_dict()
        manifest.time_stage("grid")
    histories = {}
    for tier in args.tiers:
        bundle, history = train_tier_bundle(
            dataset,
            tier,
            settings,
            binary_only=args.binary_only,
            front_end=front_end if front_end and front_end.tier_index == tier else None,
        )
        path = os.path.join(out_dir, f"bundle_tier{tier}.json")
        atomic_write_text(path, json.dumps(bundle.to_dict(), sort_keys=True))
        manifest.add_artifact(path)
        histories[f"tier{tier}"] = history
        manifest.time_stage(f"tier{tier}")
    hist_path = os.path.join(out_dir, "training_history.json")
    atomic_write_json(hist_path, _strip_times(histories))
    manifest.add_artifact(hist_path)
    manifest.write(os.path.join(out_dir, "manifest.json"))
    print(f"trained tiers {list(args.tiers)} -> {out_dir}")
    return 0


def _strip_times(histories):
    # wall-clock timings live in the manifest, not in hashed artifacts
    out = {}
    for tier, h in histories.items():
        out[tier] = {k: v for k, v in h.items() if k != "train_seconds"}
    return out


def _load_bundles(bundle_dir, tiers):
    bundles = []
    for tier in tiers:
        path = os.path.join(bundle_dir, f"bundle_tier{tier}.json")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing bundle for tier {tier}: {path}")
        bundles.append(TierBundle.load(path))
    return bundles


def cmd_classify(args):
    out = _resolve_out(args.out, "verdicts.jsonl")
    try:
        bundles = _load_bundles(args.bundles, args.tiers)
        flows = read_flow_csv(args.flows)
    except FileNotFoundError as e:
        raise _usage_error(str(e))
    # the flow CSV schema carries no host column: one file is one host stream
    host = os.path.splitext(os.path.basename(args.flows))[0]
    streams = {host: HostStream(host=host, flows=flows)}
    verdicts = run_all_tiers(streams, bundles)
    lines = [json.dumps(v.to_dict(), sort_keys=True) for v in verdicts]
    atomic_write_text(out, "\n".join(lines) + ("\n" if lines else ""))
    manifest = _Manifest(
        "classify",
        {"bundles": os.path.basename(args.bundles.rstrip("/")), "tiers": list(args.tiers),
         "flows": os.path.basename(args.flows)},
    )
    manifest.add_artifact(out)
    manifest.time_stage("classify")
    manifest.write(out + ".manifest.json")
    malicious = sum(1 for v in verdicts if v.binary != BENIGN_LABEL)
    print(f"verdicts={len(verdicts)} malicious={malicious}")
    return 0


def _metrics_rows(tier, phase, ratio, metrics_doc):
    rows = []
    for cls_name, m in metrics_doc["per_class"].items():
        rows.append(
            f"{tier},{phase},{ratio},{cls_name},{m['precision']:.6f},"
            f"{m['recall']:.6f},{m['f1']:.6f},{m['support']}"
        )
    rows.append(
        f"{tier},{phase},{ratio},(weighted),,,{metrics_doc['weighted_f1']:.6f},"
        f"{sum(c['support'] for c in metrics_doc['per_class'].values())}"
    )
    return rows


def cmd_evaluate(args):
    out_dir = _resolve_out(args.out)
    try:
        dataset = FlowDataset.load(args.dataset)
        bundles = _load_bundles(args.bundles, args.tiers)
    except FileNotFoundError as e:
        raise _usage_error(str(e))
    seed = stage_seed(args.seed, f"evaluate:{args.experiment}")
    results = {"experiment": args.experiment, "seed": args.seed}
    csv_rows = ["tier,phase,ratio,class,precision,recall,f1,support"]
    plot_series = []

    if args.experiment == "clean":
        for b in bundles:
            doc = run_clean_experiment(b, dataset)
            results[f"tier{b.config.tier_index}"] = doc
            csv_rows += _metrics_rows(b.config.tier_index, "binary", 0, doc["binary"])
            csv_rows += _metrics_rows(b.config.tier_index, "type", 0, doc["type"])
            for t, fm in doc["family"].items():
                csv_rows += _metrics_rows(b.config.tier_index, f"family:{t}", 0, fm)
        plot_series.append(
            {
                "name": "clean_binary_f1_by_tier",
                "x": [b.config.tier_index for b in bundles],
                "y": [results[f"tier{b.config.tier_index}"]["binary"]["weighted_f1"] for b in bundles],
            }
        )
    elif args.experiment == "noisy":
        for b in bundles:
            phases = ["binary"]
            if b.type_model is not None:
                phases.append("type")
                phases += [f"family:{t}" for t in sorted(b.family_models)]
            tier_doc = {}
            for phase in phases:
                ratios = EVAL_RATIOS_BINARY if phase == "binary" else EVAL_RATIOS_MULTI
                sweep = run_noise_sweep(b, dataset, phase, ratios, seed=seed)
                tier_doc[phase] = sweep.to_dict()
                for r in sorted(sweep.by_ratio):
                    csv_rows += _metrics_rows(
                        b.config.tier_index, phase, r, sweep.by_ratio[r].to_dict()
                    )
                plot_series.append(
                    {
                        "name": f"tier{b.config.tier_index}_{phase}_f1_vs_ratio",
                        "x": [r for r, _ in sweep.f1_curve()],
                        "y": [f for _, f in sweep.f1_curve()],
                    }
                )
            results[f"tier{b.config.tier_index}"] = tier_doc
    elif args.experiment == "unseen":
        for b in bundles:
            doc = run_unseen_experiment(b, dataset, EVAL_RATIOS_MULTI, seed=seed)
            results[f"tier{b.config.tier_index}"] = {
                "unseen": doc["unseen"].to_dict(),
                "known": doc["known"].to_dict(),
                "delta_known_minus_unseen": {str(k): v for k, v in doc["delta_known_minus_unseen"].items()},
            }
            for kind in ("unseen", "known"):
                sweep = doc[kind]
                for r in sorted(sweep.by_ratio):
                    csv_rows += _metrics_rows(
                        b.config.tier_index, f"binary-{kind}", r, sweep.by_ratio[r].to_dict()
                    )
                plot_series.append(
                    {
                        "name": f"tier{b.config.tier_index}_{kind}_f1_vs_ratio",
                        "x": [r for r, _ in sweep.f1_curve()],
                        "y": [f for _, f in sweep.f1_curve()],
                    }
                )
    elif args.experiment == "tiers":
        doc = run_tier_comparison(bundles, dataset, EVAL_RATIOS_BINARY, seed=seed)
        results["tier_order_by_ratio"] = {
            str(r): order for r, order in doc["tier_order_by_ratio"].items()
        }
        for tier, sweep in doc["sweeps"].items():
            results[f"tier{tier}"] = sweep.to_dict()
            for r in sorted(sweep.by_ratio):
                csv_rows += _metrics_rows(tier, "binary", r, sweep.by_ratio[r].to_dict())
            plot_series.append(
                {
                    "name": f"tier{tier}_binary_f1_vs_ratio",
                    "x": [r for r, _ in sweep.f1_curve()],
                    "y": [f for _, f in sweep.f1_curve()],
                }
            )
    elif args.experiment == "cascade":
        for b in bundles:
            results[f"tier{b.config.tier_index}"] = run_cascade_experiment(b, dataset)
    else:
        raise _usage_error(f"unknown experiment {args.experiment!r}")

    os.makedirs(out_dir, exist_ok=True)
    manifest = _Manifest(
        "evaluate",
        {"experiment": args.experiment, "seed": args.seed, "tiers": list(args.tiers)},
    )
    results_path = os.path.join(out_dir, f"results_{args.experiment}.json")
    atomic_write_json(results_path, results)
    manifest.add_artifact(results_path)
    csv_path = os.path.join(out_dir, f"results_{args.experiment}.csv")
    atomic_write_text(csv_path, "\n".join(csv_rows) + "\n")
    manifest.add_artifact(csv_path)
    if args.plot_data:
        plot_path = os.path.join(out_dir, f"plot_data_{args.experiment}.json")
        atomic_write_json(plot_path, {"series": plot_series})
        manifest.add_artifact(plot_path)
    manifest.time_stage("evaluate")
    manifest.write(os.path.join(out_dir, f"manifest_{args.experiment}.json"))
    print(f"experiment={args.experiment} -> {out_dir}")
    return 0


def _tier_list(text):
    tiers = tuple(int(t) for t in text.split(","))
    for t in tiers:
        if not 1 <= t <= 4:
            raise argparse.ArgumentTypeError("tiers must be within 1..4")
    return tiers


def build_parser():
    p = argparse.ArgumentParser(
        prog="flowcascade",
        description="Tiered malware traffic classification over network flows.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("meter", help="convert a pcap into a bidirectional flow CSV")
    m.add_argument("pcap")
    m.add_argument("-o", "--out")
    m.add_argument("--idle-timeout", type=float, default=30.0)
    m.add_argument("--active-timeout", type=float, default=300.0)
    m.add_argument("--max-payload", type=int, default=2048)
    m.set_defaults(func=cmd_meter)

    s = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    s.add_argument("-o", "--out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--profiles", help="universe JSON (defaults to the stock universe)")
    s.add_argument("--train-windows", type=int, default=64)
    s.add_argument("--test-windows", type=int, default=20)
    s.add_argument("--tiers", type=_tier_list, default=(1, 2, 3, 4))
    s.add_argument("--pool-size", type=int, default=30000)
    s.add_argument("--cap", type=int, default=500)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train tier bundles from a dataset")
    t.add_argument("dataset")
    t.add_argument("-o", "--out")
    t.add_argument("--tiers", type=_tier_list, default=(1, 2, 3, 4))
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--train-config", help="JSON overriding TierTrainSettings fields")
    t.add_argument("--grid", help="JSON with classifier hyperparameter candidates")
    t.add_argument("--binary-only", action="store_true")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("classify", help="run the cascade over a flow CSV")
    c.add_argument("bundles")
    c.add_argument("flows")
    c.add_argument("-o", "--out")
    c.add_argument("--tiers", type=_tier_list, default=(1, 2, 3, 4))
    c.set_defaults(func=cmd_classify)

    e = sub.add_parser("evaluate", help="run an experiment suite")
    e.add_argument("bundles")
    e.add_argument("dataset")
    e.add_argument("experiment", choices=["clean", "noisy", "unseen", "tiers", "cascade"])
    e.add_argument("-o", "--out")
    e.add_argument("--tiers", type=_tier_list, default=(3,))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--plot-data", action="store_true")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except QuarantineError as e:
        print(f"audit failure: {e}", file=sys.stderr)
        return EXIT_AUDIT
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
