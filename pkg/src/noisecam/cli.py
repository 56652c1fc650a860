"""Command-line front end for the full reproduction pipeline.

Subcommands: gen-data, train, attack, detect, eval, figures,
blur-baseline. Exit codes: 0 success, 2 usage error, 3 data error,
4 numeric failure.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, clustering, deviation
from .attack import AttackConfig, NumericError
from .bench import DataError
from .dataset import gen_dataset, load_dataset, save_dataset
from .fileio import FormatError, load_ntf
from .network import build_default_model, load_weights, save_weights, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def load_config(path):
    """Flat `key = value` config file, UTF-8, `#` comments."""
    config = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        config[key] = value
    return config


def _get(config, key, cast, default):
    if key not in config:
        return default
    try:
        return cast(config[key])
    except ValueError as exc:
        raise DataError(f"config key {key}: {exc}") from exc


def attack_config_from(config):
    strengths = config.get("strengths")
    if strengths is not None:
        strengths = tuple(float(s) for s in strengths.split(","))
    else:
        strengths = AttackConfig().strengths
    return AttackConfig(
        delta=_get(config, "delta", float, 0.06),
        lam=_get(config, "lambda", float, 1.0),
        top_k=_get(config, "top_k", int, 3),
        n_neurons=_get(config, "n_neurons", int, 10),
        step_size=_get(config, "step_size", float, 0.01),
        max_iters=_get(config, "max_iters", int, 50),
        strengths=strengths,
        coverage_threshold=_get(config, "coverage_threshold", float, 0.25),
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="noisecam", description="adversarial-example detection benchmark"
    )
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the procedural shapes dataset")
    p.add_argument("--n-per-class", type=int, default=300)

    p = sub.add_parser("train", help="train the default model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=32)

    p = sub.add_parser("attack", help="build the attack corpus")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--max-seeds", type=int, default=200)

    p = sub.add_parser("detect", help="classify one image tensor as adversarial/benign")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="NTF image tensor")
    p.add_argument("--method", choices=["noisecam", "deviation"], default="noisecam")
    p.add_argument("--probe-layer", default=None)

    p = sub.add_parser("eval", help="run one detector over a corpus")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--method", choices=["noisecam", "deviation"], default="noisecam")
    p.add_argument("--probe-layer", default=None)
    p.add_argument("--max-seeds", type=int, default=None)

    p = sub.add_parser("figures", help="export figure tables and image panels")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--max-seeds", type=int, default=20)

    p = sub.add_parser("blur-baseline", help="accuracy of blurred inputs")
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--radius", type=float, default=1.5)

    return parser


def cmd_gen_data(args, config):
    out = args.out
    dataset = gen_dataset(args.n_per_class, args.seed)
    save_dataset(dataset, out)
    bench.write_manifest(
        out,
        {
            "run_id": f"gen-data-{args.seed}",
            "seed": args.seed,
            "config": {"n_per_class": args.n_per_class},
            "files": ["images.ntf", "labels.json"],
        },
    )
    print(f"wrote {len(dataset)} images to {out}")


def cmd_train(args, config):
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.data)
    model = build_default_model(seed=args.seed)
    model, history = train(
        model, dataset.images, dataset.labels, args.epochs, args.lr, args.batch, args.seed
    )
    save_weights(model, out / "weights.nwv")
    with open(out / "history.csv", "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["epoch", "loss", "accuracy"])
        for i, row in enumerate(history):
            writer.writerow([i, f"{row['loss']:.6f}", f"{row['accuracy']:.6f}"])
    bench.write_manifest(
        out,
        {
            "run_id": f"train-{args.seed}",
            "seed": args.seed,
            "config": {"epochs": args.epochs, "lr": args.lr, "batch": args.batch},
            "final": history[-1],
            "files": ["weights.nwv", "history.csv"],
        },
    )
    print(
        f"trained {args.epochs} epochs; final loss {history[-1]['loss']:.4f}, "
        f"accuracy {history[-1]['accuracy']:.4f}"
    )


def cmd_attack(args, config):
    model = load_weights(args.weights)
    dataset = load_dataset(args.data)
    cfg = attack_config_from(config)
    manifest = bench.build_attack_corpus(
        model, dataset, cfg, args.seed, args.out, max_seeds=args.max_seeds
    )
    print(
        f"attacked {manifest['attempted']} seeds, {manifest['successes']} "
        f"successes (yield {manifest['yield']:.2%})"
    )


def cmd_detect(args, config):
    model = load_weights(args.weights)
    image = load_ntf(args.input)
    if args.method == "noisecam":
        verdict = clustering.detect_by_noisecam(
            model,
            image,
            args.probe_layer or clustering.DEFAULT_PROBE_LAYER,
            fraction=_get(config, "fraction", float, clustering.DEFAULT_FRACTION),
            eps=_get(config, "eps", float, clustering.DEFAULT_EPS),
            min_pts=_get(config, "min_pts", int, clustering.DEFAULT_MIN_PTS),
        )
        evidence = {"n_clusters": verdict.n_clusters, "n_points": verdict.n_points}
    else:
        verdict = deviation.detect_by_deviation(
            model,
            image,
            args.probe_layer or deviation.DEFAULT_PROBE_LAYER,
            n_samples=_get(config, "n_samples", int, 50),
            rng_seed=args.seed,
        )
        evidence = {
            "similarity": verdict.similarity,
            "benign_median": verdict.benign_median,
            "threshold": verdict.threshold,
        }
    label = "adversarial" if verdict.adversarial else "benign"
    print(json.dumps({"verdict": label, "evidence": evidence}, sort_keys=True))


def cmd_eval(args, config):
    model = load_weights(args.weights)
    report = bench.run_eval(
        model,
        args.corpus,
        args.method,
        probe_layer=args.probe_layer,
        rng_seed=args.seed,
        max_seeds=args.max_seeds,
        n_samples=_get(config, "n_samples", int, 50),
        fraction=_get(config, "fraction", float, clustering.DEFAULT_FRACTION),
        eps=_get(config, "eps", float, clustering.DEFAULT_EPS),
        min_pts=_get(config, "min_pts", int, clustering.DEFAULT_MIN_PTS),
    )
    manifest = bench.load_manifest(args.corpus)
    strengths = manifest["config"]["strengths"]
    paths = bench.report_to_csv(report, args.out, strengths)
    bench.write_manifest(
        args.out,
        {
            "run_id": f"eval-{args.method}-{args.seed}",
            "seed": args.seed,
            "method": args.method,
            "source_corpus": str(args.corpus.name),
            "files": [p.name for p in paths],
        },
    )
    print(
        f"{args.method}: accuracy {report.accuracy():.3f}, "
        f"TPR {report.tpr():.3f}, TNR {report.tnr():.3f}"
    )


def cmd_figures(args, config):
    model = load_weights(args.weights)
    manifest = bench.export_figures(model, args.corpus, args.out, max_seeds=args.max_seeds)
    print(f"wrote {len(manifest['files'])} figure files to {args.out}")


def cmd_blur_baseline(args, config):
    model = load_weights(args.weights)
    result = bench.blur_baseline(model, args.corpus, radius=args.radius)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "blur_baseline.csv"
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["kind", "accuracy_plain", "accuracy_blurred", "n"])
        for kind in sorted(result):
            row = result[kind]
            writer.writerow(
                [kind, f"{row['accuracy_plain']:.6f}", f"{row['accuracy_blurred']:.6f}", row["n"]]
            )
    bench.write_manifest(
        args.out,
        {"run_id": f"blur-{args.seed}", "seed": args.seed, "files": ["blur_baseline.csv"]},
    )
    print(json.dumps(result, sort_keys=True))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "figures": cmd_figures,
    "blur-baseline": cmd_blur_baseline,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {}
    try:
        if args.config is not None:
            if not args.config.exists():
                raise DataError(f"config file not found: {args.config}")
            config = load_config(args.config)
        COMMANDS[args.command](args, config)
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
