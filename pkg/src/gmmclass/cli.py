"""Command-line entry point: data generation, training, evaluation, ablation.

One binary with subcommands; a JSON config file supplies structured settings
and command-line flags override it. Progress goes to stderr, machine-readable
output to files or stdout, so the tool composes in pipelines.

Exit codes: 0 success, 1 IO failure, 2 bad configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import model_io
from .classifier import GenerativeClassifier
from .data import DatasetParseError, SynthSpec, generate, load_dataset, save_dataset
from .em import EmConfig, mixture_log_likelihood
from .evaluate import evaluate_closed_set, evaluate_ood
from .extractor import forward
from .trainer import DISC_GMM, HYBRID, MODES, TrainConfig, TrainingDiverged, train

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


def load_schema(name: str) -> dict:
    with resources.files("gmmclass.schemas").joinpath(name).open("r") as fh:
        return json.load(fh)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def load_run_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    try:
        jsonschema.validate(doc, load_schema("run_config.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config {path} fails schema validation: {exc.message}")
    return doc


def synth_spec_from_config(doc: dict) -> SynthSpec:
    data = doc.get("data", {})
    try:
        return SynthSpec(
            n_classes=data.get("nClasses", 4),
            modes_per_class=data.get("modesPerClass", 2),
            in_dim=data.get("inDim", 8),
            noise=data.get("noise", 1.0),
            separation=data.get("separation", 6.0),
            n_train=data.get("nTrain", 1600),
            n_test=data.get("nTest", 800),
            ood_holdout=data.get("oodHoldout"),
            seed=doc["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def train_config_from_config(doc: dict, overrides: dict) -> TrainConfig:
    section = dict(doc.get("train", {}))
    em_section = dict(section.get("em", {}))
    merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        em = EmConfig(
            variant=merged.get("em_variant", em_section.get("variant", "sinkhorn")),
            loops_per_iteration=em_section.get("loopsPerIteration", 1),
            momentum_tau=em_section.get("momentumTau", 0.98),
            epsilon=em_section.get("epsilon", 0.05),
            variance_floor=em_section.get("varianceFloor", 1e-6),
        )
        return TrainConfig(
            mode=merged.get("mode", HYBRID),
            iterations=merged.get("iterations", 1200),
            batch_size=merged.get("batchSize", 128),
            lr=merged.get("lr", 0.1),
            weight_decay=merged.get("weightDecay", 0.0),
            seed=merged.get("seed", doc["seed"]),
            n_components=merged.get("components", 2),
            feature_dim=merged.get("featureDim", 16),
            hidden=tuple(merged.get("hidden", (64, 64))),
            activation=merged.get("activation", "tanh"),
            responsibility_mode=merged.get("responsibilityMode", "winner_take_all"),
            em=em,
            memory_capacity=merged.get("memoryCapacity", 2048),
            samples_per_class=merged.get("samplesPerClass", 100),
            em_first=merged.get("emFirst", True),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _emit_json(doc: dict, out_path) -> None:
    text = json.dumps(doc, indent=1) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_gen_data(args) -> int:
    doc = load_run_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = synth_spec_from_config(doc)
    out_dir = Path(args.out if args.out else ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, test_set, ood_set = generate(spec)
    save_dataset(train_set, out_dir / "train.txt")
    save_dataset(test_set, out_dir / "test.txt")
    sizes = {"train": len(train_set), "test": len(test_set)}
    if ood_set is not None:
        save_dataset(ood_set, out_dir / "ood.txt")
        sizes["ood"] = len(ood_set)
    _log(f"wrote datasets to {out_dir}")
    _emit_json(sizes, None)
    return EXIT_OK


def cmd_train(args) -> int:
    doc = load_run_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    overrides = {
        "mode": args.mode,
        "em_variant": args.em,
        "components": args.components,
        "memoryCapacity": args.memory,
    }
    cfg = train_config_from_config(doc, overrides)
    dataset = load_dataset(args.data)
    _log(f"training mode={cfg.mode} iterations={cfg.iterations} seed={cfg.seed}")
    try:
        model, mlp, report = train(dataset, cfg)
    except TrainingDiverged as exc:
        _log(str(exc))
        return EXIT_NUMERICAL
    out_path = Path(args.out if args.out else "model.json")
    model_io.save_model(out_path, model, mlp)
    report_path = out_path.with_suffix(".report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
        fh.write("\n")
    _log(f"wrote {out_path} and {report_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, mlp = model_io.load_model(args.model)
    dataset = load_dataset(args.data)
    metrics = evaluate_closed_set(model, mlp, dataset)
    _emit_json(metrics, args.out)
    return EXIT_OK


def cmd_ood_eval(args) -> int:
    model, mlp = model_io.load_model(args.model)
    dataset = load_dataset(args.data)
    metrics = evaluate_ood(model, mlp, dataset)
    _emit_json(metrics, args.out)
    return EXIT_OK


def _run_ablate_cell(payload: dict) -> dict:
    """One sweep cell: generate data, train, evaluate. Must stay picklable."""
    doc = payload["doc"]
    cell = payload["cell"]
    seed = payload["seed"]
    spec_doc = dict(doc)
    spec_doc["seed"] = seed
    spec = synth_spec_from_config(spec_doc)
    train_set, test_set, _ = generate(spec)

    overrides = {
        "mode": cell["mode"],
        "em_variant": cell["emVariant"],
        "components": cell["components"],
        "memoryCapacity": cell["memoryCapacity"],
        "seed": seed,
    }
    cfg = train_config_from_config(spec_doc, overrides)
    model, mlp, _ = train(train_set, cfg)
    metrics = evaluate_closed_set(model, mlp, test_set)

    # Mean per-sample log-likelihood of test features under their true class
    # mixtures: the generative quality column of the sweep table.
    features, _ = forward(test_set.samples, mlp)
    assert isinstance(model, GenerativeClassifier)
    total, count = 0.0, 0
    for c in sorted(int(c) for c in np.unique(test_set.labels)):
        rows = features[test_set.labels == c]
        total += mixture_log_likelihood(rows, model.per_class[c])
        count += rows.shape[0]
    return {
        "key": (cell["mode"], cell["emVariant"], cell["components"], cell["memoryCapacity"]),
        "seed": seed,
        "accuracy": metrics["accuracy"],
        "logLikelihood": total / count,
    }


def cmd_ablate(args) -> int:
    doc = load_run_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    ab = doc.get("ablate", {})
    variants = ab.get("variants", ["vanilla", "sinkhorn"])
    components = ab.get("components", [1, 3, 5, 10])
    memories = ab.get("memoryCapacities", [0, 2048])
    modes = ab.get("modes", [HYBRID, DISC_GMM])
    seeds = ab.get("seeds", [doc["seed"]])

    cells = [
        {"mode": mode, "emVariant": v, "components": m, "memoryCapacity": mem}
        for mode in modes
        for v in variants
        for m in components
        for mem in memories
    ]
    payloads = [
        {"doc": doc, "cell": cell, "seed": seed} for cell in cells for seed in seeds
    ]
    _log(f"ablation sweep: {len(cells)} cells x {len(seeds)} seeds")

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_ablate_cell, payloads))
    else:
        results = [_run_ablate_cell(p) for p in payloads]

    by_key: dict[tuple, list[dict]] = {}
    for r in results:
        by_key.setdefault(tuple(r["key"]), []).append(r)
    table = []
    for key in sorted(by_key):
        rows = sorted(by_key[key], key=lambda r: r["seed"])
        table.append(
            {
                "mode": key[0],
                "emVariant": key[1],
                "components": key[2],
                "memoryCapacity": key[3],
                "meanAccuracy": float(np.mean([r["accuracy"] for r in rows])),
                "meanLogLikelihood": float(np.mean([r["logLikelihood"] for r in rows])),
                "perSeed": [
                    {
                        "seed": r["seed"],
                        "accuracy": r["accuracy"],
                        "logLikelihood": r["logLikelihood"],
                    }
                    for r in rows
                ],
            }
        )
    _emit_json({"cells": table}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmmclass",
        description="Generative GMM classification toolkit: synthetic data, "
        "hybrid/discriminative/softmax training, evaluation and ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_model=False, with_data=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output path")
        if with_model:
            p.add_argument("--model", required=True, help="model JSON path")
        if with_data:
            p.add_argument("--data", required=True, help="dataset file path")

    p = sub.add_parser("gen-data", help="generate synthetic dataset splits")
    common(p)
    p.set_defaults(func=cmd_gen_data, needs_config=True)

    p = sub.add_parser("train", help="train a model on a dataset file")
    common(p, with_data=True)
    p.add_argument("--mode", choices=MODES, help="training mode override")
    p.add_argument("--em", choices=["vanilla", "sinkhorn"], help="EM variant override")
    p.add_argument("--components", type=int, help="mixture components per class")
    p.add_argument("--memory", type=int, help="memory capacity per queue (0 disables)")
    p.set_defaults(func=cmd_train, needs_config=True)

    p = sub.add_parser("eval", help="closed-set metrics for a trained model")
    common(p, with_model=True, with_data=True)
    p.set_defaults(func=cmd_eval, needs_config=False)

    p = sub.add_parser("ood-eval", help="anomaly metrics on a normal/anomaly split")
    common(p, with_model=True, with_data=True)
    p.set_defaults(func=cmd_ood_eval, needs_config=False)

    p = sub.add_parser("ablate", help="run the ablation sweep grid")
    common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_ablate, needs_config=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "needs_config", False) and not args.config:
        _log("this command requires --config")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except DatasetParseError as exc:
        _log(f"data error: {exc}")
        return EXIT_IO
    except TrainingDiverged as exc:
        _log(str(exc))
        return EXIT_NUMERICAL
    except OSError as exc:
        _log(f"io error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
