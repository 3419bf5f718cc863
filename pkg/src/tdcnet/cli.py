"""Command-line entry point: generate / train / eval / inspect.

Config files are TOML. Every command archives its fully resolved
configuration beside its outputs so a run can be reproduced from the output
directory alone. Exit codes are a stable contract: 0 success, 1 I/O error,
2 config error, 3 shape/data error, 4 checkpoint error, 5 variant error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import data as cdata
from . import training
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (CheckpointError, ConfigurationError, DataError,
                     DimensionError, NonFiniteError, ParseError, VariantError)
from .models import Model, ModelConfig
from .training import TrainConfig

EXIT_IO, EXIT_CONFIG, EXIT_SHAPE, EXIT_CHECKPOINT, EXIT_VARIANT = 1, 2, 3, 4, 5


def _load_toml(path):
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from None


def _apply_overrides(config, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw  # bare strings are convenient on the command line
        node = config
        *parents, leaf = dotted.strip().split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return config


def _archive_config(out_dir, resolved):
    with open(out_dir / "resolved_config.json", "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def _spec_from_config(cfg):
    try:
        types = [(t["name"], t["channels"]) for t in cfg["types"]]
        patterns = []
        if cfg.get("patterns"):
            per_class = {}
            for p in cfg["patterns"]:
                per_class.setdefault(int(p["class"]), []).append(
                    (p["type"], int(p["channel"]), p["kind"]))
            patterns = [per_class.get(c, []) for c in range(int(cfg["num_classes"]))]
        return cdata.SyntheticSpec(
            num_classes=int(cfg["num_classes"]), clips=int(cfg["clips"]),
            concept_types=types, noise=float(cfg.get("noise", 0.1)),
            seed=int(cfg.get("seed", 0)), class_patterns=patterns)
    except KeyError as e:
        raise ConfigurationError(f"synthetic spec is missing field {e}") from None


def cmd_generate(args):
    cfg = _apply_overrides(_load_toml(args.spec), args.override)
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = _spec_from_config(cfg)
    count = int(cfg.get("count", 300))
    out_dir = Path(args.out)
    dataset = cdata.generate_synthetic(spec, count,
                                       label_mode=cfg.get("label_mode", "single-label"))
    cdata.save_dataset(dataset, out_dir)
    _archive_config(out_dir, cfg)
    per_class = {}
    for s in dataset.samples:
        label = s.label if isinstance(s.label, int) else int(np.argmax(s.label))
        per_class[label] = per_class.get(label, 0) + 1
    print(f"wrote {len(dataset)} samples to {out_dir}")
    print(f"classes: {dataset.num_classes}  counts: "
          f"{[per_class.get(c, 0) for c in range(dataset.num_classes)]}")
    print(f"clips: {dataset.clips}  types: "
          f"{', '.join(f'{n}({l})' for n, l in dataset.concept_types)}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _resolve_datasets(data_cfg):
    if "train_dir" in data_cfg:
        train_ds = cdata.load_dataset(data_cfg["train_dir"])
        test_ds = cdata.load_dataset(data_cfg["test_dir"]) if "test_dir" in data_cfg else None
        return train_ds, train_ds.samples, test_ds.samples if test_ds else None
    if "dir" not in data_cfg:
        raise ConfigurationError("config [data] needs either dir or train_dir")
    dataset = cdata.load_dataset(data_cfg["dir"])
    fraction = float(data_cfg.get("test_fraction", 0.5))
    train_samples, test_samples = cdata.split(
        dataset.samples, 1.0 - fraction, int(data_cfg.get("split_seed", 0)))
    return dataset, train_samples, test_samples


def cmd_train(args):
    cfg = _apply_overrides(_load_toml(args.config), args.override)
    if args.seed is not None:
        cfg.setdefault("train", {})["seed"] = args.seed
    out_dir = Path(args.out or cfg.get("run", {}).get("out", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset, train_samples, test_samples = _resolve_datasets(cfg.get("data", {}))
    mcfg_in = dict(cfg.get("model", {}))
    model_config = ModelConfig(
        concept_types=dataset.concept_types, clips=dataset.clips,
        num_classes=dataset.num_classes,
        variant=mcfg_in.get("variant", "tdcmn-co"),
        kernel_widths=tuple(mcfg_in.get("kernel_widths", (1, 3, 5))),
        classifier_hidden=(tuple(mcfg_in["classifier_hidden"])
                           if "classifier_hidden" in mcfg_in else None),
        hidden_n=int(mcfg_in.get("hidden_n", 0)),
        hidden_l=int(mcfg_in.get("hidden_l", 0)))
    tcfg_in = dict(cfg.get("train", {}))
    eval_every = int(tcfg_in.pop("eval_every", 1))
    tcfg_in.setdefault("loss_mode", dataset.label_mode)
    train_config = TrainConfig(**tcfg_in)

    model = Model(model_config, seed=train_config.seed)
    best = {"mAP": -1.0, "values": None, "epoch": -1}
    log_path = out_dir / "log.jsonl"
    with open(log_path, "w") as log_file:
        def on_epoch(record):
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            if record.get("test_mAP", -1.0) > best["mAP"]:
                best["mAP"] = record["test_mAP"]
                best["epoch"] = record["epoch"]
                best["values"] = [p.values.copy() for p in model.parameters()]
        training.train(model, train_samples, train_config,
                       test_samples=test_samples, eval_every=eval_every,
                       log_fn=on_epoch)
    save_checkpoint(out_dir / "final.ckpt", model)
    if best["values"] is not None:
        final_values = [p.values for p in model.parameters()]
        for p, v in zip(model.parameters(), best["values"]):
            p.values = v
        save_checkpoint(out_dir / "best.ckpt", model)
        for p, v in zip(model.parameters(), final_values):
            p.values = v
    else:
        save_checkpoint(out_dir / "best.ckpt", model)
    _archive_config(out_dir, {"data": cfg.get("data", {}),
                              "model": model_config.to_dict(),
                              "train": {**train_config.to_dict(),
                                        "eval_every": eval_every}})
    print(f"trained {model_config.variant} for {train_config.max_epochs} epochs; "
          f"artifacts in {out_dir}")
    if best["epoch"] >= 0:
        print(f"best test mAP {best['mAP']:.4f} at epoch {best['epoch']}")
    return 0


# ---------------------------------------------------------------------------
# eval / inspect
# ---------------------------------------------------------------------------

def _load_model_and_data(args):
    model = load_checkpoint(args.checkpoint)
    dataset = cdata.load_dataset(args.data)
    if dataset.num_classes != model.config.num_classes:
        raise DataError(f"class count mismatch: checkpoint has "
                        f"{model.config.num_classes}, dataset has {dataset.num_classes}")
    return model, dataset


def cmd_eval(args):
    model, dataset = _load_model_and_data(args)
    report = training.evaluate(model, dataset.samples, dataset.num_classes,
                               meta={"checkpoint": str(args.checkpoint),
                                     "dataset": str(args.data)})
    print(f"mAP: {report.mean_ap:.4f}")
    for c in sorted(report.per_class_ap):
        print(f"  class {c:3d}  AP {report.per_class_ap[c]:.4f}")
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


def cmd_inspect(args):
    model, dataset = _load_model_and_data(args)
    dump = training.dump_coefficients(model, dataset.samples, dataset.num_classes)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    training.write_coefficient_csvs(dump, out_dir / "coefficients_means.csv",
                                    out_dir / "coefficients_diffs.csv")
    print(f"wrote {len(dump.means)} mean rows and {len(dump.diffs)} difference "
          f"rows to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="tdcnet",
        description="Dynamic temporal-receptive-field event classification "
                    "over concept-score sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. model.variant='baseline'")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--spec", required=True, help="synthetic spec TOML file")
    p.add_argument("--out", required=True, help="output dataset directory")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="run config TOML file")
    p.add_argument("--out", default=None, help="output directory")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", default=None, help="report directory")
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("inspect", help="dump coefficient distributions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="CSV output directory")
    common(p)
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, ParseError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DimensionError, DataError, NonFiniteError) as e:
        print(f"data/shape error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except VariantError as e:
        print(f"variant error: {e}", file=sys.stderr)
        return EXIT_VARIANT
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
