"""Command-line entry point: extract, train, eval, gradcheck, compare."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import (Dataset, DatasetError, is_mnist_dir, load_image_dir, load_mnist_dir,
                   preprocess_images, read_image, split_off, subsample)
from .metrics import confusion_matrix
from .models import ArchitectureConfig, build_projectron, summary
from .nn import grad_check, relu_margin
from .radon import AngleSet, batch_features, preprocess, sinogram
from .radon import write_sinogram_csv, write_sinogram_pgm
from .training import (METHOD_LABELS, METHODS, TrainConfig, build_method, compare_experiment, evaluate,
                       featurize, format_report, leave_one_out, method_input, predictions,
                       train)

log = logging.getLogger("projectron")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    manifest: str = ""
    test_manifest: str = ""
    test_fraction: float = 0.3
    target_side: int = 28
    angles_delta: float = 15.0
    scale_projections: bool = True
    arch: str = "projectron"
    encode_width: int = 1024
    hidden_width: int = 512
    mlp_hidden_widths: list = field(default_factory=list)
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 3
    min_delta: float = 1e-6
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    holdout_fraction: float = 0.1
    train_limit: int = 0
    test_limit: int = 0
    limit: int = 0
    out: str = "runs"
    checkpoint: str = ""
    eval_split: str = "test"
    deep: bool = False
    protocol: str = "split"
    threshold: float = 1e-4
    gradcheck_h: float = 1e-5
    explicit: frozenset = field(default_factory=frozenset, repr=False)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    def arch_config(self, classes: int) -> ArchitectureConfig:
        return ArchitectureConfig(self.encode_width, self.hidden_width,
                                  list(self.mlp_hidden_widths), classes)

    def angles(self) -> AngleSet:
        return AngleSet(self.angles_delta)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("explicit")
        return d


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"explicit"}


def _coerce(key, value):
    default = RunConfig.__dataclass_fields__[key]
    kind = type(default.default) if default.default is not dataclasses.MISSING else list
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} expects true/false, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"config key {key!r} expects a list, got {value!r}")
        return [int(v) for v in value]
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: cannot read {value!r} as {kind.__name__}") from exc


def resolve_config(file_path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then the JSON config file, then command-line overrides."""
    values: dict = {}
    if file_path:
        try:
            loaded = json.loads(Path(file_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {file_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {file_path} must hold a JSON object")
        unknown = sorted(set(loaded) - CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s) in {file_path}: {', '.join(unknown)}")
        values.update({k: _coerce(k, v) for k, v in loaded.items()})
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values, explicit=frozenset(values))
    if cfg.arch not in METHODS:
        raise ConfigError(f"config key 'arch': unknown architecture {cfg.arch!r}")
    if cfg.eval_split not in ("train", "holdout", "test"):
        raise ConfigError("config key 'eval_split': expected train, holdout or test")
    if cfg.protocol not in ("split", "loo"):
        raise ConfigError("config key 'protocol': expected split or loo")
    return cfg


def _write_config(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.as_dict(), indent=2, sort_keys=True) + "\n")


def _require_dataset(cfg: RunConfig) -> Path:
    if not cfg.dataset:
        raise ConfigError("no dataset given (use --dataset or the 'dataset' config key)")
    path = Path(cfg.dataset)
    if not path.exists():
        raise DatasetError(f"{path}: dataset not found")
    return path


def load_splits(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Preprocessed (train, test) image datasets described by ``cfg``."""
    root = _require_dataset(cfg)
    if is_mnist_dir(root):
        train_set = load_mnist_dir(root, "train")
        test_set = load_mnist_dir(root, "test")
        if cfg.train_limit:
            train_set = subsample(train_set, cfg.train_limit, cfg.seed)
        if cfg.test_limit:
            test_set = subsample(test_set, cfg.test_limit, cfg.seed)
        return (preprocess_images(train_set, cfg.target_side),
                preprocess_images(test_set, cfg.target_side))
    manifest = Path(cfg.manifest) if cfg.manifest else root / "manifest.csv"
    if not manifest.is_file():
        raise DatasetError(f"{root}: neither MNIST IDX files nor {manifest.name} found")
    full = load_image_dir(root, manifest, cfg.target_side)
    if cfg.test_manifest:
        test_set = load_image_dir(root, cfg.test_manifest, cfg.target_side,
                                  class_names=full.class_names, split="test")
        train_set = full
    else:
        train_set, test_set = split_off(full, cfg.test_fraction, cfg.seed)
        test_set.split = "test"
    if cfg.train_limit:
        train_set = subsample(train_set, cfg.train_limit, cfg.seed)
    if cfg.test_limit:
        test_set = subsample(test_set, cfg.test_limit, cfg.seed)
    return train_set, test_set


def _load_for_extract(cfg: RunConfig) -> Dataset:
    root = _require_dataset(cfg)
    if root.is_file():
        img = preprocess(read_image(root), cfg.target_side)
        return Dataset(img[None], [0], 1, "input", [root.stem])
    train_set, test_set = load_splits(cfg)
    if is_mnist_dir(root):
        data = train_set
    else:
        data = Dataset(np.concatenate([train_set.x, test_set.x]),
                       np.concatenate([train_set.y, test_set.y]),
                       train_set.classes, "all", train_set.class_names)
    if cfg.limit:
        data = data.take(np.arange(min(cfg.limit, len(data))))
    return data


def cmd_extract(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    data = _load_for_extract(cfg)
    angles = cfg.angles()
    sino_dir = out / "sinograms"
    sino_dir.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out)
    feats = batch_features(data.x, angles, scale=cfg.scale_projections)
    for i, img in enumerate(data.x):
        sino = sinogram(img, angles)
        write_sinogram_csv(sino_dir / f"{i:06d}.csv", sino)
        write_sinogram_pgm(sino_dir / f"{i:06d}.pgm", sino)
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"] + [f"f{k}" for k in range(feats.shape[1])])
        for i, (row, label) in enumerate(zip(feats, data.y)):
            w.writerow([i, int(label)] + [f"{v:.9g}" for v in row])
    print(f"extracted {len(data)} sinograms ({len(angles)} angles x "
          f"{feats.shape[1] // len(angles)} bins) into {out}")
    return 0


def _metadata(cfg: RunConfig, data: Dataset) -> dict:
    return {"arch": cfg.arch, "input": method_input(cfg.arch), "angles_delta": cfg.angles_delta,
            "target_side": cfg.target_side, "scale_projections": cfg.scale_projections,
            "class_names": list(data.class_names), "seed": cfg.seed}


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    train_images, test_images = load_splits(cfg)
    _write_config(cfg, out)
    kind = method_input(cfg.arch)
    train_set = featurize(train_images, kind, cfg.angles(), cfg.scale_projections)
    test_set = featurize(test_images, kind, cfg.angles(), cfg.scale_projections)
    tcfg = cfg.train_config()
    fit, holdout = split_off(train_set, tcfg.holdout_fraction, tcfg.seed)
    model = build_method(cfg.arch, train_set.width, cfg.arch_config(train_set.classes), cfg.seed)
    log.info("model:\n%s", summary(model))
    started = time.perf_counter()
    model, history = train(model, fit, holdout, tcfg)
    seconds = time.perf_counter() - started
    checkpoint.save(out / "model.ckpt", model, _metadata(cfg, train_set))
    history.to_csv(out / "history.csv")
    best = history.records[history.best_epoch - 1] if history.best_epoch else history.records[-1]
    test_acc = evaluate(model, test_set)
    result = {"arch": cfg.arch, "params": model.param_count, "epochs": len(history.records),
              "best_epoch": history.best_epoch, "stop_reason": history.stop_reason,
              "holdout_acc": best.holdout_acc, "test_acc": test_acc}
    (out / "summary.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    log.info("training took %.1fs", seconds)
    print(f"{cfg.arch}: holdout accuracy {best.holdout_acc:.4f}, test accuracy {test_acc:.4f}, "
          f"{model.param_count:,} parameters, {len(history.records)} epochs, {seconds:.1f}s")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("no checkpoint given (use --checkpoint)")
    model, meta = checkpoint.load(cfg.checkpoint)
    # feature settings come from the checkpoint unless set explicitly
    settings = {}
    for key in ("arch", "angles_delta", "target_side", "scale_projections"):
        settings[key] = getattr(cfg, key) if key in cfg.explicit or key not in meta else meta[key]
    cfg = dataclasses.replace(cfg, **settings)
    train_images, test_images = load_splits(cfg)
    if cfg.eval_split == "test":
        images = test_images
    else:
        fit, held = split_off(train_images, cfg.holdout_fraction, cfg.seed)
        images = held if cfg.eval_split == "holdout" else fit
    if len(images) == 0:
        raise DatasetError(f"{cfg.dataset}: the {cfg.eval_split} split is empty")
    data = featurize(images, method_input(cfg.arch), cfg.angles(), cfg.scale_projections)
    if data.width != model.input_width:
        raise ValueError(f"width mismatch: checkpoint {cfg.checkpoint} expects inputs of width "
                         f"{model.input_width}, dataset features have width {data.width}")
    preds = predictions(model, data)
    acc = float(np.mean(preds == data.y))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cm = confusion_matrix(preds, data.y, model.classes)
    cm_path = out / "confusion.csv"
    np.savetxt(cm_path, cm, fmt="%d", delimiter=",")
    print(f"accuracy {acc:.4f} on {len(data)} {cfg.eval_split} items")
    print(f"confusion matrix: {cm_path}")
    print(f"parameters: {model.param_count}")
    return 0


def tiny_gradcheck(seed: int, h: float = 1e-5) -> float:
    """Finite-difference check on a seeded 8-4-3-2 Projectron away from ReLU kinks."""
    model = build_projectron(8, ArchitectureConfig(4, 3, [], 2), seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=8)
    while relu_margin(model, x) < 10 * h:
        x = rng.normal(size=8)
    return grad_check(model, x, seed % 2, h=h)


def cmd_gradcheck(cfg: RunConfig) -> int:
    err = tiny_gradcheck(cfg.seed, cfg.gradcheck_h)
    passed = err < cfg.threshold
    print(f"{'PASS' if passed else 'FAIL'} max relative error {err:.3e} "
          f"(threshold {cfg.threshold:g}, seed {cfg.seed})")
    return 0 if passed else 1


def cmd_compare(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    train_images, test_images = load_splits(cfg)
    _write_config(cfg, out)
    methods = ["mlp-raw", "mlp-radon", "projectron"] + (["mlp-deep"] if cfg.deep else [])
    arch = cfg.arch_config(train_images.classes)
    tcfg = cfg.train_config()
    lines = [("method", "accuracy", "params")]
    if cfg.protocol == "loo":
        table = [("Method", "Accuracy", "|h|")]
        for method in methods:
            data = featurize(train_images, method_input(method), cfg.angles(),
                             cfg.scale_projections)
            acc = leave_one_out(data, tcfg, lambda w, c, s, m=method: build_method(
                m, w, dataclasses.replace(arch, classes=c), s))
            params = build_method(method, data.width, arch, cfg.seed).param_count
            lines.append((method, f"{acc:.9g}", str(params)))
            table.append((METHOD_LABELS[method], f"{100 * acc:.2f}%", f"{params:,}"))
        widths = [max(len(t[c]) for t in table) for c in range(3)]
        report = "\n".join("  ".join(c.ljust(w) for c, w in zip(t, widths)).rstrip()
                           for t in table)
    else:
        rows = compare_experiment(train_images, test_images, tcfg, arch, cfg.angles(),
                                  methods=methods, scale=cfg.scale_projections)
        for r in rows:
            lines.append((r.method, f"{r.accuracy:.9g}", str(r.params)))
            meta = _metadata(dataclasses.replace(cfg, arch=r.method), train_images)
            checkpoint.save(out / f"{r.method}.ckpt", r.model, meta)
            r.history.to_csv(out / f"{r.method}-history.csv")
        report = format_report(rows)
    with open(out / "compare.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(lines)
    (out / "compare.txt").write_text(report + "\n")
    print(report)
    return 0


COMMANDS = {"extract": cmd_extract, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="projectron", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON file of settings")
    parser.add_argument("--dataset", help="MNIST IDX directory, image directory with manifest.csv, "
                                          "or (extract only) a single image")
    parser.add_argument("--angles-delta", dest="angles_delta", type=float)
    parser.add_argument("--target-side", dest="target_side", type=int)
    parser.add_argument("--encode-width", dest="encode_width", type=int)
    parser.add_argument("--hidden-width", dest="hidden_width", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--arch", choices=METHODS)
    parser.add_argument("--max-epochs", dest="max_epochs", type=int)
    parser.add_argument("--train-limit", dest="train_limit", type=int)
    parser.add_argument("--test-limit", dest="test_limit", type=int)
    parser.add_argument("--limit", type=int, help="extract: process at most this many images")
    parser.add_argument("--checkpoint", help="eval: checkpoint to load")
    parser.add_argument("--split", dest="eval_split", choices=["train", "holdout", "test"])
    parser.add_argument("--threshold", type=float, help="gradcheck: pass threshold")
    parser.add_argument("--deep", action="store_const", const=True,
                        help="compare: add the 7-hidden-layer MLP on Radon features")
    parser.add_argument("--protocol", choices=["split", "loo"])
    parser.add_argument("--scale", dest="scale_projections",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="divide each projection by its maximum")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
