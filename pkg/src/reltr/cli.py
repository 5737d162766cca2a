"""Command-line entry point: generate, train, eval, attention, report.

Every option is resolved as defaults < REL_SEED (seed only) < --config JSON < flags,
and the resolved settings are written into each artifact next to its
format version.  Path-valued options are left out of the embedded config so
that identical settings give identical bytes wherever the files live; the
dataset is identified by its SHA-256 instead.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, SplitSpec, load_dataset, save_dataset, split_dataset
from .evaluation import (
    CONSTRAINTS, REPORT_FORMAT_VERSION, EvalReport, confusion, evaluate, write_json,
)
from .frequency import build_frequency_table
from .model import (
    PREDCLS, REFERENCE_SCALE, TASKS, ConfigError, ModelConfig, RelationTransformer,
    load_checkpoint, save_checkpoint,
)
from .synthetic import SyntheticConfig, generate_synthetic
from .train import TrainConfig, TrainingDiverged, format_log_line, train

log = logging.getLogger("reltr")

ATTENTION_FORMAT_VERSION = "1.0"
PATH_OPTIONS = {"config", "out", "data", "checkpoint", "out_checkpoint", "log", "report",
                "confusion", "out_dir"}

# Values the training recipe is specified with; echoed into every training log header.
REFERENCE_TRAINING = {"lr": 1e-3, "batch_size": 16, "dropout": 0.25, "patience": 3, "seed": 42}

DEFAULTS = {
    "generate": {
        "out": None, "seed": 42, "num_samples": 2400, "min_nodes": 5, "max_nodes": 10,
        "num_classes": 12, "num_predicates": 6, "d_vis": 32, "feature_noise": 0.3,
        "prior_confusion": 0.2,
    },
    "train": {
        "data": None, "out_checkpoint": None, "log": None, "mode": PREDCLS,
        "epochs": 30, "lr": 1e-3, "batch_size": 16, "patience": 3, "decay_factor": 0.1,
        "dropout": 0.25, "seed": 42, "split_seed": 42, "object_weight": 1.0, "predicate_weight": 1.0,
        "d_model": 64, "num_heads": 4, "enc_layers": 3, "dec_layers": 2, "d_sem": 16,
        "pos_m": 10000.0, "freq_eps": 1.0, "val_ks": "20,50,100",
    },
    "eval": {
        "checkpoint": None, "data": None, "split": "test", "split_seed": 42, "ks": "20,50,100",
        "constraint": "both", "tasks": "both", "report": None, "confusion": None,
        "confusion_mode": PREDCLS,
    },
    "attention": {
        "checkpoint": None, "data": None, "sample_id": None, "layer": "last", "mode": PREDCLS,
        "out_dir": None,
    },
    "report": {"report": None, "confusion": None},
}

REQUIRED = {
    "generate": ("out",),
    "train": ("data", "out_checkpoint"),
    "eval": ("checkpoint", "data", "report"),
    "attention": ("checkpoint", "data", "sample_id", "out_dir"),
    "report": ("report",),
}


class CliError(Exception):
    """User-facing failure; printed without a traceback."""

    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# argument parsing and config resolution
# ---------------------------------------------------------------------------

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reltr", description="Relation transformer for scene graphs.")
    parser.add_argument("--version", action="version", version=f"reltr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a synthetic dataset",
        "train": "train a model and write the best checkpoint",
        "eval": "write a Recall@K report and a predicate confusion report",
        "attention": "export top-layer attention heatmaps for one sample",
        "report": "print a saved report as a table",
    }
    choices = {"mode": TASKS, "confusion_mode": TASKS, "constraint": ("both",) + CONSTRAINTS,
               "tasks": ("both",) + TASKS, "split": ("train", "val", "test", "all")}
    for command, defaults in DEFAULTS.items():
        p = sub.add_parser(command, help=helps[command])
        p.add_argument("--config", help="JSON file of option values (flat, or keyed by command)")
        for name, default in defaults.items():
            kind = type(default) if default is not None else str
            p.add_argument(_flag(name), dest=name, type=kind, default=None, choices=choices.get(name),
                           help=f"default: {default}" if default is not None else None)
    return parser


def _config_file_values(path: str, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    if isinstance(doc.get(command), dict):
        doc = doc[command]
    known = DEFAULTS[command]
    values = {}
    for key, value in doc.items():
        if key in DEFAULTS and isinstance(value, dict):
            continue  # another command's section
        name = key.replace("-", "_")
        if name not in known:
            raise CliError(f"config file {path}: unknown option {key!r} for '{command}'", code=2)
        values[name] = value
    return values


def resolve_config(command: str, args: argparse.Namespace, environ=None) -> dict:
    """defaults < REL_SEED < config file < flags."""
    environ = os.environ if environ is None else environ
    cfg = dict(DEFAULTS[command])
    if "seed" in cfg and environ.get("REL_SEED"):
        try:
            cfg["seed"] = int(environ["REL_SEED"])
        except ValueError as exc:
            raise CliError(f"REL_SEED must be an integer, got {environ['REL_SEED']!r}", code=2) from exc
    if getattr(args, "config", None):
        cfg.update(_config_file_values(args.config, command))
    for name in DEFAULTS[command]:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    missing = [_flag(n) for n in REQUIRED[command] if cfg.get(n) in (None, "")]
    if missing:
        raise CliError(f"{command}: missing required option(s): {', '.join(missing)}", code=2)
    return cfg


def embedded_config(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items()) if k not in PATH_OPTIONS}


def _int_list(text, option: str) -> list[int]:
    if isinstance(text, (list, tuple)):
        values = [int(v) for v in text]
    else:
        try:
            values = [int(v) for v in str(text).split(",") if v.strip()]
        except ValueError as exc:
            raise CliError(f"{option} must be a comma-separated list of integers, got {text!r}", 2) from exc
    if not values or min(values) < 1:
        raise CliError(f"{option} needs at least one positive integer, got {text!r}", code=2)
    return values


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_data(path):
    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise CliError(f"dataset not found: {path}") from exc
    except DatasetError as exc:
        raise CliError(f"invalid dataset {path}: {exc}") from exc


def _load_model(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CliError(f"checkpoint not found: {path}") from exc
    except (ConfigError, KeyError, ValueError) as exc:
        raise CliError(f"invalid checkpoint {path}: {exc}") from exc


def _check_compatible(model: RelationTransformer, ds) -> None:
    pairs = [("d_vis", model.cfg.d_vis, ds.d_vis),
             ("object classes", model.cfg.num_classes, ds.vocab.num_classes),
             ("predicates incl. background", model.cfg.num_relations, ds.vocab.num_relations)]
    for what, ckpt, data in pairs:
        if ckpt != data:
            raise CliError(f"dimension mismatch for {what}: checkpoint has {ckpt}, dataset has {data}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: dict) -> int:
    try:
        syn = SyntheticConfig(num_samples=cfg["num_samples"], nodes_per_scene=(cfg["min_nodes"], cfg["max_nodes"]),
                              num_classes=cfg["num_classes"], num_predicates=cfg["num_predicates"],
                              seed=cfg["seed"], d_vis=cfg["d_vis"], feature_noise=cfg["feature_noise"],
                              prior_confusion=cfg["prior_confusion"])
    except ValueError as exc:
        raise CliError(f"generate: {exc}") from exc
    ds = generate_synthetic(syn)
    ds.meta["resolved_config"] = embedded_config(cfg)
    save_dataset(ds, cfg["out"])
    load_dataset(cfg["out"])  # the written file must pass full validation
    print(f"wrote {len(ds.samples)} scenes to {cfg['out']}")
    return 0


def cmd_train(cfg: dict) -> int:
    ds = _load_data(cfg["data"])
    parts = split_dataset(ds, SplitSpec(seed=cfg["split_seed"]))
    if not parts["train"]:
        raise CliError("training split is empty")
    try:
        tcfg = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                           patience=cfg["patience"], decay_factor=cfg["decay_factor"], dropout=cfg["dropout"],
                           seed=cfg["seed"], object_weight=cfg["object_weight"],
                           predicate_weight=cfg["predicate_weight"], mode=cfg["mode"],
                           val_ks=tuple(_int_list(cfg["val_ks"], "--val-ks")))
        mcfg = ModelConfig(num_classes=ds.vocab.num_classes, num_predicates=ds.vocab.num_relations - 1,
                           d_vis=ds.d_vis, d_sem=cfg["d_sem"], d_model=cfg["d_model"], num_heads=cfg["num_heads"],
                           enc_layers=cfg["enc_layers"], dec_layers=cfg["dec_layers"], pos_m=cfg["pos_m"],
                           dropout=cfg["dropout"], freq_eps=cfg["freq_eps"], seed=cfg["seed"])
    except ValueError as exc:
        raise CliError(f"train: {exc}", code=2) from exc
    freq = build_frequency_table(parts["train"], mcfg.num_classes, mcfg.num_relations, mcfg.freq_eps)
    model = RelationTransformer(mcfg, ds.vocab.object_classes, ds.vocab.predicates, freq)

    meta = {"resolved_config": embedded_config(cfg), "train_config": tcfg.to_dict(),
            "data_sha256": _sha256(cfg["data"]), "best_epoch": 0, "best_val_recall": None,
            "splits": {k: len(v) for k, v in parts.items()}}
    header = {"type": "header", "format_version": REPORT_FORMAT_VERSION, "config": embedded_config(cfg),
              "reference_defaults": REFERENCE_TRAINING, "reference_scale_model": REFERENCE_SCALE,
              "splits": meta["splits"]}
    log_lines = [format_log_line(header)]
    log_path = cfg["log"]
    best = {"metric": None}

    def on_epoch(record):
        log_lines.append(format_log_line({"type": "epoch", **record}))
        if log_path:
            Path(log_path).write_text("\n".join(log_lines) + "\n", encoding="utf-8")
        print(f"epoch {record['epoch']:3d}  loss {record['loss']:.4f}  "
              f"val {record['val_recall']:.4f}  lr {record['lr']:.2e}", flush=True)
        if best["metric"] is None or record["val_recall"] > best["metric"]:
            best["metric"] = record["val_recall"]
            meta.update(best_epoch=record["epoch"], best_val_recall=record["val_recall"])
            save_checkpoint(model, cfg["out_checkpoint"], meta)

    if log_path:
        Path(log_path).write_text(log_lines[0] + "\n", encoding="utf-8")
    try:
        train(model, parts["train"], parts["val"], tcfg, on_epoch)
    except TrainingDiverged as exc:
        raise CliError(f"training diverged: {exc}", code=3) from exc
    save_checkpoint(model, cfg["out_checkpoint"], meta)
    print(f"best epoch {meta['best_epoch']}; checkpoint written to {cfg['out_checkpoint']}")
    return 0


def _select_split(ds, name: str, seed: int):
    if name == "all":
        return list(ds.samples)
    return split_dataset(ds, SplitSpec(seed=seed))[name]


def cmd_eval(cfg: dict) -> int:
    model, _ = _load_model(cfg["checkpoint"])
    ds = _load_data(cfg["data"])
    _check_compatible(model, ds)
    samples = _select_split(ds, cfg["split"], cfg["split_seed"])
    if not samples:
        raise CliError(f"split {cfg['split']!r} is empty")
    ks = _int_list(cfg["ks"], "--ks")
    tasks = TASKS if cfg["tasks"] == "both" else (cfg["tasks"],)
    constraints = CONSTRAINTS if cfg["constraint"] == "both" else (cfg["constraint"],)
    report = evaluate(model, samples, ks, tasks, constraints)
    doc = report.to_dict(embedded_config(cfg))
    doc["checkpoint_sha256"] = _sha256(cfg["checkpoint"])
    doc["data_sha256"] = _sha256(cfg["data"])
    doc["ordering_violations"] = report.ordering_violations()
    write_json(doc, cfg["report"])

    conf = confusion(model, samples, cfg["confusion_mode"])
    conf_path = cfg["confusion"] or str(Path(cfg["report"]).with_suffix("")) + ".confusion.json"
    write_json(conf.to_dict(embedded_config(cfg)), conf_path)

    print(report.table())
    for line in conf.lines():
        print(line)
    for v in doc["ordering_violations"]:
        print(f"warning: ordering violation {v}", file=sys.stderr)
    return 0


def _layer_index(spec, num_layers: int) -> int:
    if str(spec) == "last":
        return num_layers - 1
    try:
        idx = int(spec)
    except ValueError as exc:
        raise CliError(f"--layer must be 'last' or 1..{num_layers}, got {spec!r}", code=2) from exc
    if not 1 <= idx <= num_layers:
        raise CliError(f"--layer must be 'last' or 1..{num_layers}, got {spec!r}", code=2)
    return idx - 1


def write_heatmap(weights: np.ndarray, row_labels, col_labels, stem: Path, header: dict) -> None:
    """CSV with labelled rows/columns plus an 8-bit binary PGM of round(255 * w)."""
    comment = "# " + json.dumps(header, sort_keys=True)
    lines = [comment, ",".join([""] + list(col_labels))]
    for label, row in zip(row_labels, weights):
        lines.append(",".join([label] + [repr(float(v)) for v in row]))
    stem.with_suffix(".csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    pixels = np.rint(255.0 * weights).astype(np.uint8)
    rows, cols = pixels.shape
    head = f"P5\n{comment}\n{cols} {rows}\n255\n".encode("ascii")
    stem.with_suffix(".pgm").write_bytes(head + pixels.tobytes())


def cmd_attention(cfg: dict) -> int:
    model, _ = _load_model(cfg["checkpoint"])
    ds = _load_data(cfg["data"])
    _check_compatible(model, ds)
    try:
        sample = ds.by_id(cfg["sample_id"])
    except KeyError as exc:
        raise CliError(exc.args[0]) from exc
    out = model.forward(sample, cfg["mode"], training=False)
    names = model.class_names
    node_labels = [f"{i}:{names[c]}" for i, c in enumerate(sample.gt_classes())]
    edge_labels = [f"{i}-{j}" for i, j in out.edges]
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, mats, rows in (("n2n", out.trace.n2n, node_labels), ("e2n", out.trace.e2n, edge_labels)):
        if not mats:
            log.info("sample %s has no edges; skipping %s", sample.sample_id, kind)
            continue
        layer = _layer_index(cfg["layer"], len(mats))
        header = {"format": "reltr-attention", "format_version": ATTENTION_FORMAT_VERSION, "kind": kind,
                  "layer": layer + 1, "sample_id": sample.sample_id, "config": embedded_config(cfg)}
        stem = out_dir / f"{sample.sample_id}_{kind}_layer{layer + 1}"
        write_heatmap(mats[layer], rows, node_labels, stem, header)
        written += [str(stem.with_suffix(".csv")), str(stem.with_suffix(".pgm"))]
    for path in written:
        print(path)
    return 0


def cmd_report(cfg: dict) -> int:
    try:
        doc = json.loads(Path(cfg["report"]).read_text(encoding="utf-8"))
        report = EvalReport.from_dict(doc)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot read report {cfg['report']}: {exc}") from exc
    print(report.table())
    print(f"scenes scored: {doc.get('num_scored_samples')} of {doc.get('num_samples')}")
    if cfg["confusion"]:
        try:
            conf = json.loads(Path(cfg["confusion"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read confusion report {cfg['confusion']}: {exc}") from exc
        top = conf.get("top_confusions", {})
        for gt in conf.get("predicates", sorted(top)):
            for item in top.get(gt, []):
                print(f"'{gt}' predicted as '{item['predicted']}' {100 * item['rate']:.1f}% of the time")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "attention": cmd_attention, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"reltr {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
