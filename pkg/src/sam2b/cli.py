"""Command-line entry point: ``sam2b {gen,train,eval,ablate,inspect-weights}``.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O or file
format error, 4 training failure, 1 any other package error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config, load_config
from .encoders import make_batch
from .errors import ConfigError, Sam2bError, TrainingError, UnsupportedVariantError
from .sensors import MODALITIES, Dataset, build_dataset
from .storage import load_dataset, save_dataset
from .trainer import evaluate, load_checkpoint, predict, save_checkpoint, split, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAINING = 4

METRICS_HEADER = ["variant", "top1", "top2", "top3"]
CURVE_HEADER = ["epoch", "loss", "top1"]
ABLATION_HEADER = ["variant", "status", "top1", "top2", "top3",
                   "clean_top1", "clean_top2", "clean_top3",
                   "degraded_top1", "degraded_top2", "degraded_top3", "n_clean", "n_degraded"]
WEIGHTS_HEADER = (["time"] + [f"w_{m}" for m in MODALITIES]
                  + [f"{m}_{lv}" for m in MODALITIES for lv in ("noise", "staleness", "occlusion")])

log = logging.getLogger("sam2b")


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _snapshot(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


def _attach_log(out_dir: Path) -> logging.Handler:
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("sam2b").addHandler(handler)
    logging.getLogger("sam2b").setLevel(logging.INFO)
    return handler


def _detach_log(handler: logging.Handler) -> None:
    logging.getLogger("sam2b").removeHandler(handler)
    handler.close()


# ---------------------------------------------------------------- commands


def cmd_gen(cfg: ExperimentConfig, out_path) -> Dataset:
    """Build the dataset described by ``cfg`` and write it (plus manifest and config snapshot)."""
    ds = build_dataset(cfg.trajectory, cfg.channel, cfg.schedule, seed=cfg.seed,
                       camera=cfg.camera, split_fraction=cfg.train.split_fraction)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out_path)
    _snapshot(cfg, out_path.with_name(out_path.name + ".config.ini"))
    hist = ds.manifest["label_histogram"]
    covered = sum(1 for c in hist if c)
    print(f"wrote {out_path}: N={len(ds)} Q={cfg.channel.Q} beams_covered={covered}")
    print("label_histogram " + " ".join(str(c) for c in hist))
    return ds


def _metrics_row(variant, m):
    return [variant, _num(m.top1), _num(m.top2), _num(m.top3)]


def cmd_train(cfg: ExperimentConfig, dataset, out_dir, variant: str | None = None):
    """Train one variant; writes checkpoint.s2mc, metrics.csv, curve.csv and config.ini."""
    out_dir = Path(out_dir)
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    tcfg = cfg.train_config(variant)
    handler = _attach_log(out_dir)
    try:
        _snapshot(dataclasses.replace(cfg, train=tcfg), out_dir / "config.ini")
        log.info("training %s on %d samples", tcfg.variant, len(ds))
        result = train(ds, tcfg)
        save_checkpoint(result.params, out_dir / "checkpoint.s2mc")
        write_csv(out_dir / "metrics.csv", METRICS_HEADER, [_metrics_row(tcfg.variant, result.metrics)])
        write_csv(out_dir / "curve.csv", CURVE_HEADER,
                  [[row["epoch"], _num(row["loss"]), _num(row["top1"])] for row in result.log])
        log.info("done: top1=%.4f top2=%.4f top3=%.4f", result.metrics.top1, result.metrics.top2,
                 result.metrics.top3)
    except TrainingError as exc:
        log.error("training failed in epoch %s: %s", exc.epoch, exc)
        raise
    finally:
        _detach_log(handler)
    return result


def _test_side(ds: Dataset, fraction: float) -> Dataset:
    return split(ds, fraction)[1]


def cmd_eval(checkpoint, dataset, out_dir, variant: str | None = None, fraction: float | None = None):
    """Evaluate a checkpoint on the chronological test split of ``dataset``."""
    out_dir = Path(out_dir)
    params = load_checkpoint(checkpoint, variant)
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    frac = fraction if fraction is not None else ds.manifest.get("split_fraction", 0.7)
    metrics = evaluate(params, _test_side(ds, frac))
    write_csv(out_dir / "metrics.csv", METRICS_HEADER, [_metrics_row(params.config.variant, metrics)])
    return metrics


def cmd_ablate(cfg: ExperimentConfig, dataset, out_dir) -> list[list[str]]:
    """Train every configured variant under the same seed; one CSV row per variant.

    Each trained model is kept as ``<variant>.s2mc`` next to ``ablation.csv``.
    A variant that fails keeps its row with status ``failed:<ErrorType>`` and
    empty metric cells; the remaining variants still run.
    """
    out_dir = Path(out_dir)
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    _snapshot(cfg, out_dir / "config.ini")
    rows = []
    for v in cfg.variants:
        try:
            result = train(ds, cfg.train_config(v))
            save_checkpoint(result.params, out_dir / f"{v}.s2mc")
        except Sam2bError as exc:
            log.error("variant %s failed: %s", v, exc)
            rows.append([v, f"failed:{type(exc).__name__}"] + [""] * (len(ABLATION_HEADER) - 2))
            continue
        m = result.metrics
        rows.append([v, "ok", _num(m.top1), _num(m.top2), _num(m.top3),
                     *(_num(x) for x in m.clean_topk), *(_num(x) for x in m.degraded_topk),
                     m.n_clean, m.n_degraded])
        write_csv(out_dir / "ablation.csv", ABLATION_HEADER, rows)  # partial results survive a crash
    write_csv(out_dir / "ablation.csv", ABLATION_HEADER, rows)
    return rows


def weight_rows(params, ds: Dataset) -> list[list[str]]:
    if not params.config.spec.dynamic:
        raise UnsupportedVariantError(f"variant {params.config.variant!r} has no dynamic weights")
    batch = make_batch(ds, params.config.patch_size)
    pred = predict(params, batch)
    full = np.zeros((len(batch), len(MODALITIES)))
    for j, m in enumerate(pred.modalities):
        full[:, MODALITIES.index(m)] = pred.weights[:, j]
    deg = batch.degradation.reshape(len(batch), -1)
    return [[_num(t)] + [_num(w) for w in full[i]] + [_num(d) for d in deg[i]]
            for i, t in enumerate(batch.times)]


def cmd_inspect_weights(checkpoint, dataset, out_dir, variant: str | None = None,
                        fraction: float | None = None) -> Path:
    """Per-test-sample weights and injected degradation levels to weights.csv."""
    params = load_checkpoint(checkpoint, variant)
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    frac = fraction if fraction is not None else ds.manifest.get("split_fraction", 0.7)
    rows = weight_rows(params, _test_side(ds, frac))
    return write_csv(Path(out_dir) / "weights.csv", WEIGHTS_HEADER, rows)


# ---------------------------------------------------------------- argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sam2b", description="Reliability-aware multi-modal UAV beam prediction.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config=True, dataset=True, checkpoint=False):
        if config:
            sp.add_argument("--config", required=True, help="experiment INI file")
        if dataset:
            sp.add_argument("--dataset", required=True, help="dataset file written by 'gen'")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="checkpoint written by 'train'")
        sp.add_argument("--out", required=True, help="output file (gen) or directory")
        sp.add_argument("--seed", type=int, default=None, help="override dataset and training seeds")
        sp.add_argument("--variant", default=None, help="model variant")

    common(sub.add_parser("gen", help="generate a dataset"), dataset=False)
    common(sub.add_parser("train", help="train one variant"))
    common(sub.add_parser("eval", help="evaluate a checkpoint on the test split"), config=False, checkpoint=True)
    common(sub.add_parser("ablate", help="train and compare the configured variants"))
    common(sub.add_parser("inspect-weights", help="export per-sample modality weights"),
           config=False, checkpoint=True)
    return p


def _run(args) -> None:
    cfg = None
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    if args.verb == "gen":
        cmd_gen(cfg, args.out)
    elif args.verb == "train":
        cmd_train(cfg, args.dataset, args.out, args.variant)
    elif args.verb == "eval":
        m = cmd_eval(args.checkpoint, args.dataset, args.out, args.variant)
        print(f"top1={m.top1:.4f} top2={m.top2:.4f} top3={m.top3:.4f} n={m.n}")
    elif args.verb == "ablate":
        if args.variant:
            cfg = dataclasses.replace(cfg, variants=tuple(v.strip() for v in args.variant.split(",")))
        for row in cmd_ablate(cfg, args.dataset, args.out):
            print(",".join(str(c) for c in row[:5]))
    elif args.verb == "inspect-weights":
        print(cmd_inspect_weights(args.checkpoint, args.dataset, args.out, args.variant))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        _run(args)
    except (ConfigError, UnsupportedVariantError) as exc:
        print(f"sam2b: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:  # includes the file-format errors
        print(f"sam2b: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"sam2b: training failed (epoch {exc.epoch}): {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except Sam2bError as exc:
        print(f"sam2b: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
