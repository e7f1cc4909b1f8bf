"""Experiment presets: data and model assembly, run directories, resume, report."""

import csv
import json
import logging
import os
from pathlib import Path
import statistics

import numpy as np

from . import baselines, datasets, masking, nn
from .checkpoint import read_checkpoint, restore, save_checkpoint
from .config import RunConfig, format_config, parse_config_text
from .errors import ConfigError, FileError
from .optim import MetricRecord, OptGTrainer, Trainer
from .schedules import LrSchedule, SparsitySchedule

log = logging.getLogger("optg")

SINGLE_PRESETS = ("dense", "optg", "oneshot", "gmp")
SWEEPS = {
    "ablate-schedule": ("schedule", ["sigmoid", "zhu-cubic"]),
    "ablate-alpha": ("alpha", ["0.1", "0.5", "1.0"]),
    "ablate-budget": ("budget", ["optg_auto", "uniform", "erk", "global_magnitude"]),
    "ablate-maskfreq": ("mask_update", ["epoch", "iteration", "10"]),
}


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------

def load_data(cfg):
    """(train, eval) datasets for ``cfg``, with limits applied."""
    if cfg.dataset == "synthetic":
        train = datasets.synthetic_blobs(cfg.seed, cfg.synthetic_n, cfg.synthetic_classes, cfg.synthetic_dim)
        test = datasets.synthetic_blobs(cfg.seed, max(cfg.synthetic_n // 4, 1), cfg.synthetic_classes,
                                        cfg.synthetic_dim, split="test")
    elif cfg.dataset == "mnist":
        d = datasets.mnist_dir_or_sample(cfg.data_dir or None)
        train = datasets.load_mnist_idx(d, split="train")
        test = datasets.load_mnist_idx(d, split="test")
    else:
        d = cfg.data_dir or os.environ.get("OPTG_CIFAR10_DIR")
        if not d:
            raise FileError("cifar10 needs --data-dir or OPTG_CIFAR10_DIR pointing at cifar-10-batches-bin")
        train = datasets.load_cifar10_binary(d, "train")
        test = datasets.load_cifar10_binary(d, "test")
    return train.subset(cfg.train_limit or None), test.subset(cfg.eval_limit or None)


def build_model(cfg, train):
    rng = np.random.default_rng(cfg.seed)
    model = nn.build_model(cfg.arch, train.sample_shape, train.num_classes, rng)
    n_param = len(model.parametric_layers)
    exempt = {i % n_param for i in cfg.exempt_layers}
    return model, masking.attach_masks(model, exempt=exempt)


def sparsity_schedule(cfg, variant=None):
    return SparsitySchedule(cfg.sparsity, cfg.alpha, cfg.epochs, variant=variant or cfg.schedule,
                            k_final=cfg.k_final or None)


def make_trainer(cfg, kind, model, params, train, test, fresh=True):
    it = datasets.BatchIterator(train, cfg.batch_size, cfg.seed)
    common = dict(momentum=cfg.momentum, weight_decay=cfg.weight_decay, mask_momentum=cfg.mask_momentum,
                  mask_weight_decay=cfg.mask_weight_decay, seed=cfg.seed)
    lr = LrSchedule(cfg.lr, cfg.epochs)
    if kind == "optg":
        return OptGTrainer(model, params, lr, it, test, sparsity=sparsity_schedule(cfg),
                           mask_lr_mode=cfg.mask_lr_mode, mask_lr_constant=cfg.mask_lr_constant,
                           mask_update=cfg.mask_update_value, budget=cfg.budget, **common)
    if kind == "gmp":
        return baselines.GMPTrainer(model, params, lr, it, test, sparsity=sparsity_schedule(cfg, "zhu-cubic"),
                                    **common)
    if kind == "oneshot" and fresh:
        n = cfg.saliency_samples
        scores = baselines.first_order_saliency(model, params, (train.inputs[:n], train.labels[:n]))
        baselines.one_shot_prune(scores, params, cfg.sparsity)
    return Trainer(model, params, lr, it, test, **common)


# --------------------------------------------------------------------------
# run directory I/O
# --------------------------------------------------------------------------

def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


class RunWriter:
    """metrics.csv, layer_sparsity.csv and checkpoints of one run directory."""

    def __init__(self, out, cfg, kind, keep_epochs=None):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg, self.kind = cfg, kind
        (self.out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
        self.metrics = self.out / "metrics.csv"
        self.layers = self.out / "layer_sparsity.csv"
        if keep_epochs is None:
            self._rewrite(self.metrics, MetricRecord.CSV_FIELDS, [])
            self._rewrite(self.layers, ("epoch", "layer", "kept", "total", "sparsity"), [])
        else:
            # drop rows written after the checkpoint we resume from
            for path in (self.metrics, self.layers):
                rows = read_csv(path) if path.exists() else []
                header = rows[0].keys() if rows else (
                    MetricRecord.CSV_FIELDS if path == self.metrics else
                    ("epoch", "layer", "kept", "total", "sparsity"))
                self._rewrite(path, list(header), [r for r in rows if int(r["epoch"]) <= keep_epochs])

    @staticmethod
    def _rewrite(path, header, rows):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([r[h] for h in header])

    def append(self, rec):
        with open(self.metrics, "a", newline="", encoding="utf-8") as f:
            csv.writer(f, lineterminator="\n").writerow([_fmt(v) for v in rec.row()])
        with open(self.layers, "a", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            for entry in rec.layer_sparsity:
                kept, total = entry["kept"], entry["total"]
                w.writerow([rec.epoch, entry["layer"], kept, total, _fmt(1.0 - kept / total)])

    def checkpoint(self, trainer, final=False):
        k = trainer.state.epoch
        every = self.cfg.checkpoint_every
        if final or (every and k % every == 0):
            d = self.out / "checkpoints"
            d.mkdir(exist_ok=True)
            save_checkpoint(d / f"ckpt_{k:04d}.npz", trainer, self.cfg, self.kind)

    def summary(self, params):
        s = masking.sparsity_summary(params)
        with open(self.out / "final_mask_summary.json", "w", encoding="utf-8") as f:
            json.dump({"sparsity": s["sparsity"], "pruned": s["pruned"], "total": s["total"],
                       "layers": s["layers"]}, f, indent=2)
            f.write("\n")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def run_single(cfg, out, data=None):
    """Train one model under ``cfg.preset``; returns the MetricRecords."""
    kind = cfg.preset
    writer = RunWriter(out, cfg, kind)
    if cfg.epochs == 0:
        return []
    train, test = data or load_data(cfg)
    model, params = build_model(cfg, train)
    trainer = make_trainer(cfg, kind, model, params, train, test)
    return _fit(trainer, writer)


def _fit(trainer, writer):
    def on_epoch(rec, tr):
        writer.append(rec)
        writer.checkpoint(tr, final=rec.epoch == tr.tau)
        log.info("epoch %d sparsity %.4f loss %.4f acc %.2f", rec.epoch, rec.sparsity, rec.train_loss,
                 rec.eval_acc)
    try:
        records = trainer.fit(on_epoch)
    finally:
        writer.summary(trainer.params)
    return records


def resume(checkpoint_path, overrides=None):
    """Continue a run from a checkpoint; the run directory is the checkpoint's grandparent."""
    meta, arrays = read_checkpoint(checkpoint_path)
    values = dict(meta["config"])
    overrides = dict(overrides or {})
    if "epochs" in overrides and overrides["epochs"] != values["epochs"]:
        raise ConfigError(f"cannot change epochs from {values['epochs']} to {overrides['epochs']} on resume",
                          field="epochs")
    values.update(overrides)
    cfg = RunConfig(**values)
    out = Path(checkpoint_path).resolve().parent.parent
    k = meta["epoch"]
    writer = RunWriter(out, cfg, meta["kind"], keep_epochs=k)
    if k >= cfg.epochs:
        return []
    train, test = load_data(cfg)
    model, params = build_model(cfg, train)
    trainer = make_trainer(cfg, meta["kind"], model, params, train, test, fresh=False)
    restore(trainer, meta, arrays)
    return _fit(trainer, writer)


def run_sweep(cfg, out, key, values):
    rows = []
    data = load_data(cfg) if cfg.epochs else None
    for value in values:
        sub = RunConfig(**{**cfg.to_dict(), key: _coerce_like(cfg, key, value), "preset": "optg"})
        records = run_single(sub, Path(out) / f"{key}={value}", data)
        last = records[-1] if records else None
        rows.append({key: value, "final_eval_acc": last.eval_acc if last else float("nan"),
                     "final_sparsity": last.sparsity if last else 0.0})
    _write_rows(Path(out) / "summary.csv", rows)
    return rows


def _coerce_like(cfg, key, value):
    current = getattr(cfg, key)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, int):
        return int(value)
    return value


def _write_rows(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if not rows:
            return
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])


def run_cycles(cfg, out, data=None):
    """Grid of (cycles, total epochs) -> final accuracy, each from the same init."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    train, test = data or load_data(cfg)
    rows, metric_rows = [], []
    for c in cfg.cycles:
        for e in cfg.cycle_epochs:
            model, params = build_model(cfg, train)
            it = datasets.BatchIterator(train, cfg.batch_size, cfg.seed)
            n = cfg.saliency_samples
            acc, records = baselines.cycle_experiment(
                model, params, it, test, cycles=c, total_epochs=e, P=cfg.sparsity,
                criterion=cfg.cycle_criterion, saliency_batch=(train.inputs[:n], train.labels[:n]),
                lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
            rows.append({"cycles": c, "total_epochs": e, "eval_acc": acc,
                         "sparsity": masking.sparsity_summary(params)["sparsity"]})
            metric_rows += [dict(zip(("cycles", "total_epochs") + MetricRecord.CSV_FIELDS, (c, e, *r.row())))
                            for r in records]
            log.info("cycles %d epochs %d acc %.2f", c, e, acc)
    _write_rows(out / "cycles.csv", rows)
    _write_rows(out / "cycles_metrics.csv", metric_rows)
    return rows


def run_paradox(cfg, out, data=None):
    """Train a dense model for ``cfg.epochs`` then measure the loss-change gap."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    train, test = data or load_data(cfg)
    model, params = build_model(cfg, train)
    if cfg.epochs:
        Trainer(model, params, LrSchedule(cfg.lr, cfg.epochs), datasets.BatchIterator(train, cfg.batch_size, cfg.seed),
                None, momentum=cfg.momentum, weight_decay=cfg.weight_decay).fit()
    n = cfg.paradox_batch
    report = baselines.measure_paradox_gap(model, params, (test.inputs[:n], test.labels[:n]),
                                           cfg.paradox_fractions, cfg.finetune_steps, cfg.finetune_lr)
    _write_rows(out / "paradox.csv", list(report.rows()))
    return report


def run(cfg):
    """Execute ``cfg.preset`` into ``cfg.out``."""
    out = Path(cfg.out)
    if cfg.preset in SINGLE_PRESETS:
        return run_single(cfg, out)
    if cfg.preset == "gmp-cycles":
        return run_cycles(cfg, out)
    if cfg.preset == "paradox":
        return run_paradox(cfg, out)
    key, values = SWEEPS[cfg.preset]
    return run_sweep(cfg, out, key, cfg.sweep or values)


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def report(run_dir):
    """Write plot-ready CSVs for a run directory or a directory of runs."""
    run_dir = Path(run_dir)
    if (run_dir / "metrics.csv").exists():
        rows = read_csv(run_dir / "metrics.csv")
        _write_rows(run_dir / "acc_vs_sparsity.csv",
                    [{"epoch": r["epoch"], "sparsity": r["sparsity"], "eval_acc": r["eval_acc"]} for r in rows])
        _write_rows(run_dir / "schedule_curve.csv",
                    [{"epoch": r["epoch"], "sparsity": r["sparsity"], "lr_w": r["lr_w"], "lr_m": r["lr_m"]}
                     for r in rows])
        return [run_dir / "acc_vs_sparsity.csv", run_dir / "schedule_curve.csv"]
    runs = sorted(p for p in run_dir.glob("*/metrics.csv")) if run_dir.is_dir() else []
    if not runs:
        raise FileError(f"{run_dir}: expected metrics.csv (and config.txt) in the directory "
                        "or in its immediate subdirectories")
    by_p = {}
    per_run = []
    for m in runs:
        rows = read_csv(m)
        cfg_path = m.parent / "config.txt"
        target = float(parse_config_text(cfg_path.read_text())["sparsity"]) if cfg_path.exists() else float("nan")
        if not rows:
            continue
        acc = float(rows[-1]["eval_acc"])
        per_run.append({"run": m.parent.name, "target_sparsity": target,
                        "final_sparsity": rows[-1]["sparsity"], "final_eval_acc": acc})
        by_p.setdefault(target, []).append(acc)
    table = [{"target_sparsity": p, "runs": len(a), "mean_eval_acc": statistics.fmean(a),
              "min_eval_acc": min(a), "max_eval_acc": max(a)} for p, a in sorted(by_p.items())]
    _write_rows(run_dir / "accuracy_by_sparsity.csv", table)
    _write_rows(run_dir / "runs.csv", per_run)
    return [run_dir / "accuracy_by_sparsity.csv", run_dir / "runs.csv"]
