"""Command line entry point.

    optg [run] --preset optg --dataset synthetic --epochs 20 --sparsity 0.9 --out runs/x
    optg [run] --resume runs/x/checkpoints/ckpt_0010.npz
    optg report runs/x
    optg export-mnist-sample DIR

Errors print ``error[CODE]: message`` on stderr and exit nonzero.
"""

import argparse
import logging
import sys

from . import runner
from ._accel import apply_thread_limit
from .config import DATASETS, PRESETS, RunConfig, load_config
from .errors import ConfigError, OptGError

# flag -> RunConfig field
_FLAGS = {
    "preset": str, "sparsity": float, "alpha": float, "epochs": int, "batch_size": int, "seed": int,
    "dataset": str, "data_dir": str, "out": str, "train_limit": int, "eval_limit": int, "model": str,
    "lr": float, "schedule": str, "budget": str, "mask_update": str, "mask_lr_mode": str,
    "checkpoint_every": int, "weight_decay": float, "momentum": float, "k_final": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, field="argv")


def _run_parser():
    p = _Parser(prog="optg", description="Sparse training experiments")
    p.add_argument("--config", help="key = value config file (CLI flags override it)")
    p.add_argument("--resume", metavar="PATH", help="continue from a checkpoint .npz")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--dataset", choices=DATASETS)
    for name, typ in _FLAGS.items():
        if name in ("preset", "dataset"):
            continue
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(ns):
    return {k: getattr(ns, k) for k in _FLAGS if getattr(ns, k, None) is not None}


def cmd_run(argv):
    ns = _run_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    over = _overrides(ns)
    if ns.resume:
        runner.resume(ns.resume, over)
        return 0
    cfg = load_config(ns.config, over) if ns.config else RunConfig(**over)
    runner.run(cfg)
    return 0


def cmd_report(argv):
    p = _Parser(prog="optg report")
    p.add_argument("run_dir")
    for path in runner.report(p.parse_args(argv).run_dir):
        print(path)
    return 0


def cmd_export(argv):
    from .datasets import export_mlxtend_mnist
    p = _Parser(prog="optg export-mnist-sample")
    p.add_argument("out_dir")
    print(export_mlxtend_mnist(p.parse_args(argv).out_dir))
    return 0


COMMANDS = {"run": cmd_run, "report": cmd_report, "export-mnist-sample": cmd_export}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    cmd = cmd_run
    if argv and argv[0] in COMMANDS:
        cmd = COMMANDS[argv.pop(0)]
    try:
        apply_thread_limit()
        return cmd(argv)
    except OptGError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        err = ConfigError(str(exc))
        print(f"error[{err.code}]: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
