"""Versioned training checkpoints (numpy ``.npz`` with a JSON metadata entry)."""

import json
from pathlib import Path

import numpy as np

from .errors import LoadError

FORMAT_VERSION = 1
_META = "__meta__"


def save_checkpoint(path, trainer, config, kind, extra=None):
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "epoch": trainer.state.epoch,
        "iteration": trainer.state.iteration,
        "seed": trainer.state.seed,
        "config": config.to_dict(),
        "extra": extra or {},
    }
    arrays = dict(trainer.state_arrays())
    arrays[_META] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Return (meta dict, arrays dict)."""
    try:
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if _META not in arrays:
        raise LoadError(f"{path} is not an optg checkpoint")
    meta = json.loads(arrays.pop(_META).tobytes().decode())
    if meta.get("format_version") != FORMAT_VERSION:
        raise LoadError(f"checkpoint format {meta.get('format_version')} != supported {FORMAT_VERSION}")
    return meta, arrays


def restore(trainer, meta, arrays):
    trainer.load_state_arrays(arrays)
    trainer.state.epoch = meta["epoch"]
    trainer.state.iteration = meta["iteration"]
