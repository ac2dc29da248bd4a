"""Versioned, checksummed binary checkpoints.

Layout (little-endian)::

    8 bytes  magic b"CSIFBCKP"
    u32      format version
    u64      metadata length in bytes
    ...      metadata, UTF-8 JSON with sorted keys
    ...      tensor data, float64, concatenated in metadata order
    u32      CRC-32 of everything above

The metadata holds both configurations, the step counter, the optimizer
scalars, the training RNG state and a ``tensors`` index of
``[name, shape, offset]`` entries. Tensor names are prefixed ``param/``,
``buffer/``, ``adam_m/`` or ``adam_v/``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .channel import SystemConfig
from .errors import CheckpointError, DimensionMismatchError
from .system import FeedbackSystem
from .trainer import Trainer, TrainingConfig

MAGIC = b"CSIFBCKP"
FORMAT_VERSION = 1
_DIM_FIELDS = ("N_t", "K", "L", "N_b", "encoder_hidden", "decoder_hidden")


def _named_arrays(trainer: Trainer) -> list[tuple[str, np.ndarray]]:
    system, opt = trainer.system, trainer.optimizer
    arrays = [(f"param/{n}", p.data) for n, p in system.params.items()]
    arrays += [(f"buffer/{n}", b) for n, b in system.params.buffers.items()]
    arrays += [(f"adam_m/{n}", m) for n, m in opt.m.items()]
    arrays += [(f"adam_v/{n}", v) for n, v in opt.v.items()]
    return arrays


def checkpoint_bytes(trainer: Trainer) -> bytes:
    arrays = _named_arrays(trainer)
    index, blobs, offset = [], [], 0
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append([name, list(arr.shape), offset])
        blobs.append(blob)
        offset += len(blob)
    opt = trainer.optimizer
    meta = {
        "system": trainer.system.config.to_dict(),
        "training": trainer.config.to_dict(),
        "step": trainer.step,
        "optimizer": {"step_count": opt.step_count, "lr": opt.lr, "beta1": opt.beta1,
                      "beta2": opt.beta2, "eps": opt.eps},
        "rng_state": trainer.rng.bit_generator.state,
        "tensors": index,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(meta_bytes)) + meta_bytes + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(trainer: Trainer, path) -> str:
    """Write the checkpoint atomically; returns its id (CRC-32 as hex)."""
    data = checkpoint_bytes(trainer)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return checkpoint_id(data)


def checkpoint_id(data: bytes) -> str:
    return f"{struct.unpack('<I', data[-4:])[0]:08x}"


def load_checkpoint(path, system_config: SystemConfig | None = None) -> Trainer:
    """Rebuild the trainer (system, optimizer, RNG, step) from a checkpoint.

    If ``system_config`` is given, its dimensions must match the stored ones.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_from_bytes(data, system_config)


def checkpoint_from_bytes(data: bytes, system_config: SystemConfig | None = None) -> Trainer:
    if len(data) < len(MAGIC) + 16 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or truncated)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"checkpoint checksum mismatch (stored {crc:08x}, "
                              f"computed {zlib.crc32(body):08x}); file corrupt or truncated")
    version, meta_len = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} "
                              f"(expected {FORMAT_VERSION})")
    start = len(MAGIC) + 12
    meta = json.loads(body[start:start + meta_len].decode("utf-8"))
    blob = body[start + meta_len:]

    stored = SystemConfig.from_dict(meta["system"])
    if system_config is not None:
        want, have = system_config.to_dict(), stored.to_dict()
        diff = [f for f in _DIM_FIELDS if want[f] != have[f]]
        if diff:
            raise DimensionMismatchError(
                "checkpoint dimensions differ: " +
                ", ".join(f"{f}={have[f]} (requested {want[f]})" for f in diff))

    trainer = Trainer(FeedbackSystem(stored), TrainingConfig.from_dict(meta["training"]))
    targets = {f"param/{n}": p.data for n, p in trainer.system.params.items()}
    targets.update({f"buffer/{n}": b for n, b in trainer.system.params.buffers.items()})
    targets.update({f"adam_m/{n}": m for n, m in trainer.optimizer.m.items()})
    targets.update({f"adam_v/{n}": v for n, v in trainer.optimizer.v.items()})
    if {e[0] for e in meta["tensors"]} != set(targets):
        raise DimensionMismatchError("checkpoint tensor set does not match the model")
    for name, shape, offset in meta["tensors"]:
        target = targets[name]
        if tuple(shape) != target.shape:
            raise DimensionMismatchError(f"{name}: stored shape {shape}, model {target.shape}")
        n = int(np.prod(shape)) * 8
        target[...] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=offset).reshape(shape)

    opt = meta["optimizer"]
    trainer.optimizer.step_count = opt["step_count"]
    trainer.optimizer.lr = opt["lr"]
    trainer.optimizer.beta1, trainer.optimizer.beta2 = opt["beta1"], opt["beta2"]
    trainer.optimizer.eps = opt["eps"]
    trainer.rng.bit_generator.state = meta["rng_state"]
    trainer.step = meta["step"]
    return trainer
