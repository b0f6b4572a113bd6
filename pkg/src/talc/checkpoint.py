"""Binary checkpoint format.

Layout (little-endian)::

    b"TALCCKPT"  u32 version  u32 header_len  header (UTF-8 JSON)
    u32 count, then per tensor: u32 name_len, name, u32 ndim, u32 dims[ndim],
    float64 data[prod(dims)]

The header carries the denoiser config, schedule parameters, text settings,
the vocabulary and its SHA-256 digest.
"""
from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict

import numpy as np

from .denoiser import Denoiser, DenoiserConfig, init_params
from .errors import ConfigError
from .numerics import Tensor
from .schedule import NoiseSchedule, make_schedule
from .textenc import TextEncoder, Vocabulary

MAGIC = b"TALCCKPT"
VERSION = 1


class _ShapeOnly:
    """Stand-in generator so ``init_params`` can report expected shapes cheaply."""

    def normal(self, shape):
        return np.zeros(shape)


def save_checkpoint(path, model: Denoiser, schedule: NoiseSchedule, extra: dict = None):
    vocab = model.encoder.vocab
    header = {
        "config": model.cfg.to_dict(),
        "schedule": schedule.to_dict(),
        "text": {"max_tokens": model.encoder.max_tokens, "width": model.encoder.width},
        "vocabulary": vocab.tokens,
        "vocabulary_sha256": vocab.digest(),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = model.parameters()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def _read(fh, n: int, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ConfigError(f"{path}: truncated checkpoint")
    return data


def load_checkpoint(path):
    """Returns (Denoiser, NoiseSchedule, header dict)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigError(f"{path}: not a checkpoint (bad magic)")
        version, hlen = struct.unpack("<II", _read(fh, 8, path))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(_read(fh, hlen, path).decode("utf-8"))
        (count,) = struct.unpack("<I", _read(fh, 4, path))
        tensors = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(fh, 4, path))
            name = _read(fh, nlen, path).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read(fh, 4, path))
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim, path)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read(fh, 8 * n, path), dtype="<f8").astype(np.float64).reshape(shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
    vocab = Vocabulary(header["vocabulary"])
    if vocab.digest() != header["vocabulary_sha256"]:
        raise ConfigError(f"{path}: vocabulary digest mismatch")
    cfg = DenoiserConfig.from_dict(header["config"])
    expected = init_params(cfg, _ShapeOnly(), text_dim=header["text"]["width"])
    for name, t in expected.items():
        if name not in tensors or tensors[name].shape != t.shape:
            raise ConfigError(f"{path}: tensor {name!r} missing or mis-shaped for the stored config")
    encoder = TextEncoder(vocab, tensors.pop("text.table"), tensors.pop("text.positions"))
    sched = header["schedule"]
    schedule = make_schedule(sched["num_steps"], sched["beta_min"], sched["beta_max"])
    if cfg.precondition and (cfg.schedule_steps, cfg.beta_min, cfg.beta_max) != (
            schedule.num_steps, schedule.beta_min, schedule.beta_max):
        raise ConfigError(f"{path}: denoiser preconditioning and stored schedule disagree")
    return Denoiser(cfg, tensors, encoder), schedule, header
