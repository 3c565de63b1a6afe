"""Binary checkpoint format for :class:`~freshctr.nn_core.CtrModel`.

Layout (all integers little-endian)::

    magic        8 bytes   b"FCTRCKPT"
    version      u32       FORMAT_VERSION
    metadata     u32 length + UTF-8 JSON (sorted keys, compact separators)
    vocabulary   u32 n_fields, then per field:
                   str name, u32 embedding_dim, u32 n_values, str value * n_values
    parameters   u32 n_blocks, then per block:
                   str name, u32 ndim, u64 dim * ndim, float64 data (row-major)
    checksum     32 bytes  SHA-256 of every preceding byte

``str`` is a u32 byte length followed by UTF-8 bytes. Parameter blocks come
in ``CtrModel.params()`` order; optimizer accumulators, when saved, follow
as ``adagrad/<param name>`` blocks. The metadata JSON always carries
``hidden`` (widths) and ``optimizer_epsilon`` next to the training metadata
(seed, step, config_hash, ...).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .nn_core import CtrModel, DenseLayer, FieldSpec, ModelSpec, OptimizerState, Vocabulary, OPT_EPS

MAGIC = b"FCTRCKPT"
FORMAT_VERSION = 1
_OPT_PREFIX = "adagrad/"


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def checkpoint_bytes(model: CtrModel, opt_state: OptimizerState | None = None) -> bytes:
    meta = dict(model.meta)
    meta["hidden"] = list(model.spec.hidden)
    meta["optimizer_epsilon"] = opt_state.epsilon if opt_state is not None else OPT_EPS
    meta["has_optimizer_state"] = opt_state is not None
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    mj = canonical_json(meta)
    out.append(struct.pack("<I", len(mj)) + mj)
    out.append(struct.pack("<I", len(model.spec.fields)))
    for fs in model.spec.fields:
        values = model.vocab.values(fs.name)
        out.append(_str(fs.name) + struct.pack("<II", fs.embedding_dim, len(values)))
        out.extend(_str(v) for v in values)
    blocks = list(model.params().items())
    if opt_state is not None:
        blocks += [(_OPT_PREFIX + k, opt_state.accumulators[k]) for k in model.params()]
    out.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(_str(name) + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: CtrModel, opt_state: OptimizerState | None, path) -> Path:
    path = Path(path)
    data = checkpoint_bytes(model, opt_state)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data, self.pos, self.end = data, 0, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise CheckpointCorruptError(f"unexpected end of checkpoint at byte {self.pos}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def str(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointCorruptError(f"invalid UTF-8 string: {exc}") from None


def parse_checkpoint(data: bytes) -> tuple[CtrModel, OptimizerState | None]:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError("not a checkpoint file (bad magic bytes)")
    version = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])[0]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format_version {version}, expected {FORMAT_VERSION}")
    if len(data) < len(MAGIC) + 4 + 32:
        raise CheckpointCorruptError("checkpoint truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointCorruptError("checksum mismatch (file truncated or corrupted)")

    r = _Reader(data, len(body))
    r.pos = len(MAGIC) + 4
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"unreadable metadata block: {exc}") from None
    for key in ("hidden", "optimizer_epsilon", "has_optimizer_state"):
        if key not in meta:
            raise CheckpointError(f"metadata is missing required field {key!r}")

    fields, values = [], {}
    for _ in range(r.u32()):
        name = r.str()
        dim, n_values = struct.unpack("<II", r.take(8))
        fields.append(FieldSpec(name, dim))
        values[name] = [r.str() for _ in range(n_values)]
    blocks = {}
    for _ in range(r.u32()):
        name = r.str()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        blocks[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise CheckpointCorruptError("trailing bytes before checksum")

    hidden = tuple(meta.pop("hidden"))
    epsilon = meta.pop("optimizer_epsilon")
    has_opt = meta.pop("has_optimizer_state")
    spec = ModelSpec(tuple(fields), hidden)
    vocab = Vocabulary(spec.field_names, values)

    def block(name):
        try:
            return blocks[name]
        except KeyError:
            raise CheckpointError(f"checkpoint is missing parameter block {name!r}") from None

    tables = [block(f"embedding/{fs.name}") for fs in spec.fields]
    for fs, t in zip(spec.fields, tables):
        if t.shape != (vocab.size(fs.name), fs.embedding_dim):
            raise CheckpointError(f"embedding/{fs.name} has shape {t.shape}, inconsistent with vocabulary")
    layers = [DenseLayer(block(f"hidden{i}/weights"), block(f"hidden{i}/bias"), "relu") for i in range(len(hidden))]
    output = DenseLayer(block("output/weights"), block("output/bias"), "identity")
    model = CtrModel(spec, vocab, tables, layers, output, meta)
    state = None
    if has_opt:
        state = OptimizerState({k: block(_OPT_PREFIX + k) for k in model.params()}, epsilon)
    return model, state


def load_checkpoint(path) -> tuple[CtrModel, OptimizerState | None]:
    return parse_checkpoint(Path(path).read_bytes())


def model_digest(model: CtrModel) -> str:
    """SHA-256 hex digest of the model's canonical checkpoint bytes."""
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()
