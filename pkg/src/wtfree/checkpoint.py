"""Binary checkpoint files for trained networks.

Layout, all little-endian, floats as raw IEEE-754 doubles:

    magic  b"WTFC"
    u32    format version (currently 1)
    u32    byte length of the JSON network description, then that JSON
    for each parameterized layer, in network order:
        three arrays (weight, bias, feedback), each encoded as
        u32 ndim, u32 extent per axis, then the float64 payload
    u64    init seed
    u64    feedback seed
    u32    byte length of the JSON metadata object, then that JSON

The feedback matrices and both seeds are part of the file on purpose:
restoring a checkpoint must reproduce the exact backward pass, not just
the forward one.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointError, CheckpointVersionError, ContractError
from .layers import Conv, Dense, LayerState, is_parameterized
from .network import NetworkSpec

MAGIC = b"WTFC"
VERSION = 1


def _expected_shapes(layer):
    if isinstance(layer, Conv):
        w = (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
        return w, (layer.out_channels,)
    if isinstance(layer, Dense):
        return (layer.out_features, layer.in_features), (layer.out_features,)
    raise ContractError(f"{type(layer).__name__} has no parameters")


@dataclass
class Checkpoint:
    """Everything needed to rebuild a network and its backward pass."""

    spec: NetworkSpec
    states: list
    init_seed: int
    feedback_seed: int
    metadata: dict = field(default_factory=dict)


def _encode_array(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype="<f8")
    parts = [struct.pack("<I", a.ndim)]
    for e in a.shape:
        parts.append(struct.pack("<I", e))
    parts.append(a.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what}, "
                f"{len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def json_blob(self, what: str) -> dict:
        n = self.u32(f"{what} length")
        raw = self.take(n, what)
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"bad {what} JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise CheckpointError(f"{what} must be a JSON object")
        return obj

    def array(self, what: str) -> np.ndarray:
        ndim = self.u32(f"{what} ndim")
        if ndim > 8:
            raise CheckpointError(f"implausible ndim {ndim} for {what}")
        shape = tuple(self.u32(f"{what} extent") for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = self.take(8 * count, f"{what} payload")
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(
    path,
    spec: NetworkSpec,
    states: Sequence[Optional[LayerState]],
    init_seed: int,
    feedback_seed: int,
    metadata: Optional[dict] = None,
) -> None:
    """Write atomically: the file either has the full new content or is untouched."""
    if len(states) != len(spec.layers):
        raise ContractError(f"expected {len(spec.layers)} states, got {len(states)}")
    for seed in (init_seed, feedback_seed):
        if not 0 <= int(seed) < 2**64:
            raise ContractError(f"seed {seed} does not fit in u64")
    meta = dict(metadata or {})
    spec_json = json.dumps(spec.to_dict(), sort_keys=True).encode("utf-8")
    meta_json = json.dumps(meta, sort_keys=True).encode("utf-8")

    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(spec_json)), spec_json]
    for layer, state in zip(spec.layers, states):
        if not is_parameterized(layer):
            if state is not None:
                raise ContractError(f"{type(layer).__name__} should have no state")
            continue
        if state is None:
            raise ContractError(f"{type(layer).__name__} is missing its state")
        wshape, bshape = _expected_shapes(layer)
        if state.weight.shape != wshape or state.bias.shape != bshape:
            raise ContractError(
                f"state shapes {state.weight.shape}/{state.bias.shape} do not "
                f"match layer {layer!r}"
            )
        parts.append(_encode_array(state.weight))
        parts.append(_encode_array(state.bias))
        parts.append(_encode_array(state.feedback))
    parts.append(struct.pack("<Q", int(init_seed)))
    parts.append(struct.pack("<Q", int(feedback_seed)))
    parts.append(struct.pack("<I", len(meta_json)))
    parts.append(meta_json)
    blob = b"".join(parts)

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def load_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint file, validating structure as it goes.

    Raises CheckpointError for any structural problem (bad magic,
    truncation, shape mismatches, trailing bytes) and
    CheckpointVersionError for a version this code does not read.
    I/O problems surface as the usual OSError family.
    """
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    spec = NetworkSpec.from_dict(r.json_blob("network description"))

    states = []
    for i, layer in enumerate(spec.layers):
        if not is_parameterized(layer):
            states.append(None)
            continue
        wshape, bshape = _expected_shapes(layer)
        weight = r.array(f"layer {i} weight")
        bias = r.array(f"layer {i} bias")
        feedback = r.array(f"layer {i} feedback")
        if weight.shape != wshape or bias.shape != bshape or feedback.shape != wshape:
            raise CheckpointError(
                f"layer {i} arrays shaped {weight.shape}/{bias.shape}/{feedback.shape}, "
                f"expected {wshape}/{bshape}/{wshape}"
            )
        states.append(LayerState(weight=weight, bias=bias, feedback=feedback))

    init_seed = r.u64("init seed")
    feedback_seed = r.u64("feedback seed")
    metadata = r.json_blob("metadata")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint footer")
    return Checkpoint(
        spec=spec,
        states=states,
        init_seed=init_seed,
        feedback_seed=feedback_seed,
        metadata=metadata,
    )
