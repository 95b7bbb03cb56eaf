"""Binary checkpoint (NFCKPT1) and adapter (NFLORA1) files, plus video bundles.

Layout, all integers unsigned little-endian, floats little-endian float32::

    NFCKPT1  magic (7 bytes)
             u32 input_dim, u32 levels, u32 width, u32 hidden_layers,
             u32 output_dim, u32 activation id (0 = ReLU)
             per layer: W (d_out x d_in, row-major), then b (d_out)
             u64 FNV-1a hash of every preceding byte

    NFLORA1  magic (7 bytes)
             u32 nominal rank, u32 layer count
             per layer: u32 r_eff, u32 d_in, u32 d_out, A (r_eff x d_in), B (d_out x r_eff)
             u64 hash of the base checkpoint the adapter was trained on
             u64 FNV-1a hash of every preceding byte

Arrays are held as float64 in memory and rounded to float32 on disk.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .field import AdapterSet, FieldArchitecture, FieldWeights, merge_adapters
from .netpbm import atomic_write

CKPT_MAGIC = b"NFCKPT1"
LORA_MAGIC = b"NFLORA1"
_ACTIVATIONS = {"relu": 0}
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    # inherently sequential; about 0.3 s per MB
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def to_storage(a: np.ndarray) -> np.ndarray:
    """Round to the float32 values the file will hold."""
    return np.asarray(a, dtype="<f4").astype(np.float64)


def round_to_storage(params) -> None:
    for p in params:
        p[...] = to_storage(p)


@dataclass
class BaseCheckpoint:
    arch: FieldArchitecture
    weights: FieldWeights
    train_result: object = None

    def to_bytes(self) -> bytes:
        return encode_checkpoint(self.arch, self.weights)

    @property
    def content_hash(self) -> int:
        return struct.unpack("<Q", self.to_bytes()[-8:])[0]


def encode_checkpoint(arch: FieldArchitecture, weights: FieldWeights) -> bytes:
    weights.check(arch)
    parts = [CKPT_MAGIC, struct.pack("<6I", arch.input_dim, arch.encoding_levels,
                                     arch.hidden_width, arch.hidden_layers,
                                     arch.output_dim, _ACTIVATIONS[arch.activation])]
    for w, b in zip(weights.weights, weights.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what} file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)


def _verify(data: bytes, magic: bytes, what: str) -> None:
    if len(data) < len(magic) or data[:len(magic)] != magic:
        if data[:6] == magic[:6]:
            raise FormatError(f"unsupported {what} version {data[:7]!r}")
        raise FormatError(f"not a {what} file (bad magic)")
    if len(data) < len(magic) + 8:
        raise FormatError(f"truncated {what} file")
    stored = struct.unpack("<Q", data[-8:])[0]
    if fnv1a64(data[:-8]) != stored:
        raise FormatError(f"{what} hash mismatch (file corrupted)")


def decode_checkpoint(data: bytes) -> BaseCheckpoint:
    _verify(data, CKPT_MAGIC, "checkpoint")
    r = _Reader(data[:-8], "checkpoint")
    r.take(len(CKPT_MAGIC))
    m, levels, width, hidden, n, act = r.u32(6)
    names = {v: k for k, v in _ACTIVATIONS.items()}
    if act not in names:
        raise FormatError(f"unknown activation id {act}")
    try:
        arch = FieldArchitecture(m, levels, width, hidden, n, names[act])
    except ValueError as exc:
        raise FormatError(f"invalid architecture block: {exc}") from None
    ws, bs = [], []
    for d_in, d_out in arch.layer_dims():
        ws.append(r.floats((d_out, d_in)))
        bs.append(r.floats((d_out,)))
    if r.pos != len(r.data):
        raise FormatError("checkpoint payload longer than its architecture implies")
    return BaseCheckpoint(arch, FieldWeights(ws, bs))


def encode_adapters(adapters: AdapterSet, base_hash: int) -> bytes:
    parts = [LORA_MAGIC, struct.pack("<2I", adapters.rank, len(adapters.a))]
    for a, b in zip(adapters.a, adapters.b):
        r, d_in = a.shape
        parts.append(struct.pack("<3I", r, d_in, b.shape[0]))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    parts.append(struct.pack("<Q", base_hash))
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode_adapters(data: bytes):
    """Returns ``(AdapterSet, base_hash)``."""
    _verify(data, LORA_MAGIC, "adapter")
    r = _Reader(data[:-8], "adapter")
    r.take(len(LORA_MAGIC))
    rank, layers = r.u32(2)
    a_list, b_list = [], []
    for _ in range(layers):
        r_eff, d_in, d_out = r.u32(3)
        a_list.append(r.floats((r_eff, d_in)))
        b_list.append(r.floats((d_out, r_eff)))
    base_hash = struct.unpack("<Q", r.take(8))[0]
    if r.pos != len(r.data):
        raise FormatError("adapter payload longer than its header implies")
    return AdapterSet(a_list, b_list, rank), base_hash


def save_checkpoint(path, ckpt: BaseCheckpoint) -> None:
    atomic_write(path, ckpt.to_bytes())


def load_checkpoint(path) -> BaseCheckpoint:
    return decode_checkpoint(Path(path).read_bytes())


def save_adapters(path, adapters: AdapterSet, base: BaseCheckpoint | int) -> None:
    h = base if isinstance(base, int) else base.content_hash
    atomic_write(path, encode_adapters(adapters, h))


def load_adapters(path, base: BaseCheckpoint | None = None, force: bool = False) -> AdapterSet:
    """Load an adapter file, checking it was trained against ``base``."""
    adapters, base_hash = decode_adapters(Path(path).read_bytes())
    if base is not None:
        if base_hash != base.content_hash and not force:
            raise FormatError(f"{path}: adapter was trained against a different base "
                              f"checkpoint (hash {base_hash:016x} != {base.content_hash:016x})")
        adapters.check(base.arch)
    return adapters


# --------------------------------------------------------------------------
# Video bundles: a directory with base.nfckpt, frame_KKKK.nflora, manifest.json
# --------------------------------------------------------------------------

MANIFEST = "manifest.json"


def save_bundle(directory, encoding, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_checkpoint(directory / "base.nfckpt", encoding.base)
    files = []
    for k, ad in enumerate(encoding.adapters, start=2):
        name = f"frame_{k:04d}.nflora"
        save_adapters(directory / name, ad, encoding.base)
        files.append(name)
    manifest = {
        "format": "nf-video-bundle",
        "version": 1,
        "mode": encoding.mode,
        "frames": len(encoding.adapters) + 1,
        "rank": encoding.adapters[0].rank if encoding.adapters else None,
        "base": "base.nfckpt",
        "adapters": files,
        "psnr": encoding.frame_psnr,
        **(extra or {}),
    }
    atomic_write(directory / MANIFEST, (json.dumps(manifest, indent=2) + "\n").encode())


def load_bundle(directory):
    """Returns ``(SequentialEncoding, manifest dict)``."""
    from .training import SequentialEncoding

    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable bundle manifest: {exc}") from None
    if manifest.get("format") != "nf-video-bundle" or manifest.get("version") != 1:
        raise FormatError("unsupported bundle manifest")
    base = load_checkpoint(directory / manifest["base"])
    adapters = [load_adapters(directory / name, base) for name in manifest["adapters"]]
    enc = SequentialEncoding(base, adapters, manifest["mode"], list(manifest.get("psnr", [])))
    return enc, manifest


def decode_frame_weights(base_weights: FieldWeights, adapters, k: int, mode: str) -> FieldWeights:
    """Weights of frame ``k`` (1-based) for a sequential or parallel encoding."""
    if not 1 <= k <= len(adapters) + 1:
        raise IndexError(f"frame {k} outside 1..{len(adapters) + 1}")
    if k == 1:
        return base_weights.copy()
    if mode == "parallel":
        return merge_adapters(base_weights, adapters[k - 2])
    w = base_weights
    for ad in adapters[: k - 1]:
        w = merge_adapters(w, ad)
    return w
