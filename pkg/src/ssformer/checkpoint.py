"""Binary checkpoint format.

All integers little-endian::

    b"SSFM" | u32 version | 32-byte sha256 model digest
    u32 n | n bytes JSON {"encoder": {...}, "decoder": {...}, "train": {...}}
    u32 param count, then per parameter:
        u16 name length | name (utf-8) | u8 rank | rank x u32 dims | float32 payload
    u8 has_optimizer; if 1: u64 step, then the m records and v records
    (same record layout, same parameter order)
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .config import model_digest
from .decoder import DecoderConfig, SSformer
from .encoder import EncoderConfig
from .errors import ConfigError, FormatError
from .optim import AdamWState

MAGIC = b"SSFM"
VERSION = 1


@dataclass
class Checkpoint:
    enc_cfg: EncoderConfig
    dec_cfg: DecoderConfig
    params: Dict[str, np.ndarray]
    train_cfg: dict = field(default_factory=dict)
    optimizer: Optional[AdamWState] = None
    digest: bytes = b""

    def __post_init__(self):
        if not self.digest:
            self.digest = model_digest(self.enc_cfg, self.dec_cfg)

    def build_model(self) -> SSformer:
        model = SSformer(self.enc_cfg, self.dec_cfg)
        model.load_state_dict(self.params)
        return model

    def check_config(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig) -> None:
        if model_digest(enc_cfg, dec_cfg) != self.digest:
            raise ConfigError("checkpoint config digest does not match the model config")


def from_model(model: SSformer, train_cfg: Optional[dict] = None,
               optimizer: Optional[AdamWState] = None) -> Checkpoint:
    params = {name: p.data.copy() for name, p in model.named_parameters()}
    return Checkpoint(model.enc_cfg, model.dec_cfg, params, dict(train_cfg or {}), optimizer)


def _write_records(out: io.BytesIO, arrays: Dict[str, np.ndarray]) -> None:
    for name, arr in arrays.items():
        raw = name.encode()
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def dumps(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<I", VERSION) + ckpt.digest)
    meta = json.dumps({"encoder": ckpt.enc_cfg.to_dict(), "decoder": ckpt.dec_cfg.to_dict(),
                       "train": ckpt.train_cfg}, sort_keys=True).encode()
    out.write(struct.pack("<I", len(meta)) + meta)
    out.write(struct.pack("<I", len(ckpt.params)))
    _write_records(out, ckpt.params)
    if ckpt.optimizer is None:
        out.write(b"\x00")
    else:
        out.write(b"\x01" + struct.pack("<Q", ckpt.optimizer.step))
        names = list(ckpt.params)
        for moments in (ckpt.optimizer.m, ckpt.optimizer.v):
            _write_records(out, {n: moments.get(n, np.zeros_like(ckpt.params[n])) for n in names})
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated: wanted {n} bytes", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def record(self):
        (n,) = self.unpack("<H")
        name = self.take(n).decode()
        (rank,) = self.unpack("<B")
        shape = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, arr.astype(np.float32)


def loads(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint (bad magic)", 0)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    digest = r.take(32)
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len))
    enc = EncoderConfig(**meta["encoder"])
    dec = DecoderConfig(**meta["decoder"])
    (count,) = r.unpack("<I")
    params = dict(r.record() for _ in range(count))
    optimizer = None
    (flag,) = r.unpack("<B")
    if flag:
        (step,) = r.unpack("<Q")
        m = dict(r.record() for _ in range(count))
        v = dict(r.record() for _ in range(count))
        optimizer = AdamWState(step=step, m=m, v=v)
    ckpt = Checkpoint(enc, dec, params, meta.get("train", {}), optimizer, digest)
    if model_digest(enc, dec) != digest:
        raise ConfigError("checkpoint digest does not match its embedded config")
    return ckpt


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())
