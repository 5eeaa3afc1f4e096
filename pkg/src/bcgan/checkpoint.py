"""Binary checkpoints and PGM image dumps.

Checkpoint layout (all integers uint32 little-endian, reals float64 little-endian)::

    b"BCGAN1"
    for each network (discriminator, then generator):
        layer count L
        L pairs (out_dim, in_dim)
        for each layer: W row-major (out_dim * in_dim reals), then b (out_dim reals)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import ParamSet

MAGIC = b"BCGAN1"


class CheckpointError(ValueError):
    pass


def _write_net(f, params: ParamSet):
    f.write(struct.pack("<I", len(params.weights)))
    for w in params.weights:
        f.write(struct.pack("<II", *w.shape))
    for w, b in params.layers:
        f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def save_checkpoint(path, theta: ParamSet, omega: ParamSet):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        _write_net(f, theta)
        _write_net(f, omega)
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint is truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out


def _read_net(r: _Reader) -> ParamSet:
    (count,) = struct.unpack("<I", r.take(4))
    dims = [struct.unpack("<II", r.take(8)) for _ in range(count)]
    weights, biases = [], []
    for out_dim, in_dim in dims:
        w = np.frombuffer(r.take(8 * out_dim * in_dim), dtype="<f8").reshape(out_dim, in_dim)
        b = np.frombuffer(r.take(8 * out_dim), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    return ParamSet(weights, biases)


def load_checkpoint(path) -> tuple[ParamSet, ParamSet]:
    """Return (discriminator, generator) parameters."""
    r = _Reader(Path(path).read_bytes())
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    theta = _read_net(r)
    omega = _read_net(r)
    if r.pos != len(r.raw):
        raise CheckpointError("trailing bytes after checkpoint")
    return theta, omega


def write_pgm(path, image: np.ndarray):
    """8-bit binary PGM; values in [0, 1] map to round-half-up(255 * v)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    pixels = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P5 PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)
