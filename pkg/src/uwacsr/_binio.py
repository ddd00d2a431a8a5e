"""Little-endian binary container primitives.

Checkpoints and dataset files share the same conventions: a 4-byte magic,
unsigned 32-bit header integers, and row-major 32-bit float blocks.  Every
writer also emits a plain-text manifest next to the binary so files can be
inspected without tooling.  Nothing here is timestamped; identical content
produces identical bytes.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np


def write_u32(fh, *values: int) -> None:
    fh.write(struct.pack(f"<{len(values)}I", *values))


def read_u32(fh, n: int = 1) -> tuple[int, ...]:
    raw = fh.read(4 * n)
    if len(raw) != 4 * n:
        raise ValueError("truncated file: expected u32 block")
    return struct.unpack(f"<{n}I", raw)


def write_u64(fh, *values: int) -> None:
    fh.write(struct.pack(f"<{len(values)}Q", *values))


def read_u64(fh, n: int = 1) -> tuple[int, ...]:
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise ValueError("truncated file: expected u64 block")
    return struct.unpack(f"<{n}Q", raw)


def write_f32(fh, values) -> None:
    fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def write_f64(fh, values) -> None:
    fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_f64(fh, count: int) -> np.ndarray:
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated file: expected f64 block")
    return np.frombuffer(raw, dtype="<f8").copy()


def read_f32(fh, count: int) -> np.ndarray:
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated file: expected f32 block")
    return np.frombuffer(raw, dtype="<f4").copy()


def expect_magic(fh, magic: bytes) -> None:
    got = fh.read(len(magic))
    if got != magic:
        raise ValueError(f"bad magic: expected {magic!r}, found {got!r}")


def sha256_hex(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def manifest_path(binary_path) -> Path:
    return Path(str(binary_path) + ".manifest")


def write_manifest(binary_path, lines) -> Path:
    """Text mirror of a binary file: one `key: value` line per entry."""
    path = manifest_path(binary_path)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path
