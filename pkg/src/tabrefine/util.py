"""Shared plumbing: labeled seed derivation, key-value documents, checksums."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Derive a stage seed from a master seed via a labeled hash.

    Keeps RNG streams for different pipeline stages (and different seed
    indices) statistically independent of each other.
    """
    h = hashlib.sha256(f"{master}:{label}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def matrix_checksum(arr: np.ndarray) -> str:
    """Stable content hash of a float matrix (shape + row-major bytes)."""
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


def write_kv(path, pairs: dict) -> None:
    """Write a plain-text key-value document (one `key = value` per line)."""
    with open(path, "w", encoding="utf-8") as f:
        for k, v in pairs.items():
            f.write(f"{k} = {v}\n")


def read_kv(path) -> dict:
    """Read a key-value document written by write_kv (values stay strings)."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
