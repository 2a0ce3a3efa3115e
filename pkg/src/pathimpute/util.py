"""Seed derivation, atomic file output, and table formatting helpers."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

__all__ = [
    "derive_seed",
    "derive_rng",
    "as_rng",
    "atomic_write_text",
    "write_json_atomic",
    "write_csv_atomic",
    "format_float",
]


def derive_seed(master_seed: int, *labels) -> np.random.SeedSequence:
    """Derive a reproducible child seed from a master seed and labels.

    The labels (study name, regime, replicate index, stage, ...) are hashed
    with SHA-256 so the derivation is stable across processes and platforms,
    unlike the built-in salted ``hash``.
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for lab in labels:
        h.update(b"\x1f")
        h.update(repr(lab).encode())
    words = np.frombuffer(h.digest(), dtype=np.uint32)
    return np.random.SeedSequence(entropy=[int(w) for w in words])


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))


def as_rng(seed) -> np.random.Generator:
    """Coerce an int, SeedSequence, Generator, or None into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def atomic_write_text(path, text: str) -> None:
    """Write text to ``path`` via a temp file + rename so readers never see
    a truncated file."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def format_float(x) -> str:
    """Deterministic, compact decimal rendering for CSV output."""
    if x is None:
        return ""
    if isinstance(x, float) and np.isnan(x):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_csv_atomic(path, header, rows) -> None:
    """Write a CSV with deterministic float formatting, atomically."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else format_float(c) for c in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
