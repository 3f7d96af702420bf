"""Seed derivation, hashing and small text-format helpers shared across modules."""

from __future__ import annotations

import hashlib
import zlib

import numpy as np


def rng_for(seed, *labels):
    """Derive a child generator from a root seed and component labels.

    The derivation is documented and stable: the root seed is combined
    with crc32 hashes of the labels through a ``SeedSequence``, so every
    component draws from its own independent, reproducible stream.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        entropy.append(zlib.crc32(str(label).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def format_float(x):
    """Shortest decimal that round-trips the float64 exactly."""
    return repr(float(x))


def write_kv_file(path, pairs):
    """Write ``key = value`` lines (the plain-text config/manifest format)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in pairs:
            fh.write(f"{key} = {value}\n")


def read_metrics(path):
    """Parse a tab-separated metrics file (header row ``metric\\tvalue``)."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["metric", "value"]:
            raise ValueError(f"{path}: not a metrics file (header {header})")
        for line in fh:
            if not line.strip():
                continue
            key, value = line.rstrip("\n").split("\t", 1)
            out[key] = value
    return out


def read_kv_file(path):
    """Parse a ``key = value`` file; '#' starts a comment, blank lines skipped."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out
