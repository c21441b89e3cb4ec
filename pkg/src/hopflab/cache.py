"""Content-addressed disk cache for grid eigenpairs.

File layout (little endian): magic ``HOPFEIG1``; int32 dim; int64 node
count; float64 h, lambda, spectral gap (NaN if unknown); node coordinates,
phi and phi_hat as float64 arrays; SHA-256 of everything before it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import warnings
from pathlib import Path

import numpy as np

from .spectral import EigenPair

__all__ = ["EigenCache", "cache_key", "write_eigenpair", "read_eigenpair", "export_eigenpair_csv",
           "CorruptCacheWarning", "default_cache_dir"]

MAGIC = b"HOPFEIG1"
_HEADER = struct.Struct("<iqddd")


class CorruptCacheWarning(UserWarning):
    pass


def default_cache_dir() -> Path:
    env = os.environ.get("HOPFLAB_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "hopflab"


def cache_key(spec, domain, h) -> str:
    blob = json.dumps({"spec": spec.to_dict(), "domain": domain.to_dict(), "h": float(h)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_eigenpair(path, pair: EigenPair):
    M, d = pair.nodes.shape
    gap = float("nan") if pair.gap is None else float(pair.gap)
    body = MAGIC + _HEADER.pack(d, M, pair.h, pair.lam, gap)
    for arr in (pair.nodes, pair.phi, pair.phi_hat):
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    os.replace(tmp, path)


def read_eigenpair(path) -> EigenPair:
    raw = Path(path).read_bytes()
    body, digest = raw[:-32], raw[-32:]
    if len(raw) < len(MAGIC) + _HEADER.size + 32 or not body.startswith(MAGIC):
        raise ValueError("not an eigenpair cache file")
    if hashlib.sha256(body).digest() != digest:
        raise ValueError("checksum mismatch")
    d, M, h, lam, gap = _HEADER.unpack_from(body, len(MAGIC))
    off = len(MAGIC) + _HEADER.size
    need = off + 8 * (M * d + 2 * M)
    if len(body) != need:
        raise ValueError("truncated payload")
    data = np.frombuffer(body, dtype="<f8", offset=off)
    nodes = data[: M * d].reshape(M, d).copy()
    phi = data[M * d: M * d + M].copy()
    phi_hat = data[M * d + M:].copy()
    return EigenPair(lam, phi, phi_hat, nodes, h, None if np.isnan(gap) else gap)


def export_eigenpair_csv(path, pair: EigenPair):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        d = pair.nodes.shape[1]
        w.writerow(["x", "y"][:d] + ["phi", "phi_hat"])
        for p, a, b in zip(pair.nodes, pair.phi, pair.phi_hat):
            w.writerow([f"{c:.17g}" for c in p] + [f"{a:.17g}", f"{b:.17g}"])


class EigenCache:
    """Directory of eigenpairs keyed by hash(spec, domain, h).

    Corrupt or stale entries are reported and recomputed; IO errors while
    reading an existing entry are raised, never papered over.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.hits = 0
        self.misses = 0

    def path(self, key):
        return self.directory / f"{key}.eig"

    def fetch(self, key):
        p = self.path(key)
        if not p.exists():
            return None
        try:
            return read_eigenpair(p)
        except ValueError as exc:
            warnings.warn(f"discarding corrupt cache entry {p.name}: {exc}", CorruptCacheWarning)
            return None

    def store(self, key, pair):
        self.directory.mkdir(parents=True, exist_ok=True)
        write_eigenpair(self.path(key), pair)

    def get_or_compute(self, key, compute):
        pair = self.fetch(key)
        if pair is not None:
            self.hits += 1
            return pair, True
        self.misses += 1
        pair = compute()
        self.store(key, pair)
        return pair, False
