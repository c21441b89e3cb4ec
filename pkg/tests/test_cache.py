import warnings

import numpy as np
import pytest

from hopflab.cache import (
    CorruptCacheWarning,
    EigenCache,
    cache_key,
    export_eigenpair_csv,
    read_eigenpair,
    write_eigenpair,
)
from hopflab.domain import Interval
from hopflab.generator import GeneratorSpec
from hopflab.spectral import discretize, principal_eigenpair

SYM = Interval(-1.0, 1.0)
SPEC = GeneratorSpec.stable(1.0)


@pytest.fixture(scope="module")
def pair():
    return principal_eigenpair(discretize(SPEC, SYM, 1e-2))


def test_round_trip_is_exact(tmp_path, pair):
    write_eigenpair(tmp_path / "e.eig", pair)
    back = read_eigenpair(tmp_path / "e.eig")
    assert back.lam == pair.lam and back.gap == pair.gap and back.h == pair.h
    np.testing.assert_array_equal(back.phi, pair.phi)
    np.testing.assert_array_equal(back.phi_hat, pair.phi_hat)
    np.testing.assert_array_equal(back.nodes, pair.nodes)


def test_hit_and_miss(tmp_path, pair):
    cache = EigenCache(tmp_path)
    key = cache_key(SPEC, SYM, 1e-2)
    calls = []

    def compute():
        calls.append(1)
        return pair

    first, hit1 = cache.get_or_compute(key, compute)
    second, hit2 = cache.get_or_compute(key, compute)
    assert (hit1, hit2) == (False, True) and len(calls) == 1
    assert second.lam == first.lam
    assert cache_key(SPEC, SYM, 5e-3) != key
    assert cache_key(SPEC.replace(killing=1.0), SYM, 1e-2) != key
    assert cache.fetch(cache_key(SPEC, SYM, 5e-3)) is None


@pytest.mark.parametrize("damage", ["flip", "truncate", "garbage"])
def test_corrupt_entry_is_recomputed(tmp_path, pair, damage):
    cache = EigenCache(tmp_path)
    key = cache_key(SPEC, SYM, 1e-2)
    cache.store(key, pair)
    p = cache.path(key)
    raw = bytearray(p.read_bytes())
    if damage == "flip":
        raw[100] ^= 0xFF
    elif damage == "truncate":
        raw = raw[: len(raw) // 2]
    else:
        raw = bytearray(b"not a cache file")
    p.write_bytes(bytes(raw))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        back, hit = cache.get_or_compute(key, lambda: pair)
    assert not hit and back.lam == pair.lam
    assert any(issubclass(w.category, CorruptCacheWarning) for w in caught)
    assert read_eigenpair(p).lam == pair.lam


def test_default_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HOPFLAB_CACHE", str(tmp_path / "c"))
    assert EigenCache().directory == tmp_path / "c"


def test_csv_export(tmp_path, pair):
    export_eigenpair_csv(tmp_path / "e.csv", pair)
    data = np.loadtxt(tmp_path / "e.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "x,phi,phi_hat"
    np.testing.assert_array_equal(data[:, 1], pair.phi)
