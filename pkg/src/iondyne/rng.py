"""Counter-based random streams with explicit address derivation.

Every stochastic draw in the package comes from a Philox generator whose
128-bit key encodes (campaign seed, address path). Philox is counter
based, so the k-th draw of a stream is a pure function of (key, k):
shot-level values are addressed by (seed, block index, duration index,
shot index) and never depend on execution order, which keeps results
identical under parallel scheduling.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fold_path(path: tuple[int, ...]) -> int:
    """Collapse an address path to one 64-bit word, order sensitive."""
    h = _splitmix64(len(path))
    for component in path:
        if not isinstance(component, (int, np.integer)) or component < 0:
            raise ValidationError(f"stream path components must be non-negative ints, got {component!r}")
        h = _splitmix64(h ^ int(component))
    return h


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for a nested component that takes a plain integer seed.

    Mixes the parent seed with the address path; children with different
    paths get unrelated 64-bit seeds, deterministically.
    """
    if not isinstance(seed, (int, np.integer)) or not (0 <= int(seed) < 1 << 64):
        raise ValidationError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return _splitmix64(int(seed) ^ fold_path(path))


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream addressed by (seed, *path).

    The seed occupies one key word verbatim, the folded path the other,
    so streams with different seeds or different paths never share a
    counter sequence (up to the 2^-64 fold collision probability).
    """
    if not isinstance(seed, (int, np.integer)) or not (0 <= int(seed) < 1 << 64):
        raise ValidationError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    key = np.empty(2, dtype=np.uint64)
    key[0] = np.uint64(int(seed))
    key[1] = np.uint64(fold_path(path))
    return np.random.Generator(np.random.Philox(key=key))
