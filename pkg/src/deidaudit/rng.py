"""Deterministic 64-bit key derivation.

Every random choice in the harness (name sampling, bootstrap resamples,
permutation draws) is keyed by a value derived from the single run seed via
SplitMix64. Keys depend only on their inputs, never on evaluation order, so
corpus generation and resampling are order-independent and parallel-safe.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 mixing step (Steele/Lea/Flood finalizer)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_key(*parts: int | str) -> int:
    """Fold seed components (ints or label strings) into one 64-bit key.

    Strings are folded byte-wise behind a type tag so an integer component
    can never collide with a label of the same bit pattern.
    """
    h = splitmix64(len(parts))
    for part in parts:
        if isinstance(part, str):
            h = splitmix64(h ^ 0xA5)
            for b in part.encode("utf-8"):
                h = splitmix64(h ^ b)
        elif isinstance(part, int):
            h = splitmix64(h ^ 0x5A)
            h = splitmix64(h ^ (part & _MASK64))
        else:
            raise TypeError(f"key part must be int or str, got {type(part)!r}")
    return h


def bounded_index(key: int, n: int) -> int:
    """Map a key to a uniform index in [0, n) by rejection sampling.

    Exactly uniform: values in the final partial block of the 64-bit range
    are rejected and the state re-mixed, so no modulo bias.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    limit = (_MASK64 + 1) - (_MASK64 + 1) % n
    state = key
    while True:
        state = splitmix64(state)
        if state < limit:
            return state % n
