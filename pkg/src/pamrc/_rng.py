"""Counter-based random number streams shared by every sampler in the package.

Scheme
------
A stream is a 64-bit ``key``.  Draw ``i`` of a stream is

    u64(key, i) = mix64((key + i * GOLDEN) mod 2**64)

where ``mix64`` is the murmur3/splitmix finalizer (a bijection on 64-bit
words).  Because draws are pure functions of (key, counter), replicas can be
generated in any order, in parallel, or re-generated in isolation, and the
result never depends on scheduling.

Sub-streams are derived, never split:

    derive_key(key, j) = mix64((key + (j + 1) * GOLDEN) mod 2**64)

The CLI turns a master seed into streams hierarchically:
``root = mix64(seed)``; per operation ``op_key = derive_key(root, op_code)``;
per replica ``rep_key = derive_key(op_key, replica_index)``; per path inside
a replica ``derive_key(rep_key, path_index)``.

The compiled kernel backend implements the exact same arithmetic on C
``uint64``, so both backends emit identical streams (asserted in tests).
"""

from __future__ import annotations

import math

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 33)) * 0xFF51AFD7ED558CCD) & MASK64
    z = ((z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53) & MASK64
    return z ^ (z >> 33)


def u64_at(key: int, counter: int) -> int:
    return mix64((key + counter * GOLDEN) & MASK64)


def derive_key(key: int, index: int) -> int:
    """Child stream `index` of stream `key`."""
    return mix64((key + (index + 1) * GOLDEN) & MASK64)


def uniform_at(key: int, counter: int) -> float:
    """Draw `counter` of the stream, mapped to the open interval (0, 1).

    The +0.5 offset keeps both endpoints strictly excluded, so exponential
    holding times below are strictly positive and jump times strictly
    increase.
    """
    return ((u64_at(key, counter) >> 11) + 0.5) * (2.0 ** -53)


def exponential_at(key: int, counter: int, rate: float) -> float:
    return -math.log(uniform_at(key, counter)) / rate


def root_key(seed: int) -> int:
    """Entry point used by the CLI and estimators: master seed -> root stream."""
    return mix64(seed & MASK64)
