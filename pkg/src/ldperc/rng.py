"""Counter-based random streams.

All randomness in the package flows through two primitives:

* ``generator(seed)`` -- a numpy Generator on the Philox counter-based
  bit generator, for bulk sampling (fields, configurations).
* ``stream_u01(seed, a, b, c)`` -- a stateless uniform keyed by up to
  three 64-bit counters, for event-driven simulation where coupled runs
  must see identical draws at identical (site, ring-index) keys.

Per-replica seeds are derived as seed xor replica-index pushed through a
64-bit mix (splitmix64 finalizer), so replicas are independent and the
result does not depend on scheduling order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 finalizer round. Stateless; full 64-bit avalanche."""
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-replica seed: seed xor mixed index, re-mixed."""
    return splitmix64((seed & _MASK) ^ splitmix64(index & _MASK))


def generator(seed: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` (counter-based, jump-free)."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK))


def stream_bits(seed: int, a: int, b: int = 0, c: int = 0) -> int:
    """64 deterministic bits keyed by (seed, a, b, c)."""
    x = splitmix64((seed & _MASK) ^ splitmix64(a & _MASK))
    x = splitmix64(x ^ splitmix64((b & _MASK) + _GOLDEN))
    if c:
        x = splitmix64(x ^ (c & _MASK))
    return x


def stream_u01(seed: int, a: int, b: int = 0, c: int = 0) -> float:
    """Uniform in (0, 1), keyed by (seed, a, b, c). Never returns 0."""
    return (stream_bits(seed, a, b, c) + 1) * (2.0 ** -64)
