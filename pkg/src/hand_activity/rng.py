"""Counter-based pseudo-randomness for replay.

Every draw is a pure function of ``(seed, stream, *counters)``, so results do
not depend on evaluation order and can be reproduced in any language:

    h = splitmix64(seed mod 2**64)
    for k in (stream, *counters):
        h = splitmix64(h XOR (k mod 2**64))
    uniform = (h >> 11) * 2**-53          # in [0, 1)

``splitmix64`` is the standard SplitMix64 finalizer (Steele, Lea & Flood)
applied after adding the golden-ratio increment 0x9E3779B97F4A7C15.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

# stream ids
DROP = 1
JITTER = 2
OBJECT_NOISE = 3
OBJECT_PICK = 4
LOCATION_NOISE = 5
LOCATION_PICK = 6


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def keyed_hash(seed: int, stream: int, *counters: int) -> int:
    h = splitmix64(seed & MASK64)
    for k in (stream, *counters):
        h = splitmix64(h ^ (k & MASK64))
    return h


def keyed_uniform(seed: int, stream: int, *counters: int) -> float:
    return (keyed_hash(seed, stream, *counters) >> 11) * (2.0 ** -53)


def keyed_below(n: int, seed: int, stream: int, *counters: int) -> int:
    """Integer in ``[0, n)``."""
    if n <= 0:
        raise ValueError("n must be positive")
    return min(int(keyed_uniform(seed, stream, *counters) * n), n - 1)
