"""Seeded randomness primitives.

All stochastic operations in the package draw from numpy's Philox bit
generator (Random123 counter-based, 4x64), keyed directly with the user
seed. Philox streams are reproducible across platforms and numpy versions,
and reference implementations exist in most languages, so index streams
produced here can be replayed elsewhere.

Round seeds are derived with the SplitMix64 finalizer so that adding later
rounds never perturbs earlier ones.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def rng_from_seed(seed: int) -> np.random.Generator:
    """Generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer (Steele et al.), a 64-bit avalanche mix."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def round_seed(base_seed: int, round_index: int) -> int:
    """Seed for one selection round: round 0 keeps the base seed unchanged."""
    if round_index == 0:
        return base_seed & _MASK64
    return (base_seed ^ splitmix64(round_index)) & _MASK64


def sample_without_replacement(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct indices from [0, n) via a Fisher-Yates prefix.

    Consumes exactly k bounded draws from the generator, independent of n.
    """
    if k > n:
        raise ValueError(f"cannot draw {k} distinct indices from a pool of {n}")
    pool = np.arange(n, dtype=np.int64)
    for i in range(k):
        j = i + int(rng.integers(n - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def weighted_index(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to nonnegative weights.

    Inversion on the running sum; zero-weight entries are never selected.
    Raises ValueError when the total weight is zero.
    """
    cumulative = np.cumsum(weights, dtype=np.float64)
    total = float(cumulative[-1])
    if not total > 0.0:
        raise ValueError("total weight is zero")
    r = rng.random() * total
    return int(np.searchsorted(cumulative, r, side="right"))
