import numpy as np

MAX_SEED = 2**64 - 1


def derive_seed(seed: int, *keys: int) -> int:
    """A child seed of `seed` keyed by `keys`; independent streams for distinct keys."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def generator(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))
