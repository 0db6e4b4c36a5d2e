"""
Seeding
=======
Every random draw in the lab comes from a named stream.

PRNG: numpy's PCG64 (128-bit state, 64-bit output). A stream for
(seed, name) is seeded with SeedSequence([seed, STREAMS[name]]), so streams
are independent of each other and of the order in which they are created.
That is the splitting rule: adding a draw to one stream never shifts another,
which keeps the data/latent batches identical across lambda values.

Normal variates use Box-Muller on the stream's uniform doubles so the
sequence depends only on the PRNG, not on numpy's internal normal sampler.
"""

import numpy as np

STREAMS = {
    "init_generator": 1,
    "init_discriminator": 2,
    "real_data": 3,
    "latent": 4,
    "gradient_penalty": 5,
    "evaluation": 6,
    "probe": 7,
    "dataset_dump": 8,
}


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent PCG64 generator for a named stream of a run seed."""
    if stream not in STREAMS:
        raise KeyError(f"unknown RNG stream {stream!r}; known: {sorted(STREAMS)}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), STREAMS[stream]])))


def derive_seed(seed: int, index: int) -> int:
    """Child seed for the index-th independent replicate of `seed`."""
    child = np.random.SeedSequence([int(seed), 1_000_003, int(index)])
    return int(child.generate_state(1, dtype=np.uint32)[0])


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard-normal array via Box-Muller on uniform doubles from `rng`."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    values = np.empty(2 * pairs)
    values[0::2] = radius * np.cos(angle)
    values[1::2] = radius * np.sin(angle)
    return values[:n].reshape(shape)


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's state."""
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bit_generator = np.random.PCG64()
    bit_generator.state = state
    return np.random.Generator(bit_generator)
