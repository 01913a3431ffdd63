"""Seeded random streams.

Every randomized routine takes an explicit 64-bit seed. Independent
streams (chains, restarts, simulation shards) are derived by
:func:`derive`, which feeds ``(seed, *keys)`` into a ``SeedSequence`` and
drives a Philox4x64 counter-based generator. Two calls with the same
arguments always give bit-identical streams, whatever the thread count.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive(seed, *keys):
    """Return a ``numpy.random.Generator`` for the stream ``(seed, *keys)``."""
    words = [int(seed) & SEED_MASK] + [int(k) & SEED_MASK for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def derive_seed(seed, *keys):
    """Derive a child 64-bit integer seed, e.g. to record per-chain seeds."""
    words = [int(seed) & SEED_MASK] + [int(k) & SEED_MASK for k in keys]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def as_generator(random_state):
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None:
        return derive(0)
    return derive(random_state)


def uniform_open(rng, size):
    # (0, 1): keeps log() and logit transforms finite
    u = rng.random(size)
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u)


def standard_normal(rng, size):
    """Box-Muller transform of the uniform stream."""
    size = int(np.prod(size)) if not np.isscalar(size) else int(size)
    m = (size + 1) // 2
    u1 = uniform_open(rng, m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:size]


def standard_logistic(rng, size):
    """Inverse-CDF transform ``ln(p / (1 - p))`` of the uniform stream."""
    p = uniform_open(rng, size)
    return np.log(p) - np.log1p(-p)


def dirichlet(rng, alpha):
    """Dirichlet draw that stays well defined for tiny concentrations.

    Gamma variates with shape ``a < 1`` are generated as
    ``Gamma(a + 1) * U**(1/a)`` in log space, so components that would
    underflow to zero keep their relative order instead of producing NaN.
    """
    alpha = np.asarray(alpha, dtype=float)
    log_g = log_gamma_variates(rng, alpha)
    log_g -= log_g.max()
    g = np.exp(log_g)
    return g / g.sum()


def log_gamma_variates(rng, shape):
    shape = np.asarray(shape, dtype=float)
    small = shape < 1.0
    boosted = np.where(small, shape + 1.0, shape)
    log_g = np.log(rng.gamma(boosted))
    if small.any():
        u = uniform_open(rng, shape.shape)
        log_g = np.where(small, log_g + np.log(u) / np.where(small, shape, 1.0), log_g)
    return log_g
