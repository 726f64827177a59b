"""Counter-based random streams.

Every run is driven by a 64-bit master seed. Trial ``i`` gets its own Philox
stream keyed by ``(seed, i)``, so results do not depend on how trials are
batched or parallelised.
"""

import numpy as np

__all__ = ["check_seed", "stream", "streams", "uniforms"]

_MAX_SEED = 2**64 - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream(seed, index=0, purpose=0):
    """Philox generator for trial ``index`` of master ``seed``.

    ``purpose`` separates independent uses within one trial (for example the
    payoff generator and the betting coin).
    """
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def streams(seed, n, offset=0, purpose=0):
    return [stream(seed, offset + i, purpose) for i in range(n)]


def uniforms(seed, n_trials, T, offset=0, purpose=0):
    """``(n_trials, T)`` uniforms; row ``i`` is the first ``T`` draws of trial ``offset + i``."""
    out = np.empty((n_trials, T))
    for i in range(n_trials):
        out[i] = stream(seed, offset + i, purpose).random(T)
    return out
