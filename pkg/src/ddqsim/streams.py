"""Counter-based random streams for reproducible shot-parallel sampling.

Every random variate consumed by the trajectory engine is addressed by
(seed, stream tag, shot index, draw index) through a SplitMix64-style hash,
so a shot's outcome never depends on batch boundaries or thread count.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / float(1 << 53)

# Stream tags used by the simulation engine. Kept here so independent
# consumers never collide.
TAG_PREP = 1
TAG_PROJECT = 2
TAG_READOUT_TRAIN = 3
TAG_READOUT = 4
TAG_JUMP_BASE = 16        # + delay-segment index
TAG_NOISE_BASE = 4096     # + noise-process index
TAG_PERSISTENT = 8192     # + process index (campaign slow-noise states)


def _mix(z):
    """SplitMix64 finalizer on uint64 scalars/arrays (wraps mod 2^64)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def stream_key(seed, *tags):
    """Derive a 64-bit stream key from a seed and integer tags."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        for t in tags:
            h = _mix(h ^ (np.uint64(int(t) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN))
    return h


def _shot_base(key, shot_ids):
    ids = np.asarray(shot_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(np.uint64(key) + ids * _GOLDEN)


def uniforms(key, shot_ids, draw_ids):
    """Uniforms in (0, 1) addressed by (key, shot, draw).

    ``shot_ids`` is a scalar or (n,) int array; ``draw_ids`` a scalar or
    (m,) int array. Arrays broadcast to (n,) or (n, m). The value at a given
    (key, shot, draw) address is immutable across calls and batch layouts.
    """
    base = _shot_base(key, shot_ids)
    draws = np.asarray(draw_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        if draws.ndim == 0 or base.ndim == 0:
            v = _mix(base + draws * _GOLDEN)
        else:
            v = _mix(base[..., None] + draws[None, :] * _GOLDEN)
    return ((v >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def normals(key, shot_ids, draw_ids):
    """Standard-normal variates via the inverse CDF of `uniforms`."""
    return ndtri(uniforms(key, shot_ids, draw_ids))
