"""Counter-based uniforms keyed by (seed, i, j).

Each dyad's draw is a pure function of its key, so a graph sampled in
blocks, in parallel or serially, is bitwise identical.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K_SEED = np.uint64(0xD1B54A32D192ED03)
_K_ROW = np.uint64(0xAEF17502108EF2D9)
_K_COL = np.uint64(0xDB4F0B9175AE2165)
_K_STREAM = np.uint64(0x8CB92BA72F3D8DD7)


def _mix64(z):
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(x):
    arr = np.asarray(x)
    if arr.dtype.kind == "i" and np.any(arr < 0):
        raise ValueError("seeds and indices must be non-negative")
    return arr.astype(np.uint64)


def dyad_uniforms(seed, i, j, stream=0):
    """Uniform(0, 1) draws for dyads ``(i, j)``; all arguments broadcast."""
    s, r, c = _as_u64(seed), _as_u64(i), _as_u64(j)
    st = _as_u64(stream)
    with np.errstate(over="ignore"):
        h = _mix64(s * _K_SEED + _GOLDEN)
        h = _mix64(h ^ (st * _K_STREAM + _GOLDEN))
        h = _mix64(h ^ (r * _K_ROW + _GOLDEN))
        h = _mix64(h ^ (c * _K_COL + _GOLDEN))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def draw_categories(probs, u):
    """Inverse-CDF draw of one category per row of ``probs`` given uniforms ``u``."""
    cum = np.cumsum(np.atleast_2d(probs), axis=-1)[..., :-1]
    # the last category absorbs any rounding shortfall in the cumulative sum
    return np.sum(np.asarray(u)[..., None] >= cum, axis=-1)
