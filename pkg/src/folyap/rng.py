"""Counter-based random streams for reproducible parallel Monte Carlo.

Every variate is a pure function of (seed, stream, counter), so results do
not depend on thread scheduling or on how work is sliced for checkpoints.
Walkers use stream = path index and counter = step index.
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SALT = np.uint64(0x5851F42D4C957F2D)
_INV53 = 1.1102230246251565e-16  # 2**-53
_TWO_PI = 6.283185307179586


def _u64(x):
    if isinstance(x, np.ndarray):
        return x.astype(np.uint64)
    return np.uint64(x)


def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def hash_u64(seed, stream, counter):
    """64-bit hash of the triple; vectorizes over numpy arrays."""
    with np.errstate(over="ignore"):
        x = _mix64(_u64(seed) ^ _SALT)
        x = _mix64(x + _u64(stream) * _GAMMA)
        return _mix64(x + _u64(counter) * _GAMMA)


def uniforms(seed, stream, counter):
    """Pair of uniforms: first in (0, 1], second in [0, 1)."""
    c = _u64(counter)
    two = np.uint64(2)
    one = np.uint64(1)
    h1 = hash_u64(seed, stream, c * two)
    h2 = hash_u64(seed, stream, c * two + one)
    u1 = np.asarray(h1 >> np.uint64(11)).astype(np.float64)
    u2 = np.asarray(h2 >> np.uint64(11)).astype(np.float64)
    if u1.ndim == 0:
        u1 = float(u1)
        u2 = float(u2)
    return (u1 + 1.0) * _INV53, u2 * _INV53


def normal_pair(seed, stream, counter):
    """Two independent standard normals via Box-Muller.

    Bit-identical to the scalar kernel version used inside walkers.
    """
    u1, u2 = uniforms(seed, stream, counter)
    r = np.sqrt(-2.0 * np.log(u1))
    th = _TWO_PI * u2
    return r * np.cos(th), r * np.sin(th)
