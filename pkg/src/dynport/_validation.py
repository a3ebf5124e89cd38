"""Input validation helpers shared by the data, problem and solver layers."""

import numpy as np

from .exceptions import ConfigError


def check_matrix(a, name, *, shape=None, finite=True):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ConfigError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if shape is not None and a.shape != tuple(shape):
        raise ConfigError(f"{name} must have shape {tuple(shape)}, got {a.shape}")
    if finite and not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} contains non-finite entries")
    return a


def check_symmetric(a, name, atol=1e-12):
    a = check_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ConfigError(f"{name} must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=atol):
        raise ConfigError(f"{name} is not symmetric (atol={atol})")
    return a


def check_bits(x, n=None, name="bits"):
    """Return ``x`` as a uint8 array, rejecting anything other than 0/1."""
    x = np.asarray(x)
    if x.dtype == bool:
        x = x.astype(np.uint8)
    if x.size and not np.all((x == 0) | (x == 1)):
        raise ConfigError(f"{name} must contain only 0/1 entries")
    x = x.astype(np.uint8)
    if n is not None and x.shape[-1] != n:
        raise ConfigError(f"{name} must have length {n}, got {x.shape[-1]}")
    return x


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ConfigError(f"{name} must be a finite non-negative number, got {value!r}")
    return value


def check_random_state(seed):
    """Return a :class:`numpy.random.Generator` for ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
