"""Parameter initialisers."""

from typing import Tuple

import numpy as np


def uniform_fan_in(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype: type = np.float32
) -> np.ndarray:
    """Uniform draw in ±sqrt(1 / fan_in)."""
    bound = float(np.sqrt(1.0 / max(fan_in, 1)))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def ones(shape: Tuple[int, ...], dtype: type = np.float32) -> np.ndarray:
    return np.ones(shape, dtype=dtype)


def zeros(shape: Tuple[int, ...], dtype: type = np.float32) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)
