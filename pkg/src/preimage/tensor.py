"""Dense 3-D arrays and the primitive manipulations everything else builds on.

Images and feature maps are plain numpy float64 arrays of shape
(height, width, channels), row-major with the channel index fastest.
A value of shape (1, 1, d) is a plain d-vector with trivial spatial extent.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RandomSource", "crop", "zero_pad", "fill_noise", "as_tensor"]


class RandomSource:
    """Deterministic pseudo-random generator with a reproducible stream.

    Identical seeds produce identical draw sequences across runs and
    platforms (backed by the PCG64 bit generator). A source is owned by
    a single run; it is never shared between concurrent optimizations.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(np.float64)

    def normal(self, scale: float, shape) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape).astype(np.float64)

    def integer(self, n: int) -> int:
        """One draw uniform on {0, ..., n-1}."""
        return int(self._gen.integers(0, n))

    def child(self, index: int) -> "RandomSource":
        """Independent source for worker `index`, derived deterministically."""
        return RandomSource(np.random.SeedSequence([self.seed, int(index)]).generate_state(1)[0])


def as_tensor(a) -> np.ndarray:
    """Coerce to a float64 (H, W, C) array; 2-D input gets a single channel."""
    t = np.asarray(a, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, np.newaxis]
    if t.ndim != 3:
        raise ValueError(f"expected a 2-D or 3-D array, got shape {t.shape}")
    return t


def crop(t: np.ndarray, top: int, left: int, out_h: int, out_w: int) -> np.ndarray:
    """Spatial window copy: output(v, u, k) = t(v + top, u + left, k)."""
    h, w = t.shape[0], t.shape[1]
    if top < 0 or left < 0 or out_h < 0 or out_w < 0:
        raise IndexError("crop window must be non-negative")
    if top + out_h > h or left + out_w > w:
        raise IndexError(
            f"crop window {out_h}x{out_w} at ({top},{left}) exceeds input {h}x{w}"
        )
    return t[top : top + out_h, left : left + out_w, :].copy()


def zero_pad(t: np.ndarray, top: int, left: int, bottom: int, right: int) -> np.ndarray:
    """Surround with zeros; crop with matching geometry inverts this."""
    return np.pad(t, ((top, bottom), (left, right), (0, 0)))


def fill_noise(h: int, w: int, c: int, scale: float, rng: RandomSource) -> np.ndarray:
    """I.i.d. uniform noise on [-scale, +scale], deterministic given the seed."""
    if scale <= 0:
        raise ValueError("noise scale must be positive")
    return rng.uniform(-scale, scale, (h, w, c))
