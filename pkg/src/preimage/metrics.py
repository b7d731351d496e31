"""Quantitative evaluation of reconstructions, plus the finite-difference
gradient oracle used throughout the test suite."""

from __future__ import annotations

import numpy as np

from .network import Network

__all__ = [
    "DegenerateTargetError",
    "reconstruction_error",
    "gradient_magnitude",
    "grad_hist_intersection",
    "classification_consistency",
    "numeric_gradient",
]

HIST_BINS = 64  # fixed so reported intersections are comparable across runs


class DegenerateTargetError(ValueError):
    """Raised when a target code has zero norm under its mask."""


def reconstruction_error(x: np.ndarray, x0: np.ndarray, network: Network,
                         layer: int | str, mask: np.ndarray | None = None) -> float:
    """Normalized feature-space distance, as a percentage.

    100 * ||(code(x) - code(x0)) . mask||^2 / ||code(x0) . mask||^2
    """
    code = network.forward(x, layer)
    code0 = network.forward(x0, layer)
    if mask is None:
        mask = np.ones_like(code0)
    denom = float(np.sum((code0 * mask) ** 2))
    if denom == 0.0:
        raise DegenerateTargetError("reference code is zero under the mask")
    return 100.0 * float(np.sum(((code - code0) * mask) ** 2)) / denom


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    """Per-pixel gradient magnitude: 3x3 central differences with one
    pixel of replicate padding, per channel, combined across channels
    by the L2 norm. Same derivative operators as the descriptor nets."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    xp = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = xp[1:-1, 2:, :] - xp[1:-1, :-2, :]
    gy = xp[2:, 1:-1, :] - xp[:-2, 1:-1, :]
    return np.sqrt((gx * gx + gy * gy).sum(axis=2))


def _gradient_histogram(mag: np.ndarray, top: float) -> np.ndarray:
    counts, _ = np.histogram(mag, bins=HIST_BINS, range=(0.0, top))
    return counts / mag.size


def grad_hist_intersection(x: np.ndarray, x0: np.ndarray) -> float:
    """Histogram intersection of gradient-magnitude distributions, in [0, 1].

    Both histograms use 64 uniform bins over [0, max magnitude across
    the two images], so identical images score exactly 1.
    """
    m1 = gradient_magnitude(x)
    m2 = gradient_magnitude(x0)
    top = max(m1.max(), m2.max())
    if top == 0.0:
        return 1.0  # both images constant
    h1 = _gradient_histogram(m1, top)
    h2 = _gradient_histogram(m2, top)
    return float(np.minimum(h1, h2).sum())


def classification_consistency(x_list, x0: np.ndarray, classifier: Network,
                               layer: int | str | None = None) -> float:
    """Fraction of images assigned the same class as the reference.

    The class is the argmax over the channels of the final (or given)
    layer's output, flattened over any spatial positions; invariant to
    positive rescaling of the scores.
    """
    if layer is None:
        layer = len(classifier.layers) - 1
    ref = int(np.argmax(classifier.forward(x0, layer)))
    if not x_list:
        raise ValueError("empty image list")
    hits = sum(int(np.argmax(classifier.forward(x, layer))) == ref for x in x_list)
    return hits / len(x_list)


def numeric_gradient(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, one component at
    a time: (f(x + h e_i) - f(x - h e_i)) / (2h)."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite probe value at component {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
