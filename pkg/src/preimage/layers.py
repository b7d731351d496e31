"""Differentiable layer primitives.

Each layer is a pure function of its input: ``forward(x)`` maps an
(H, W, C) array to the layer output, and ``backward(x, upstream)``
returns the vector-Jacobian product with respect to the input. Weights
are fixed at construction; pre-image search never updates them, so no
weight gradients exist anywhere.

Every backward pass is validated against central finite differences in
the test suite (relative error <= 1e-4 away from kinks).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Layer",
    "Conv",
    "ReLU",
    "MaxPool",
    "LRN",
    "Clamp",
    "Softmax",
    "GradBinning",
    "bin_projections",
]


class Layer:
    """Base layer: a differentiable map with known spatial geometry.

    ``support`` is the spatial extent of one output's input window and
    ``stride`` its spatial step; both feed the receptive-field recursion.
    """

    kind = "abstract"
    support = 1
    stride = 1

    def __init__(self, name: str = ""):
        self.name = name

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_channels(self, in_channels: int) -> int:
        return in_channels

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r}>"


class Conv(Layer):
    """Linear convolution (correlation convention, zero padding).

    output(v,u,o) = bias_o + sum_{dv,du,k} input(s*v+dv-p, s*u+du-p, k) * filters(dv,du,k,o)

    ``filters`` has shape (fh, fw, in_channels, out_channels). Fully
    connected layers are the special case where the filter support
    equals the input extent. Patches are flattened in (dv, du, k)
    order, fixing the reduction order of the sum.
    """

    kind = "conv"

    def __init__(self, filters: np.ndarray, bias=None, stride: int = 1, pad: int = 0,
                 name: str = ""):
        super().__init__(name)
        filters = np.asarray(filters, dtype=np.float64)
        if filters.ndim != 4:
            raise ValueError("filters must have shape (fh, fw, in, out)")
        self.filters = filters
        fh, fw, cin, cout = filters.shape
        self.bias = np.zeros(cout) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (cout,):
            raise ValueError(f"bias must have shape ({cout},)")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = int(stride)
        self.pad = int(pad)
        self.support = max(fh, fw)
        self._fmat = filters.reshape(fh * fw * cin, cout)

    def out_channels(self, in_channels: int) -> int:
        if in_channels != self.filters.shape[2]:
            raise ValueError(
                f"conv {self.name!r} expects {self.filters.shape[2]} input channels, got {in_channels}"
            )
        return self.filters.shape[3]

    def _geometry(self, x):
        fh, fw, cin, cout = self.filters.shape
        if x.shape[2] != cin:
            raise ValueError(
                f"conv {self.name!r}: input has {x.shape[2]} channels, filters expect {cin}"
            )
        hp = x.shape[0] + 2 * self.pad
        wp = x.shape[1] + 2 * self.pad
        if hp < fh or wp < fw:
            raise ValueError(f"conv {self.name!r}: input {x.shape} smaller than filter")
        oh = (hp - fh) // self.stride + 1
        ow = (wp - fw) // self.stride + 1
        return fh, fw, cin, cout, oh, ow

    def _patches(self, x, fh, fw, oh, ow):
        p = self.pad
        xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (fh, fw), axis=(0, 1))  # (H', W', C, fh, fw)
        win = win[:: self.stride, :: self.stride][:oh, :ow]
        # reorder to (oh, ow, fh, fw, C) so the flattened axis is (dv, du, k)
        return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2))

    def forward(self, x: np.ndarray) -> np.ndarray:
        fh, fw, cin, cout, oh, ow = self._geometry(x)
        cols = self._patches(x, fh, fw, oh, ow).reshape(oh * ow, fh * fw * cin)
        out = cols @ self._fmat + self.bias
        return out.reshape(oh, ow, cout)

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        fh, fw, cin, cout, oh, ow = self._geometry(x)
        dcols = upstream.reshape(oh * ow, cout) @ self._fmat.T
        dcols = dcols.reshape(oh, ow, fh, fw, cin)
        p, s = self.pad, self.stride
        dxp = np.zeros((x.shape[0] + 2 * p, x.shape[1] + 2 * p, cin))
        for dv in range(fh):
            for du in range(fw):
                dxp[dv : dv + s * oh : s, du : du + s * ow : s, :] += dcols[:, :, dv, du, :]
        return dxp[p : p + x.shape[0], p : p + x.shape[1], :] if p else dxp


class ReLU(Layer):
    """Elementwise max(0, x); subgradient 0 at the kink."""

    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, upstream):
        return np.where(x > 0.0, upstream, 0.0)


class Clamp(Layer):
    """Elementwise min(x, ceiling); gradient passes only where x < ceiling."""

    kind = "clamp"

    def __init__(self, ceiling: float, name: str = ""):
        super().__init__(name)
        self.ceiling = float(ceiling)

    def forward(self, x):
        return np.minimum(x, self.ceiling)

    def backward(self, x, upstream):
        return np.where(x < self.ceiling, upstream, 0.0)


class MaxPool(Layer):
    """Per-channel sliding window maximum, padded with -inf.

    Backward routes the upstream gradient to the argmax of each window;
    ties go to the first position in row-major scan order.
    """

    kind = "maxpool"

    def __init__(self, window: int, stride: int = 1, pad: int = 0, name: str = ""):
        super().__init__(name)
        if window < 1:
            raise ValueError("pool window must be >= 1")
        self.window = int(window)
        self.stride = int(stride)
        self.pad = int(pad)
        self.support = self.window

    def _windows(self, x):
        p, w = self.pad, self.window
        xp = np.pad(x, ((p, p), (p, p), (0, 0)), constant_values=-np.inf) if p else x
        win = sliding_window_view(xp, (w, w), axis=(0, 1))
        return win[:: self.stride, :: self.stride], xp.shape

    def forward(self, x):
        win, _ = self._windows(x)
        return win.max(axis=(3, 4))

    def backward(self, x, upstream):
        win, pshape = self._windows(x)
        oh, ow, c = upstream.shape
        w, s, p = self.window, self.stride, self.pad
        flat = win.reshape(oh, ow, c, w * w)
        idx = flat.argmax(axis=3)  # first max in (dv, du) row-major order
        ov, ou, oc = np.meshgrid(
            np.arange(oh), np.arange(ow), np.arange(c), indexing="ij"
        )
        vv = ov * s + idx // w
        uu = ou * s + idx % w
        dxp = np.zeros((pshape[0], pshape[1], c))
        np.add.at(dxp, (vv.ravel(), uu.ravel(), oc.ravel()), upstream.ravel())
        return dxp[p : p + x.shape[0], p : p + x.shape[1], :] if p else dxp


class LRN(Layer):
    """Response normalization across channel neighborhoods.

    output(v,u,k) = input(v,u,k) / (kappa + alpha * sum_{k' in N(k)} input(v,u,k')^2)^beta

    The neighborhood N(k) is either a sliding window of ``window``
    channels centered on k (clipped at the channel range), or one of
    the explicit ``groups`` (disjoint channel-index sets; every channel
    must appear in exactly one). With a single group covering all
    channels, kappa near zero, alpha=1 and beta=1/2 this is plain L2
    normalization of the channel vector at each position.
    """

    kind = "lrn"

    def __init__(self, kappa: float, alpha: float, beta: float, window: int | None = None,
                 groups=None, name: str = ""):
        super().__init__(name)
        if (window is None) == (groups is None):
            raise ValueError("specify exactly one of window= or groups=")
        if groups is not None:
            groups = [list(g) for g in groups]
            if any(len(g) == 0 for g in groups):
                raise ValueError("empty channel group")
        self.kappa = float(kappa)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.window = None if window is None else int(window)
        self.groups = groups

    def _membership(self, c: int) -> np.ndarray:
        """m[i, j] = 1 where channel j belongs to N(i)."""
        m = np.zeros((c, c))
        if self.groups is not None:
            seen = set()
            for g in self.groups:
                for i in g:
                    if i < 0 or i >= c:
                        raise ValueError(f"group channel {i} outside 0..{c - 1}")
                    if i in seen:
                        raise ValueError(f"channel {i} in more than one group")
                    seen.add(i)
                for i in g:
                    m[i, g] = 1.0
            if len(seen) != c:
                missing = sorted(set(range(c)) - seen)
                raise ValueError(f"groups do not cover channels {missing}")
        else:
            half = (self.window - 1) // 2
            for i in range(c):
                lo, hi = max(0, i - half), min(c, i + self.window - half)
                m[i, lo:hi] = 1.0
        return m

    def _scale(self, x, m):
        return self.kappa + self.alpha * np.einsum("hwj,ij->hwi", x * x, m)

    def forward(self, x):
        m = self._membership(x.shape[2])
        return x * self._scale(x, m) ** (-self.beta)

    def backward(self, x, upstream):
        m = self._membership(x.shape[2])
        s = self._scale(x, m)
        direct = upstream * s ** (-self.beta)
        inner = upstream * x * s ** (-self.beta - 1.0)
        coupled = 2.0 * self.alpha * self.beta * x * np.einsum("hwi,ij->hwj", inner, m)
        return direct - coupled


class Softmax(Layer):
    """Channelwise softmax at each spatial position (class-score output)."""

    kind = "softmax"

    def forward(self, x):
        z = x - x.max(axis=2, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=2, keepdims=True)

    def backward(self, x, upstream):
        y = self.forward(x)
        dot = (upstream * y).sum(axis=2, keepdims=True)
        return y * (upstream - dot)


# ---------------------------------------------------------------------------
# Orientation binning
# ---------------------------------------------------------------------------

GRAD_X = np.array([[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
GRAD_Y = GRAD_X.T

_NORM_FLOOR = 1e-12  # below this the gradient direction is undefined


def bin_projections(projections: np.ndarray, grad_norm: np.ndarray, mode: str,
                    K: int | None = None) -> np.ndarray:
    """Assign directional projections to K orientation bins.

    ``projections`` holds <g, u_k> for the K evenly spaced unit
    directions u_k = (cos 2*pi*k/K, sin 2*pi*k/K); ``grad_norm`` is
    ||g|| with a single channel of the same spatial size.

    modes:
      bilinear  h_k = ||g|| * max{0, 1 - (K/2pi) * acos(<g,u_k>/||g||)}
      hard      h_k = ||g|| * [ <g,u_k> > ||g|| cos(pi/K) ]
      approx    h_k = max{0, <g,u_k> - a ||g||},  a = cos(2pi/K)

    All bins are zero wherever ||g|| vanishes.
    """
    if K is None:
        K = projections.shape[2]
    if projections.shape[2] != K:
        raise ValueError(f"expected {K} projection channels, got {projections.shape[2]}")
    if grad_norm.shape[2] != 1 or grad_norm.shape[:2] != projections.shape[:2]:
        raise ValueError("grad_norm must be single-channel with matching spatial size")
    r = grad_norm
    live = r > _NORM_FLOOR
    safe_r = np.where(live, r, 1.0)
    if mode == "bilinear":
        c = np.clip(projections / safe_r, -1.0, 1.0)
        h = r * np.maximum(0.0, 1.0 - (K / (2.0 * np.pi)) * np.arccos(c))
    elif mode == "hard":
        h = r * (projections > r * np.cos(np.pi / K))
    elif mode == "approx":
        h = np.maximum(0.0, projections - np.cos(2.0 * np.pi / K) * r)
    else:
        raise ValueError(f"unknown binning mode {mode!r}")
    return np.where(live, h, 0.0)


class GradBinning(Layer):
    """Image gradient plus orientation binning, as one differentiable layer.

    Takes a single-channel image and produces K channels of binned
    gradient magnitude. The spatial gradient is the 3x3 central
    difference pair (GRAD_X, GRAD_Y) with one pixel of replicate
    padding, so the output keeps the input's spatial size. Folding the
    derivative filters into this layer keeps the replicate boundary
    rule out of the zero-padded Conv primitive.

    Backward differentiates the binning analytically; for hard
    assignment the indicator is held fixed and only the magnitude
    factor carries gradient (the almost-everywhere derivative). Pixels
    with vanishing gradient contribute nothing in either direction.
    """

    kind = "binning"
    support = 3

    def __init__(self, K: int, mode: str, name: str = ""):
        super().__init__(name)
        if K < 2:
            raise ValueError("need at least two orientation bins")
        if mode not in ("bilinear", "hard", "approx"):
            raise ValueError(f"unknown binning mode {mode!r}")
        self.K = int(K)
        self.mode = mode
        angles = 2.0 * np.pi * np.arange(self.K) / self.K
        self.cos_k = np.cos(angles)
        self.sin_k = np.sin(angles)

    def out_channels(self, in_channels: int) -> int:
        if in_channels != 1:
            raise ValueError(f"binning layer {self.name!r} expects a grayscale input")
        return self.K

    @staticmethod
    def _gradients(x):
        xp = np.pad(x[:, :, 0], 1, mode="edge")
        gx = xp[1:-1, 2:] - xp[1:-1, :-2]
        gy = xp[2:, 1:-1] - xp[:-2, 1:-1]
        return gx, gy

    def forward(self, x):
        gx, gy = self._gradients(x)
        r = np.hypot(gx, gy)
        proj = gx[:, :, None] * self.cos_k + gy[:, :, None] * self.sin_k
        return bin_projections(proj, r[:, :, None], self.mode, self.K)

    def backward(self, x, upstream):
        gx, gy = self._gradients(x)
        r = np.hypot(gx, gy)
        live = r > _NORM_FLOOR
        safe_r = np.where(live, r, 1.0)
        K = self.K
        dgx = np.zeros_like(gx)
        dgy = np.zeros_like(gy)
        if self.mode == "bilinear":
            theta = np.arctan2(gy, gx)
            for k in range(K):
                d = theta - 2.0 * np.pi * k / K
                d = (d + np.pi) % (2.0 * np.pi) - np.pi  # wrap to (-pi, pi]
                t = np.abs(d)
                act = live & (t < 2.0 * np.pi / K)
                wgt = 1.0 - K * t / (2.0 * np.pi)
                ang = K * np.sign(d) / (2.0 * np.pi)
                up = np.where(act, upstream[:, :, k], 0.0)
                dgx += up * (wgt * gx / safe_r + ang * gy / safe_r)
                dgy += up * (wgt * gy / safe_r - ang * gx / safe_r)
        elif self.mode == "hard":
            thr = np.cos(np.pi / K)
            for k in range(K):
                proj = gx * self.cos_k[k] + gy * self.sin_k[k]
                act = live & (proj > r * thr)
                up = np.where(act, upstream[:, :, k], 0.0)
                dgx += up * gx / safe_r
                dgy += up * gy / safe_r
        else:  # approx
            a = np.cos(2.0 * np.pi / K)
            for k in range(K):
                proj = gx * self.cos_k[k] + gy * self.sin_k[k]
                act = live & (proj - a * r > 0.0)
                up = np.where(act, upstream[:, :, k], 0.0)
                dgx += up * (self.cos_k[k] - a * gx / safe_r)
                dgy += up * (self.sin_k[k] - a * gy / safe_r)
        # adjoint of the replicate-padded central differences
        h, w = x.shape[:2]
        dxp = np.zeros((h + 2, w + 2))
        dxp[1:-1, 2:] += dgx
        dxp[1:-1, :-2] -= dgx
        dxp[2:, 1:-1] += dgy
        dxp[:-2, 1:-1] -= dgy
        dx = dxp[1:-1, 1:-1].copy()
        dx[0, :] += dxp[0, 1:-1]
        dx[-1, :] += dxp[-1, 1:-1]
        dx[:, 0] += dxp[1:-1, 0]
        dx[:, -1] += dxp[1:-1, -1]
        dx[0, 0] += dxp[0, 0]
        dx[0, -1] += dxp[0, -1]
        dx[-1, 0] += dxp[-1, 0]
        dx[-1, -1] += dxp[-1, -1]
        return dx[:, :, None]
