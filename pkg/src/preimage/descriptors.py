"""Histogram-of-oriented-gradients descriptors built as layer networks.

Three variants share one pipeline: directional gradient binning, cell
pooling, block grouping with L2 normalization, and clamping.

  hog    18 orientations, hard assignment, 2x2-cell blocks, blocks
         redistributed back to cells (4 normalized copies per cell)
  hogb   hog with bilinear assignment instead of hard
  dsift  8 orientations, bilinear assignment, 4x4-cell blocks

``build_descriptor_net`` expresses the whole computation with the
generic layer primitives, so it is differentiable like any other
network. ``reference_descriptor`` computes the same values by direct
per-pixel loops and shares no code with the network path; the two are
compared elementwise in tests.

Cell pooling uses bilinear (triangular) spatial weights: the pixel at
position p contributes max(0, 1 - |p - m_i| / cell) to the cell with
center m_i = i*cell + (cell-1)/2, separably per axis. In the network
path this is a fixed depthwise convolution of support 2*cell (2*cell-1
for odd cell sizes) with stride cell.

Border cells belong to fewer blocks than interior ones; the hog/hogb
output grid keeps only cells covered by all four blocks, and the
dsift grid the positions where a full 4x4 block fits. The feature
layout per hog cell is 4 normalized copies of its K-bin histogram,
ordered by the relative position of the normalizing block; texture
energy channels of other hog flavors are not included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import GRAD_X, GRAD_Y, LRN, Clamp, Conv, GradBinning
from .network import Network

__all__ = [
    "DescriptorConfig",
    "directional_filters",
    "build_descriptor_net",
    "reference_descriptor",
]

NORM_EPS = 1e-8  # inside the square root of block normalization
VARIANTS = ("hog", "hogb", "dsift")


@dataclass(frozen=True)
class DescriptorConfig:
    variant: str
    orientations: int
    cell_size: int
    block_cells: int
    binning_mode: str
    clamp_ceiling: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown descriptor variant {self.variant!r}")
        if self.orientations < 2:
            raise ValueError("need at least two orientation bins")
        if self.cell_size < 1:
            raise ValueError("cell size must be positive")

    @classmethod
    def preset(cls, variant: str, cell_size: int = 8) -> "DescriptorConfig":
        if variant == "hog":
            return cls("hog", 18, cell_size, 2, "hard")
        if variant == "hogb":
            return cls("hogb", 18, cell_size, 2, "bilinear")
        if variant == "dsift":
            return cls("dsift", 8, cell_size, 4, "bilinear")
        raise ValueError(f"unknown descriptor variant {variant!r}")

    @property
    def redistributes_blocks(self) -> bool:
        return self.variant in ("hog", "hogb")


def directional_filters(K: int) -> np.ndarray:
    """Bank of K oriented 3x3 derivative filters, shape (3, 3, 1, K).

    Filter k responds with <g, u_k> where u_k = (cos 2pi k/K, sin 2pi k/K)
    and g is the centered image gradient.
    """
    if K < 2:
        raise ValueError("need at least two directions")
    bank = np.zeros((3, 3, 1, K))
    for k in range(K):
        a = 2.0 * math.pi * k / K
        bank[:, :, 0, k] = math.cos(a) * GRAD_X + math.sin(a) * GRAD_Y
    return bank


def pooling_kernel_1d(cell: int) -> np.ndarray:
    """Triangular weights of one axis of the cell-pooling filter."""
    length = 2 * cell if cell % 2 == 0 else 2 * cell - 1
    pad = cell // 2
    j = np.arange(length, dtype=np.float64)
    return 1.0 - np.abs(j - pad - (cell - 1) / 2.0) / cell


def _cell_pool_conv(K: int, cell: int) -> Conv:
    k1 = pooling_kernel_1d(cell)
    kern2d = np.outer(k1, k1)
    filters = np.zeros((len(k1), len(k1), K, K))
    for k in range(K):
        filters[:, :, k, k] = kern2d
    return Conv(filters, stride=cell, pad=cell // 2, name="cells")


def _block_gather_conv(K: int, b: int) -> Conv:
    filters = np.zeros((b, b, K, b * b * K))
    for cv in range(b):
        for cu in range(b):
            for k in range(K):
                filters[cv, cu, k, (cv * b + cu) * K + k] = 1.0
    return Conv(filters, stride=1, pad=0, name="blocks")


def _block_to_cell_conv(K: int) -> Conv:
    # each output cell collects its own histogram as normalized inside the
    # four 2x2 blocks that contain it, ordered by block offset
    filters = np.zeros((2, 2, 4 * K, 4 * K))
    for gv in range(2):
        for gu in range(2):
            src_cell = (1 - gv) * 2 + (1 - gu)
            for k in range(K):
                filters[gv, gu, src_cell * K + k, (gv * 2 + gu) * K + k] = 1.0
    return Conv(filters, stride=1, pad=0, name="cellsout")


def build_descriptor_net(config: DescriptorConfig, input_hw=None) -> Network:
    """Assemble the descriptor as a runnable, differentiable network."""
    K, b = config.orientations, config.block_cells
    layers = [
        GradBinning(K, config.binning_mode, name="binning"),
        _cell_pool_conv(K, config.cell_size),
        _block_gather_conv(K, b),
        LRN(NORM_EPS, 1.0, 0.5, groups=[list(range(b * b * K))], name="norm"),
    ]
    if config.redistributes_blocks:
        layers.append(_block_to_cell_conv(K))
    layers.append(Clamp(config.clamp_ceiling, name="clamp"))
    shape = None if input_hw is None else (input_hw[0], input_hw[1], 1)
    return Network(layers, input_shape=shape)


# ---------------------------------------------------------------------------
# Reference implementation (test oracle; no code shared with the net path)
# ---------------------------------------------------------------------------

def reference_descriptor(image: np.ndarray, config: DescriptorConfig) -> np.ndarray:
    """Direct scalar computation of the descriptor.

    Requires the image dimensions to be exact multiples of the cell
    size (the network path silently crops the remainder; the oracle
    refuses so the comparison stays unambiguous).
    """
    im = np.asarray(image, dtype=np.float64)
    if im.ndim == 3:
        if im.shape[2] != 1:
            raise ValueError("reference descriptor expects a grayscale image")
        im = im[:, :, 0]
    h, w = im.shape
    c = config.cell_size
    if h % c or w % c:
        raise ValueError(f"image {h}x{w} is not a multiple of the cell size {c}")
    K, b = config.orientations, config.block_cells
    nv, nu = h // c, w // c

    # binned gradients accumulated straight into cell histograms
    cells = np.zeros((nv, nu, K))
    off = (c - 1) / 2.0
    two_pi = 2.0 * math.pi
    hard_cos = math.cos(math.pi / K)
    for v in range(h):
        iv = (v - off) / c
        i0 = math.floor(iv)
        fv = iv - i0
        for u in range(w):
            gx = im[v, u + 1 if u + 1 < w else w - 1] - im[v, u - 1 if u > 0 else 0]
            gy = im[v + 1 if v + 1 < h else h - 1, u] - im[v - 1 if v > 0 else 0, u]
            r = math.hypot(gx, gy)
            if r <= 1e-12:
                continue
            ju = (u - off) / c
            j0 = math.floor(ju)
            fu = ju - j0
            theta = math.atan2(gy, gx)
            for k in range(K):
                if config.binning_mode == "bilinear":
                    d = math.fmod(theta - two_pi * k / K, two_pi)
                    if d > math.pi:
                        d -= two_pi
                    elif d <= -math.pi:
                        d += two_pi
                    wk = 1.0 - K * abs(d) / two_pi
                    hk = r * wk if wk > 0.0 else 0.0
                elif config.binning_mode == "hard":
                    proj = gx * math.cos(two_pi * k / K) + gy * math.sin(two_pi * k / K)
                    hk = r if proj > r * hard_cos else 0.0
                else:  # approx
                    proj = gx * math.cos(two_pi * k / K) + gy * math.sin(two_pi * k / K)
                    hk = proj - math.cos(two_pi / K) * r
                    hk = hk if hk > 0.0 else 0.0
                if hk == 0.0:
                    continue
                for i, wv in ((i0, 1.0 - fv), (i0 + 1, fv)):
                    if not (0 <= i < nv) or wv == 0.0:
                        continue
                    for j, wu in ((j0, 1.0 - fu), (j0 + 1, fu)):
                        if 0 <= j < nu and wu != 0.0:
                            cells[i, j, k] += hk * wv * wu

    # blocks of b x b cells, L2 normalized
    bv_n, bu_n = nv - b + 1, nu - b + 1
    if bv_n < 1 or bu_n < 1:
        raise ValueError("image too small for a single block of cells")
    blocks = np.zeros((bv_n, bu_n, b * b * K))
    for bv in range(bv_n):
        for bu in range(bu_n):
            q = np.zeros(b * b * K)
            for cv in range(b):
                for cu in range(b):
                    q[(cv * b + cu) * K : (cv * b + cu + 1) * K] = cells[bv + cv, bu + cu]
            blocks[bv, bu] = q / math.sqrt(NORM_EPS + float(np.dot(q, q)))

    if not config.redistributes_blocks:
        return np.minimum(blocks, config.clamp_ceiling)

    # hog flavors: each interior cell keeps its histogram as normalized by
    # the four blocks containing it
    out = np.zeros((nv - 2, nu - 2, 4 * K))
    for i in range(1, nv - 1):
        for j in range(1, nu - 1):
            for gv in range(2):
                for gu in range(2):
                    block = blocks[i - 1 + gv, j - 1 + gu]
                    src = (1 - gv) * 2 + (1 - gu)
                    g = gv * 2 + gu
                    out[i - 1, j - 1, g * K : (g + 1) * K] = block[src * K : (src + 1) * K]
    return np.minimum(out, config.clamp_ceiling)
