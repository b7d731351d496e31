import math

import numpy as np
import pytest

from preimage.descriptors import (
    DescriptorConfig,
    build_descriptor_net,
    directional_filters,
    pooling_kernel_1d,
    reference_descriptor,
)
from preimage.layers import GRAD_X, GRAD_Y, Conv
from preimage.metrics import numeric_gradient


def test_directional_filter_k0_is_gx():
    bank = directional_filters(8)
    np.testing.assert_allclose(bank[:, :, 0, 0], GRAD_X, atol=1e-15)


def test_directional_filter_quarter_turn_is_gy():
    bank = directional_filters(8)
    np.testing.assert_allclose(bank[:, :, 0, 2], GRAD_Y, atol=1e-15)


def test_directional_filter_response_on_ramp():
    # a linear ramp with gradient (a, b) projects onto each direction
    a, b = 1.5, -0.75
    h = w = 9
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    ramp = (a * uu + b * vv)[:, :, None]
    K = 12
    conv = Conv(directional_filters(K), stride=1, pad=0)
    resp = conv.forward(ramp)  # interior pixels only
    # the 3x3 operators produce twice the per-pixel step
    for k in range(K):
        want = 2.0 * (a * math.cos(2 * math.pi * k / K) + b * math.sin(2 * math.pi * k / K))
        np.testing.assert_allclose(resp[:, :, k], want, atol=1e-10)


def test_pooling_kernel_interior_weights_sum_to_one():
    for cell in (3, 4, 7, 8):
        k = pooling_kernel_1d(cell)
        # sliding the kernel by the stride tiles every interior pixel twice
        total = np.zeros(6 * cell)
        for i in range(6):
            total[i * cell : i * cell + len(k)] += k[: len(total) - i * cell]
        interior = total[len(k) : -len(k)]
        np.testing.assert_allclose(interior, 1.0)


def test_bilinear_bins_partition_unity():
    # adjacent-bin weights sum to 1 for any nonzero gradient
    rng = np.random.Generator(np.random.PCG64(8))
    for K in (8, 18):
        angles = rng.uniform(0, 2 * np.pi, 10_000)
        mags = rng.uniform(0.1, 50.0, angles.size)
        total = np.zeros_like(mags)
        for k in range(K):
            d = np.abs((angles - 2 * np.pi * k / K + np.pi) % (2 * np.pi) - np.pi)
            total += np.maximum(0.0, 1.0 - K * d / (2 * np.pi))
        np.testing.assert_allclose(total, 1.0, atol=1e-12)


@pytest.mark.parametrize("mode", ["bilinear", "hard"])
def test_rotation_covariance_at_bin_centers(mode):
    # rotating g by one bin spacing cyclically shifts the histogram
    from preimage.layers import bin_projections

    K = 8
    mag = 2.5
    hs = []
    for k0 in range(K):
        ang = 2 * np.pi * k0 / K
        g = mag * np.array([np.cos(ang), np.sin(ang)])
        proj = np.array([[[g[0] * np.cos(2 * np.pi * k / K) + g[1] * np.sin(2 * np.pi * k / K)
                           for k in range(K)]]])
        hs.append(bin_projections(proj, np.array([[[mag]]]), mode)[0, 0])
    for k0 in range(K):
        np.testing.assert_allclose(hs[k0], np.roll(hs[0], k0), atol=1e-12)


@pytest.mark.parametrize("variant", ["hog", "hogb", "dsift"])
def test_net_matches_reference(variant):
    cfg = DescriptorConfig.preset(variant)
    net = build_descriptor_net(cfg)
    rng = np.random.Generator(np.random.PCG64(31))
    for _ in range(3):
        img = rng.uniform(0, 255, size=(64, 64, 1))
        got = net.forward(img)
        want = reference_descriptor(img, cfg)
        assert got.shape == want.shape
        assert np.abs(got - want).max() <= 1e-6


@pytest.mark.parametrize("variant", ["hog", "hogb", "dsift"])
def test_descriptor_outputs_within_clamp(variant):
    cfg = DescriptorConfig.preset(variant)
    net = build_descriptor_net(cfg)
    img = np.random.Generator(np.random.PCG64(4)).uniform(0, 255, size=(64, 64, 1))
    out = net.forward(img)
    assert out.min() >= 0.0
    assert out.max() <= cfg.clamp_ceiling + 1e-12


def test_constant_image_gives_zero_descriptor():
    for variant in ("hog", "hogb", "dsift"):
        net = build_descriptor_net(DescriptorConfig.preset(variant))
        out = net.forward(np.full((64, 64, 1), 55.0))
        assert np.all(out == 0.0)


def test_reference_rejects_nondivisible_dimensions():
    cfg = DescriptorConfig.preset("dsift")
    with pytest.raises(ValueError):
        reference_descriptor(np.zeros((60, 63)), cfg)


def test_single_bright_pixel_is_local():
    # a lone spike excites only the blocks that contain its cells
    cfg = DescriptorConfig.preset("dsift", cell_size=8)
    img = np.zeros((96, 96))
    img[28, 36] = 200.0
    desc = reference_descriptor(img, cfg)
    active = {tuple(int(v) for v in p) for p in np.argwhere(desc.sum(axis=2) > 0)}
    # the spike's derivative cross covers pixels 27..29 x 35..37, which
    # spread bilinearly over cells v in 2..4 and u in 3..5; the 4x4-cell
    # blocks touching those cells sit at bv in 0..4, bu in 0..5
    expected = {(bv, bu) for bv in range(0, 5) for bu in range(0, 6)}
    assert active == expected


@pytest.mark.parametrize("variant", ["hogb", "dsift"])
def test_composed_network_gradient(variant):
    cfg = DescriptorConfig.preset(variant, cell_size=4)
    net = build_descriptor_net(cfg)
    rng = np.random.Generator(np.random.PCG64(17))
    x = rng.uniform(0, 255, size=(16, 16, 1))
    probe = rng.normal(size=net.forward(x).shape)
    analytic = net.grad_input(x, len(net.layers) - 1, probe)
    numeric = numeric_gradient(lambda z: float(np.sum(net.forward(z) * probe)), x.copy(), 1e-4)
    rel = np.abs(analytic - numeric).max() / np.abs(numeric).max()
    assert rel <= 1e-3


def test_hog_channel_count_is_four_copies_of_bins():
    cfg = DescriptorConfig.preset("hog")
    net = build_descriptor_net(cfg)
    out = net.forward(np.random.Generator(np.random.PCG64(2)).uniform(0, 255, (64, 64, 1)))
    assert out.shape == (6, 6, 4 * cfg.orientations)


def test_dsift_block_layout():
    cfg = DescriptorConfig.preset("dsift")
    net = build_descriptor_net(cfg)
    out = net.forward(np.random.Generator(np.random.PCG64(2)).uniform(0, 255, (64, 64, 1)))
    assert out.shape == (5, 5, cfg.block_cells**2 * cfg.orientations)
