import glob
import os

import numpy as np
import pytest

from preimage.cli import load_image, to_gray
from preimage.layers import Conv, MaxPool, ReLU, Softmax
from preimage.network import Network

# point the error-regression tests at your own image folder by setting
# PREIMAGE_IMAGE_DIR (>= 10 images, roughly 128x128 for sane runtimes)
IMAGE_DIR = os.environ.get(
    "PREIMAGE_IMAGE_DIR",
    os.path.join(os.path.dirname(__file__), "..", "src", "preimage", "data", "images"),
)

TOY_SEED = 123


def toy_cnn(seed: int = TOY_SEED) -> Network:
    """Fixed-seed random conv/relu/pool stack on 64x64x3 inputs; the
    relu3 code is the usual inversion target (16x16x24)."""
    g = np.random.Generator(np.random.PCG64(seed))

    def conv(fh, cin, cout, name, pad):
        w = g.normal(0.0, 1.0 / np.sqrt(fh * fh * cin), size=(fh, fh, cin, cout))
        return Conv(w, stride=1, pad=pad, name=name)

    return Network([
        conv(5, 3, 8, "conv1", 2), ReLU("relu1"), MaxPool(2, 2, 0, "pool1"),
        conv(3, 8, 16, "conv2", 1), ReLU("relu2"), MaxPool(2, 2, 0, "pool2"),
        conv(3, 16, 24, "conv3", 1), ReLU("relu3"),
    ], input_shape=(64, 64, 3))


def toy_classifier(seed: int = TOY_SEED) -> Network:
    """The toy stack with a 3-class scoring head."""
    base = toy_cnn(seed)
    g = np.random.Generator(np.random.PCG64(seed + 1))
    head = [
        MaxPool(16, 16, 0, "gpool"),
        Conv(g.normal(0.0, 1.0 / np.sqrt(24), size=(1, 1, 24, 3)), stride=1, pad=0,
             name="fc_cls"),
        Softmax("prob"),
    ]
    return Network(base.layers + head, input_shape=(64, 64, 3))


@pytest.fixture(scope="session")
def bundled_paths():
    paths = sorted(glob.glob(os.path.join(IMAGE_DIR, "img*.png")))
    assert len(paths) >= 10, "bundled image set is incomplete"
    return paths


@pytest.fixture(scope="session")
def bundled_gray(bundled_paths):
    """Bundled images as centered grayscale arrays (values around 0)."""
    return [to_gray(load_image(p)) - 128.0 for p in bundled_paths]


@pytest.fixture(scope="session")
def bundled_color(bundled_paths):
    return [load_image(p) - 128.0 for p in bundled_paths]


def center_crop(arr, h, w):
    top = (arr.shape[0] - h) // 2
    left = (arr.shape[1] - w) // 2
    return arr[top : top + h, left : left + w, :]


@pytest.fixture(scope="session")
def toy_net():
    return toy_cnn()


@pytest.fixture(scope="session")
def toy_cls():
    return toy_classifier()
