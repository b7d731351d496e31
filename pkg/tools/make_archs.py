#!/usr/bin/env python3
"""Regenerate the bundled architecture manifests.

The manifests describe the classic ImageNet nets whose exported weights
the loader accepts. Blob offsets follow the canonical dense layout
(filters then bias, in declaration order); see README for the export
recipe, including how to densify grouped conv weights.
"""

import json
import os

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "preimage", "data", "archs")

IMAGENET_MEAN = [123.68, 116.779, 103.939]
LRN_PARAMS = {"kappa": 1.0, "alpha": 2e-5, "beta": 0.75, "window": 5}


class Packer:
    def __init__(self):
        self.offset = 0

    def take(self, count):
        at = self.offset
        self.offset += count * 4
        return at


def conv(p, name, fh, cin, cout, stride=1, pad=0):
    return {
        "name": name, "kind": "conv", "filter": [fh, fh, cin, cout],
        "stride": stride, "pad": pad,
        "weight_offset": p.take(fh * fh * cin * cout),
        "bias_offset": p.take(cout),
    }


def relu(name):
    return {"name": name, "kind": "relu"}


def lrn(name):
    return {"name": name, "kind": "lrn", **LRN_PARAMS}


def pool(name, window=3, stride=2, pad=0):
    return {"name": name, "kind": "maxpool", "window": window, "stride": stride, "pad": pad}


def softmax(name):
    return {"name": name, "kind": "softmax"}


def alexnet():
    p = Packer()
    return [
        conv(p, "conv1", 11, 3, 96, stride=4), relu("relu1"), lrn("norm1"), pool("pool1"),
        conv(p, "conv2", 5, 96, 256, pad=2), relu("relu2"), lrn("norm2"), pool("pool2"),
        conv(p, "conv3", 3, 256, 384, pad=1), relu("relu3"),
        conv(p, "conv4", 3, 384, 384, pad=1), relu("relu4"),
        conv(p, "conv5", 3, 384, 256, pad=1), relu("relu5"), pool("pool5"),
        conv(p, "fc6", 6, 256, 4096), relu("relu6"),
        conv(p, "fc7", 1, 4096, 4096), relu("relu7"),
        conv(p, "fc8", 1, 4096, 1000),
        softmax("prob"),
    ], 227


def vgg_m():
    p = Packer()
    return [
        conv(p, "conv1", 7, 3, 96, stride=2), relu("relu1"), lrn("norm1"), pool("pool1", pad=1),
        conv(p, "conv2", 5, 96, 256, stride=2, pad=1), relu("relu2"), lrn("norm2"), pool("pool2"),
        conv(p, "conv3", 3, 256, 512, pad=1), relu("relu3"),
        conv(p, "conv4", 3, 512, 512, pad=1), relu("relu4"),
        conv(p, "conv5", 3, 512, 512, pad=1), relu("relu5"), pool("pool5"),
        conv(p, "fc6", 6, 512, 4096), relu("relu6"),
        conv(p, "fc7", 1, 4096, 4096), relu("relu7"),
        conv(p, "fc8", 1, 4096, 1000),
        softmax("prob"),
    ], 224


def vgg_vd16():
    p = Packer()
    layers = []
    widths = [(2, 3, 64), (2, 64, 128), (3, 128, 256), (3, 256, 512), (3, 512, 512)]
    for block, (reps, cin, cout) in enumerate(widths, start=1):
        for i in range(1, reps + 1):
            layers.append(conv(p, f"conv{block}_{i}", 3, cin if i == 1 else cout, cout, pad=1))
            layers.append(relu(f"relu{block}_{i}"))
        layers.append(pool(f"pool{block}", window=2))
    layers += [
        conv(p, "fc6", 7, 512, 4096), relu("relu6"),
        conv(p, "fc7", 1, 4096, 4096), relu("relu7"),
        conv(p, "fc8", 1, 4096, 1000),
        softmax("prob"),
    ]
    return layers, 224


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    for name, builder in (("alexnet", alexnet), ("vgg-m", vgg_m), ("vgg-vd16", vgg_vd16)):
        layers, side = builder()
        doc = {
            "format": "preimage-net/1",
            "input": {"height": side, "width": side, "channels": 3,
                      "mean": IMAGENET_MEAN, "mean_image": None},
            "layers": layers,
        }
        path = os.path.join(OUT_DIR, f"{name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print(f"wrote {path} ({len(layers)} layers)")


if __name__ == "__main__":
    main()
