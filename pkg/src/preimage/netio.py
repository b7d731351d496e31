"""Network serialization: a JSON architecture manifest plus a raw weight
blob, and the receptive-field bookkeeping derived from the manifest.

Manifest schema (format "preimage-net/1"):

    {
      "format": "preimage-net/1",
      "input": {"height": H, "width": W, "channels": C,
                "mean": [per-channel reals] | null,
                "mean_image": "relative/path.bin" | null},
      "layers": [
        {"name": "conv1", "kind": "conv", "filter": [fh, fw, cin, cout],
         "stride": s, "pad": p, "weight_offset": bytes, "bias_offset": bytes},
        {"name": "relu1", "kind": "relu"},
        {"name": "pool1", "kind": "maxpool", "window": w, "stride": s, "pad": p},
        {"name": "norm1", "kind": "lrn", "kappa": k, "alpha": a, "beta": b,
         "window": n}                        # or "groups": [[...], ...]
        {"name": "clamp", "kind": "clamp", "ceiling": 0.2},
        {"name": "binning", "kind": "binning", "orientations": K, "mode": "bilinear"},
        {"name": "prob", "kind": "softmax"}
      ]
    }

The weight blob is raw little-endian IEEE-754 single precision. A conv
layer's filters are stored at ``weight_offset`` in (dv, du, in, out)
order (C order, out fastest) followed nowhere in particular by the bias
vector at ``bias_offset``. Values are widened to double on load.
Offsets must not overlap and must lie inside the blob.

``mean`` holds per-channel scalars to subtract from the input; a mean
image can be supplied instead as a float32 blob of the input shape,
referenced by a path relative to the manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .layers import LRN, Clamp, Conv, GradBinning, Layer, MaxPool, ReLU, Softmax
from .network import Network

__all__ = [
    "NetIOError",
    "ManifestError",
    "UnsupportedLayerKind",
    "CorruptBlobError",
    "LayerGeometry",
    "load_manifest",
    "load_network",
    "save_network",
    "receptive_fields",
    "builtin_arch_path",
    "builtin_arch",
]

FORMAT_TAG = "preimage-net/1"
FLOAT_BYTES = 4
ARCH_NAMES = ("alexnet", "vgg-m", "vgg-vd16")


class NetIOError(Exception):
    """Base for manifest/blob problems."""


class ManifestError(NetIOError):
    """Structurally invalid manifest."""


class UnsupportedLayerKind(ManifestError):
    def __init__(self, layer_name: str, kind: str):
        super().__init__(f"layer {layer_name!r} has unsupported kind {kind!r}")
        self.layer_name = layer_name
        self.kind = kind


class CorruptBlobError(NetIOError):
    """Weight blob shorter than the manifest requires."""


KNOWN_KINDS = ("conv", "relu", "maxpool", "lrn", "clamp", "binning", "softmax")


def _require(cond, msg):
    if not cond:
        raise ManifestError(msg)


def _layer_fields(spec: dict, name: str, *fields):
    out = []
    for f in fields:
        _require(f in spec, f"layer {name!r} is missing field {f!r}")
        out.append(spec[f])
    return out


def validate_manifest(doc: dict) -> None:
    """Structural checks: names, kinds, channel chaining, offset sanity."""
    _require(isinstance(doc, dict), "manifest must be a JSON object")
    _require(doc.get("format") == FORMAT_TAG, f"manifest format must be {FORMAT_TAG!r}")
    _require("input" in doc and "layers" in doc, "manifest needs input and layers sections")
    inp = doc["input"]
    for f in ("height", "width", "channels"):
        _require(isinstance(inp.get(f), int) and inp[f] > 0, f"input.{f} must be a positive integer")
    names = [l.get("name") for l in doc["layers"]]
    _require(all(isinstance(n, str) and n for n in names), "every layer needs a name")
    _require(len(set(names)) == len(names), "layer names must be unique")

    channels = inp["channels"]
    spans = []
    for spec in doc["layers"]:
        name, kind = spec["name"], spec.get("kind")
        if kind not in KNOWN_KINDS:
            raise UnsupportedLayerKind(name, str(kind))
        if kind == "conv":
            filt, stride, pad, woff, boff = _layer_fields(
                spec, name, "filter", "stride", "pad", "weight_offset", "bias_offset")
            _require(len(filt) == 4 and all(int(v) > 0 for v in filt),
                     f"layer {name!r}: filter must be [fh, fw, in, out]")
            fh, fw, cin, cout = (int(v) for v in filt)
            _require(cin == channels,
                     f"layer {name!r} expects {cin} input channels but receives {channels}")
            _require(int(stride) >= 1 and int(pad) >= 0, f"layer {name!r}: bad stride/pad")
            nweights = fh * fw * cin * cout
            spans.append((int(woff), nweights * FLOAT_BYTES, name))
            spans.append((int(boff), cout * FLOAT_BYTES, name))
            channels = cout
        elif kind == "maxpool":
            window, stride = _layer_fields(spec, name, "window", "stride")
            _require(int(window) >= 1 and int(stride) >= 1, f"layer {name!r}: bad window/stride")
        elif kind == "lrn":
            _layer_fields(spec, name, "kappa", "alpha", "beta")
            _require(("window" in spec) != ("groups" in spec),
                     f"layer {name!r}: need exactly one of window/groups")
            if "groups" in spec:
                flat = [c for g in spec["groups"] for c in g]
                _require(all(g for g in spec["groups"]), f"layer {name!r}: empty channel group")
                _require(sorted(flat) == list(range(channels)),
                         f"layer {name!r}: groups must cover channels 0..{channels - 1} exactly once")
        elif kind == "clamp":
            _layer_fields(spec, name, "ceiling")
        elif kind == "binning":
            K, mode = _layer_fields(spec, name, "orientations", "mode")
            _require(int(K) >= 2, f"layer {name!r}: need at least 2 orientations")
            _require(channels == 1, f"layer {name!r}: binning needs a single-channel input")
            channels = int(K)
        # relu / softmax carry no parameters
    for (o, n, name) in spans:
        _require(o >= 0 and n > 0, f"layer {name!r}: negative blob offset")
    spans.sort()
    for (a, an, aname), (b, _, bname) in zip(spans, spans[1:]):
        _require(a + an <= b, f"blob regions of layers {aname!r} and {bname!r} overlap")


def load_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_manifest(doc)
    return doc


def _read_floats(blob: bytes, offset: int, count: int, what: str) -> np.ndarray:
    end = offset + count * FLOAT_BYTES
    if end > len(blob):
        raise CorruptBlobError(
            f"blob truncated: {what} needs bytes [{offset}, {end}) of {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64)


def _build_layer(spec: dict, blob: bytes | None) -> Layer:
    kind, name = spec["kind"], spec["name"]
    if kind == "conv":
        fh, fw, cin, cout = (int(v) for v in spec["filter"])
        if blob is None:
            raise ManifestError(f"layer {name!r} needs a weight blob")
        w = _read_floats(blob, int(spec["weight_offset"]), fh * fw * cin * cout,
                         f"filters of {name!r}").reshape(fh, fw, cin, cout)
        b = _read_floats(blob, int(spec["bias_offset"]), cout, f"bias of {name!r}")
        return Conv(w, b, stride=int(spec["stride"]), pad=int(spec["pad"]), name=name)
    if kind == "relu":
        return ReLU(name)
    if kind == "maxpool":
        return MaxPool(int(spec["window"]), int(spec["stride"]), int(spec.get("pad", 0)), name)
    if kind == "lrn":
        return LRN(float(spec["kappa"]), float(spec["alpha"]), float(spec["beta"]),
                   window=spec.get("window"), groups=spec.get("groups"), name=name)
    if kind == "clamp":
        return Clamp(float(spec["ceiling"]), name)
    if kind == "binning":
        return GradBinning(int(spec["orientations"]), str(spec["mode"]), name)
    if kind == "softmax":
        return Softmax(name)
    raise UnsupportedLayerKind(name, kind)


def _load_mean(doc: dict, manifest_path: str):
    inp = doc["input"]
    mean = inp.get("mean")
    mean_image = inp.get("mean_image")
    if mean is not None and mean_image is not None:
        raise ManifestError("specify mean or mean_image, not both")
    if mean is not None:
        mean = np.asarray(mean, dtype=np.float64)
        if mean.shape != (inp["channels"],):
            raise ManifestError("input.mean must hold one value per channel")
        return mean
    if mean_image is not None:
        path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), mean_image)
        shape = (inp["height"], inp["width"], inp["channels"])
        with open(path, "rb") as fh:
            raw = fh.read()
        n = shape[0] * shape[1] * shape[2]
        if len(raw) < n * FLOAT_BYTES:
            raise CorruptBlobError(f"mean image {mean_image!r} shorter than input shape")
        return np.frombuffer(raw, dtype="<f4", count=n).astype(np.float64).reshape(shape)
    return None


def load_network(manifest_path: str, weights_path: str) -> Network:
    """Reconstruct a runnable network from its manifest and weight blob."""
    doc = load_manifest(manifest_path)
    with open(weights_path, "rb") as fh:
        blob = fh.read()
    layers = [_build_layer(spec, blob) for spec in doc["layers"]]
    inp = doc["input"]
    return Network(layers, input_shape=(inp["height"], inp["width"], inp["channels"]),
                   mean=_load_mean(doc, manifest_path), manifest=doc)


def save_network(net: Network, manifest_path: str, weights_path: str) -> None:
    """Write manifest and blob such that load_network round-trips the
    network (and byte-identically re-saves)."""
    layer_specs = []
    chunks = []
    offset = 0

    def put(arr) -> int:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        chunks.append(raw)
        at = offset
        offset += len(raw)
        return at

    for layer in net.layers:
        spec: dict = {"name": layer.name, "kind": layer.kind}
        if isinstance(layer, Conv):
            spec["filter"] = list(layer.filters.shape)
            spec["stride"] = layer.stride
            spec["pad"] = layer.pad
            spec["weight_offset"] = put(layer.filters)
            spec["bias_offset"] = put(layer.bias)
        elif isinstance(layer, MaxPool):
            spec.update(window=layer.window, stride=layer.stride, pad=layer.pad)
        elif isinstance(layer, LRN):
            spec.update(kappa=layer.kappa, alpha=layer.alpha, beta=layer.beta)
            if layer.groups is not None:
                spec["groups"] = layer.groups
            else:
                spec["window"] = layer.window
        elif isinstance(layer, Clamp):
            spec["ceiling"] = layer.ceiling
        elif isinstance(layer, GradBinning):
            spec.update(orientations=layer.K, mode=layer.mode)
        elif not isinstance(layer, (ReLU, Softmax)):
            raise UnsupportedLayerKind(layer.name, layer.kind)
        layer_specs.append(spec)

    if net.input_shape is None:
        raise ManifestError("network needs a declared input shape to be saved")
    h, w, c = net.input_shape
    inp: dict = {"height": h, "width": w, "channels": c, "mean": None}
    if net.mean is not None:
        if net.mean.ndim != 1:
            raise ManifestError("only per-channel means are saved by save_network")
        inp["mean"] = [float(v) for v in net.mean]
    doc = {"format": FORMAT_TAG, "input": inp, "layers": layer_specs}
    validate_manifest(doc)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    with open(weights_path, "wb") as fh:
        fh.write(b"".join(chunks))


# ---------------------------------------------------------------------------
# Receptive fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerGeometry:
    name: str
    rf_size: int    # pixel extent of one output's dependence cone
    rf_stride: int  # pixel step between neighboring outputs


_KIND_SUPPORT = {"relu": 1, "clamp": 1, "lrn": 1, "softmax": 1, "binning": 3}


def _support_stride(spec) -> tuple[int, int]:
    if isinstance(spec, Layer):
        return int(spec.support), int(spec.stride)
    kind = spec["kind"]
    if kind == "conv":
        return max(int(spec["filter"][0]), int(spec["filter"][1])), int(spec["stride"])
    if kind == "maxpool":
        return int(spec["window"]), int(spec["stride"])
    if kind in _KIND_SUPPORT:
        return _KIND_SUPPORT[kind], 1
    raise UnsupportedLayerKind(spec.get("name", "?"), kind)


def receptive_fields(net) -> list[LayerGeometry]:
    """Per-layer receptive-field size and stride, composed recursively:

        size_out   = size_in + (support - 1) * stride_in_cumulative
        stride_out = stride_in_cumulative * layer_stride

    Accepts a Network or a manifest document. Sizes are theoretical and
    may exceed the input image when padding is present; no clipping is
    applied.
    """
    if isinstance(net, Network):
        items = [(l.name, l) for l in net.layers]
    else:
        doc = net if isinstance(net, dict) else json.loads(net)
        items = [(spec["name"], spec) for spec in doc["layers"]]
    if not items:
        raise ValueError("network has no layers")
    out = []
    size, stride = 1, 1
    for name, spec in items:
        support, lstride = _support_stride(spec)
        size = size + (support - 1) * stride
        stride = stride * lstride
        out.append(LayerGeometry(name=name, rf_size=size, rf_stride=stride))
    return out


# ---------------------------------------------------------------------------
# Bundled architecture manifests
# ---------------------------------------------------------------------------

def builtin_arch_path(name: str) -> str:
    """Path of a bundled architecture manifest: alexnet, vgg-m, vgg-vd16."""
    if name not in ARCH_NAMES:
        raise ValueError(f"unknown architecture {name!r}; available: {', '.join(ARCH_NAMES)}")
    return os.path.join(os.path.dirname(__file__), "data", "archs", f"{name}.json")


def builtin_arch(name: str) -> dict:
    return load_manifest(builtin_arch_path(name))
