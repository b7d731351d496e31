"""Command-line interface.

Subcommands: invert, maximize, caricature, texture. Each resolves a
preset plus explicit flag overrides into a fully-echoed configuration,
runs the optimizer, and writes the result image (PNG) and a JSON run
report. Re-running with the same configuration and seed reproduces the
output bytes exactly (single-threaded).

Exit codes:
  0  success
  2  bad arguments or conflicting configuration
  3  unreadable input file (image, manifest, weights, mask, template)
  4  unknown layer name
  5  unit out of range, or missing/degenerate template
  6  degenerate target code (zero under its mask)
  7  optimization aborted on a non-finite energy term
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time

import numpy as np
from PIL import Image

from . import __version__
from .descriptors import DescriptorConfig, build_descriptor_net
from .energy import Objective, RegularizerConfig, TextureTerm, jitter_apply, texture_correlation
from .metrics import (
    DegenerateTargetError,
    grad_hist_intersection,
    reconstruction_error,
)
from .netio import NetIOError, load_network, receptive_fields
from .network import Network
from .optim import NonFiniteEnergyError, OptimSchedule, init_preimage, optimize
from .presets import PRESETS, auto_jitter, schedule_C
from .tensor import RandomSource

EXIT_CONFIG = 2
EXIT_UNREADABLE = 3
EXIT_UNKNOWN_LAYER = 4
EXIT_BAD_UNIT = 5
EXIT_DEGENERATE = 6
EXIT_NONFINITE = 7

GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # Rec. 601 luma
BUILTIN_MEAN = 128.0


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------

def load_image(path: str) -> np.ndarray:
    """8-bit PNG (or anything Pillow reads) to float64 values in [0, 255]."""
    try:
        with Image.open(path) as im:
            im = im.convert("L") if im.mode in ("L", "I;16", "1") else im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot read image {path!r}: {e}", EXIT_UNREADABLE)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(path: str, arr: np.ndarray) -> None:
    """Clamp to [0, 255], round to nearest, write 8-bit PNG."""
    data = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img
    r, g, b = GRAY_WEIGHTS
    return (r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2])[:, :, None]


def center_crop(img: np.ndarray, h: int, w: int) -> np.ndarray:
    ih, iw = img.shape[:2]
    if ih < h or iw < w:
        raise CliError(f"image {ih}x{iw} smaller than required {h}x{w}", EXIT_CONFIG)
    top, left = (ih - h) // 2, (iw - w) // 2
    return img[top : top + h, left : left + w, :]


def load_array(path: str, what: str, code: int) -> np.ndarray:
    try:
        return np.load(path).astype(np.float64)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot read {what} {path!r}: {e}", code)


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, default_preset: str):
    p.add_argument("--net", required=True,
                   help="manifest path, or builtin:hog|hogb|dsift")
    p.add_argument("--weights", help="weight blob for a manifest network")
    p.add_argument("--image", help="input image (PNG)")
    p.add_argument("--layer", help="target layer name (default: last layer)")
    p.add_argument("--mask", help=".npy code mask, or center:HxW spatial window")
    p.add_argument("--C", type=float, default=None,
                   help="data term weight (inf disables the priors)")
    p.add_argument("--alpha", type=float, default=6.0)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--B", type=float, default=80.0)
    p.add_argument("--Bplus", type=float, default=None, help="hard pixel bound (default 2B)")
    p.add_argument("--V", type=float, default=None, help="gradient scale (default B/6.5)")
    p.add_argument("--jitter", default=None,
                   help="jitter range in pixels, or auto (quarter of the layer stride)")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--finetune-iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1, help="independent runs with distinct seeds")
    p.add_argument("--preset", default=default_preset, choices=sorted(PRESETS))
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--report", help="run report path (JSON)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="preimage",
                                 description="Reconstruct and probe image representations "
                                             "by energy minimization over pixels.")
    ap.add_argument("--version", action="version", version=f"preimage {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("invert", help="recover an image from its representation code")
    _add_common(p, "invert-shallow")

    p = sub.add_parser("maximize", help="synthesize an input exciting one component")
    _add_common(p, "maximize")
    p.add_argument("--unit", type=int, help="channel index of the component to excite")
    p.add_argument("--template", help=".npy weight template scored against the code")
    p.add_argument("--unit-max", type=float, default=None,
                   help="known activation range of the unit (otherwise estimated from noise)")

    p = sub.add_parser("caricature", help="exaggerate a reference image's active components")
    _add_common(p, "caricature")

    p = sub.add_parser("texture", help="generate texture matching channel correlations")
    _add_common(p, "texture")
    p.add_argument("--layer-weights", help="comma-separated weights, one per --layer entry")

    return ap


class Resolved:
    """A network plus everything derived from the flags."""

    net: Network
    builtin: str | None
    grayscale: bool
    layer: str
    layer_index: int
    rf: dict


def _builtin_name(spec: str) -> str | None:
    return spec.split(":", 1)[1] if spec.startswith("builtin:") else None


def resolve_network(args, image_hw=None) -> Resolved:
    """Build the network named by --net. Builtin descriptor networks are
    sized to the (grayscale) image; manifest networks come with their
    own input geometry and weights.

    Optimization always happens in pixels centered at 128, so the box
    and range priors act on a symmetric interval. Any dataset mean the
    manifest declares is folded into the network as the residual
    (mean - 128), making forward passes agree with the canonical
    raw-pixels-minus-mean evaluation.
    """
    r = Resolved()
    r.builtin = _builtin_name(args.net)
    if r.builtin is not None:
        try:
            cfg = DescriptorConfig.preset(r.builtin)
        except ValueError as e:
            raise CliError(str(e), EXIT_CONFIG)
        if args.weights:
            raise CliError("builtin networks take no --weights", EXIT_CONFIG)
        if image_hw is None:
            raise CliError("builtin networks need --image to fix the input size", EXIT_CONFIG)
        r.net = build_descriptor_net(cfg, input_hw=image_hw)
        r.grayscale = True
    else:
        if not args.weights:
            raise CliError("manifest networks need --weights", EXIT_CONFIG)
        try:
            loaded = load_network(args.net, args.weights)
        except FileNotFoundError as e:
            raise CliError(f"cannot read network: {e}", EXIT_UNREADABLE)
        except NetIOError as e:
            raise CliError(f"invalid network: {e}", EXIT_UNREADABLE)
        adj = None if loaded.mean is None else loaded.mean - BUILTIN_MEAN
        r.net = Network(loaded.layers, input_shape=loaded.input_shape, mean=adj,
                        manifest=loaded.manifest)
        r.grayscale = loaded.input_shape[2] == 1
    r.layer = args.layer or r.net.layers[-1].name
    try:
        r.layer_index = r.net.index_of(r.layer)
    except KeyError as e:
        raise CliError(str(e.args[0]), EXIT_UNKNOWN_LAYER)
    r.rf = {g.name: g for g in receptive_fields(r.net)}
    return r


def resolve_jitter(args, preset, resolved) -> int:
    raw = args.jitter if args.jitter is not None else preset.jitter
    if raw == "auto":
        return auto_jitter(resolved.rf[resolved.layer].rf_stride)
    try:
        T = int(raw)
    except (TypeError, ValueError):
        raise CliError(f"--jitter must be an integer or auto, got {raw!r}", EXIT_CONFIG)
    if T < 0:
        raise CliError("--jitter must be non-negative", EXIT_CONFIG)
    return T


def resolve_C(args, preset, resolved) -> float:
    if args.C is not None:
        return args.C
    if preset.C is not None:
        return preset.C
    c = schedule_C(resolved.net.layer_names, resolved.layer)
    if c is None:
        raise CliError(
            "the deep-inversion C schedule needs the standard layer naming; "
            "pass an explicit --C for this network", EXIT_CONFIG)
    return c


def resolve_mask(spec: str | None, code_shape) -> np.ndarray | None:
    if spec is None:
        return None
    if spec.startswith("center:"):
        try:
            h, w = (int(v) for v in spec.split(":", 1)[1].split("x"))
        except ValueError:
            raise CliError(f"bad mask window {spec!r}, expected center:HxW", EXIT_CONFIG)
        if h > code_shape[0] or w > code_shape[1]:
            raise CliError(f"mask window {h}x{w} exceeds code grid "
                           f"{code_shape[0]}x{code_shape[1]}", EXIT_CONFIG)
        mask = np.zeros(code_shape)
        top, left = (code_shape[0] - h) // 2, (code_shape[1] - w) // 2
        mask[top : top + h, left : left + w, :] = 1.0
        return mask
    mask = load_array(spec, "mask", EXIT_UNREADABLE)
    if mask.shape != tuple(code_shape):
        raise CliError(f"mask shape {mask.shape} != code shape {tuple(code_shape)}",
                       EXIT_CONFIG)
    return mask


def reg_config(args, C: float, T: int) -> RegularizerConfig:
    B = args.B
    return RegularizerConfig(
        C=C, alpha=args.alpha, beta=args.beta, B=B,
        B_plus=args.Bplus if args.Bplus is not None else 2.0 * B,
        V=args.V if args.V is not None else B / 6.5,
        jitter_T=T,
    )


# ---------------------------------------------------------------------------
# Shared run machinery
# ---------------------------------------------------------------------------

def _prepare_reference(args, resolved, T: int):
    """Load and center the reference image, sized to the network input
    plus the jitter margin. Returns (x_full, x_net): the full centered
    image and its center crop at the network's input size."""
    if not args.image:
        raise CliError("this command needs --image", EXIT_CONFIG)
    img = load_image(args.image)
    if resolved.grayscale:
        img = to_gray(img)
    if resolved.builtin is None:
        shape = resolved.net.input_shape
        if img.shape[2] != shape[2]:
            if img.shape[2] == 1 and shape[2] == 3:
                img = np.repeat(img, 3, axis=2)
            else:
                raise CliError(f"image has {img.shape[2]} channels, network wants {shape[2]}",
                               EXIT_CONFIG)
        img = center_crop(img, shape[0] + max(0, T - 1), shape[1] + max(0, T - 1))
    x_full = img - BUILTIN_MEAN
    tc = ((T - 1) // 2, (T - 1) // 2) if T > 1 else (0, 0)
    x_net = jitter_apply(x_full, tc, T) if T > 1 else x_full
    return x_full, x_net


def _out_paths(args, seeds):
    if len(seeds) == 1:
        return {seeds[0]: (args.out, args.report)}
    stem, dot, ext = args.out.rpartition(".")
    base = stem if dot else args.out
    ext = ext if dot else "png"
    paths = {}
    for s in seeds:
        rep = None
        if args.report:
            rstem, rdot, rext = args.report.rpartition(".")
            rep = f"{rstem if rdot else args.report}-seed{s}.{rext if rdot else 'json'}"
        paths[s] = (f"{base}-seed{s}.{ext}", rep)
    return paths


def _echo_config(args, command: str, extras: dict) -> dict:
    echo = {
        "command": command,
        "version": __version__,
        "net": args.net,
        "weights": args.weights,
        "image": args.image,
        "layer": extras.get("layer"),
        "preset": args.preset,
        "alpha": args.alpha,
        "beta": args.beta,
        "B": args.B,
        "Bplus": args.Bplus if args.Bplus is not None else 2.0 * args.B,
        "V": args.V if args.V is not None else args.B / 6.5,
        "count": args.count,
    }
    echo.update(extras)
    return echo


def _run_many(args, objective_for_seed, command: str, extras: dict,
              metrics_for_result=None):
    seeds = [args.seed + i for i in range(max(1, args.count))]
    paths = _out_paths(args, seeds)
    preset = PRESETS[args.preset]
    iters = args.iters if args.iters is not None else preset.iters
    ft = args.finetune_iters if args.finetune_iters is not None else preset.finetune_iters
    schedule = OptimSchedule(iters=iters, finetune_iters=ft)
    for seed in seeds:
        rng = RandomSource(seed)
        started = time.perf_counter()
        obj, init = objective_for_seed(seed, rng)
        x_star, report = optimize(obj, init, schedule, rng, seed=seed)
        out_path, report_path = paths[seed]
        save_image(out_path, x_star + BUILTIN_MEAN)
        report.outputs["image"] = out_path
        report.seed = seed
        report.config = _echo_config(args, command, {
            **extras, "seed": seed, "iters": iters, "finetune_iters": ft,
        })
        if metrics_for_result:
            report.metrics = metrics_for_result(x_star, obj)
        report.metrics["feasible"] = bool(report.final_components.get("feasible", True))
        report.duration_s = time.perf_counter() - started
        if report_path:
            with open(report_path, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh, indent=1)
                fh.write("\n")
        line = f"{command}: seed {seed} -> {out_path}"
        if "reconstruction_error_pct" in report.metrics:
            line += f"  error {report.metrics['reconstruction_error_pct']:.2f}%"
        print(line)
    return 0


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_invert(args) -> int:
    img_probe = load_image(args.image) if args.image else None
    if img_probe is None:
        raise CliError("invert needs --image", EXIT_CONFIG)
    gray_hw = None
    if _builtin_name(args.net):
        g = to_gray(img_probe)
        gray_hw = (g.shape[0], g.shape[1])
    resolved = resolve_network(args, image_hw=gray_hw)
    preset = PRESETS[args.preset]
    T = resolve_jitter(args, preset, resolved)
    if _builtin_name(args.net) and T > 1:
        resolved = resolve_network(args, image_hw=(gray_hw[0] - T + 1, gray_hw[1] - T + 1))
    C = resolve_C(args, preset, resolved)
    x_full, x_net = _prepare_reference(args, resolved, T)
    target = resolved.net.forward(x_net, resolved.layer_index)
    mask = resolve_mask(args.mask, target.shape)
    reg = reg_config(args, C, T)

    def make_obj(seed, rng):
        try:
            obj = Objective(resolved.net, resolved.layer, target, "inversion",
                            mask=mask, reg=reg)
        except DegenerateTargetError as e:
            raise CliError(str(e), EXIT_DEGENERATE)
        init = init_preimage("noise", None, x_full.shape, reg.B, rng)
        return obj, init

    def run_metrics(x_star, obj):
        tc = obj.center_offset()
        xs = jitter_apply(x_star, tc, T) if T > 1 else x_star
        try:
            err = reconstruction_error(xs, x_net, resolved.net, resolved.layer, mask)
        except DegenerateTargetError as e:
            raise CliError(str(e), EXIT_DEGENERATE)
        return {
            "reconstruction_error_pct": err,
            "grad_hist_intersection": grad_hist_intersection(xs, x_net),
        }

    extras = {"layer": resolved.layer, "C": C, "jitter": T, "mask": args.mask,
              "loss": "inversion", "init": "noise"}
    return _run_many(args, make_obj, "invert", extras, run_metrics)


def cmd_maximize(args) -> int:
    if (args.unit is None) == (args.template is None):
        raise CliError("maximize needs exactly one of --unit or --template", EXIT_CONFIG)
    gray_hw = None
    if _builtin_name(args.net):
        if not args.image:
            raise CliError("builtin networks need --image to fix the canvas size", EXIT_CONFIG)
        g = to_gray(load_image(args.image))
        gray_hw = (g.shape[0], g.shape[1])
    resolved = resolve_network(args, image_hw=gray_hw)
    preset = PRESETS[args.preset]
    T = resolve_jitter(args, preset, resolved)
    C = resolve_C(args, preset, resolved)
    reg = reg_config(args, C, T)
    shape = resolved.net.input_shape
    if shape is None:
        raise CliError("network lacks a declared input size", EXIT_CONFIG)
    full_shape = (shape[0] + max(0, T - 1), shape[1] + max(0, T - 1), shape[2])

    probe_rng = RandomSource(args.seed ^ 0x5EED)
    x_noise = init_preimage("noise", None, shape, reg.B, probe_rng)
    code_noise = resolved.net.forward(x_noise, resolved.layer_index)

    if args.template is not None:
        template = load_array(args.template, "template", EXIT_BAD_UNIT)
        if template.shape != code_noise.shape:
            raise CliError(f"template shape {template.shape} != code shape "
                           f"{code_noise.shape}", EXIT_BAD_UNIT)
        target = template
        M = float(np.sum(np.abs(template) * np.abs(code_noise)))
        rho = float(max(shape[0], shape[1]))
        what = {"template": args.template}
    else:
        channels = code_noise.shape[2]
        if not (0 <= args.unit < channels):
            raise CliError(f"unit {args.unit} outside the layer's {channels} channels",
                           EXIT_BAD_UNIT)
        vc, uc = code_noise.shape[0] // 2, code_noise.shape[1] // 2
        target = np.zeros_like(code_noise)
        target[vc, uc, args.unit] = 1.0
        M = args.unit_max if args.unit_max is not None else \
            float(abs(code_noise[vc, uc, args.unit]))
        rho = float(resolved.rf[resolved.layer].rf_size)
        what = {"unit": args.unit}
    if M == 0.0:
        raise CliError("activation range estimate is zero; the target is degenerate",
                       EXIT_DEGENERATE)
    Z = M * rho * rho

    def make_obj(seed, rng):
        obj = Objective(resolved.net, resolved.layer, target, "dot", Z=Z, reg=reg)
        init = init_preimage("noise", None, full_shape, reg.B, rng)
        return obj, init

    def run_metrics(x_star, obj):
        tc = obj.center_offset()
        xs = jitter_apply(x_star, tc, T) if T > 1 else x_star
        code = resolved.net.forward(xs, resolved.layer_index)
        return {"target_score": float(np.sum(code * target) / Z)}

    extras = {"layer": resolved.layer, "C": C, "jitter": T, "Z": Z, "M": M, "rho": rho,
              "loss": "dot", "init": "noise", **what}
    return _run_many(args, make_obj, "maximize", extras, run_metrics)


def cmd_caricature(args) -> int:
    gray_hw = None
    if _builtin_name(args.net):
        if not args.image:
            raise CliError("caricature needs --image", EXIT_CONFIG)
        g = to_gray(load_image(args.image))
        gray_hw = (g.shape[0], g.shape[1])
    resolved = resolve_network(args, image_hw=gray_hw)
    preset = PRESETS[args.preset]
    T = resolve_jitter(args, preset, resolved)
    if _builtin_name(args.net) and T > 1:
        resolved = resolve_network(args, image_hw=(gray_hw[0] - T + 1, gray_hw[1] - T + 1))
    C = resolve_C(args, preset, resolved)
    x_full, x_net = _prepare_reference(args, resolved, T)
    code0 = resolved.net.forward(x_net, resolved.layer_index)
    target = np.maximum(code0, 0.0)
    Z = float(np.sum(target * target))
    if Z == 0.0:
        raise CliError("the reference activates nothing at this layer", EXIT_DEGENERATE)
    reg = reg_config(args, C, T)

    def make_obj(seed, rng):
        obj = Objective(resolved.net, resolved.layer, target, "dot", Z=Z, reg=reg)
        return obj, init_preimage("reference", x_full, None, reg.B, rng)

    base = float(np.sum(code0 * target))

    def run_metrics(x_star, obj):
        tc = obj.center_offset()
        xs = jitter_apply(x_star, tc, T) if T > 1 else x_star
        code = resolved.net.forward(xs, resolved.layer_index)
        return {"activation_dot": float(np.sum(code * target)),
                "activation_dot_reference": base}

    extras = {"layer": resolved.layer, "C": C, "jitter": T, "Z": Z,
              "loss": "dot", "init": "reference"}
    return _run_many(args, make_obj, "caricature", extras, run_metrics)


def cmd_texture(args) -> int:
    if not args.image:
        raise CliError("texture needs --image (the texture source)", EXIT_CONFIG)
    if not args.layer:
        raise CliError("texture needs --layer (comma-separated list)", EXIT_CONFIG)
    layer_names = [s.strip() for s in args.layer.split(",") if s.strip()]
    if not layer_names:
        raise CliError("empty layer list", EXIT_CONFIG)
    if args.layer_weights:
        try:
            weights = [float(v) for v in args.layer_weights.split(",")]
        except ValueError:
            raise CliError("bad --layer-weights; expected comma-separated reals", EXIT_CONFIG)
    else:
        weights = [1.0] * len(layer_names)
    if len(weights) != len(layer_names):
        raise CliError(f"{len(layer_names)} layers but {len(weights)} weights", EXIT_CONFIG)

    gray_hw = None
    if _builtin_name(args.net):
        g = to_gray(load_image(args.image))
        gray_hw = (g.shape[0], g.shape[1])
    args_layer_saved, args.layer = args.layer, None
    resolved = resolve_network(args, image_hw=gray_hw)
    args.layer = args_layer_saved
    preset = PRESETS[args.preset]
    T = resolve_jitter(args, preset, resolved) if args.jitter is not None else preset.jitter
    C = args.C if args.C is not None else preset.C
    x_full, x_net = _prepare_reference(args, resolved, int(T))
    terms = []
    for name, w in zip(layer_names, weights):
        try:
            idx = resolved.net.index_of(name)
        except KeyError as e:
            raise CliError(str(e.args[0]), EXIT_UNKNOWN_LAYER)
        feat = resolved.net.forward(x_net, idx)
        terms.append(TextureTerm(name, w * C, texture_correlation(feat)))
    reg = reg_config(args, 1.0, int(T))

    def make_obj(seed, rng):
        obj = Objective(resolved.net, None, None, None, reg=reg,
                        texture_terms=tuple(terms))
        init = init_preimage("noise", None, x_full.shape, reg.B, rng)
        return obj, init

    def run_metrics(x_star, obj):
        total = 0.0
        for term in obj.texture_terms:
            feat = resolved.net.forward(x_star, term.layer)
            d = texture_correlation(feat) - term.target_gram
            total += term.weight * float(np.sum(d * d))
        return {"texture_mismatch": total}

    extras = {"layer": ",".join(layer_names), "layer_weights": weights, "C": C,
              "jitter": int(T), "loss": "texture", "init": "noise"}
    return _run_many(args, make_obj, "texture", extras, run_metrics)


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "invert": cmd_invert,
        "maximize": cmd_maximize,
        "caricature": cmd_caricature,
        "texture": cmd_texture,
    }
    try:
        return handlers[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except DegenerateTargetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NonFiniteEnergyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
