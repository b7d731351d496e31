"""Named parameter presets for the visualization modes.

Every preset carries the balanced prior constants; they differ in the
data term, initialization, jitter policy, and fine-tuning:

  invert-shallow  descriptor inversion: C=100, no jitter, fine-tuned
  invert-deep     CNN inversion: per-depth C schedule, jitter auto,
                  fine-tuned
  maximize        single-component excitation: C=1, jitter auto, starts
                  from noise, no fine-tuning
  caricature      exaggerates active components: C=1, starts from the
                  reference image, no fine-tuning
  texture         channel-correlation matching from noise

The deep-inversion C schedule weakens the data term with depth. It is
keyed by marker layer names; on networks using neither naming scheme
an explicit C is required.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["Preset", "PRESETS", "schedule_C", "auto_jitter"]


@dataclass(frozen=True)
class Preset:
    name: str
    loss_kind: str | None
    C: float | None          # None means: use the depth schedule
    jitter: int | str        # pixel count or "auto" (quarter of the stride)
    iters: int
    finetune_iters: int
    init: str                # "noise" | "reference"


PRESETS = {
    "invert-shallow": Preset("invert-shallow", "inversion", 100.0, 0, 300, 50, "noise"),
    "invert-deep": Preset("invert-deep", "inversion", None, "auto", 300, 50, "noise"),
    "maximize": Preset("maximize", "dot", 1.0, "auto", 300, 0, "noise"),
    "caricature": Preset("caricature", "dot", 1.0, 0, 300, 0, "reference"),
    "texture": Preset("texture", None, 1.0, 0, 300, 0, "noise"),
}

# (band C, last layer of the band); the final band has no marker
_C_BANDS = {
    "plain": [(300.0, "relu3"), (100.0, "relu4"), (20.0, "relu5"), (1.0, None)],
    "stacked": [(300.0, "conv4_3"), (100.0, "conv5_1"), (20.0, "conv5_3"), (1.0, None)],
}


def schedule_C(layer_names: list[str], target_layer: str) -> float | None:
    """Depth-scheduled data weight for deep inversion, or None when the
    network matches neither marker naming scheme."""
    if target_layer not in layer_names:
        raise KeyError(f"no layer named {target_layer!r}")
    for bands in _C_BANDS.values():
        markers = [m for _, m in bands if m is not None]
        if not all(m in layer_names for m in markers):
            continue
        pos = layer_names.index(target_layer)
        for c, marker in bands:
            if marker is None or pos <= layer_names.index(marker):
                return c
    return None


def auto_jitter(rf_stride: int) -> int:
    """Default jitter range: the integer nearest a quarter of the stride."""
    return max(1, round(rf_stride / 4))
