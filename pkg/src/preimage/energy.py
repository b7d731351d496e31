"""The objective driving pre-image search: data terms, image priors,
and their gradients.

The total energy of a candidate image x is

    E(x) = N_range(x) + TV(x) + C * loss(code(jitter(x, tau)), target)
           [+ sum_l w_l * ||gram_l(x) - gram_l(x_tex)||_fro^2]

All terms are scaled so that a reasonably rendered image scores about
unity on each, which is what lets one C work across very different
representations. The defaults (alpha=6, beta=2, B=80, B_plus=2B,
V=B/6.5, C=1) assume pixels in mean-subtracted units, roughly
[-128, 127] for 8-bit images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import DegenerateTargetError
from .network import Network
from .tensor import RandomSource

__all__ = [
    "RegularizerConfig",
    "TextureTerm",
    "Objective",
    "loss_inversion",
    "loss_dot",
    "reg_bounded_range",
    "reg_tv",
    "jitter_apply",
    "jitter_embed",
    "texture_correlation",
    "reg_texture",
    "eval_objective",
]

TV_SMOOTH_EPS = 1e-8  # smooths the beta=1 kink at zero gradient


@dataclass(frozen=True)
class RegularizerConfig:
    """Prior weights and scales; defaults are the standard balanced set."""

    C: float = 1.0
    alpha: float = 6.0
    beta: float = 2.0
    B: float = 80.0
    B_plus: float = 160.0
    V: float = 80.0 / 6.5
    jitter_T: int = 0

    def __post_init__(self):
        if not (self.alpha > 1.0):
            raise ValueError("alpha must exceed 1")
        if not (self.beta >= 1.0):
            raise ValueError("beta must be at least 1")
        if not (self.B > 0.0 and self.V > 0.0):
            raise ValueError("B and V must be positive")
        if self.B_plus < self.B:
            raise ValueError("hard bound B_plus must be at least B")
        if not (self.C > 0.0):
            raise ValueError("C must be positive")
        if self.jitter_T < 0:
            raise ValueError("jitter amount must be non-negative")

    def with_(self, **kw) -> "RegularizerConfig":
        return replace(self, **kw)

    @property
    def pure_loss(self) -> bool:
        """C = inf disables the priors entirely (used only to show what
        happens without them)."""
        return math.isinf(self.C)


@dataclass(frozen=True)
class TextureTerm:
    layer: str
    weight: float
    target_gram: np.ndarray  # channel correlation of the texture source


# ---------------------------------------------------------------------------
# Data terms
# ---------------------------------------------------------------------------

def loss_inversion(code: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None):
    """Masked relative squared distance to a target code.

    value = ||(code - target) . mask||^2 / ||target . mask||^2
    """
    if code.shape != target.shape:
        raise ValueError(f"code shape {code.shape} != target shape {target.shape}")
    if mask is None:
        diff = code - target
        denom = float(np.sum(target * target))
    else:
        if mask.shape != target.shape:
            raise ValueError("mask must have the target's shape")
        diff = (code - target) * mask
        denom = float(np.sum((target * mask) ** 2))
    if denom == 0.0:
        raise DegenerateTargetError("target code is zero under the mask")
    value = float(np.sum(diff * diff)) / denom
    grad = 2.0 * diff / denom if mask is None else 2.0 * diff * mask / denom
    return value, grad


def loss_dot(code: np.ndarray, target: np.ndarray, Z: float):
    """Negative scaled inner product; minimizing it drives the selected
    code components up. Any mask is pre-multiplied into the target."""
    if code.shape != target.shape:
        raise ValueError(f"code shape {code.shape} != target shape {target.shape}")
    if Z <= 0.0:
        raise ValueError("normalizer Z must be positive")
    value = -float(np.sum(code * target)) / Z
    return value, -target / Z


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

def reg_bounded_range(x: np.ndarray, alpha: float, B: float, B_plus: float):
    """Soft penalty on pixel magnitude, isotropic over channels.

    value = (1 / (H W B^alpha)) * sum_p ||x_p||^alpha  with ||x_p|| the
    per-pixel channel norm. Pixels at norm B contribute 1/(HW) each, so
    a typical image scores about 1. Also reports whether every pixel
    satisfies the hard bound ||x_p|| <= B_plus; enforcing that bound is
    the optimizer's projection, not this term's.
    """
    h, w, _ = x.shape
    r2 = np.sum(x * x, axis=2)
    scale = 1.0 / (h * w * B**alpha)
    value = scale * float(np.sum(r2 ** (alpha / 2.0)))
    with np.errstate(divide="ignore"):
        f = np.where(r2 > 0.0, r2 ** (alpha / 2.0 - 1.0), 0.0)
    grad = scale * alpha * x * f[:, :, None]
    feasible = bool(np.all(r2 <= B_plus * B_plus))
    return value, grad, feasible


def reg_tv(x: np.ndarray, beta: float, V: float):
    """Finite-difference total-variation prior with exponent beta.

    value = (1 / (H W V^beta)) * sum_{v,u,k} (du^2 + dv^2)^{beta/2}
    with forward differences du, dv taken as zero past the last row or
    column. beta=2 is a plain quadratic smoothness penalty; beta=1 is
    classic TV, smoothed near zero so the gradient stays defined.
    """
    h, w, c = x.shape
    du = np.zeros_like(x)
    dv = np.zeros_like(x)
    du[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    dv[:-1, :, :] = x[1:, :, :] - x[:-1, :, :]
    e = du * du + dv * dv
    scale = 1.0 / (h * w * V**beta)
    if beta == 2.0:
        value = scale * float(np.sum(e))
        wfac = np.full_like(e, 2.0)
    elif beta > 1.0:
        value = scale * float(np.sum(e ** (beta / 2.0)))
        with np.errstate(divide="ignore"):
            wfac = np.where(e > 0.0, beta * e ** (beta / 2.0 - 1.0), 0.0)
    else:  # beta == 1: epsilon-smoothed norm
        es = e + TV_SMOOTH_EPS
        value = scale * float(np.sum(np.sqrt(es)))
        wfac = 1.0 / np.sqrt(es)
    gu = wfac * du
    gv = wfac * dv
    grad = np.zeros_like(x)
    grad[:, :-1, :] -= gu[:, :-1, :]
    grad[:, 1:, :] += gu[:, :-1, :]
    grad[:-1, :, :] -= gv[:-1, :, :]
    grad[1:, :, :] += gv[:-1, :, :]
    return value, scale * grad


def jitter_apply(x: np.ndarray, tau: tuple[int, int], T: int) -> np.ndarray:
    """Translate-and-crop: output(v, u) = x(v + tau2, u + tau1), keeping
    a window of size (H - T + 1) x (W - T + 1). tau = (tau1, tau2) is
    the (horizontal, vertical) offset, each in {0, ..., T - 1}."""
    t1, t2 = tau
    if T < 1:
        raise ValueError("jitter range T must be at least 1")
    if not (0 <= t1 <= T - 1 and 0 <= t2 <= T - 1):
        raise ValueError(f"offset {tau} outside jitter range T={T}")
    h, w, _ = x.shape
    oh, ow = h - T + 1, w - T + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"image {h}x{w} too small for jitter range T={T}")
    return x[t2 : t2 + oh, t1 : t1 + ow, :]


def jitter_embed(grad: np.ndarray, full_shape, tau: tuple[int, int]) -> np.ndarray:
    """Adjoint of jitter_apply: place a cropped-window gradient back at
    its offset within a zero tensor of the full image shape."""
    t1, t2 = tau
    out = np.zeros(full_shape)
    out[t2 : t2 + grad.shape[0], t1 : t1 + grad.shape[1], :] = grad
    return out


def texture_correlation(features: np.ndarray) -> np.ndarray:
    """Channel correlation (Gram) matrix: G[c, c'] = sum_p F_pc F_pc'."""
    c = features.shape[2]
    f = features.reshape(-1, c)
    return f.T @ f


def reg_texture(network: Network, x: np.ndarray, terms: list[TextureTerm]):
    """Weighted Frobenius mismatch of channel correlations against the
    per-layer targets, with its gradient in image space. Standalone
    variant; the objective evaluation fuses the same math into one
    backward pass."""
    trace = None
    total = 0.0
    injections: dict[int, np.ndarray] = {}
    max_idx = -1
    for term in terms:
        idx = network.index_of(term.layer)
        max_idx = max(max_idx, idx)
    trace = network.forward_trace(x, upto=max_idx)
    for term in terms:
        idx = network.index_of(term.layer)
        feat = trace[idx + 1]
        c = feat.shape[2]
        delta = texture_correlation(feat) - term.target_gram
        total += term.weight * float(np.sum(delta * delta))
        up = 4.0 * term.weight * (feat.reshape(-1, c) @ delta).reshape(feat.shape)
        injections[idx] = injections.get(idx, 0.0) + up
    grad = network.backward(trace, injections)
    return total, grad


# ---------------------------------------------------------------------------
# Full objective
# ---------------------------------------------------------------------------

@dataclass
class Objective:
    """Everything needed to score one candidate image.

    ``layer`` names the representation layer whose output is compared
    against ``target``. For the inner-product loss, ``Z`` rescales the
    score into the balanced range (how Z is chosen differs per
    visualization; see the presets). ``loss_kind`` may be None for a
    priors-plus-texture-only objective.
    """

    network: Network
    layer: str | int | None
    target: np.ndarray | None
    loss_kind: str | None = "inversion"
    mask: np.ndarray | None = None
    Z: float = 1.0
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    texture_terms: tuple[TextureTerm, ...] = ()

    def __post_init__(self):
        if self.loss_kind not in (None, "inversion", "dot"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.loss_kind is not None and self.target is None:
            raise ValueError("a target code is required for the data term")
        if self.mask is not None and self.target is not None and self.mask.shape != self.target.shape:
            raise ValueError("mask shape must equal the target code shape")

    def layer_index(self) -> int | None:
        if self.layer is None:
            return None
        return self.network.index_of(self.layer) if isinstance(self.layer, str) else self.layer

    def draw_offset(self, rng: RandomSource) -> tuple[int, int]:
        T = self.reg.jitter_T
        if T <= 1:
            return (0, 0)
        return (rng.integer(T), rng.integer(T))

    def center_offset(self) -> tuple[int, int]:
        """Deterministic offset used when jitter is disabled mid-run."""
        T = self.reg.jitter_T
        if T <= 1:
            return (0, 0)
        return ((T - 1) // 2, (T - 1) // 2)


def eval_objective(x: np.ndarray, obj: Objective, tau: tuple[int, int] = (0, 0)):
    """Energy, its gradient with respect to x, and the per-term values.

    The data and texture terms see the jittered crop of x when the
    configuration enables jitter (the offset tau is drawn by the caller,
    fresh per iteration); the priors always see the full image.
    """
    reg = obj.reg
    components: dict[str, float] = {}

    if reg.pure_loss:
        range_val, range_grad, feasible = 0.0, np.zeros_like(x), True
        tv_val, tv_grad = 0.0, np.zeros_like(x)
    else:
        range_val, range_grad, feasible = reg_bounded_range(x, reg.alpha, reg.B, reg.B_plus)
        tv_val, tv_grad = reg_tv(x, reg.beta, reg.V)
    components["range"] = range_val
    components["tv"] = tv_val

    T = reg.jitter_T
    xj = jitter_apply(x, tau, T) if T > 1 else x

    loss_idx = obj.layer_index()
    injections: dict[int, np.ndarray] = {}
    needed = [i for i in [loss_idx] if i is not None]
    tex_idx = {}
    for term in obj.texture_terms:
        tex_idx[term.layer] = obj.network.index_of(term.layer)
        needed.append(tex_idx[term.layer])

    loss_val = 0.0
    tex_val = 0.0
    if needed:
        trace = obj.network.forward_trace(xj, upto=max(needed))
        if loss_idx is not None:
            code = trace[loss_idx + 1]
            if obj.loss_kind == "inversion":
                loss_val, code_grad = loss_inversion(code, obj.target, obj.mask)
            else:
                loss_val, code_grad = loss_dot(code, obj.target, obj.Z)
            weight = 1.0 if reg.pure_loss else reg.C
            injections[loss_idx] = weight * code_grad
        for term in obj.texture_terms:
            idx = tex_idx[term.layer]
            feat = trace[idx + 1]
            cch = feat.shape[2]
            delta = texture_correlation(feat) - term.target_gram
            tex_val += term.weight * float(np.sum(delta * delta))
            up = 4.0 * term.weight * (feat.reshape(-1, cch) @ delta).reshape(feat.shape)
            injections[idx] = injections.get(idx, 0.0) + up
        grad_xj = obj.network.backward(trace, injections)
        grad_data = jitter_embed(grad_xj, x.shape, tau) if T > 1 else grad_xj
    else:
        grad_data = np.zeros_like(x)

    components["loss"] = loss_val
    components["texture"] = tex_val
    components["feasible"] = feasible
    if reg.pure_loss:
        total = loss_val + tex_val
    else:
        total = range_val + tv_val + reg.C * loss_val + tex_val
    grad = range_grad + tv_grad + grad_data
    components["total"] = total
    return total, grad, components
