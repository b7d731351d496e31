"""A network is an ordered list of named layers plus input metadata.

Forward evaluation subtracts the input mean exactly once, then applies
the layers in order. Backward walks the stored forward trace and can
accept gradient injections at several layers at once, which is how the
texture term and the data term combine into a single pass.
"""

from __future__ import annotations

import numpy as np

from .layers import Layer

__all__ = ["Network"]


class Network:
    def __init__(self, layers: list[Layer], input_shape=None, mean=None, manifest=None):
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self.layers = list(layers)
        self.input_shape = None if input_shape is None else tuple(input_shape)
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.manifest = manifest

    def __len__(self):
        return len(self.layers)

    @property
    def layer_names(self) -> list[str]:
        return [l.name for l in self.layers]

    def index_of(self, name: str) -> int:
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(f"no layer named {name!r}; valid layers: {', '.join(self.layer_names)}")

    def without_mean(self) -> "Network":
        """Same layers, no input centering. Used when the caller already
        works in mean-subtracted coordinates."""
        return Network(self.layers, input_shape=self.input_shape, mean=None,
                       manifest=self.manifest)

    def _centered(self, x: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return x
        if self.mean.ndim == 1:
            if x.shape[2] != self.mean.shape[0]:
                raise ValueError(
                    f"input has {x.shape[2]} channels, mean has {self.mean.shape[0]}"
                )
            return x - self.mean
        if self.mean.shape != x.shape:
            raise ValueError(f"mean image shape {self.mean.shape} != input shape {x.shape}")
        return x - self.mean

    def forward_trace(self, x: np.ndarray, upto: int | None = None) -> list[np.ndarray]:
        """All intermediate activations: trace[0] is the centered input,
        trace[i+1] the output of layer i. ``upto`` stops after that layer."""
        last = len(self.layers) - 1 if upto is None else upto
        a = self._centered(np.asarray(x, dtype=np.float64))
        trace = [a]
        for layer in self.layers[: last + 1]:
            a = layer.forward(a)
            trace.append(a)
        return trace

    def forward(self, x: np.ndarray, layer: int | str | None = None) -> np.ndarray:
        idx = self.index_of(layer) if isinstance(layer, str) else layer
        return self.forward_trace(x, upto=idx)[-1]

    def backward(self, trace: list[np.ndarray], injections: dict[int, np.ndarray]) -> np.ndarray:
        """Vector-Jacobian product back to the input.

        ``injections`` maps layer index -> cotangent of that layer's
        output; contributions are summed as the backward pass reaches
        each injection point. The trace must cover the deepest injected
        layer.
        """
        if not injections:
            raise ValueError("no gradient injections given")
        top = max(injections)
        if top + 1 >= len(trace):
            raise ValueError("forward trace does not reach the deepest injection")
        grad = np.array(injections[top], dtype=np.float64, copy=True)
        for i in range(top, -1, -1):
            grad = self.layers[i].backward(trace[i], grad)
            if i - 1 in injections:
                grad = grad + injections[i - 1]
        return grad

    def grad_input(self, x: np.ndarray, layer: int | str, upstream: np.ndarray) -> np.ndarray:
        """Gradient of <upstream, layer output> with respect to x."""
        idx = self.index_of(layer) if isinstance(layer, str) else layer
        trace = self.forward_trace(x, upto=idx)
        return self.backward(trace, {idx: upstream})
