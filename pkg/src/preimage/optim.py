"""Projected adaptive gradient descent over pixels.

One step of the update, everything componentwise:

    G   <- rho * G + g^2
    eta <- 1 / (1/eta0 + sqrt(G))
    mu  <- rho * mu - eta * g
    x   <- clip(x + mu, -B_plus, B_plus)

The accumulator G decays with the same factor as the momentum, so the
per-component learning rate adapts to a recent window of gradient
magnitudes rather than the full history. The projection keeps every
component inside the hard pixel bound after every step.

A run is a fixed number of iterations (no early stopping, so energy
traces are comparable across runs), optionally followed by a shorter
fine-tuning phase with jitter disabled and the base learning rate cut
tenfold. Fine-tuning continues from the accumulated state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .energy import Objective, eval_objective
from .tensor import RandomSource, fill_noise

__all__ = [
    "OptimState",
    "OptimSchedule",
    "RunReport",
    "NonFiniteEnergyError",
    "default_learning_rate",
    "adagrad_step",
    "init_preimage",
    "optimize",
]


class NonFiniteEnergyError(RuntimeError):
    """The energy or one of its terms left the finite range."""

    def __init__(self, term: str, iteration: int):
        super().__init__(f"non-finite value in term {term!r} at iteration {iteration}")
        self.term = term
        self.iteration = iteration


def default_learning_rate(B: float, alpha: float) -> float:
    """Heuristic initial rate: one hundredth of the step that would null
    a pixel of magnitude B against the range prior, B^2/alpha."""
    if B <= 0 or alpha <= 0:
        raise ValueError("B and alpha must be positive")
    return 0.01 * B * B / alpha


@dataclass
class OptimState:
    G: np.ndarray            # decayed accumulated squared gradient
    mu: np.ndarray           # momentum
    eta0: float              # base learning rate
    B_plus: float            # projection bound
    rho: float = 0.9
    t: int = 0

    @classmethod
    def fresh(cls, shape, eta0: float, B_plus: float, rho: float = 0.9) -> "OptimState":
        return cls(G=np.zeros(shape), mu=np.zeros(shape), eta0=eta0, B_plus=B_plus, rho=rho)


def adagrad_step(x: np.ndarray, grad: np.ndarray, state: OptimState) -> np.ndarray:
    """Advance one iteration in place on the state; returns the next x."""
    if grad.shape != x.shape:
        raise ValueError("gradient and image shapes differ")
    state.G = state.rho * state.G + grad * grad
    eta = 1.0 / (1.0 / state.eta0 + np.sqrt(state.G))
    state.mu = state.rho * state.mu - eta * grad
    state.t += 1
    return np.clip(x + state.mu, -state.B_plus, state.B_plus)


@dataclass(frozen=True)
class OptimSchedule:
    iters: int = 300
    finetune_iters: int = 50
    finetune_lr_drop: float = 10.0
    rho: float = 0.9
    eta0: float | None = None  # None: derive from B and alpha

    def total_iters(self) -> int:
        return self.iters + self.finetune_iters


@dataclass
class RunReport:
    """Record of one optimization run, sufficient to replay it."""

    seed: int | None
    config: dict
    energy_trace: list[float] = field(default_factory=list)
    component_trace: list[dict] = field(default_factory=list)
    final_components: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    duration_s: float = 0.0
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "config": self.config,
            "energy_trace": self.energy_trace,
            "component_trace": self.component_trace,
            "final_components": self.final_components,
            "metrics": self.metrics,
            "duration_s": self.duration_s,
            "outputs": self.outputs,
        }


def init_preimage(mode: str, x0: np.ndarray | None, shape, B: float,
                  rng: RandomSource) -> np.ndarray:
    """Starting point: i.i.d. noise on [-B, B], or a copy of a reference."""
    if mode == "noise":
        h, w, c = shape
        return fill_noise(h, w, c, B, rng)
    if mode == "reference":
        if x0 is None:
            raise ValueError("reference initialization requires an image")
        return np.array(x0, dtype=np.float64, copy=True)
    raise ValueError(f"unknown initialization mode {mode!r}")


def _check_finite(components: dict, energy: float, grad: np.ndarray, iteration: int):
    for term in ("range", "tv", "loss", "texture"):
        v = components.get(term, 0.0)
        if isinstance(v, float) and not np.isfinite(v):
            raise NonFiniteEnergyError(term, iteration)
    if not np.isfinite(energy):
        raise NonFiniteEnergyError("total", iteration)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteEnergyError("gradient", iteration)


def optimize(objective: Objective, init: np.ndarray, schedule: OptimSchedule,
             rng: RandomSource, seed: int | None = None) -> tuple[np.ndarray, RunReport]:
    """Run the full iteration schedule and return the final image plus a
    report with the complete energy trace.

    Jitter offsets are drawn fresh from ``rng`` each main iteration;
    the fine-tuning phase pins the offset to the window center and
    divides the base learning rate by the configured factor.
    """
    reg = objective.reg
    eta0 = schedule.eta0 if schedule.eta0 is not None else default_learning_rate(reg.B, reg.alpha)
    x = np.array(init, dtype=np.float64, copy=True)
    state = OptimState.fresh(x.shape, eta0, reg.B_plus, schedule.rho)
    report = RunReport(seed=seed, config={})
    started = time.perf_counter()

    def one_phase(n_iters: int, jittered: bool):
        nonlocal x
        for _ in range(n_iters):
            tau = objective.draw_offset(rng) if jittered else objective.center_offset()
            energy, grad, comps = eval_objective(x, objective, tau)
            _check_finite(comps, energy, grad, state.t + 1)
            report.energy_trace.append(energy)
            report.component_trace.append(
                {k: comps[k] for k in ("range", "tv", "loss", "texture")}
            )
            x = adagrad_step(x, grad, state)

    one_phase(schedule.iters, jittered=True)
    if schedule.finetune_iters > 0:
        state.eta0 = eta0 / schedule.finetune_lr_drop
        one_phase(schedule.finetune_iters, jittered=False)

    _, _, final = eval_objective(x, objective, objective.center_offset())
    report.final_components = {k: final[k] for k in ("total", "range", "tv", "loss", "texture", "feasible")}
    report.duration_s = time.perf_counter() - started
    return x, report
