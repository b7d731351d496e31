"""Natural pre-image reconstruction toolkit.

Recovers images from visual representations (HOG, dense SIFT, CNN
feature codes) by regularized gradient-based energy minimization, and
supports the companion visualizations: activation maximization,
caricature exaggeration, and texture generation from channel
correlation statistics.
"""

from .tensor import RandomSource, crop, fill_noise
from .network import Network
from .descriptors import DescriptorConfig, build_descriptor_net, reference_descriptor
from .energy import Objective, RegularizerConfig, eval_objective
from .optim import OptimSchedule, default_learning_rate, optimize
from .metrics import (
    classification_consistency,
    grad_hist_intersection,
    numeric_gradient,
    reconstruction_error,
)

__version__ = "0.1.0"

__all__ = [
    "RandomSource",
    "crop",
    "fill_noise",
    "Network",
    "DescriptorConfig",
    "build_descriptor_net",
    "reference_descriptor",
    "Objective",
    "RegularizerConfig",
    "eval_objective",
    "OptimSchedule",
    "default_learning_rate",
    "optimize",
    "classification_consistency",
    "grad_hist_intersection",
    "numeric_gradient",
    "reconstruction_error",
    "__version__",
]
