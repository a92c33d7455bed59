"""Multi-view contrastive losses, sphere optimisation and metrics on synthetic embeddings."""

__version__ = "0.1.0"

from .embedding import (
    SamplerConfig,
    ViewBatch,
    normalize,
    read_batch,
    sample_multiview,
    sample_uniform_sphere,
    write_batch,
)
from .errors import MVCLError
from .kernels import Kernel, kappa, kappa_prime, kernel_value_and_grad
from .losses import LOSS_NAMES, LossBreakdown, LossSpec, evaluate, term_counts, value_and_gradient
from .metrics import MetricReport, alignment_metric, metric_report, rank_metrics, uniformity_moment, uniformity_wi
from .optim import OptConfig, optimize, tangent_project

__all__ = [
    "LOSS_NAMES",
    "Kernel",
    "LossBreakdown",
    "LossSpec",
    "MVCLError",
    "MetricReport",
    "OptConfig",
    "SamplerConfig",
    "ViewBatch",
    "alignment_metric",
    "evaluate",
    "kappa",
    "kappa_prime",
    "kernel_value_and_grad",
    "metric_report",
    "normalize",
    "optimize",
    "rank_metrics",
    "read_batch",
    "sample_multiview",
    "sample_uniform_sphere",
    "tangent_project",
    "term_counts",
    "uniformity_moment",
    "uniformity_wi",
    "value_and_gradient",
    "write_batch",
]
