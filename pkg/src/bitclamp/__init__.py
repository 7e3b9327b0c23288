"""bitclamp: binary neural network toolkit built around quantile clamping.

Latent weights are modeled as zero-mean Laplace, standardized to a chosen
scale, clamped to symmetric model quantiles, and binarized with a
per-layer scaling factor; inference runs on bit-packed XNOR/POPCOUNT
kernels and training uses straight-through gradients with an exponential
clamp-quantile schedule. Closed-form quantization-error and entropy
analytics ship with independent quadrature and Monte Carlo oracles.
"""

from . import analysis, bintensor, datasets, diagnostics, laplace, recu, scheduler, standardize

__version__ = "0.1.0"

__all__ = [
    "analysis", "bintensor", "datasets", "diagnostics", "laplace", "recu",
    "scheduler", "standardize", "__version__",
]
