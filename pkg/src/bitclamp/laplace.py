"""Zero-mean Laplace model for latent weight tensors.

Binarization-aware training keeps a real-valued (latent) copy of every
weight tensor, and those latents empirically concentrate around zero with
heavy tails, which a zero-mean Laplace distribution La(0, b) captures well.
This module fits the scale b by maximum likelihood, Mean(|w|), and converts
tail probabilities to weight magnitudes (quantiles), both under the fitted
model and directly on the sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LaplaceFit:
    """Maximum-likelihood scale of a zero-mean Laplace fit.

    ``b_hat`` is exactly the arithmetic mean of the absolute sample values
    (no robustification); ``n`` is the sample count.
    """

    b_hat: float
    n: int


def fit(weights) -> LaplaceFit:
    """Fit La(0, b) to a weight sample; b_hat = Mean(|weights|).

    Raises ValueError on an empty sample, and on an all-zero sample
    (b_hat = 0 breaks every downstream closed form, callers must
    standardize first).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty weight set")
    b_hat = float(np.mean(np.abs(w)))
    if b_hat == 0.0:
        raise ValueError("degenerate scale: all weights are zero")
    return LaplaceFit(b_hat=b_hat, n=int(w.size))


def quantile_from_scale(b: float, tau: float) -> float:
    """Upper quantile Q(tau) = -b ln(2 - 2 tau) of La(0, b), tau in (0.5, 1).

    The symmetric lower quantile is Q(1 - tau) = -Q(tau). tau = 1 means
    "no clamp" and is represented by callers as an unbounded interval,
    never passed here.
    """
    if not 0.5 < tau < 1.0:
        raise ValueError(f"tau must be in (0.5, 1), got {tau}")
    if b <= 0.0:
        raise ValueError(f"scale must be positive, got {b}")
    return -b * math.log(2.0 - 2.0 * tau)


def quantile_analytic(laplace_fit: LaplaceFit, tau: float) -> float:
    """Model quantile Q(tau) under the fitted scale b_hat."""
    return quantile_from_scale(laplace_fit.b_hat, tau)


def quantile_empirical(weights, tau: float) -> float:
    """Order-statistic quantile of the concrete weight set.

    Linear interpolation between adjacent order statistics; the boundary
    tau = 1 is the sample maximum. Rejects the same degenerate inputs as
    :func:`fit`.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty weight set")
    if not np.any(w):
        raise ValueError("degenerate scale: all weights are zero")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return float(np.quantile(w, tau))
