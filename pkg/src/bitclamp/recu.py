"""Rectified clamp unit: quantile clamping, scaling factor, binarization.

The quantize-forward pipeline for one weight tensor is fixed:

    standardize -> fit scale -> quantile bounds -> clamp -> alpha -> sign

Clamping latent weights to [Q(1-tau), Q(tau)] moves tail outliers (the
weights whose signs almost never flip under gradient updates) toward the
distribution peak, where sign flips become likely again. tau = 1 disables
the clamp entirely and the pipeline degenerates to plain scaled
binarization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import laplace
from .bintensor import BitTensor, pack
from .standardize import StandardizeConfig, standardize

QUANTILE_MODES = ("analytic", "empirical")
ALPHA_MODES = ("empirical_mean", "closed_form")


@dataclass(frozen=True)
class ReCUConfig:
    """Clamp quantile and estimator choices; tau = 1 means no clamping."""

    tau: float = 0.85
    quantile_mode: str = "analytic"
    alpha_mode: str = "empirical_mean"

    def __post_init__(self):
        if not 0.5 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0.5, 1], got {self.tau}")
        if self.quantile_mode not in QUANTILE_MODES:
            raise ValueError(f"quantile_mode must be one of {QUANTILE_MODES}, "
                             f"got {self.quantile_mode!r}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}, "
                             f"got {self.alpha_mode!r}")


@dataclass(frozen=True)
class QuantizedLayer:
    """Bit-packed signs, the per-layer scaling factor, and the clamp bounds."""

    binary_weights: BitTensor
    alpha: float
    clamp_bounds: tuple[float, float]


def recu_clamp(weights: np.ndarray, q_tau: float) -> np.ndarray:
    """Clamp elementwise into the symmetric interval [-q_tau, q_tau]."""
    if not q_tau > 0.0:
        raise ValueError(f"q_tau must be positive, got {q_tau}")
    return np.clip(weights, -q_tau, q_tau)


def alpha_empirical(clamped: np.ndarray) -> float:
    """Sample scaling factor: mean magnitude of the (clamped) weights."""
    w = np.asarray(clamped)
    if w.size == 0:
        raise ValueError("empty weight set")
    return float(np.mean(np.abs(w)))


def alpha_closed_form(b: float, tau: float) -> float:
    """Model scaling factor b * (2 tau - 1) for clamped La(0, b) weights."""
    if b <= 0.0:
        raise ValueError(f"scale must be positive, got {b}")
    if not 0.5 < tau <= 1.0:
        raise ValueError(f"tau must be in (0.5, 1], got {tau}")
    return b * (2.0 * tau - 1.0)


def alpha_integral_form(b: float, tau: float) -> float:
    """Scaling factor before algebraic simplification.

    Interior expectation of |w| over the clamped density plus the two
    boundary atoms: b - (Q + b) exp(-Q/b) + 2 Q (1 - tau). Equals
    :func:`alpha_closed_form` identically; kept for cross-checking.
    """
    if b <= 0.0:
        raise ValueError(f"scale must be positive, got {b}")
    if not 0.5 < tau <= 1.0:
        raise ValueError(f"tau must be in (0.5, 1], got {tau}")
    if tau == 1.0:
        return b  # Q -> inf, both boundary terms vanish
    q = laplace.quantile_from_scale(b, tau)
    return b - (q + b) * math.exp(-q / b) + 2.0 * q * (1.0 - tau)


def binarize(weights: np.ndarray) -> BitTensor:
    """Elementwise sign with sign(0) = +1, packed one bit per element."""
    signs = np.where(np.asarray(weights) >= 0, 1, -1).astype(np.int8)
    return pack(signs)


def quantize_forward(weights: np.ndarray,
                     std_cfg: StandardizeConfig | None,
                     recu_cfg: ReCUConfig,
                     fitted: laplace.LaplaceFit | None = None) -> QuantizedLayer:
    """Run the full weight quantization pipeline on one tensor.

    std_cfg = None skips standardization (the no-clamp, no-standardize
    ablation); tau = 1 skips the quantile/clamp stages. ``fitted`` may
    supply a precomputed scale fit of the standardized weights, otherwise
    it is fitted here.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty weight set")
    if std_cfg is not None:
        w = standardize(w, std_cfg)

    tau = recu_cfg.tau
    if tau == 1.0:
        bounds = (-math.inf, math.inf)
        clamped = w
    elif recu_cfg.quantile_mode == "analytic":
        b_fit = fitted if fitted is not None else laplace.fit(w)
        q = laplace.quantile_analytic(b_fit, tau)
        bounds = (-q, q)
        clamped = recu_clamp(w, q)
    else:
        lo = laplace.quantile_empirical(w, 1.0 - tau)
        hi = laplace.quantile_empirical(w, tau)
        bounds = (lo, hi)
        clamped = np.clip(w, lo, hi)

    if recu_cfg.alpha_mode == "empirical_mean":
        alpha = alpha_empirical(clamped)
    else:
        b_fit = fitted if fitted is not None else laplace.fit(w)
        alpha = alpha_closed_form(b_fit.b_hat, tau)

    return QuantizedLayer(binary_weights=binarize(clamped), alpha=alpha,
                          clamp_bounds=bounds)
