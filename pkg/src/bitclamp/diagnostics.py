"""Dead-weight instrumentation: sign-flip rates, tail mass, histograms.

Latent weights far out in the distribution tails almost never change sign
under gradient updates, while weights near the peak flip easily. These
helpers measure that directly: overall and magnitude-bucketed sign-flip
rates between two binarization snapshots, and the fraction of mass outside
the clamp bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bintensor import BitTensor, unpack


@dataclass(frozen=True)
class LayerDiagnostics:
    """One layer's per-epoch instrumentation record."""

    epoch: int
    layer_id: str
    sign_flip_rate: float
    tail_fraction: float
    histogram: np.ndarray = field(repr=False)
    bucket_flip_rates: np.ndarray = field(repr=False)


def sign_flip_rate(prev_signs: BitTensor, cur_signs: BitTensor) -> float:
    """Fraction of elements whose sign differs between the two snapshots."""
    if prev_signs.shape != cur_signs.shape:
        raise ValueError(f"shape mismatch: {prev_signs.shape} vs {cur_signs.shape}")
    flipped = np.bitwise_count(
        np.bitwise_xor(prev_signs.words, cur_signs.words)).sum()
    return float(flipped) / prev_signs.size


def tail_fraction(weights: np.ndarray, q_tau: float) -> float:
    """Fraction of weights with |w| strictly greater than q_tau."""
    if not q_tau > 0.0:
        raise ValueError(f"q_tau must be positive, got {q_tau}")
    w = np.asarray(weights)
    return float(np.mean(np.abs(w) > q_tau))


def quantile_bucket_edges(weights: np.ndarray, n_buckets: int = 10) -> np.ndarray:
    """Quantile-spaced |w| edges (n_buckets + 1 values, 0% .. 100%).

    Quantile spacing keeps bucket counts balanced under heavy-tailed
    weight distributions.
    """
    mags = np.abs(np.asarray(weights, dtype=np.float64)).ravel()
    return np.quantile(mags, np.linspace(0.0, 1.0, n_buckets + 1))


def bucketed_flip_rates(prev_weights: np.ndarray, prev_signs: BitTensor,
                        cur_signs: BitTensor,
                        bucket_edges: np.ndarray) -> np.ndarray:
    """Sign-flip rate conditioned on the |previous weight| bucket.

    bucket_edges is the full sorted edge list (len = buckets + 1); values
    at or below the first edge land in bucket 0, at or above the last in
    the final bucket. Empty buckets report NaN, never 0.
    """
    if prev_signs.shape != cur_signs.shape:
        raise ValueError(f"shape mismatch: {prev_signs.shape} vs {cur_signs.shape}")
    mags = np.abs(np.asarray(prev_weights, dtype=np.float64)).ravel()
    if mags.size != prev_signs.size:
        raise ValueError(f"weights size {mags.size} does not match "
                         f"signs size {prev_signs.size}")
    edges = np.asarray(bucket_edges, dtype=np.float64)
    n_buckets = edges.size - 1
    idx = np.clip(np.searchsorted(edges, mags, side="right") - 1, 0, n_buckets - 1)
    flips = (unpack(prev_signs) != unpack(cur_signs)).ravel()
    rates = np.full(n_buckets, np.nan)
    for bucket in range(n_buckets):
        members = idx == bucket
        count = int(members.sum())
        if count:
            rates[bucket] = float(flips[members].sum()) / count
    return rates
