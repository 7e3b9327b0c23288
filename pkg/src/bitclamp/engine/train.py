"""Training loop: momentum SGD, cosine learning rate, scheduled clamping.

Deterministic given (config, seed): shuffling and augmentation draw from
generators seeded by (seed, epoch), so a resumed run replays the exact
byte stream of an uninterrupted one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import diagnostics as diag
from ..datasets import LabeledDataset, random_crop_flip
from ..recu import binarize
from ..scheduler import TauSchedule, tau_at
from ..standardize import StandardizeConfig, standardize
from .layers import QuantizationPolicy
from .net import Network

HISTOGRAM_BINS = 20
N_FLIP_BUCKETS = 10


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "convnet-small"
    epochs: int = 20
    batch_size: int = 100
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    tau_start: float = 0.85
    tau_end: float = 0.99
    constant_tau: float | None = None
    quantile_mode: str = "analytic"
    alpha_mode: str = "empirical_mean"
    b_star: float | None = 2.0  # None disables standardization
    sigma_about: str = "mean"
    ste_scope: str = "full"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError(f"epochs must be >= 0 and batch_size positive, "
                             f"got {self.epochs}, {self.batch_size}")
        for name in ("lr0", "momentum", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def policy_from_config(cfg: TrainConfig) -> QuantizationPolicy:
    std_cfg = None if cfg.b_star is None else StandardizeConfig(
        b_star=cfg.b_star, sigma_about=cfg.sigma_about)
    tau0 = cfg.constant_tau if cfg.constant_tau is not None else cfg.tau_start
    return QuantizationPolicy(std_cfg=std_cfg, tau=tau0,
                              quantile_mode=cfg.quantile_mode,
                              alpha_mode=cfg.alpha_mode,
                              ste_scope=cfg.ste_scope)


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def scheduled_tau(cfg: TrainConfig, epoch: int) -> float:
    """Per-epoch quantile: fixed value, or the exponential schedule.

    Epoch i of an E-epoch run maps onto schedule position i/(E-1), so the
    first epoch trains at tau_start and the last exactly at tau_end.
    """
    if cfg.constant_tau is not None:
        return cfg.constant_tau
    if cfg.epochs <= 1:
        return cfg.tau_start
    schedule = TauSchedule(cfg.tau_start, cfg.tau_end, cfg.epochs - 1)
    return tau_at(schedule, epoch)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Softmax cross-entropy: (mean loss, dlogits, predictions)."""
    z = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(z)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = labels.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-30)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, (dlogits / np.float32(n)).astype(np.float32), probs.argmax(axis=1)


def sgd_step(net: Network, lr: float, cfg: TrainConfig,
             buffers: dict[str, np.ndarray]) -> None:
    """Momentum update with decoupled-from-batchnorm weight decay."""
    for param in net.iter_params():
        grad = param.grad
        if cfg.weight_decay and param.decay:
            grad = grad + np.float32(cfg.weight_decay) * param.value
        buf = buffers.get(param.name)
        if buf is None:
            buf = np.zeros_like(param.value)
            buffers[param.name] = buf
        buf *= np.float32(cfg.momentum)
        buf += grad
        param.value -= np.float32(lr) * buf


def evaluate(net: Network, ds: LabeledDataset, batch_size: int = 256) -> float:
    correct = 0
    for i0 in range(0, len(ds), batch_size):
        logits = net.forward(ds.images[i0 : i0 + batch_size], training=False)
        correct += int((logits.argmax(axis=1) == ds.labels[i0 : i0 + batch_size]).sum())
    return correct / len(ds)


@dataclass
class MetricsRow:
    epoch: int
    lr: float
    tau: float
    train_loss: float
    train_acc: float
    val_acc: float
    mean_sign_flip_rate: float


@dataclass
class TrainResult:
    net: Network
    metrics: list[MetricsRow]
    diagnostics: list[diag.LayerDiagnostics]
    buffers: dict[str, np.ndarray]
    epoch_next: int


def _layer_diagnostics(net: Network, epoch: int, prev_state) -> list[diag.LayerDiagnostics]:
    policy = net.policy
    rows = []
    for (name, layer), (prev_latent, prev_signs) in zip(net.binary_layers(),
                                                        prev_state):
        latent = layer.weight.value
        cur_signs = binarize(latent)
        flip = diag.sign_flip_rate(prev_signs, cur_signs)
        quantized = policy.quantize(latent)
        pre_clamp = latent if policy.std_cfg is None else standardize(
            latent.astype(np.float64), policy.std_cfg)
        tail = diag.tail_fraction(pre_clamp, quantized.clamp_bounds[1])
        edges = diag.quantile_bucket_edges(prev_latent, N_FLIP_BUCKETS)
        buckets = diag.bucketed_flip_rates(prev_latent, prev_signs, cur_signs, edges)
        span = float(np.abs(latent).max()) or 1.0
        hist, _ = np.histogram(latent, bins=HISTOGRAM_BINS, range=(-span, span))
        rows.append(diag.LayerDiagnostics(epoch=epoch, layer_id=name,
                                          sign_flip_rate=flip, tail_fraction=tail,
                                          histogram=hist, bucket_flip_rates=buckets))
    return rows


def train(net: Network, train_ds: LabeledDataset, val_ds: LabeledDataset,
          cfg: TrainConfig, start_epoch: int = 0,
          buffers: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Run epochs [start_epoch, cfg.epochs) and collect metrics/diagnostics."""
    if buffers is None:
        buffers = {}
    metrics: list[MetricsRow] = []
    diag_rows: list[diag.LayerDiagnostics] = []

    for epoch in range(start_epoch, cfg.epochs):
        tau = scheduled_tau(cfg, epoch)
        net.policy.tau = tau
        lr = cosine_lr(cfg.lr0, epoch, cfg.epochs)
        prev_state = [(layer.weight.value.copy(), binarize(layer.weight.value))
                      for _, layer in net.binary_layers()]

        order = np.random.default_rng((cfg.seed, 1000 + epoch)).permutation(len(train_ds))
        aug_rng = np.random.default_rng((cfg.seed, 5000 + epoch))
        loss_sum, correct, seen = 0.0, 0, 0
        for i0 in range(0, len(order), cfg.batch_size):
            idx = order[i0 : i0 + cfg.batch_size]
            x = train_ds.images[idx]
            y = train_ds.labels[idx]
            if train_ds.augment:
                x = random_crop_flip(x, aug_rng)
            logits = net.forward(x, training=True)
            loss, dlogits, preds = cross_entropy(logits, y)
            net.backward(dlogits)
            sgd_step(net, lr, cfg, buffers)
            loss_sum += loss * len(idx)
            correct += int((preds == y).sum())
            seen += len(idx)

        epoch_diag = _layer_diagnostics(net, epoch, prev_state)
        diag_rows.extend(epoch_diag)
        mean_flip = (float(np.mean([d.sign_flip_rate for d in epoch_diag]))
                     if epoch_diag else math.nan)
        val_acc = evaluate(net, val_ds, cfg.batch_size) if len(val_ds) else math.nan
        metrics.append(MetricsRow(epoch=epoch, lr=lr, tau=tau,
                                  train_loss=loss_sum / seen,
                                  train_acc=correct / seen,
                                  val_acc=val_acc,
                                  mean_sign_flip_rate=mean_flip))
    return TrainResult(net=net, metrics=metrics, diagnostics=diag_rows,
                       buffers=buffers, epoch_next=cfg.epochs)
