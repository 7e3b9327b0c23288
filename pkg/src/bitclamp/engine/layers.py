"""Layers with explicit forward/backward passes.

Binary layers keep full-precision latent weights and binarize them only in
the forward pass; the straight-through estimator routes the weight gradient
back to the latents. Activations flow between layers as float32 (exact +-1
after a BinaryActivation), and binary layers feed the bit-packed
XNOR/POPCOUNT kernels, whose pre-scale accumulators are exact integers.
"""

from __future__ import annotations

import math

import numpy as np

from ..bintensor import (
    ConvGeometry,
    _pack_bool_rows,
    binary_gemm,
    conv_counts_from_patches,
    conv_patch_matrix,
    conv_valid_lane_mask,
    pack,
    unpack,
)
from ..recu import ReCUConfig, QuantizedLayer, binarize, quantize_forward
from ..standardize import StandardizeConfig, weight_sigma

_SQRT2 = math.sqrt(2.0)


class Param:
    """One trainable array; ``decay`` marks weight-decay eligibility."""

    __slots__ = ("name", "value", "grad", "decay")

    def __init__(self, name: str, value: np.ndarray, decay: bool = True):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float32)
        self.grad = np.zeros_like(self.value)
        self.decay = decay


class QuantizationPolicy:
    """Mutable per-run quantization state shared by all binary layers.

    The trainer updates ``tau`` once per epoch; every binary layer reads
    the policy at forward time. ``std_cfg = None`` disables weight
    standardization (the no-clamp baseline pairs it with tau = 1).
    """

    def __init__(self, std_cfg: StandardizeConfig | None = None,
                 tau: float = 1.0, quantile_mode: str = "analytic",
                 alpha_mode: str = "empirical_mean", ste_scope: str = "full"):
        if ste_scope not in ("full", "sign_only"):
            raise ValueError(f"ste_scope must be 'full' or 'sign_only', got {ste_scope!r}")
        self.std_cfg = std_cfg
        self.tau = tau
        self.quantile_mode = quantile_mode
        self.alpha_mode = alpha_mode
        self.ste_scope = ste_scope

    def recu_cfg(self) -> ReCUConfig:
        return ReCUConfig(tau=self.tau, quantile_mode=self.quantile_mode,
                          alpha_mode=self.alpha_mode)

    def quantize(self, latent: np.ndarray) -> QuantizedLayer:
        return quantize_forward(latent, self.std_cfg, self.recu_cfg())

    def ste_multiplier(self, latent: np.ndarray,
                       quantized: QuantizedLayer) -> np.ndarray | None:
        """Latent-gradient multiplier; None means pure pass-through.

        sign_only scope propagates the (constant-per-forward)
        standardization scale and zeroes gradients outside the clamp
        interval, applying the straight-through identity to the sign
        stage alone.
        """
        if self.ste_scope == "full":
            return None
        scale = 1.0
        if self.std_cfg is not None:
            scale = _SQRT2 * self.std_cfg.b_star / weight_sigma(latent, self.std_cfg)
        lo, hi = quantized.clamp_bounds
        rescaled = latent.astype(np.float64) * scale
        inside = (rescaled >= lo) & (rescaled <= hi)
        return (scale * inside).astype(np.float32)


class Layer:
    """Forward/backward node; containers override the traversal hooks."""

    name: str

    def params(self) -> list[Param]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...],
             fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


class Linear(Layer):
    """Full-precision affine layer, weight shaped (in, out)."""

    def __init__(self, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True):
        self.name = name
        self.weight = Param(f"{name}.weight",
                            _kaiming(rng, (in_features, out_features), in_features))
        self.bias = Param(f"{name}.bias", np.zeros(out_features, np.float32),
                          decay=False) if bias else None
        self._x = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias else [])

    def forward(self, x, training):
        if training:
            self._x = x
        y = x @ self.weight.value
        return y + self.bias.value if self.bias else y

    def backward(self, dy):
        self.weight.grad = self._x.T @ dy
        if self.bias:
            self.bias.grad = dy.sum(axis=0)
        return dy @ self.weight.value.T


class BinaryLinear(Layer):
    """Linear layer over +-1 inputs with quantized latent weights."""

    def __init__(self, name: str, in_features: int, out_features: int,
                 policy: QuantizationPolicy, rng: np.random.Generator):
        self.name = name
        self.policy = policy
        self.weight = Param(f"{name}.weight",
                            _kaiming(rng, (in_features, out_features), in_features))
        self._cache = None

    def params(self):
        return [self.weight]

    def forward(self, x, training):
        q = self.policy.quantize(self.weight.value)
        y = binary_gemm(pack(x), q.binary_weights, q.alpha).astype(np.float32)
        if training:
            self._cache = (x, unpack(q.binary_weights).astype(np.float32),
                           q.alpha,
                           self.policy.ste_multiplier(self.weight.value, q))
        return y

    def backward(self, dy):
        x, w_sign, alpha, ste_mult = self._cache
        grad = np.float32(alpha) * (x.T @ dy)
        self.weight.grad = grad if ste_mult is None else grad * ste_mult
        return np.float32(alpha) * (dy @ w_sign.T)


class Conv2d(Layer):
    """Full-precision convolution via patch-matrix multiplication."""

    def __init__(self, name: str, geom: ConvGeometry, rng: np.random.Generator,
                 bias: bool = False):
        self.name = name
        self.geom = geom
        shape = (geom.out_channels, geom.in_channels, geom.kernel_h, geom.kernel_w)
        self.weight = Param(f"{name}.weight", _kaiming(rng, shape, geom.patch_len))
        self.bias = Param(f"{name}.bias", np.zeros(geom.out_channels, np.float32),
                          decay=False) if bias else None
        self._cache = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias else [])

    def forward(self, x, training):
        g = self.geom
        cols = conv_patch_matrix(x, g)
        y = cols @ self.weight.value.reshape(g.out_channels, -1).T
        if self.bias:
            y += self.bias.value
        if training:
            self._cache = (cols, x.shape[0])
        return y.reshape(x.shape[0], g.out_h, g.out_w,
                         g.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy):
        g = self.geom
        cols, n = self._cache
        dy_cols = dy.transpose(0, 2, 3, 1).reshape(-1, g.out_channels)
        self.weight.grad = (dy_cols.T @ cols).reshape(self.weight.value.shape)
        if self.bias:
            self.bias.grad = dy_cols.sum(axis=0)
        dcols = dy_cols @ self.weight.value.reshape(g.out_channels, -1)
        return _col2im(dcols, n, g)


class BinaryConv2d(Layer):
    """Convolution over +-1 inputs with quantized latent weights.

    Extracts float patches once per batch and feeds the same rows to the
    bit kernel (identical output to :func:`bitclamp.bintensor.binary_conv2d`,
    asserted by tests); in training the patches are kept for the backward
    pass. The padding validity mask depends only on the geometry and is
    cached per batch size.
    """

    def __init__(self, name: str, geom: ConvGeometry,
                 policy: QuantizationPolicy, rng: np.random.Generator):
        self.name = name
        self.geom = geom
        self.policy = policy
        shape = (geom.out_channels, geom.in_channels, geom.kernel_h, geom.kernel_w)
        self.weight = Param(f"{name}.weight", _kaiming(rng, shape, geom.patch_len))
        self._cache = None
        self._mask_cache = None

    def params(self):
        return [self.weight]

    def _mask_words(self, n: int):
        if self.geom.padding == 0:
            return None
        if self._mask_cache is None or self._mask_cache[0] != n:
            per_image = _pack_bool_rows(conv_valid_lane_mask(self.geom))
            self._mask_cache = (n, np.tile(per_image, (n, 1)))
        return self._mask_cache[1]

    def forward(self, x, training):
        g = self.geom
        q = self.policy.quantize(self.weight.value)
        w_rows = unpack(q.binary_weights).reshape(g.out_channels, -1)
        n = x.shape[0]
        cols = conv_patch_matrix(x, g)
        counts = conv_counts_from_patches(cols, w_rows, padded=g.padding > 0,
                                          mask_words=self._mask_words(n))
        y = (q.alpha * counts).astype(np.float32)
        if training:
            self._cache = (cols, w_rows.astype(np.float32), q.alpha, n,
                           self.policy.ste_multiplier(self.weight.value, q))
        return y.reshape(n, g.out_h, g.out_w, g.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy):
        g = self.geom
        cols, w_rows, alpha, n, ste_mult = self._cache
        dy_cols = dy.transpose(0, 2, 3, 1).reshape(-1, g.out_channels)
        grad = (np.float32(alpha) * (dy_cols.T @ cols)).reshape(self.weight.value.shape)
        self.weight.grad = grad if ste_mult is None else grad * ste_mult
        dcols = (np.float32(alpha) * dy_cols) @ w_rows
        return _col2im(dcols, n, g)


def _col2im(dcols: np.ndarray, n: int, g: ConvGeometry) -> np.ndarray:
    """Scatter patch-row gradients back onto the (padded) input grid."""
    h_p = g.input_h + 2 * g.padding
    w_p = g.input_w + 2 * g.padding
    grid = dcols.reshape(n, g.out_h, g.out_w, g.in_channels, g.kernel_h,
                         g.kernel_w).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros((n, g.in_channels, h_p, w_p), dtype=np.float32)
    s = g.stride
    for di in range(g.kernel_h):
        for dj in range(g.kernel_w):
            dx[:, :, di : di + g.out_h * s : s,
               dj : dj + g.out_w * s : s] += grid[:, :, di, dj]
    p = g.padding
    return dx[:, :, p : p + g.input_h, p : p + g.input_w] if p else dx


class BatchNorm(Layer):
    """Batch normalization over channels (4-D) or features (2-D).

    Running statistics use momentum 0.1 with the biased variance
    estimator. Scale/shift are excluded from weight decay.
    """

    def __init__(self, name: str, n_features: int, eps: float = 1e-5,
                 momentum: float = 0.1):
        self.name = name
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(f"{name}.gamma", np.ones(n_features, np.float32),
                           decay=False)
        self.beta = Param(f"{name}.beta", np.zeros(n_features, np.float32),
                          decay=False)
        self.running_mean = np.zeros(n_features, np.float32)
        self.running_var = np.ones(n_features, np.float32)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    @staticmethod
    def _axes(x):
        return (0, 2, 3) if x.ndim == 4 else (0,)

    def _shape(self, x):
        return (1, -1, 1, 1) if x.ndim == 4 else (1, -1)

    def forward(self, x, training):
        axes, shape = self._axes(x), self._shape(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + np.float32(self.eps))
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        if training:
            self._cache = (xhat, inv_std, x.shape)
        return self.gamma.value.reshape(shape) * xhat + self.beta.value.reshape(shape)

    def backward(self, dy):
        xhat, inv_std, x_shape = self._cache
        axes, shape = self._axes(dy), self._shape(dy)
        m = np.float32(np.prod([x_shape[a] for a in axes]))
        dbeta = dy.sum(axis=axes)
        dgamma = (dy * xhat).sum(axis=axes)
        self.beta.grad = dbeta
        self.gamma.grad = dgamma
        coeff = (self.gamma.value * inv_std / m).reshape(shape)
        return coeff * (m * dy - dbeta.reshape(shape) - xhat * dgamma.reshape(shape))


class BinaryActivation(Layer):
    """Sign activation (+1 at zero) with a piecewise polynomial gradient.

    The backward multiplier is 2 + 2a on [-1, 0), 2 - 2a on [0, 1) and 0
    elsewhere, the derivative of a piecewise-quadratic sign surrogate.
    """

    def __init__(self, name: str):
        self.name = name
        self._a = None

    def forward(self, x, training):
        if training:
            self._a = x
        return np.where(x >= 0, np.float32(1.0), np.float32(-1.0))

    def backward(self, dy):
        # 2 + 2a on [-1, 0) and 2 - 2a on [0, 1) are both 2 - 2|a|
        mult = np.maximum(np.float32(0.0),
                          np.float32(2.0) - np.float32(2.0) * np.abs(self._a))
        return dy * mult


class MaxPool2d(Layer):
    """2x2/stride-2 max pooling; input spatial dims must be even."""

    def __init__(self, name: str):
        self.name = name
        self._cache = None

    def forward(self, x, training):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        tiles = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = tiles.reshape(n, c, h // 2, w // 2, 4)
        idx = flat.argmax(axis=-1)
        if training:
            self._cache = (idx, x.shape)
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        idx, (n, c, h, w) = self._cache
        flat = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
        return (flat.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w))


class AvgPool2d(Layer):
    """2x2/stride-2 average pooling (parameter-free downsample path)."""

    def __init__(self, name: str):
        self.name = name

    def forward(self, x, training):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, dy):
        return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * np.float32(0.25)


class GlobalAvgPool(Layer):
    """Spatial mean: (N, C, H, W) -> (N, C)."""

    def __init__(self, name: str):
        self.name = name
        self._hw = None

    def forward(self, x, training):
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        h, w = self._hw
        scale = np.float32(1.0 / (h * w))
        return np.broadcast_to((dy * scale)[:, :, None, None],
                               dy.shape + (h, w)).copy()


class ChannelPad(Layer):
    """Append zero channels (shortcut widening without parameters)."""

    def __init__(self, name: str, extra: int):
        self.name = name
        self.extra = extra

    def forward(self, x, training):
        pad = np.zeros((x.shape[0], self.extra) + x.shape[2:], dtype=x.dtype)
        return np.concatenate([x, pad], axis=1)

    def backward(self, dy):
        return dy[:, : dy.shape[1] - self.extra]


class Flatten(Layer):
    def __init__(self, name: str):
        self.name = name
        self._shape = None

    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class ResidualUnit(Layer):
    """y = main(x) + shortcut(x); both paths are layer chains."""

    def __init__(self, name: str, main: list[Layer], shortcut: list[Layer]):
        self.name = name
        self.main = main
        self.shortcut = shortcut

    def sublayers(self):
        return list(self.main) + list(self.shortcut)

    def params(self):
        return [p for layer in self.sublayers() for p in layer.params()]

    def buffers(self):
        return [b for layer in self.sublayers() for b in layer.buffers()]

    def forward(self, x, training):
        main = x
        for layer in self.main:
            main = layer.forward(main, training)
        short = x
        for layer in self.shortcut:
            short = layer.forward(short, training)
        return main + short

    def backward(self, dy):
        dmain = dy
        for layer in reversed(self.main):
            dmain = layer.backward(dmain)
        dshort = dy
        for layer in reversed(self.shortcut):
            dshort = layer.backward(dshort)
        return dmain + dshort


def binarize_latent(layer: Layer):
    """Bit-packed signs of a binary layer's current latent weights."""
    return binarize(layer.weight.value)
