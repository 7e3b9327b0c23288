"""Network container and the shipped reference architectures.

First and last weighted layers of every shipped architecture are full
precision; everything between runs on binarized weights and activations.
"""

from __future__ import annotations

import numpy as np

from ..bintensor import ConvGeometry
from .layers import (
    AvgPool2d,
    BatchNorm,
    BinaryActivation,
    BinaryConv2d,
    BinaryLinear,
    ChannelPad,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    QuantizationPolicy,
    ResidualUnit,
)

BINARY_KINDS = (BinaryConv2d, BinaryLinear)


class Network:
    """Sequential chain of layers plus the shared quantization policy."""

    def __init__(self, arch: str, layers: list[Layer],
                 policy: QuantizationPolicy, arch_kwargs: dict | None = None):
        self.arch = arch
        self.layers = layers
        self.policy = policy
        self.arch_kwargs = dict(arch_kwargs or {})

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def _walk(self):
        for layer in self.layers:
            if isinstance(layer, ResidualUnit):
                yield from layer.sublayers()
            else:
                yield layer

    def iter_params(self):
        for layer in self.layers:
            yield from layer.params()

    def binary_layers(self) -> list[tuple[str, Layer]]:
        return [(l.name, l) for l in self._walk() if isinstance(l, BINARY_KINDS)]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent arrays (parameters and batchnorm statistics)."""
        state: dict[str, np.ndarray] = {}
        for param in self.iter_params():
            state[param.name] = param.value
        for layer in self.layers:
            for name, buf in layer.buffers():
                state[name] = buf
        return state

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        state = self.state_arrays()
        missing = set(state) - set(arrays)
        extra = set(arrays) - set(state)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} "
                             f"unexpected={sorted(extra)}")
        for name, target in state.items():
            src = arrays[name]
            if src.shape != target.shape:
                raise ValueError(f"{name}: shape {src.shape} != {target.shape}")
            target[...] = src


def build_mlp_small(policy: QuantizationPolicy, seed: int, in_features: int = 784,
                    hidden: int = 256, classes: int = 10) -> Network:
    """784-256-10 MLP: both linears full precision, sign bottleneck between.

    With only two weight matrices, the first/last full-precision rule
    leaves no room for a binary weight layer here; binary weights are
    exercised by convnet-small.
    """
    rng = np.random.default_rng((seed, 17))
    layers = [
        Flatten("flatten"),
        Linear("fc1", in_features, hidden, rng, bias=False),
        BatchNorm("bn1", hidden),
        BinaryActivation("binact1"),
        Linear("fc2", hidden, classes, rng, bias=True),
    ]
    return Network("mlp-small", layers, policy,
                   dict(in_features=in_features, hidden=hidden, classes=classes))


def build_convnet_small(policy: QuantizationPolicy, seed: int,
                        in_channels: int = 1, image_hw: int = 28,
                        classes: int = 10) -> Network:
    """LeNet-like stack: float stem conv, two binary convs, binary + float fc."""
    rng = np.random.default_rng((seed, 17))
    hw4 = image_hw // 4
    layers = [
        Conv2d("conv1", ConvGeometry(in_channels, 16, 3, 3, 1, 1,
                                     image_hw, image_hw), rng),
        MaxPool2d("pool1"),
        BatchNorm("bn1", 16),
        BinaryActivation("binact1"),
        BinaryConv2d("conv2", ConvGeometry(16, 32, 3, 3, 1, 1,
                                           image_hw // 2, image_hw // 2),
                     policy, rng),
        MaxPool2d("pool2"),
        BatchNorm("bn2", 32),
        BinaryActivation("binact2"),
        BinaryConv2d("conv3", ConvGeometry(32, 32, 3, 3, 1, 1, hw4, hw4),
                     policy, rng),
        BatchNorm("bn3", 32),
        BinaryActivation("binact3"),
        Flatten("flatten"),
        BinaryLinear("fc1", 32 * hw4 * hw4, 128, policy, rng),
        BatchNorm("bn4", 128),
        BinaryActivation("binact4"),
        Linear("fc2", 128, classes, rng, bias=True),
    ]
    return Network("convnet-small", layers, policy,
                   dict(in_channels=in_channels, image_hw=image_hw, classes=classes))


def _binary_unit(name: str, in_ch: int, out_ch: int, stride: int, hw: int,
                 policy: QuantizationPolicy, rng) -> ResidualUnit:
    """One double-skip unit: sign -> binary conv -> BN, skipped by identity.

    Downsampling shortcuts stay parameter free: average pooling plus zero
    channel padding.
    """
    main: list[Layer] = [
        BinaryActivation(f"{name}.binact"),
        BinaryConv2d(f"{name}.conv",
                     ConvGeometry(in_ch, out_ch, 3, 3, stride, 1, hw, hw),
                     policy, rng),
        BatchNorm(f"{name}.bn", out_ch),
    ]
    shortcut: list[Layer] = []
    if stride != 1:
        shortcut.append(AvgPool2d(f"{name}.short_pool"))
    if out_ch != in_ch:
        shortcut.append(ChannelPad(f"{name}.short_pad", out_ch - in_ch))
    return ResidualUnit(name, main, shortcut)


def build_resnet20_toy(policy: QuantizationPolicy, seed: int,
                       in_channels: int = 3, image_hw: int = 32,
                       classes: int = 10, blocks_per_stage: int = 3) -> Network:
    """Toy residual net with double skip connections around each binary conv."""
    rng = np.random.default_rng((seed, 17))
    layers: list[Layer] = [
        Conv2d("stem", ConvGeometry(in_channels, 16, 3, 3, 1, 1,
                                    image_hw, image_hw), rng),
        BatchNorm("stem_bn", 16),
    ]
    hw, channels = image_hw, 16
    for stage, width in enumerate((16, 32, 64)):
        for block in range(blocks_per_stage):
            stride = 2 if stage > 0 and block == 0 else 1
            for half in (1, 2):
                name = f"s{stage}b{block}u{half}"
                unit_stride = stride if half == 1 else 1
                unit_in = channels if half == 1 else width
                layers.append(_binary_unit(name, unit_in, width, unit_stride,
                                           hw, policy, rng))
                if half == 1:
                    hw //= unit_stride
                    channels = width
    layers += [GlobalAvgPool("gap"), Linear("head", 64, classes, rng, bias=True)]
    return Network("resnet20-toy", layers, policy,
                   dict(in_channels=in_channels, image_hw=image_hw,
                        classes=classes, blocks_per_stage=blocks_per_stage))


ARCHITECTURES = {
    "mlp-small": build_mlp_small,
    "convnet-small": build_convnet_small,
    "resnet20-toy": build_resnet20_toy,
}


def build_network(arch: str, policy: QuantizationPolicy, seed: int,
                  **arch_kwargs) -> Network:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; "
                         f"choices: {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[arch](policy, seed, **arch_kwargs)
