"""ARGAN networks: shadow attention detector, shadow removal encoder,
the N-step recurrent generator, and the discriminator."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .layers import (LEAKY_SLOPE, BatchNorm2d, Conv2d, ConvLSTMCell, ConvLstmState, Deconv2d,
                     Linear, Module, SpectralConv2d)
from .tensor import ShapeError, Tensor, clamp, concat, leaky_relu, mul, add, reshape, sigmoid


class ConvBlock(Module):
    """Conv (or deconv) followed by batch norm and leaky ReLU."""

    def __init__(self, conv: Module, out_ch: int):
        super().__init__()
        self.conv = conv
        self.bn = BatchNorm2d(out_ch)

    def __call__(self, x: Tensor) -> Tensor:
        return leaky_relu(self.bn(self.conv(x)), LEAKY_SLOPE)


class DetectorNet(Module):
    """Ten 3x3 Conv+BN+LReLU blocks, a ConvLSTM cell and a sigmoid head.

    Input is the current image concatenated with the previous attention map.
    """

    def __init__(self, width: int = 64, n_convs: int = 10, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.width = width
        self.blocks = [ConvBlock(Conv2d(4 if i == 0 else width, width, 3, rng=rng), width)
                       for i in range(n_convs)]
        self.lstm = ConvLSTMCell(width, width, rng=rng)
        self.head = Conv2d(width, 1, 3, rng=rng)

    def initial_state(self, batch: int, h: int, w: int, dtype=np.float32) -> ConvLstmState:
        return self.lstm.initial_state(batch, h, w, dtype)

    def __call__(self, img: Tensor, prior: Tensor, state: ConvLstmState) -> tuple[Tensor, ConvLstmState]:
        return detector_forward(img, prior, state, self)


def detector_forward(img: Tensor, prior_attention: Tensor, state: ConvLstmState,
                     net: DetectorNet) -> tuple[Tensor, ConvLstmState]:
    if img.shape[2:] != prior_attention.shape[2:] or img.shape[2:] != state.h.shape[2:]:
        raise ShapeError(f"detector: spatial sizes differ: image {img.shape}, "
                         f"prior {prior_attention.shape}, state {state.h.shape}")
    x = concat([img, prior_attention], axis=1)
    for block in net.blocks:
        x = block(x)
    h, state = net.lstm(x, state)
    return sigmoid(net.head(h)), state


def channel_schedule(depth: int, base: int = 64, cap: int = 512) -> list[int]:
    """Encoder output channels ``min(base * 2**k, cap)`` for k < depth."""
    return [min(base * 2 ** k, cap) for k in range(depth)]


class RemoverNet(Module):
    """U-Net style encoder/decoder producing a per-pixel brightening map.

    ``depth`` stride-2 3x3 conv blocks halve the image down to
    ``size / 2**depth``; ``depth`` 4x4 deconv blocks mirror them. Decoder
    block k (0-based) sees the previous decoder output concatenated with
    encoder output ``depth - k``. Two 3-channel Conv+BN+LReLU blocks and a
    sigmoid conv finish the map.
    """

    def __init__(self, depth: int = 8, base: int = 64, cap: int = 512,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.depth = depth
        enc = channel_schedule(depth, base, cap)
        self.enc_channels = enc
        self.encoder = []
        prev = 3
        for c in enc:
            self.encoder.append(ConvBlock(Conv2d(prev, c, 3, stride=2, pad=1, rng=rng), c))
            prev = c
        self.decoder = []
        for k in range(depth):
            out = enc[depth - k - 2] if k < depth - 1 else 3
            # block 0 sees the bottleneck alone, later blocks add a skip
            in_ch = enc[-1] if k == 0 else prev + enc[depth - k - 1]
            self.decoder.append(ConvBlock(Deconv2d(in_ch, out, 4, 2, 1, rng=rng), out))
            prev = out
        self.tail = [ConvBlock(Conv2d(3, 3, 3, rng=rng), 3) for _ in range(2)]
        self.out = Conv2d(3, 3, 3, rng=rng)

    @property
    def divisor(self) -> int:
        return 2 ** self.depth

    def brightening_map(self, x: Tensor) -> Tensor:
        if x.shape[2] % self.divisor or x.shape[3] % self.divisor:
            raise ShapeError(f"remover: image size {x.shape[2]}x{x.shape[3]} must be divisible "
                             f"by {self.divisor} (2**depth)")
        feats = []
        h = x
        for block in self.encoder:
            h = block(h)
            feats.append(h)
        h = feats[-1]
        for k, block in enumerate(self.decoder):
            if k > 0:
                h = concat([h, feats[self.depth - k - 1]], axis=1)
            h = block(h)
        for block in self.tail:
            h = block(h)
        return sigmoid(self.out(h))

    def __call__(self, prev: Tensor, attention: Tensor) -> tuple[Tensor, Tensor]:
        return remover_forward(prev, attention, self)


def remover_forward(prev: Tensor, attention: Tensor, net: RemoverNet) -> tuple[Tensor, Tensor]:
    """``O = clamp(O_prev + S * A, 0, 1)``; returns (O, S * A)."""
    if attention.shape[1] != 1 or attention.shape[2:] != prev.shape[2:]:
        raise ShapeError(f"remover: attention {attention.shape} does not match image {prev.shape}")
    residual = mul(net.brightening_map(prev), attention)
    return clamp(add(prev, residual), 0.0, 1.0), residual


@dataclass
class GeneratorState:
    step: int
    attention: Tensor
    output: Tensor
    lstm_state: ConvLstmState


class Generator(Module):
    """Detector/remover pairs; one shared pair unless ``share_weights`` is off."""

    def __init__(self, n_steps: int = 3, depth: int = 8, base: int = 64, cap: int = 512,
                 share_weights: bool = True, detector_width: int = 64,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.n_steps = n_steps
        self.share_weights = share_weights
        copies = 1 if share_weights else n_steps
        self.detectors = [DetectorNet(detector_width, rng=rng) for _ in range(copies)]
        self.removers = [RemoverNet(depth, base, cap, rng=rng) for _ in range(copies)]

    def pair(self, step: int) -> tuple[DetectorNet, RemoverNet]:
        k = 0 if self.share_weights else step - 1
        return self.detectors[k], self.removers[k]

    def __call__(self, image: Tensor, n_steps: int | None = None) -> list[GeneratorState]:
        return generator_forward(image, self, n_steps or self.n_steps)


def generator_forward(image: Tensor, gen: Generator, n_steps: int) -> list[GeneratorState]:
    if n_steps < 1:
        raise ValueError(f"need at least one progressive step, got {n_steps}")
    if not gen.share_weights and n_steps > len(gen.detectors):
        raise ValueError(f"generator has {len(gen.detectors)} unshared steps, asked for {n_steps}")
    B, _, H, W = image.shape
    det0, _ = gen.pair(1)
    state = det0.initial_state(B, H, W, image.dtype)
    attention = Tensor(np.zeros((B, 1, H, W), dtype=image.dtype))
    output = image
    states = []
    for i in range(1, n_steps + 1):
        det, rem = gen.pair(i)
        attention, state = det(output, attention, state)
        output, _ = rem(output, attention)
        states.append(GeneratorState(i, attention, output, state))
    return states


class DiscriminatorNet(Module):
    """Five spectrally normalized 4x4/stride-2 Conv+BN+LReLU blocks, then a
    fully connected layer to one logit and a sigmoid."""

    channels = (64, 128, 256, 512, 1)

    def __init__(self, image_size: int, rng: np.random.Generator | None = None,
                 n_power_iters: int = 1):
        super().__init__()
        if image_size % 32:
            raise ShapeError(f"discriminator: image size {image_size} must be divisible by 32")
        rng = rng or np.random.default_rng(0)
        self.image_size = image_size
        self.blocks = []
        prev = 3
        for c in self.channels:
            conv = SpectralConv2d(prev, c, 4, stride=2, pad=1, rng=rng, n_power_iters=n_power_iters)
            self.blocks.append(ConvBlock(conv, c))
            prev = c
        side = image_size // 32
        self.fc = Linear(side * side, 1, rng=rng)

    def refresh_spectral(self) -> None:
        """Advance the power-iteration vector of every conv by one update."""
        for block in self.blocks:
            block.conv.refresh()

    def logits(self, img: Tensor) -> Tensor:
        if img.shape[2] != self.image_size or img.shape[3] != self.image_size:
            raise ShapeError(f"discriminator: expected {self.image_size}x{self.image_size} input "
                             f"(divisible by 32), got {img.shape[2]}x{img.shape[3]}")
        h = img
        for block in self.blocks:
            h = block(h)
        return self.fc(reshape(h, (h.shape[0], -1)))

    def __call__(self, img: Tensor) -> Tensor:
        return sigmoid(self.logits(img))


def discriminator_forward(img: Tensor, net: DiscriminatorNet) -> Tensor:
    return net(img)
