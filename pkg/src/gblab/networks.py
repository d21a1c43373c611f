"""Component and mask networks.

Four fixed architectures: the spatial-broadcast VAE pair (SBD) and the
symmetric gated-convolution pair (DC). Layer lists are data (``ConvLayerSpec``)
so that shape traces can be checked row by row against the reference tables.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .distributions import DiagGauss

IMAGE_SIZE = 64
SBD_BROADCAST_SIZE = IMAGE_SIZE + 8


class Activation(str, enum.Enum):
    ELU = "ELU"
    BN_GLU = "BN_GLU"
    GLU = "GLU"
    NONE = "NONE"


class ArchitectureId(str, enum.Enum):
    SBD_ENCODER = "SBD_ENCODER"
    SBD_DECODER = "SBD_DECODER"
    DC_ENCODER = "DC_ENCODER"
    DC_DECODER = "DC_DECODER"


@dataclass(frozen=True)
class ConvLayerSpec:
    """One convolution row. ``out_channels`` is the pre-GLU count."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int = 0
    transposed: bool = False
    activation: Activation = Activation.NONE

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel", "stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")
        if self.activation in (Activation.BN_GLU, Activation.GLU) and self.out_channels % 2:
            raise ValueError("GLU activations need an even number of output channels")

    @property
    def post_channels(self) -> int:
        if self.activation in (Activation.BN_GLU, Activation.GLU):
            return self.out_channels // 2
        return self.out_channels

    def out_size(self, size: int) -> int:
        if self.transposed:
            # output_padding = stride - 1 so that stride-2 layers exactly double
            return (size - 1) * self.stride - 2 * self.padding + self.kernel + self.stride - 1
        return (size + 2 * self.padding - self.kernel) // self.stride + 1


_E = Activation
SBD_ENCODER_CONVS = (
    ConvLayerSpec(4, 32, 3, 2, 1, activation=_E.ELU),
    ConvLayerSpec(32, 32, 3, 2, 1, activation=_E.ELU),
    ConvLayerSpec(32, 64, 3, 2, 1, activation=_E.ELU),
    ConvLayerSpec(64, 64, 3, 2, 1, activation=_E.ELU),
)
SBD_ENCODER_HIDDEN = 256

# latent_dim + 2 input channels is filled in per instance.
SBD_DECODER_CONVS = (
    ConvLayerSpec(1, 32, 3, 1, 0, activation=_E.ELU),
    ConvLayerSpec(32, 32, 3, 1, 0, activation=_E.ELU),
    ConvLayerSpec(32, 32, 3, 1, 0, activation=_E.ELU),
    ConvLayerSpec(32, 32, 3, 1, 0, activation=_E.ELU),
    ConvLayerSpec(32, 3, 1, 1, 0, activation=_E.NONE),
)

DC_ENCODER_CONVS = (
    ConvLayerSpec(4, 64, 5, 1, 2, activation=_E.BN_GLU),
    ConvLayerSpec(32, 64, 5, 2, 2, activation=_E.BN_GLU),
    ConvLayerSpec(32, 128, 5, 1, 2, activation=_E.BN_GLU),
    ConvLayerSpec(64, 128, 5, 2, 2, activation=_E.BN_GLU),
    ConvLayerSpec(64, 128, 5, 1, 2, activation=_E.BN_GLU),
)
DC_ENCODER_FLAT = 16 * 16 * 64

DC_DECODER_FC_OUT = 16 * 16 * 128
DC_DECODER_CONVS = (
    ConvLayerSpec(64, 128, 5, 1, 2, transposed=True, activation=_E.BN_GLU),
    ConvLayerSpec(64, 64, 5, 2, 2, transposed=True, activation=_E.BN_GLU),
    ConvLayerSpec(32, 64, 5, 1, 2, transposed=True, activation=_E.BN_GLU),
    ConvLayerSpec(32, 64, 5, 2, 2, transposed=True, activation=_E.BN_GLU),
    ConvLayerSpec(32, 64, 5, 1, 2, transposed=True, activation=_E.BN_GLU),
    ConvLayerSpec(32, 3, 1, 1, 0, activation=_E.NONE),
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def glu(t: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    if t.shape[dim] % 2:
        raise ValueError(f"GLU needs an even size along dim {dim}, got {t.shape[dim]}")
    a, b = t.chunk(2, dim=dim)
    return a * torch.sigmoid(b)


def broadcast_grid(z: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Tile ``z`` (B x L) over a grid and append two [-1, 1] coordinate channels.

    Channel L ramps along the height axis, channel L+1 along the width axis.
    """
    if height < 1 or width < 1:
        raise ValueError("grid must be at least 1x1")
    b, l = z.shape
    ys = torch.linspace(-1.0, 1.0, height, dtype=z.dtype, device=z.device)
    xs = torch.linspace(-1.0, 1.0, width, dtype=z.dtype, device=z.device)
    if height == 1:
        ys = ys.zero_()
    if width == 1:
        xs = xs.zero_()
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    coords = torch.stack([yy, xx]).unsqueeze(0).expand(b, 2, height, width)
    tiled = z.view(b, l, 1, 1).expand(b, l, height, width)
    return torch.cat([tiled, coords], dim=1)


def init_fan_in_uniform(module: nn.Module) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = m.weight
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = w.shape[0] * w.shape[2] * w.shape[3]
            else:
                fan_in = w[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(w, -bound, bound)
            if m.bias is not None:
                nn.init.uniform_(m.bias, -bound, bound)


class ConvLayer(nn.Module):
    """Convolution (or transposed convolution) followed by its activation."""

    def __init__(self, spec: ConvLayerSpec):
        super().__init__()
        self.spec = spec
        if spec.transposed:
            self.conv = nn.ConvTranspose2d(
                spec.in_channels, spec.out_channels, spec.kernel, spec.stride,
                spec.padding, output_padding=spec.stride - 1,
            )
        else:
            self.conv = nn.Conv2d(
                spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding
            )
        self.bn = (
            nn.BatchNorm2d(spec.out_channels, eps=BN_EPS, momentum=BN_MOMENTUM)
            if spec.activation == Activation.BN_GLU else None
        )

    def forward(self, x):
        x = self.conv(x)
        act = self.spec.activation
        if act == Activation.ELU:
            return F.elu(x)
        if act == Activation.BN_GLU:
            return glu(self.bn(x))
        if act == Activation.GLU:
            return glu(x)
        return x


def _check_image_input(x: torch.Tensor, channels: int) -> None:
    if x.dim() != 4 or x.shape[1:] != (channels, IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(
            f"expected B x {channels} x {IMAGE_SIZE} x {IMAGE_SIZE} input, got {tuple(x.shape)}"
        )


class SBDEncoder(nn.Module):
    """Strided 3x3 ELU convolutions, then two fully-connected layers."""

    arch_id = ArchitectureId.SBD_ENCODER

    def __init__(self, latent_dim: int, in_channels: int = 4):
        super().__init__()
        self.latent_dim = latent_dim
        self.in_channels = in_channels
        specs = list(SBD_ENCODER_CONVS)
        specs[0] = ConvLayerSpec(in_channels, 32, 3, 2, 1, activation=Activation.ELU)
        self.layers = nn.ModuleList(ConvLayer(s) for s in specs)
        self.fc1 = nn.Linear(4 * 4 * 64, SBD_ENCODER_HIDDEN)
        self.fc2 = nn.Linear(SBD_ENCODER_HIDDEN, 2 * latent_dim)
        init_fan_in_uniform(self)

    def forward(self, x: torch.Tensor, trace: list | None = None) -> DiagGauss:
        _check_image_input(x, self.in_channels)
        for layer in self.layers:
            x = layer(x)
            if trace is not None:
                trace.append(tuple(x.shape[1:]))
        h = F.elu(self.fc1(x.flatten(1)))
        if trace is not None:
            trace.append(tuple(h.shape[1:]))
        out = self.fc2(h)
        if trace is not None:
            trace.append(tuple(out.shape[1:]))
        return DiagGauss.from_params(out)


class SBDDecoder(nn.Module):
    """Spatial broadcast decoder: tile to 72x72, four unpadded 3x3 convs, 1x1 head."""

    arch_id = ArchitectureId.SBD_DECODER

    def __init__(self, latent_dim: int, out_channels: int = 3):
        super().__init__()
        self.latent_dim = latent_dim
        specs = list(SBD_DECODER_CONVS)
        specs[0] = ConvLayerSpec(latent_dim + 2, 32, 3, 1, 0, activation=Activation.ELU)
        specs[-1] = ConvLayerSpec(32, out_channels, 1, 1, 0)
        self.layers = nn.ModuleList(ConvLayer(s) for s in specs)
        init_fan_in_uniform(self)

    def forward(self, z: torch.Tensor, trace: list | None = None) -> torch.Tensor:
        x = broadcast_grid(z, SBD_BROADCAST_SIZE, SBD_BROADCAST_SIZE)
        if trace is not None:
            trace.append(tuple(x.shape[1:]))
        for layer in self.layers:
            x = layer(x)
            if trace is not None:
                trace.append(tuple(x.shape[1:]))
        return x


class DCEncoder(nn.Module):
    """Gated 5x5 convolutions with batch norm, then a gated fully-connected head."""

    arch_id = ArchitectureId.DC_ENCODER

    def __init__(self, latent_dim: int, in_channels: int = 4):
        super().__init__()
        self.latent_dim = latent_dim
        self.in_channels = in_channels
        specs = list(DC_ENCODER_CONVS)
        specs[0] = ConvLayerSpec(in_channels, 64, 5, 1, 2, activation=Activation.BN_GLU)
        self.layers = nn.ModuleList(ConvLayer(s) for s in specs)
        self.fc = nn.Linear(DC_ENCODER_FLAT, 4 * latent_dim)
        init_fan_in_uniform(self)

    def features(self, x: torch.Tensor, trace: list | None = None) -> torch.Tensor:
        """Post-GLU head output of size 2 * latent_dim."""
        _check_image_input(x, self.in_channels)
        for layer in self.layers:
            x = layer(x)
            if trace is not None:
                trace.append(tuple(x.shape[1:]))
        h = glu(self.fc(x.flatten(1)))
        if trace is not None:
            trace.append(tuple(h.shape[1:]))
        return h

    def forward(self, x: torch.Tensor, trace: list | None = None) -> DiagGauss:
        return DiagGauss.from_params(self.features(x, trace))


class DCDecoder(nn.Module):
    """Gated fully-connected layer, five gated transposed convs, 1x1 head."""

    arch_id = ArchitectureId.DC_DECODER

    def __init__(self, latent_dim: int, out_channels: int = 3):
        super().__init__()
        if out_channels not in (1, 3):
            raise ValueError("out_channels must be 1 (mask logits) or 3 (appearance)")
        self.latent_dim = latent_dim
        self.out_channels = out_channels
        self.fc = nn.Linear(latent_dim, DC_DECODER_FC_OUT)
        specs = list(DC_DECODER_CONVS)
        specs[-1] = ConvLayerSpec(32, out_channels, 1, 1, 0)
        self.layers = nn.ModuleList(ConvLayer(s) for s in specs)
        init_fan_in_uniform(self)

    def forward(self, z: torch.Tensor, trace: list | None = None) -> torch.Tensor:
        x = glu(self.fc(z)).view(-1, 64, 16, 16)
        if trace is not None:
            trace.append(tuple(x.shape[1:]))
        for layer in self.layers:
            x = layer(x)
            if trace is not None:
                trace.append(tuple(x.shape[1:]))
        return x


def build(arch: ArchitectureId | str, latent_dim: int, channels: int | None = None) -> nn.Module:
    """Construct one of the four architectures.

    ``channels`` is the input channel count for encoders and the output
    channel count for decoders.
    """
    arch = ArchitectureId(arch)
    if arch == ArchitectureId.SBD_ENCODER:
        return SBDEncoder(latent_dim, channels or 4)
    if arch == ArchitectureId.SBD_DECODER:
        return SBDDecoder(latent_dim, channels or 3)
    if arch == ArchitectureId.DC_ENCODER:
        return DCEncoder(latent_dim, channels or 4)
    return DCDecoder(latent_dim, channels or 3)


def shape_trace(net: nn.Module, batch: int = 1) -> list[tuple[int, ...]]:
    """Per-layer output shapes (without batch) for a zero input."""
    trace: list[tuple[int, ...]] = []
    was_training = net.training
    net.eval()
    with torch.no_grad():
        if isinstance(net, (SBDEncoder, DCEncoder)):
            net(torch.zeros(batch, net.in_channels, IMAGE_SIZE, IMAGE_SIZE), trace=trace)
        else:
            net(torch.zeros(batch, net.latent_dim), trace=trace)
    net.train(was_training)
    return trace
