"""The style removal generator and the discriminator.

The generator is a fully convolutional autoencoder: 4x4/s2 convs down, the
mirror image of 4x4/s2 deconvs up, batch norm after every conv/deconv except
the final deconv, leaky ReLU (slope 0.2), tanh output in [-1, 1]. The top two
encoder stages feed skip connections, each running through three residual
blocks before being added to the matching decoder stage. Spatial transformers
sit after the first three encoder stages and at the mid-decoder stage to pull
misaligned content toward the canonical view.

The discriminator is a 4x4/s2 conv stack (batch norm except on its first
layer) down to 4x4, flattened into a single sigmoid unit.
"""

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .stn import SpatialTransformer, init_normal_, locnet_spec


@dataclass(frozen=True)
class SRNConfig:
    """Shared topology knobs for the generator and discriminator."""

    image_size: int = 128
    base_channels: int = 32
    depth: int = None                 # encoder conv count; default collapses to 4x4
    skip_layers: int = 2
    residual_blocks_per_skip: int = 3
    use_stn: bool = True
    negative_slope: float = 0.2
    max_channels: int = 512

    def __post_init__(self):
        depth = self.depth if self.depth is not None else int(math.log2(self.image_size)) - 2
        if depth < 1:
            raise ValueError(f"image_size {self.image_size} too small")
        if self.image_size % (2 ** depth) != 0 or 2 ** round(math.log2(self.image_size)) != self.image_size:
            raise ValueError(f"image_size {self.image_size} not divisible by 2^{depth}")
        object.__setattr__(self, "depth", depth)
        if self.skip_layers > max(depth - 1, 0):
            raise ValueError(f"skip_layers {self.skip_layers} too deep for depth {depth}")

    def channels(self, i: int) -> int:
        return min(self.base_channels * 2 ** i, self.max_channels)

    def encoder_stn_layers(self) -> tuple:
        return tuple(i for i in (0, 1, 2) if i < self.depth)

    def decoder_stn_stage(self):
        if self.depth >= 3:
            return self.depth - 3
        if self.depth == 2:
            return 0
        return None

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "depth": self.depth,
            "skip_layers": self.skip_layers,
            "residual_blocks_per_skip": self.residual_blocks_per_skip,
            "use_stn": self.use_stn,
            "negative_slope": self.negative_slope,
            "max_channels": self.max_channels,
        }

    @staticmethod
    def from_dict(d: dict) -> "SRNConfig":
        return SRNConfig(**d)


class ResidualBlock(nn.Module):
    """y = x + f(x), f = conv3x3-BN-leakyReLU-conv3x3-BN; shape preserved."""

    def __init__(self, channels: int, negative_slope: float = 0.2):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(channels, momentum=0.1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(channels, momentum=0.1)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return x + h


class SRN(nn.Module):
    """Style removal network mapping N x 3 x S x S in [-1,1] to the same shape."""

    def __init__(self, config: SRNConfig):
        super().__init__()
        self.config = config
        c = config
        d = c.depth

        enc = []
        in_ch = 3
        for i in range(d):
            enc.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, c.channels(i), 4, stride=2, padding=1),
                    nn.BatchNorm2d(c.channels(i), momentum=0.1),
                    nn.LeakyReLU(c.negative_slope),
                )
            )
            in_ch = c.channels(i)
        self.encoder = nn.ModuleList(enc)

        dec = []
        for j in range(d - 1):
            dec.append(
                nn.Sequential(
                    nn.ConvTranspose2d(c.channels(d - 1 - j), c.channels(d - 2 - j), 4, stride=2, padding=1),
                    nn.BatchNorm2d(c.channels(d - 2 - j), momentum=0.1),
                    nn.LeakyReLU(c.negative_slope),
                )
            )
        # last deconv: no batch norm, tanh into [-1, 1]
        dec.append(nn.Sequential(nn.ConvTranspose2d(c.channels(0), 3, 4, stride=2, padding=1), nn.Tanh()))
        self.decoder = nn.ModuleList(dec)

        self.skip_blocks = nn.ModuleDict()
        for i in range(c.skip_layers):
            blocks = nn.Sequential(
                *[ResidualBlock(c.channels(i), c.negative_slope) for _ in range(c.residual_blocks_per_skip)]
            )
            self.skip_blocks[str(i)] = blocks

        self.encoder_stns = nn.ModuleDict()
        self.decoder_stn = None
        if c.use_stn:
            for i in c.encoder_stn_layers():
                size = c.image_size // 2 ** (i + 1)
                self.encoder_stns[str(i)] = SpatialTransformer(locnet_spec(size, size, c.channels(i)))
            stage = c.decoder_stn_stage()
            if stage is not None:
                size = c.image_size // 2 ** (d - 1 - stage)
                ch = c.channels(d - 2 - stage)
                self.decoder_stn = SpatialTransformer(locnet_spec(size, size, ch, decoder_style=True))

    def reset_parameters(self, generator: torch.Generator) -> None:
        _init_net(self, generator)

    def freeze_stns_to_identity(self, frozen: bool = True) -> None:
        """Ablation switch: bypass every warp, leaving a plain skip autoencoder."""
        for m in self.modules():
            if isinstance(m, SpatialTransformer):
                m.identity_frozen = frozen

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.config
        if x.shape[1:] != (3, c.image_size, c.image_size):
            raise ValueError(f"expected Nx3x{c.image_size}x{c.image_size}, got {tuple(x.shape)}")
        d = c.depth
        enc_feats = []
        h = x
        for i, layer in enumerate(self.encoder):
            h = layer(h)
            if str(i) in self.encoder_stns:
                h = self.encoder_stns[str(i)](h)
            enc_feats.append(h)

        for j, layer in enumerate(self.decoder):
            h = layer(h)
            if j < d - 1:
                skip_src = d - 2 - j
                if skip_src < c.skip_layers:
                    h = h + self.skip_blocks[str(skip_src)](enc_feats[skip_src])
                if self.decoder_stn is not None and j == c.decoder_stn_stage():
                    h = self.decoder_stn(h)
        return h


class DN(nn.Module):
    """Discriminator mapping N x 3 x S x S in [-1,1] to N probabilities in (0,1)."""

    def __init__(self, config: SRNConfig):
        super().__init__()
        self.config = config
        c = config
        n_layers = int(math.log2(c.image_size)) - 2    # down to 4x4
        layers = []
        in_ch = 3
        for i in range(n_layers):
            conv = nn.Conv2d(in_ch, c.channels(i), 4, stride=2, padding=1)
            if i == 0:
                layers.append(nn.Sequential(conv, nn.LeakyReLU(c.negative_slope)))
            else:
                layers.append(
                    nn.Sequential(conv, nn.BatchNorm2d(c.channels(i), momentum=0.1), nn.LeakyReLU(c.negative_slope))
                )
            in_ch = c.channels(i)
        self.convs = nn.ModuleList(layers)
        self.fc = nn.Linear(in_ch * 4 * 4, 1)

    def reset_parameters(self, generator: torch.Generator) -> None:
        _init_net(self, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.config
        if x.shape[1:] != (3, c.image_size, c.image_size):
            raise ValueError(f"expected Nx3x{c.image_size}x{c.image_size}, got {tuple(x.shape)}")
        h = x
        for layer in self.convs:
            h = layer(h)
        h = h.reshape(h.shape[0], -1)
        return torch.sigmoid(self.fc(h)).reshape(-1)


def _init_net(net: nn.Module, generator: torch.Generator) -> None:
    """Seeded init: convs/linears N(0, 0.02), BN gamma N(1, 0.02) beta 0.

    Modules are visited in registration order, so equal seeds give equal
    parameters. Localization nets apply their own rule (zeroed final layer).
    """
    stn_prefixes = [name for name, m in net.named_modules() if isinstance(m, SpatialTransformer)]

    def inside_stn(name: str) -> bool:
        return any(name.startswith(p + ".") for p in stn_prefixes)

    for name, m in net.named_modules():
        if isinstance(m, SpatialTransformer):
            m.reset_parameters(generator)
        elif inside_stn(name):
            continue
        elif isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            init_normal_(m.weight, 0.02, generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            init_normal_(m.weight, 0.02, generator)
            with torch.no_grad():
                m.weight.add_(1.0)
            nn.init.zeros_(m.bias)
            m.reset_running_stats()


def build_srn(config: SRNConfig, rng_seed: int) -> SRN:
    """Construct and seed-initialize the generator."""
    net = SRN(config)
    net.reset_parameters(torch.Generator().manual_seed(rng_seed))
    return net


def build_dn(config: SRNConfig, rng_seed: int) -> DN:
    """Construct and seed-initialize the discriminator."""
    net = DN(config)
    net.reset_parameters(torch.Generator().manual_seed(rng_seed))
    return net
