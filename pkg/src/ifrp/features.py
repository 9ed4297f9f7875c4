"""Fixed feature extractors injected into the identity loss and retrieval.

An extractor is a deterministic map from image batches (N x 3 x S x S in
[-1, 1]) to feature tensors; its weights never train. The full-scale setup
plugs in a pretrained face-embedding network here; the desk default is a
frozen random-seeded conv stack, which is enough to exercise every contract
(feature distances, gradients into the generator, retrieval rankings).
"""

import numpy as np
import torch
from torch import nn

from .stn import init_normal_


class PixelExtractor(nn.Module):
    """Identity map: features are the pixels themselves."""

    def features(self, batch: torch.Tensor) -> list:
        return [batch]

    def extract(self, batch: torch.Tensor) -> torch.Tensor:
        return batch

    def embed(self, batch: torch.Tensor) -> torch.Tensor:
        return batch.reshape(batch.shape[0], -1)

    def spec(self) -> dict:
        return {"kind": "pixel"}


class FrozenConvExtractor(nn.Module):
    """Random-seeded strided conv stack with immutable weights.

    Stages halve resolution; `features` returns every stage's activations
    (Gram taps for style ranking), `extract` the declared tap stage for the
    identity loss, `embed` the flattened last stage for retrieval.
    """

    def __init__(self, channels=(8, 16), seed: int = 0, tap: int = -1, negative_slope: float = 0.2):
        super().__init__()
        self.seed = seed
        self.tap = tap
        self.negative_slope = negative_slope
        self.channel_plan = tuple(channels)
        convs = []
        in_c = 3
        for out_c in channels:
            convs.append(nn.Conv2d(in_c, out_c, 3, stride=2, padding=1))
            in_c = out_c
        self.convs = nn.ModuleList(convs)
        gen = torch.Generator().manual_seed(seed)
        for conv in convs:
            init_normal_(conv.weight, 0.2, gen)
            init_normal_(conv.bias, 0.05, gen)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, batch: torch.Tensor) -> list:
        out = []
        h = batch
        for conv in self.convs:
            h = torch.nn.functional.leaky_relu(conv(h), self.negative_slope)
            out.append(h)
        return out

    def extract(self, batch: torch.Tensor) -> torch.Tensor:
        return self.features(batch)[self.tap]

    def embed(self, batch: torch.Tensor) -> torch.Tensor:
        return self.extract(batch).reshape(batch.shape[0], -1)

    def spec(self) -> dict:
        return {
            "kind": "frozen_conv",
            "channels": list(self.channel_plan),
            "seed": self.seed,
            "tap": self.tap,
        }


def build_extractor(spec: dict):
    """Instantiate an extractor from its config dict ({"kind": ...})."""
    spec = dict(spec or {"kind": "frozen_conv"})
    kind = spec.pop("kind")
    if kind == "pixel":
        return PixelExtractor()
    if kind == "frozen_conv":
        return FrozenConvExtractor(**spec)
    raise ValueError(f"unknown extractor kind {kind!r}")


def embed_images(extractor, images, image_range=(0.0, 1.0)) -> np.ndarray:
    """Embed a list of H x W x 3 arrays into an N x D float64 matrix."""
    lo, hi = image_range
    batch = np.stack([np.asarray(im, dtype=np.float64).transpose(2, 0, 1) for im in images])
    batch = (batch - lo) / (hi - lo) * 2.0 - 1.0
    with torch.no_grad():
        emb = extractor.embed(torch.from_numpy(batch))
    return emb.numpy()
