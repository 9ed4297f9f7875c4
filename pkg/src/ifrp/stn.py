"""Spatial transformer layers: similarity-transform parameterization, grid
generation, bilinear sampling, and the localization networks that predict
warp parameters inside the recovery network.

A transform is a 4-vector (log_scale, rotation, tx, ty) describing a
similarity map in normalized [-1, 1] image coordinates; zero is the identity.
The sampler warps a feature map by mapping every output location through the
transform to a source location and interpolating its four neighbours;
locations outside the image contribute zeros.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class TransformParams:
    """Similarity transform: isotropic scale (log domain), rotation, shift."""

    log_scale: float = 0.0
    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @staticmethod
    def identity() -> "TransformParams":
        return TransformParams(0.0, 0.0, 0.0, 0.0)

    def as_vector(self) -> np.ndarray:
        return np.array([self.log_scale, self.rotation, self.tx, self.ty], dtype=np.float64)

    def inverse(self) -> "TransformParams":
        """Parameters of the inverse map: x = (1/s) R(-th) (y - t)."""
        s = math.exp(self.log_scale)
        c, si = math.cos(self.rotation), math.sin(self.rotation)
        # R(-th) applied to t, scaled by -1/s
        itx = -(c * self.tx + si * self.ty) / s
        ity = -(-si * self.tx + c * self.ty) / s
        return TransformParams(-self.log_scale, -self.rotation, itx, ity)


def vector_to_affine(theta: torch.Tensor) -> torch.Tensor:
    """(..., 4) parameter vectors -> (..., 2, 3) affine matrices.

    M = [s cos(r), -s sin(r), tx; s sin(r), s cos(r), ty], s = exp(log_scale).
    Differentiable in theta.
    """
    s = torch.exp(theta[..., 0])
    c = torch.cos(theta[..., 1])
    si = torch.sin(theta[..., 1])
    row0 = torch.stack([s * c, -s * si, theta[..., 2]], dim=-1)
    row1 = torch.stack([s * si, s * c, theta[..., 3]], dim=-1)
    return torch.stack([row0, row1], dim=-2)


def params_to_affine(params: TransformParams) -> np.ndarray:
    """2x3 float64 matrix for a single TransformParams."""
    theta = torch.from_numpy(params.as_vector())
    return vector_to_affine(theta).numpy()


def generate_grid(matrix, height: int, width: int) -> torch.Tensor:
    """Sampling grid of normalized source coordinates.

    Every output location's normalized target coordinate (x, y) in [-1, 1]
    (x along width, align-corners convention) is mapped through the matrix to
    a source coordinate. Accepts a (2, 3) matrix or a batch (N, 2, 3);
    returns (H, W, 2) or (N, H, W, 2) with (x, y) in the last axis.
    """
    mat = torch.as_tensor(matrix)
    squeeze = mat.dim() == 2
    if squeeze:
        mat = mat[None]
    dtype = mat.dtype if mat.is_floating_point() else torch.float64
    mat = mat.to(dtype)
    ys = torch.linspace(-1.0, 1.0, height, dtype=dtype) if height > 1 else torch.zeros(1, dtype=dtype)
    xs = torch.linspace(-1.0, 1.0, width, dtype=dtype) if width > 1 else torch.zeros(1, dtype=dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    ones = torch.ones_like(gx)
    coords = torch.stack([gx, gy, ones], dim=-1)                  # (H, W, 3)
    grid = torch.einsum("nij,hwj->nhwi", mat, coords)             # (N, H, W, 2)
    return grid[0] if squeeze else grid


def bilinear_sample(feature_map: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Sample a feature map at normalized grid coordinates.

    feature_map: (C, H, W) or (N, C, H, W); grid: (Hg, Wg, 2) or (N, Hg, Wg, 2)
    with normalized (x, y). Four-neighbour bilinear interpolation; neighbours
    outside the image contribute zeros. Differentiable w.r.t. both inputs.
    """
    fm, grid, squeeze = _batchify(feature_map, grid)
    h, w = fm.shape[-2:]
    px = (grid[..., 0] + 1.0) * ((w - 1) / 2.0)
    py = (grid[..., 1] + 1.0) * ((h - 1) / 2.0)
    out = _sample_pixel_coords(fm, px, py)
    return out[0] if squeeze else out


def warp(feature_map: torch.Tensor, theta) -> torch.Tensor:
    """Warp a feature map by transform parameters (the full STN sampling path).

    theta: TransformParams, a 4-vector, or a batch (N, 4). The pixel-space
    grid is formed directly so that zero parameters reproduce the input
    exactly, with gradients still flowing into theta.
    """
    if isinstance(theta, TransformParams):
        theta = torch.from_numpy(theta.as_vector())
    theta = torch.as_tensor(theta)
    fm, _, squeeze = _batchify(feature_map, None)
    if theta.dim() == 1:
        theta = theta[None].expand(fm.shape[0], 4)
    theta = theta.to(fm.dtype)

    n, _, h, w = fm.shape
    mat = vector_to_affine(theta)                                  # (N, 2, 3)
    a, b, tx = mat[:, 0, 0], mat[:, 0, 1], mat[:, 0, 2]
    c, d, ty = mat[:, 1, 0], mat[:, 1, 1], mat[:, 1, 2]

    # Pixel-space composition of normalize -> affine -> denormalize. The
    # constant folds (t + 1 - a - b) so identity parameters give px_s == px_t
    # with no rounding.
    half_w = (w - 1) / 2.0 if w > 1 else 0.0
    half_h = (h - 1) / 2.0 if h > 1 else 0.0
    rx = (w - 1) / (h - 1) if (w > 1 and h > 1) else 1.0
    ry = (h - 1) / (w - 1) if (w > 1 and h > 1) else 1.0
    pxs = torch.arange(w, dtype=fm.dtype)
    pys = torch.arange(h, dtype=fm.dtype)
    gy, gx = torch.meshgrid(pys, pxs, indexing="ij")              # (H, W)

    def expand(v):
        return v[:, None, None]

    px = expand(a) * gx + expand(b * rx) * gy + expand((tx + 1.0 - a - b) * half_w)
    py = expand(c * ry) * gx + expand(d) * gy + expand((ty + 1.0 - c - d) * half_h)
    out = _sample_pixel_coords(fm, px, py)
    return out[0] if squeeze else out


def _batchify(feature_map, grid):
    fm = torch.as_tensor(feature_map)
    squeeze = fm.dim() == 3
    if squeeze:
        fm = fm[None]
    if grid is not None:
        grid = torch.as_tensor(grid).to(fm.dtype)
        if grid.dim() == 3:
            grid = grid[None].expand(fm.shape[0], *grid.shape)
    return fm, grid, squeeze


def _sample_pixel_coords(fm: torch.Tensor, px: torch.Tensor, py: torch.Tensor) -> torch.Tensor:
    """Bilinear gather at pixel coordinates px, py of shape (N, Hg, Wg)."""
    n, ch, h, w = fm.shape
    hg, wg = px.shape[-2:]
    x0 = torch.floor(px.detach())
    y0 = torch.floor(py.detach())
    fx = px - x0
    fy = py - y0
    x0 = x0.long()
    y0 = y0.long()

    flat = fm.reshape(n, ch, h * w)

    def corner(xi, yi, wx, wy):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c = xi.clamp(0, w - 1)
        yi_c = yi.clamp(0, h - 1)
        idx = (yi_c * w + xi_c).reshape(n, 1, hg * wg).expand(n, ch, hg * wg)
        vals = torch.gather(flat, 2, idx).reshape(n, ch, hg, wg)
        weight = (wx * wy * valid.to(fm.dtype)).unsqueeze(1)
        return vals * weight

    out = corner(x0, y0, 1 - fx, 1 - fy)
    out = out + corner(x0 + 1, y0, fx, 1 - fy)
    out = out + corner(x0, y0 + 1, 1 - fx, fy)
    out = out + corner(x0 + 1, y0 + 1, fx, fy)
    return out


# ---------------------------------------------------------------------------
# Localization networks


@dataclass(frozen=True)
class LocNetSpec:
    """Layer plan for one localization net.

    convs: (out_channels, pooled) per 3x3 conv. Pooled convs keep spatial size
    ("same" padding) then 2x2/s2 max-pool; the final unpooled conv uses no
    padding, collapsing 4x4 to 2x2 so the first FC input is 2*2*20 = 80.
    fc_sizes: (in, hidden) of the penultimate FC; the last FC always emits 4.
    flatten_only: inputs too small for the conv stack go straight to the FCs.
    """

    in_h: int
    in_w: int
    in_c: int
    convs: tuple
    fc_sizes: tuple
    flatten_only: bool = False

    def output_dim(self) -> int:
        return 4


def locnet_spec(h: int, w: int, c: int, decoder_style: bool = False) -> LocNetSpec:
    """Localization plan for an h x w x c feature map.

    Pooled 3x3 convs halve the map down to 4x4 with a doubling channel ladder
    capped at 256; on the encoder side the last pooled conv narrows to 20
    channels, on the decoder side the ladder starts at the input width. An
    unpadded 3x3x20 conv then yields 2x2x20 = 80 features for FC(80, 20) and
    the final FC(20, 4). Inputs smaller than 4x4 flatten directly into the FCs.
    """
    if h != w:
        raise ValueError(f"localization input must be square, got {h}x{w}")
    if h < 4:
        return LocNetSpec(h, w, c, convs=(), fc_sizes=(h * w * c, 20), flatten_only=True)
    n_pool = int(round(math.log2(h / 4)))
    if 4 * 2 ** n_pool != h:
        raise ValueError(f"localization input size {h} is not 4*2^k")
    if decoder_style:
        channels = [min(c * 2 ** i, 256) for i in range(n_pool)]
    else:
        channels = [min(c * 2 ** (i + 1), 256) for i in range(n_pool)]
        if channels:
            channels[-1] = 20
    convs = tuple((ch, True) for ch in channels) + ((20, False),)
    return LocNetSpec(h, w, c, convs=convs, fc_sizes=(80, 20))


def stn1_spec() -> LocNetSpec:
    """Localization plan for the first encoder placement (64x64x32 input)."""
    return locnet_spec(64, 64, 32)


def stn2_spec() -> LocNetSpec:
    """Localization plan for the second encoder placement (32x32x64 input)."""
    return locnet_spec(32, 32, 64)


def stn3_spec() -> LocNetSpec:
    """Localization plan for the third encoder placement (16x16x128 input)."""
    return locnet_spec(16, 16, 128)


def stn4_spec() -> LocNetSpec:
    """Localization plan for the decoder placement (32x32x64 input)."""
    return locnet_spec(32, 32, 64, decoder_style=True)


def init_normal_(tensor: torch.Tensor, std: float, generator: torch.Generator) -> None:
    """Fill from N(0, std^2) using an explicit generator (reproducible builds)."""
    with torch.no_grad():
        tensor.copy_(torch.randn(tensor.shape, generator=generator, dtype=tensor.dtype) * std)


class LocalizationNet(nn.Module):
    """Conv/FC stack predicting a 4-parameter transform for one feature map."""

    def __init__(self, spec: LocNetSpec):
        super().__init__()
        self.spec = spec
        convs = []
        in_c = spec.in_c
        size = spec.in_h
        for out_c, pooled in spec.convs:
            convs.append(nn.Conv2d(in_c, out_c, 3, padding=1 if pooled else 0))
            in_c = out_c
            size = size // 2 if pooled else size - 2
        self.convs = nn.ModuleList(convs)
        flat = spec.fc_sizes[0] if not spec.flatten_only else spec.in_h * spec.in_w * spec.in_c
        if not spec.flatten_only and flat != size * size * in_c:
            raise ValueError(f"conv stack yields {size * size * in_c} features, spec says {flat}")
        self.fc1 = nn.Linear(flat, spec.fc_sizes[1])
        self.fc2 = nn.Linear(spec.fc_sizes[1], 4)

    def reset_parameters(self, generator: torch.Generator) -> None:
        for conv in self.convs:
            init_normal_(conv.weight, 0.02, generator)
            nn.init.zeros_(conv.bias)
        init_normal_(self.fc1.weight, 0.02, generator)
        nn.init.zeros_(self.fc1.bias)
        # zero final layer: every input starts at the identity transform
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3:] != (self.spec.in_c, self.spec.in_h, self.spec.in_w):
            raise ValueError(
                f"localization input {tuple(x.shape[-3:])} does not match spec "
                f"({self.spec.in_c}, {self.spec.in_h}, {self.spec.in_w})"
            )
        h = x
        for i, conv in enumerate(self.convs):
            h = torch.relu(conv(h))
            if self.spec.convs[i][1]:
                h = torch.max_pool2d(h, 2, 2)
        h = h.reshape(h.shape[0], -1)
        h = torch.relu(self.fc1(h))
        return self.fc2(h)


class SpatialTransformer(nn.Module):
    """Localization net + grid sampler; optionally frozen to the identity."""

    def __init__(self, spec: LocNetSpec):
        super().__init__()
        self.locnet = LocalizationNet(spec)
        self.identity_frozen = False

    def reset_parameters(self, generator: torch.Generator) -> None:
        self.locnet.reset_parameters(generator)

    def predict_params(self, x: torch.Tensor) -> torch.Tensor:
        return self.locnet(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.identity_frozen:
            return x
        return warp(x, self.locnet(x))
