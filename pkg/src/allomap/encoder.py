"""Four-stage hierarchical feature extractor with multi-scale fusion.

Stages downsample at {1/4, 1/8, 1/16, 1/32} via overlapping strided patch
embeddings; each stage stacks either spatial-reduction attention blocks or
conv blocks. Stage outputs are bilinearly upsampled to 1/4 scale,
concatenated, mixed by a per-location linear layer, and fused by a 3x3
convolution into the egocentric feature map. The RGB-D variant runs a
parallel depth branch fused additively into the color branch after every
stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Conv2d,
    LayerNorm,
    Linear,
    Module,
    Tensor,
    add,
    bilinear_upsample,
    concat,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

RATES = (4, 8, 16, 32)


@dataclass(frozen=True)
class EncoderConfig:
    stage_channels: tuple[int, int, int, int] = (8, 16, 24, 32)
    blocks_per_stage: int = 1
    reduction: tuple[int, int, int, int] = (8, 4, 2, 1)
    block_kind: str = "attention"
    modality: str = "rgb"
    fused_channels: int = 16
    mlp_ratio: int = 2

    def __post_init__(self):
        if len(self.stage_channels) != 4 or len(self.reduction) != 4:
            raise ValueError("exactly four stages are required")
        if self.block_kind not in ("attention", "conv"):
            raise ValueError(f"unknown block kind {self.block_kind!r}")
        if self.modality not in ("rgb", "rgbd"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.fused_channels <= 0:
            raise ValueError("fused_channels must be positive")


class AttentionBlock(Module):
    """Self-attention with spatially reduced keys/values, plus a 2-layer MLP.

    Both sub-blocks sit behind layer norm and residual connections. With
    reduction 1 and no positional path, the block is permutation-equivariant
    over tokens.
    """

    def __init__(self, dim: int, reduction: int, rng: np.random.Generator,
                 mlp_ratio: int = 2):
        self.reduction = int(reduction)
        self.ln1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)
        if self.reduction > 1:
            self.pool = Conv2d(self.reduction, self.reduction, dim, dim, rng,
                               stride=self.reduction, padding=0)
            self.ln_kv = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)
        self.dim = dim

    def __call__(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        n, t, c = x.shape
        h, w = hw
        r = self.reduction
        if h * w != t:
            raise ValueError(f"token count {t} does not match extents {hw}")
        if h % r or w % r:
            raise ValueError(f"extents {hw} not divisible by reduction {r}")
        y = self.ln1(x)
        q = self.q(y)
        if r > 1:
            kv = self.pool(reshape(y, (n, h, w, c)))
            kv = self.ln_kv(reshape(kv, (n, (h // r) * (w // r), c)))
        else:
            kv = y
        k = self.k(kv)
        v = self.v(kv)
        scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(c))
        attn = matmul(softmax(scores), v)
        x = add(x, self.o(attn))
        z = self.ln2(x)
        return add(x, self.fc2(relu(self.fc1(z))))


class ConvBlock(Module):
    """Residual pair of 3x3 convolutions behind layer norm."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.ln = LayerNorm(dim)
        self.conv1 = Conv2d(3, 3, dim, dim, rng, stride=1, padding=1)
        self.conv2 = Conv2d(3, 3, dim, dim, rng, stride=1, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.ln(x)
        y = self.conv2(relu(self.conv1(y)))
        return add(x, y)


class Stage(Module):
    def __init__(self, cin: int, cout: int, first: bool, blocks: int,
                 kind: str, reduction: int, mlp_ratio: int,
                 rng: np.random.Generator):
        if first:
            self.embed = Conv2d(7, 7, cin, cout, rng, stride=4, padding=3)
        else:
            self.embed = Conv2d(3, 3, cin, cout, rng, stride=2, padding=1)
        self.ln = LayerNorm(cout)
        self.kind = kind
        if kind == "attention":
            self.blocks = [AttentionBlock(cout, reduction, rng, mlp_ratio)
                           for _ in range(blocks)]
        else:
            self.blocks = [ConvBlock(cout, rng) for _ in range(blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln(self.embed(x))
        if self.kind == "attention":
            n, h, w, c = x.shape
            tok = reshape(x, (n, h * w, c))
            for block in self.blocks:
                tok = block(tok, (h, w))
            return reshape(tok, (n, h, w, c))
        for block in self.blocks:
            x = block(x)
        return x


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        chans = cfg.stage_channels
        ins = (3,) + chans[:3]
        self.stages = [
            Stage(ins[s], chans[s], s == 0, cfg.blocks_per_stage, cfg.block_kind,
                  cfg.reduction[s], cfg.mlp_ratio, rng)
            for s in range(4)
        ]
        if cfg.modality == "rgbd":
            dins = (1,) + chans[:3]
            self.depth_stages = [
                Stage(dins[s], chans[s], s == 0, cfg.blocks_per_stage, cfg.block_kind,
                      cfg.reduction[s], cfg.mlp_ratio, rng)
                for s in range(4)
            ]
        self.fuse_mlp = Linear(sum(chans), cfg.fused_channels, rng)
        self.fuse_conv = Conv2d(3, 3, cfg.fused_channels, cfg.fused_channels, rng,
                                stride=1, padding=1)

    def encode(self, rgb: Tensor, depth: Tensor | None = None) -> Tensor:
        """(N, H, W, 3) [+ (N, H, W, 1)] -> (N, H/4, W/4, fused_channels)."""
        n, h, w, c = rgb.shape
        if h % 32 or w % 32:
            raise ValueError(f"image extents {h}x{w} must be divisible by 32")
        if c != 3:
            raise ValueError(f"expected 3 color channels, got {c}")
        if self.cfg.modality == "rgbd":
            if depth is None:
                raise ValueError("rgbd encoder requires a depth channel")
            if depth.shape != (n, h, w, 1):
                raise ValueError(f"depth shape {depth.shape} != {(n, h, w, 1)}")

        feats = []
        x = rgb
        d = depth
        for s in range(4):
            x = self.stages[s](x)
            if self.cfg.modality == "rgbd":
                d = self.depth_stages[s](d)
                x = add(x, d)
            feats.append(x)
        up = [bilinear_upsample(f, 2 ** s) for s, f in enumerate(feats)]
        mixed = self.fuse_mlp(reshape(concat(up, axis=3),
                                      (n * (h // 4) * (w // 4), sum(self.cfg.stage_channels))))
        mixed = reshape(mixed, (n, h // 4, w // 4, self.cfg.fused_channels))
        return self.fuse_conv(mixed)

    @property
    def out_channels(self) -> int:
        return self.cfg.fused_channels


def observations_to_batch(frames) -> tuple[Tensor, Tensor]:
    """Stack rendered observations into encoder inputs (rgb, depth)."""
    rgb = np.stack([f.pseudo_rgb for f in frames]).astype(np.float32)
    # invalid depth reads as 0; scale keeps typical indoor ranges near [0, 1]
    depth = np.stack([f.depth for f in frames]).astype(np.float32) * 0.2
    return Tensor(rgb), Tensor(depth[..., None])
