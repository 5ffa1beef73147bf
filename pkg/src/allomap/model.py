"""End-to-end mapping model: encode -> project -> accumulate -> decode."""

from __future__ import annotations

import numpy as np

from .autodiff import Module, Tensor, gather, no_grad
from .decoder import Decoder
from .encoder import Encoder, EncoderConfig, observations_to_batch
from .geometry import GridSpec, projection_index
from .memory import ProjectedFeatures, SpatialMemory, project_step

FEATURE_STRIDE = 4  # encoder output lives at 1/4 image resolution


class MappingModel(Module):
    def __init__(self, encoder_cfg: EncoderConfig, memory_variant: str,
                 memory_channels: int, decoder_hidden: int, seed: int,
                 tie_directions: bool = False):
        rng = np.random.default_rng(seed & 0xFFFFFFFF)
        self.encoder = Encoder(encoder_cfg, rng)
        self.memory = SpatialMemory(memory_variant, self.encoder.out_channels,
                                    memory_channels, rng, tie_directions)
        self.decoder = Decoder(self.memory.out_channels, rng, hidden=decoder_hidden)

    def encode_frames(self, frames, frozen: bool = False) -> Tensor:
        rgb, depth = observations_to_batch(frames)
        depth_in = depth if self.encoder.cfg.modality == "rgbd" else None
        if frozen:
            with no_grad():
                feats = self.encoder.encode(rgb, depth_in)
            return Tensor(feats.data)
        return self.encoder.encode(rgb, depth_in)

    def project_frames(self, features: Tensor, frames,
                       grid: GridSpec) -> list[ProjectedFeatures]:
        steps = []
        for k, obs in enumerate(frames):
            index = projection_index(obs.depth, obs.intrinsics, obs.pose, grid,
                                     FEATURE_STRIDE)
            steps.append(project_step(gather(features, np.array([k])), index))
        return steps

    def forward(self, frames, grid: GridSpec, frozen_encoder: bool = False):
        """Observations -> (per-cell logits (H, W, K), observed mask (H, W))."""
        features = self.encode_frames(frames, frozen=frozen_encoder)
        return self.forward_with_features(features, frames, grid)

    def forward_with_features(self, features: Tensor, frames, grid: GridSpec):
        """Shared tail of the one-stage and two-stage pipelines."""
        steps = self.project_frames(features, frames, grid)
        fused, observed = self.memory.run(steps, grid)
        return self.decoder(fused), observed

    def head_parameters(self):
        """Everything trained in stage two: memory + decoder."""
        return [(f"memory.{n}", t) for n, t in self.memory.named_parameters()] + \
               [(f"decoder.{n}", t) for n, t in self.decoder.named_parameters()]
