"""Map decoder: fused allocentric tensor -> per-cell class logits."""

from __future__ import annotations

import numpy as np

from .autodiff import Conv2d, Module, Tensor, relu, reshape
from .categories import NUM_CLASSES


class Decoder(Module):
    """3x3 conv -> ReLU -> 3x3 conv -> ReLU -> 1x1 conv to K channels.

    Spatial extents are preserved (padding 1 on the 3x3 taps).
    """

    def __init__(self, in_channels: int, rng: np.random.Generator,
                 hidden: int = 16, num_classes: int = NUM_CLASSES):
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.conv1 = Conv2d(3, 3, in_channels, hidden, rng, stride=1, padding=1)
        self.conv2 = Conv2d(3, 3, hidden, hidden, rng, stride=1, padding=1)
        self.head = Conv2d(1, 1, hidden, num_classes, rng, stride=1, padding=0)

    def __call__(self, fused: Tensor) -> Tensor:
        if fused.data.ndim != 3 or fused.shape[2] != self.in_channels:
            raise ValueError(
                f"decoder expects (H, W, {self.in_channels}), got {fused.shape}"
            )
        h, w, c = fused.shape
        x = reshape(fused, (1, h, w, c))
        x = relu(self.conv1(x))
        x = relu(self.conv2(x))
        x = self.head(x)
        return reshape(x, (h, w, self.num_classes))


def predict_classes(logits) -> np.ndarray:
    """Per-cell argmax; ties break toward the lowest class id."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1).astype(np.uint8)
