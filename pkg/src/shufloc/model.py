"""Bundle of all trainable parameter groups for one localization model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionNetParams, ClassifierParams
from .intra import OrderNetParams
from .ndtensor import Tensor

__all__ = ["Model"]


@dataclass
class Model:
    """Attention scorer, video-level classifier, and clip-order head."""

    num_classes: int
    feat_dim: int
    attention: AttentionNetParams
    classifier: ClassifierParams
    order_net: OrderNetParams

    @classmethod
    def init(
        cls,
        num_classes: int,
        feat_dim: int,
        rng: np.random.Generator,
        hidden_attention: int = 256,
        hidden_relation: int = 256,
        n_clips: int = 5,
    ) -> "Model":
        return cls(
            num_classes=num_classes,
            feat_dim=feat_dim,
            attention=AttentionNetParams.init(feat_dim, hidden_attention, rng),
            classifier=ClassifierParams.init(feat_dim, num_classes, rng),
            order_net=OrderNetParams.init(feat_dim, n_clips, hidden_relation, rng),
        )

    def params(self) -> dict[str, Tensor]:
        """Stable name -> tensor mapping covering every trainable buffer."""
        out: dict[str, Tensor] = {}
        out.update(self.attention.named())
        out.update(self.classifier.named())
        out.update(self.order_net.named())
        return out
