"""
Spatio-temporal keypoint decoder.

A fixed grid of learnable queries, one per (frame, joint), is refined by
stacked layers of spatial self-attention (joints of one frame), temporal
self-attention (one joint across frames), cross-attention to the encoder
tokens and an MLP. A small head maps every query to a normalized (x, y).

The many_to_one variant keeps only the J center-frame queries and drops the
temporal sublayer.
"""

import logging
from typing import List

import numpy as np

from . import tensor as tn
from .config import ModelConfig
from .encoder import TokenSequence
from .errors import ShapeError
from .layers import MLP, LayerNorm, Linear, MultiHeadAttention, ParameterStore
from .poses import PoseWindow
from .tensor import Tensor

logger = logging.getLogger(__name__)


class DecoderLayer:
    """Pre-norm residual sublayers: spatial, temporal (optional), cross, MLP."""

    def __init__(self, store: ParameterStore, name: str, d_model: int, heads: int, mlp_ratio: int, temporal: bool = True):
        self.d_model = d_model
        self.sa_norm = LayerNorm(store, f"{name}.sa.norm", d_model)
        self.sa = MultiHeadAttention(store, f"{name}.sa", d_model, heads)
        self.ta = None
        if temporal:
            self.ta_norm = LayerNorm(store, f"{name}.ta.norm", d_model)
            self.ta = MultiHeadAttention(store, f"{name}.ta", d_model, heads)
        self.ca_norm = LayerNorm(store, f"{name}.ca.norm", d_model)
        self.ca = MultiHeadAttention(store, f"{name}.ca", d_model, heads)
        self.mlp_norm = LayerNorm(store, f"{name}.mlp.norm", d_model)
        self.mlp = MLP(store, f"{name}.mlp", d_model, mlp_ratio * d_model, d_model)

    def _check(self, q: Tensor) -> None:
        if q.ndim != 3 or q.shape[-1] != self.d_model:
            raise ShapeError(f"decoder queries must be [T][J][{self.d_model}], got {q.shape}")

    def spatial_attention(self, q: Tensor) -> Tensor:
        """Self-attention over joints, independently per frame."""
        self._check(q)
        return self.sa(q, q)

    def temporal_attention(self, q: Tensor) -> Tensor:
        """Self-attention over frames, independently per joint."""
        self._check(q)
        per_joint = q.permute(1, 0, 2)
        return self.ta(per_joint, per_joint).permute(1, 0, 2)

    def cross_attention(self, q: Tensor, memory: Tensor, key_pos: Tensor) -> Tensor:
        """Every query attends to all encoder tokens."""
        self._check(q)
        if memory.ndim != 2 or memory.shape[1] != self.d_model or key_pos.shape != memory.shape:
            raise ShapeError(f"memory must be [N][{self.d_model}], got {memory.shape} / {key_pos.shape}")
        frames, joints, _ = q.shape
        flat = q.reshape(1, frames * joints, self.d_model)
        out = self.ca(flat, memory.reshape(1, *memory.shape), key_pos.reshape(1, *key_pos.shape))
        return out.reshape(frames, joints, self.d_model)

    def __call__(self, q: Tensor, memory: Tensor, key_pos: Tensor) -> Tensor:
        q = q + self.spatial_attention(self.sa_norm(q))
        if self.ta is not None:
            q = q + self.temporal_attention(self.ta_norm(q))
        q = q + self.cross_attention(self.ca_norm(q), memory, key_pos)
        return q + self.mlp(self.mlp_norm(q))


class Decoder:
    def __init__(self, config: ModelConfig, store: ParameterStore):
        d = config.d_model
        self.config = config
        self.frames = config.output_frames
        self.joints = config.joints
        temporal = config.strategy == "many_to_many"
        self.input_proj = Linear(store, "decoder.input_proj", config.feature_channels, d)
        self.pos_proj = Linear(store, "decoder.pos_proj", config.feature_channels, d)
        self.queries = store.normal("decoder.queries", (self.frames, self.joints, d))
        self.layers: List[DecoderLayer] = [
            DecoderLayer(store, f"decoder.layer.{i}", d, config.heads, config.mlp_ratio, temporal)
            for i in range(config.decoder_layers)
        ]
        self.norm = LayerNorm(store, "decoder.norm", d)
        self.head = MLP(store, "decoder.head", d, d, 2)

    def __call__(self, encoded: TokenSequence) -> Tensor:
        """Normalized keypoints [T_out][J][2] in [0, 1]."""
        memory = self.input_proj(encoded.tokens)
        key_pos = self.pos_proj(encoded.positions)
        q = self.queries
        for layer in self.layers:
            q = layer(q, memory, key_pos)
        return tn.sigmoid(self.head(self.norm(q)))


def to_pose_window(coords: Tensor, start_frame: int = 0) -> PoseWindow:
    return PoseWindow(coords=np.array(coords.data, dtype=np.float64), start_frame=start_frame)
