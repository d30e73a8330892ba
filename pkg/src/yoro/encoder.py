"""
Pre-norm transformer encoder over the joint text/vision/detection sequence.

Each layer computes::

    x' = x + MSA(LN(x))
    x  = x' + FFN(LN(x'))

Attention is full (unmasked) across all modalities.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from yoro._errors import DimensionError, StateError
from yoro._tensor import Tensor, dropout, matmul, reshape, scale, softmax, transpose
from yoro.config import ModelConfig
from yoro.embedding import Segments, split
from yoro.nn import MLP, LayerNorm, Linear, Module


class MultiHeadAttention(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.heads = config.heads
        self.head_width = config.head_width
        std = config.init_std
        self.query = Linear(rng, config.d, config.d, std)
        self.key = Linear(rng, config.d, config.d, std)
        self.value = Linear(rng, config.d, config.d, std)
        self.out = Linear(rng, config.d, config.d, std)

    def _split_heads(self, x: Tensor) -> Tensor:
        length = x.shape[0]
        return transpose(reshape(x, (length, self.heads, self.head_width)), (1, 0, 2))

    def __call__(self, x: Tensor, retain: Optional[List[np.ndarray]] = None) -> Tensor:
        length, d = x.shape
        q = self._split_heads(self.query(x))
        k = self._split_heads(self.key(x))
        v = self._split_heads(self.value(x))
        logits = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.head_width))
        weights = softmax(logits, axis=-1)
        if retain is not None:
            retain.append(weights.numpy())
        ctx = matmul(weights, v)
        ctx = reshape(transpose(ctx, (1, 0, 2)), (length, d))
        return self.out(ctx)


class EncoderLayer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(config.d)
        self.attn = MultiHeadAttention(config, rng)
        self.norm2 = LayerNorm(config.d)
        self.ffn = MLP(rng, config.d, config.ffn_mult * config.d, config.d, config.init_std)
        self.dropout = config.dropout

    def __call__(self, x: Tensor, retain: Optional[List[np.ndarray]] = None,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        h = self.attn(self.norm1(x), retain)
        if rng is not None:
            h = dropout(h, self.dropout, rng)
        x = x + h
        h = self.ffn(self.norm2(x))
        if rng is not None:
            h = dropout(h, self.dropout, rng)
        return x + h


@dataclass
class EncoderOutput:
    """
    Encoder outputs split by modality.

    ``o_det`` is None for the ``no_det`` variant. ``attention`` holds one
    ``(heads, L, L)`` array per layer when attention was retained.
    """

    o_l: Tensor
    o_v: Tensor
    o_det: Optional[Tensor]
    segments: Segments
    attention: Optional[List[np.ndarray]] = field(default=None)


class Encoder(Module):
    """``depth`` pre-norm layers."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.d = config.d
        self.layers = [EncoderLayer(config, rng) for _ in range(config.depth)]

    def __call__(self, x0: Tensor, segments: Segments, retain_attention: bool = False,
                 rng: Optional[np.random.Generator] = None) -> EncoderOutput:
        return encode(self, x0, segments, retain_attention, rng)


def encode(encoder: Encoder, x0: Tensor, segments: Segments, retain_attention: bool = False,
           rng: Optional[np.random.Generator] = None) -> EncoderOutput:
    """
    Run every layer over ``x0`` and split the result by ``segments``.

    Parameters
    ----------
    rng : numpy.random.Generator, optional
        Source for dropout; dropout is skipped when None (evaluation).
    """
    if x0.ndim != 2 or x0.shape != (segments.length, encoder.d):
        raise DimensionError(f"encoder input {x0.shape} does not match "
                             f"({segments.length}, {encoder.d})",
                             got=x0.shape, expected=(segments.length, encoder.d))
    retained: Optional[List[np.ndarray]] = [] if retain_attention else None
    x = x0
    for layer in encoder.layers:
        x = layer(x, retained, rng)
    o_l, o_v, o_det = split(x, segments)
    return EncoderOutput(o_l, o_v, o_det, segments, retained)


def attention_map(out: EncoderOutput, layer: int, det_index: int,
                  per_head: bool = False) -> np.ndarray:
    """
    Attention from detection token *det_index* to the ``n`` image patches.

    Returns the head average of shape ``(n,)``, or ``(heads, n)`` when
    *per_head* is set. Negative *layer* counts from the last layer.
    """
    if out.attention is None:
        raise StateError("attention was not retained; encode with retain_attention=True")
    if not out.attention:
        raise StateError("encoder has no layers, no attention to export")
    if not -len(out.attention) <= layer < len(out.attention):
        raise DimensionError(f"layer {layer} outside 0..{len(out.attention) - 1}", layer=layer)
    # without detection tokens the text cls row is the single detection feature
    det_rows = out.segments.det_len or 1
    if not 0 <= det_index < det_rows:
        raise DimensionError(f"detection index {det_index} outside 0..{det_rows - 1}",
                             det_index=det_index)
    weights = out.attention[layer]
    row = out.segments.det[0] + det_index if out.segments.det_len else 0
    start, stop = out.segments.vision
    patches = weights[:, row, start + 1:stop]
    if per_head:
        return patches.copy()
    return patches.mean(axis=0)
