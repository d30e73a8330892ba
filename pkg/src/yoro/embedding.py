"""
Multi-modal transformer input: text tokens, image patches and detection
tokens assembled into one sequence ``[f_l ; f_v ; f_det]``.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from yoro._errors import DimensionError, InputError
from yoro._log import get_logger
from yoro._tensor import Tensor, concat_rows, matmul, slice_rows, take, transpose
from yoro.config import ModelConfig
from yoro.nn import Module, normal_param

logger = get_logger("embedding")

PIXEL_MEAN = 0.5
PIXEL_STD = 0.5


class TextEmbedding(NamedTuple):
    features: Tensor
    truncated: bool


class LanguageEmbedding(Module):
    """Word projection ``W_l`` (d x v), text cls token, positions and type vector."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        std = config.init_std
        self.m_max = config.m_max
        self.vocab_size = config.vocab_size
        self.proj = normal_param(rng, (config.d, config.vocab_size), std)
        self.cls = normal_param(rng, (1, config.d), std)
        self.pos = normal_param(rng, (config.m_max + 1, config.d), std)
        self.type = normal_param(rng, (config.d,), std)

    def __call__(self, token_ids: Sequence[int]) -> TextEmbedding:
        return embed_text(token_ids, self)


class VisionEmbedding(Module):
    """Patch projection ``W_v`` (d x 3s^2), vision cls token, positions and type vector."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        std = config.init_std
        self.height = config.image_height
        self.width = config.image_width
        self.patch = config.patch
        self.proj = normal_param(rng, (config.d, 3 * config.patch ** 2), std)
        self.cls = normal_param(rng, (1, config.d), std)
        self.pos = normal_param(rng, (config.n + 1, config.d), std)
        self.type = normal_param(rng, (config.d,), std)

    def __call__(self, pixels: np.ndarray) -> Tensor:
        return embed_image(pixels, self)


class DetectionTokens(Module):
    """``q`` learnable detection tokens, initialised N(0, 0.02)."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.tokens = normal_param(rng, (config.q, config.d), config.init_std)

    def __call__(self) -> Tensor:
        return self.tokens


def embed_text(token_ids: Sequence[int], lang: LanguageEmbedding) -> TextEmbedding:
    """
    Embed a token id sequence as ``[cls ; W_l t_1 ; ... ; W_l t_m]`` plus
    positions and the text type vector.

    Sequences longer than ``m_max`` are truncated (order preserved) and
    flagged in the result.
    """
    ids = [int(t) for t in token_ids]
    if not ids:
        raise InputError("cannot embed an empty token sequence")
    truncated = len(ids) > lang.m_max
    if truncated:
        logger.warning("phrase of %d tokens truncated to %d", len(ids), lang.m_max)
        ids = ids[:lang.m_max]
    if min(ids) < 0 or max(ids) >= lang.vocab_size:
        raise DimensionError(f"token id outside vocabulary of size {lang.vocab_size}",
                             vocab_size=lang.vocab_size)
    words = transpose(take(lang.proj, ids, axis=1))
    seq = concat_rows([lang.cls, words])
    seq = seq + slice_rows(lang.pos, 0, len(ids) + 1) + lang.type
    return TextEmbedding(seq, truncated)


def patchify(pixels: np.ndarray, patch: int) -> np.ndarray:
    """Split ``H x W x 3`` into ``n`` row-major patches of length ``3 s^2``."""
    h, w, c = pixels.shape
    grid = pixels.reshape(h // patch, patch, w // patch, patch, c)
    return grid.transpose(0, 2, 1, 3, 4).reshape((h // patch) * (w // patch), patch * patch * c)


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float64) - PIXEL_MEAN) / PIXEL_STD


def embed_image(pixels: np.ndarray, vis: VisionEmbedding) -> Tensor:
    """
    Embed an ``H x W x 3`` image with values in ``[0, 1]`` as
    ``[cls ; W_v p_1 ; ... ; W_v p_n]`` plus positions and the vision type
    vector.
    """
    pixels = np.asarray(pixels)
    if pixels.shape != (vis.height, vis.width, 3):
        raise DimensionError(
            f"image must be {vis.height}x{vis.width}x3, got {pixels.shape}",
            expected=(vis.height, vis.width, 3), got=pixels.shape)
    patches = Tensor(patchify(normalize_pixels(pixels), vis.patch))
    feats = matmul(patches, transpose(vis.proj))
    seq = concat_rows([vis.cls, feats])
    return seq + vis.pos + vis.type


@dataclass(frozen=True)
class Segments:
    """Row offsets of the three modalities inside the assembled sequence."""

    text_len: int
    vision_len: int
    det_len: int

    @property
    def text(self) -> Tuple[int, int]:
        return (0, self.text_len)

    @property
    def vision(self) -> Tuple[int, int]:
        return (self.text_len, self.text_len + self.vision_len)

    @property
    def det(self) -> Tuple[int, int]:
        start = self.text_len + self.vision_len
        return (start, start + self.det_len)

    @property
    def offsets(self) -> Tuple[int, int, int]:
        return (0, self.text_len, self.text_len + self.vision_len)

    @property
    def length(self) -> int:
        return self.text_len + self.vision_len + self.det_len


def assemble(f_l: Tensor, f_v: Tensor, f_det: Tensor = None) -> Tuple[Tensor, Segments]:
    """Concatenate language, vision and detection rows; ``f_det`` may be None."""
    parts: List[Tensor] = [f_l, f_v] + ([f_det] if f_det is not None else [])
    width = f_l.shape[-1]
    for part in parts:
        if part.ndim != 2 or part.shape[1] != width:
            raise DimensionError(f"segment width {part.shape} differs from {width}",
                                 width=width, got=part.shape)
    segments = Segments(f_l.shape[0], f_v.shape[0], 0 if f_det is None else f_det.shape[0])
    return concat_rows(parts), segments


def split(x: Tensor, segments: Segments) -> Tuple[Tensor, Tensor, Tensor]:
    """Inverse of :func:`assemble`; the detection part is None when empty."""
    o_l = slice_rows(x, *segments.text)
    o_v = slice_rows(x, *segments.vision)
    o_det = slice_rows(x, *segments.det) if segments.det_len else None
    return o_l, o_v, o_det
