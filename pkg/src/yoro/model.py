"""
The YORO grounding model: embeddings, encoder and heads wired together.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from yoro.config import ModelConfig
from yoro.embedding import (DetectionTokens, LanguageEmbedding, VisionEmbedding, assemble,
                            embed_image, embed_text)
from yoro.encoder import Encoder, EncoderOutput
from yoro.heads import AlignmentEmbeddings, Heads, Predictions
from yoro.nn import Module


@dataclass
class ForwardResult:
    encoded: EncoderOutput
    predictions: Predictions
    alignment: Optional[AlignmentEmbeddings]
    truncated: bool


class YoroModel(Module):
    """
    Encoder-only visual grounding model.

    Parameters
    ----------
    config : ModelConfig
        Architecture; ``config.vocab_size`` must match the vocabulary.
    seed : int
        Seed of the parameter initialisation.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        self.lang = LanguageEmbedding(config, rng)
        self.vision = VisionEmbedding(config, rng)
        self.det = DetectionTokens(config, rng) if config.variant != "no_det" else None
        self.encoder = Encoder(config, rng)
        self.heads = Heads(config, rng)

    def embed(self, token_ids: Sequence[int], pixels: np.ndarray):
        """Build ``x0`` and its segment offsets; returns ``(x0, segments, truncated)``."""
        text = embed_text(token_ids, self.lang)
        f_v = embed_image(pixels, self.vision)
        f_det = self.det() if self.det is not None else None
        x0, segments = assemble(text.features, f_v, f_det)
        return x0, segments, text.truncated

    def forward(self, token_ids: Sequence[int], pixels: np.ndarray,
                retain_attention: bool = False, with_alignment: bool = True,
                rng: Optional[np.random.Generator] = None) -> ForwardResult:
        """
        Full forward pass for one image/phrase pair.

        ``rng`` enables dropout (training); leave it None for evaluation.
        """
        x0, segments, truncated = self.embed(token_ids, pixels)
        encoded = self.encoder(x0, segments, retain_attention=retain_attention, rng=rng)
        predictions = self.heads.predict(encoded)
        alignment = self.heads.project_for_alignment(encoded) if with_alignment else None
        return ForwardResult(encoded, predictions, alignment, truncated)

    __call__ = forward
