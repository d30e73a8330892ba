"""
Prediction heads over encoder outputs.

* detection head: LayerNorm, MLP d -> d -> 4, sigmoid (box cx, cy, w, h)
* classification head: LayerNorm, MLP d -> d -> m_max + 1 (index 0 is the no-text class)
* alignment projections: linear maps d -> d_align, L2-normalised
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from yoro._tensor import (Tensor, l2_normalize, maximum, minimum, sigmoid, slice_rows,
                          softmax)
from yoro.config import ModelConfig
from yoro.encoder import EncoderOutput
from yoro.nn import MLP, LayerNorm, Linear, Module

# Box coordinates stay inside [BOX_EPS, 1 - BOX_EPS] so a saturated sigmoid
# never yields a zero-area box.
BOX_EPS = 1e-6


class DetectionHead(MLP):
    """
    Box regressor. The output bias starts at the logit of
    ``config.box_prior`` for width and height and at 0 (the image center)
    for the center.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(rng, config.d, config.d, 4, config.init_std)
        self.norm = LayerNorm(config.d)
        prior = config.box_prior
        self.fc2.bias.data[2:4] = math.log(prior / (1.0 - prior))

    def __call__(self, x: Tensor) -> Tensor:
        box = sigmoid(super().__call__(self.norm(x)))
        return minimum(maximum(box, BOX_EPS), 1.0 - BOX_EPS)


class ClassificationHead(MLP):
    """Returns logits; :attr:`Predictions.distributions` applies the softmax."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(rng, config.d, config.d, config.num_classes, config.init_std)
        self.norm = LayerNorm(config.d)

    def __call__(self, x: Tensor) -> Tensor:
        return super().__call__(self.norm(x))


class ProjectionHeads(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        std = config.init_std
        self.text = Linear(rng, config.d, config.d_align, std)
        self.det = Linear(rng, config.d, config.d_align, std)
        self.pa_text = Linear(rng, config.d, config.d_align, std)
        self.pa_vision = Linear(rng, config.d, config.d_align, std)


@dataclass
class Predictions:
    """``boxes`` (q, 4) in (0, 1) and class ``logits`` (q, m_max + 1)."""

    boxes: Tensor
    logits: Tensor

    @property
    def distributions(self) -> Tensor:
        return softmax(self.logits, axis=-1)


class AlignmentEmbeddings(NamedTuple):
    """Unit-norm projections; text and vision rows exclude their cls tokens."""

    text: Tensor
    det: Tensor
    pa_text: Tensor
    pa_vision: Tensor


def fuse_cls(o_det: Tensor, o_l_cls: Tensor) -> Tensor:
    """Add the transformed text cls token to every detection row."""
    return o_det + o_l_cls


class Heads(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.variant = config.variant
        self.detection = DetectionHead(config, rng)
        self.classification = ClassificationHead(config, rng)
        self.projection = ProjectionHeads(config, rng)

    def detection_features(self, out: EncoderOutput) -> Tensor:
        o_l_cls = slice_rows(out.o_l, 0, 1)
        if self.variant == "no_det" or out.o_det is None:
            return o_l_cls
        if self.variant == "no_cls":
            return out.o_det
        return fuse_cls(out.o_det, o_l_cls)

    def predict(self, out: EncoderOutput) -> Predictions:
        feats = self.detection_features(out)
        return Predictions(self.detection(feats), self.classification(feats))

    def project_for_alignment(self, out: EncoderOutput) -> AlignmentEmbeddings:
        proj = self.projection
        tokens = slice_rows(out.o_l, 1, out.o_l.shape[0])
        patches = slice_rows(out.o_v, 1, out.o_v.shape[0])
        raw_det = out.o_det if out.o_det is not None else slice_rows(out.o_l, 0, 1)
        return AlignmentEmbeddings(
            text=l2_normalize(proj.text(tokens)),
            det=l2_normalize(proj.det(raw_det)),
            pa_text=l2_normalize(proj.pa_text(tokens)),
            pa_vision=l2_normalize(proj.pa_vision(patches)),
        )
