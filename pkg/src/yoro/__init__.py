"""
yoro: Encoder-only visual grounding at desk scale
=================================================

A phrase and an image are embedded into one token sequence together with
learnable detection tokens, encoded by a plain transformer encoder, and
decoded into box hypotheses. Training matches hypotheses to the referred
boxes with Hungarian matching and combines box regression, soft
classification over phrase tokens, object-text alignment and patch-text
alignment losses. Everything runs on a small NumPy reverse-mode autograd
core in 64-bit precision.

Usage
-----
Synthetic data and training::

    from yoro import Config, SyntheticSpec, generate, train, evaluate
    samples = list(generate(SyntheticSpec(seed=7), 600))
    result = train(Config(), samples[:500], val_samples=samples[500:])
    evaluate(result.model, samples[500:], result.vocab).accuracy

Inference from a checkpoint::

    from yoro import load_checkpoint, infer
    model, vocab, _ = load_checkpoint("model.yoro")
    hit = infer(model, vocab, pixels, "the red circle left of the blue square")
    hit.box, hit.score

Command line::

    yoro gen --seed 7 --count 2000 --out data/train
    yoro train --data data/train --val data/val --out model.yoro
    yoro infer --ckpt model.yoro --image img.ppm --phrase "the blue square"
"""

from yoro._checkpoint import load_checkpoint, save_checkpoint
from yoro._errors import (CheckpointError, ConfigError, ContractError, DimensionError,
                          GenerationError, IngestError, InputError, NumericError, StateError,
                          ValidationError, YoroError)
from yoro.config import Config, ModelConfig, TrainConfig, load_config
from yoro.data import (GroundingSample, SyntheticSpec, Vocabulary, export_samples, generate,
                       ingest, tokenize)
from yoro.geometry import Box, PatchGrid, giou, iou, patch_coverage
from yoro.matching import Assignment, hungarian
from yoro.model import YoroModel
from yoro.runtime import evaluate, infer, train

__version__ = "0.1.0"

__all__ = [
    "Assignment", "Box", "CheckpointError", "Config", "ConfigError", "ContractError",
    "DimensionError", "GenerationError", "GroundingSample", "IngestError", "InputError",
    "ModelConfig", "NumericError", "PatchGrid", "StateError", "SyntheticSpec", "TrainConfig",
    "ValidationError", "Vocabulary", "YoroError", "YoroModel", "evaluate", "export_samples",
    "generate", "giou", "hungarian", "infer", "ingest", "iou", "load_checkpoint",
    "load_config", "patch_coverage", "save_checkpoint", "tokenize", "train", "__version__",
]
