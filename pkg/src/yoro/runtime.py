"""
Training, inference and evaluation.

Training processes samples one at a time: each sample builds its own
graph, is matched to its ground truth on detached predictions, and
back-propagates its loss scaled by ``1 / batch``; gradients of a batch are
accumulated in sample order, clipped to the global norm limit and applied
by AdamW at the scheduled learning rate.
"""

import json
import math
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from yoro._errors import ContractError, InputError, NumericError
from yoro._log import get_logger
from yoro._tensor import backward, no_grad, scale
from yoro.config import Config, ModelConfig, TrainConfig
from yoro.data import GroundingSample, Vocabulary, tokenize
from yoro.encoder import attention_map
from yoro.geometry import Box, iou
from yoro.losses import GroundTruth, match_predictions, total_loss
from yoro.model import YoroModel
from yoro.optim import AdamW, Schedule, clip_grad_norm

logger = get_logger("runtime")

PathLike = Union[str, Path]
METRIC_KEYS = ("l_bbox", "l_cls", "l_oa", "l_pa", "l_total")


@dataclass
class PreparedSample:
    token_ids: List[int]
    pixels: np.ndarray
    gt: GroundTruth


def prepare(samples: Sequence[GroundingSample], vocab: Vocabulary,
            config: ModelConfig) -> List[PreparedSample]:
    return [PreparedSample(s.token_ids(vocab, config.m_max), s.pixels, s.ground_truth(config))
            for s in samples]


# ---------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------

@dataclass
class Inference:
    """Selected box and everything that led to it."""

    box: Box
    score: float
    token: int
    distribution: np.ndarray
    scores: np.ndarray
    boxes: np.ndarray
    encoded: Any = field(default=None, repr=False)

    def to_dict(self, width: int, height: int) -> Dict[str, Any]:
        return {
            "box": list(self.box.as_tuple()),
            "box_pixels": list(self.box.to_pixels(width, height)),
            "score": self.score,
            "token": self.token,
        }


def select(scores: Sequence[float]) -> int:
    """Index of the highest score; the lowest index wins ties."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def infer_ids(model: YoroModel, token_ids: Sequence[int], pixels: np.ndarray,
              retain_attention: bool = False) -> Inference:
    with no_grad():
        result = model(token_ids, pixels, retain_attention=retain_attention,
                       with_alignment=False)
        probs = result.predictions.distributions.numpy()
    boxes = result.predictions.boxes.numpy()
    scores = 1.0 - probs[:, 0]
    best = select(scores)
    return Inference(Box(*boxes[best]), float(scores[best]), best, probs[best], scores, boxes,
                     result.encoded)


def infer(model: YoroModel, vocab: Vocabulary, pixels: np.ndarray, phrase: str,
          retain_attention: bool = False) -> Inference:
    """
    Ground *phrase* in *pixels*.

    The detection token with the highest ``1 - P(no-text)`` supplies the box.

    Raises
    ------
    InputError
        If the phrase holds no words.
    """
    ids = tokenize(phrase, vocab)
    if len(ids) > model.config.m_max:
        logger.warning("phrase of %d tokens truncated to %d", len(ids), model.config.m_max)
        ids = ids[:model.config.m_max]
    return infer_ids(model, ids, pixels, retain_attention)


def attention(model: YoroModel, vocab: Vocabulary, pixels: np.ndarray, phrase: str,
              layer: int = -1, token: Optional[int] = None,
              per_head: bool = False) -> Tuple[np.ndarray, Inference]:
    """
    Attention of a detection token over the image patches.

    *token* defaults to the detection token whose box is selected.
    """
    result = infer(model, vocab, pixels, phrase, retain_attention=True)
    det_index = result.token if token is None else token
    return attention_map(result.encoded, layer, det_index, per_head=per_head), result


def heatmap_image(weights: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Min-max scale ``rows * cols`` weights to an 8-bit grid; a flat map is all zero."""
    grid = np.asarray(weights, dtype=np.float64).reshape(rows, cols)
    lo, hi = grid.min(), grid.max()
    if hi <= lo:
        return np.zeros((rows, cols), dtype=np.uint8)
    return np.round((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------

@dataclass
class Evaluation:
    accuracy: float
    records: List[Dict[str, Any]]

    def to_dict(self) -> Dict[str, Any]:
        return {"accuracy": self.accuracy, "count": len(self.records)}


def score_predictions(predicted: Sequence[Box], targets: Sequence[Box],
                      threshold: float = 0.5) -> Evaluation:
    """Accuracy at IoU >= *threshold* (inclusive) with per-sample records."""
    if len(predicted) != len(targets):
        raise ContractError(f"{len(predicted)} predictions for {len(targets)} targets")
    if not targets:
        raise ContractError("cannot evaluate an empty dataset")
    records, hits = [], 0
    for idx, (pred, gt) in enumerate(zip(predicted, targets)):
        overlap = iou(pred, gt)
        hit = overlap >= threshold
        hits += hit
        records.append({"index": idx, "iou": overlap, "hit": bool(hit),
                        "box": list(pred.as_tuple())})
    return Evaluation(hits / len(targets), records)


def evaluate(model: YoroModel, samples: Sequence[GroundingSample],
             vocab: Vocabulary) -> Evaluation:
    """Accuracy@0.5 of the selected box against the first ground-truth box."""
    predicted = []
    for sample in samples:
        ids = sample.token_ids(vocab, model.config.m_max)
        predicted.append(infer_ids(model, ids, sample.pixels).box)
    evaluation = score_predictions(predicted, [s.boxes[0] for s in samples])
    for record, sample in zip(evaluation.records, samples):
        record["phrase"] = sample.phrase
    return evaluation


# ---------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------

@dataclass
class TrainResult:
    model: YoroModel
    vocab: Vocabulary
    history: List[Dict[str, Any]]


def _dump_nonfinite(where: Optional[Path], payload: Dict[str, Any]) -> Path:
    if where is None:
        where = Path(tempfile.mkdtemp(prefix="yoro-"))
    where.mkdir(parents=True, exist_ok=True)
    path = where / "nonfinite_batch.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def train(config: Config, samples: Sequence[GroundingSample],
          val_samples: Optional[Sequence[GroundingSample]] = None,
          vocab: Optional[Vocabulary] = None,
          metrics_path: Optional[PathLike] = None) -> TrainResult:
    """
    Train a model from scratch.

    Parameters
    ----------
    config : Config
        ``config.model.vocab_size`` is replaced by the vocabulary size.
    samples : sequence of GroundingSample
        Training set; shuffled each epoch from ``config.train.seed``.
    val_samples : sequence of GroundingSample, optional
        Held-out set scored after every epoch (``val_acc`` is null without it).
    vocab : Vocabulary, optional
        Built from the training phrases when omitted.
    metrics_path : str or Path, optional
        Line-delimited JSON log, one line per epoch.

    Raises
    ------
    ContractError
        If *samples* is empty.
    NumericError
        If a loss turns non-finite; the offending batch is dumped next to
        the metrics log first.
    """
    if not samples:
        raise ContractError("training needs at least one sample")
    tc: TrainConfig = config.train.validate()
    if vocab is None:
        vocab = Vocabulary.build(s.phrase for s in samples)
    mc = config.model.replace(vocab_size=len(vocab))
    model = YoroModel(mc, seed=tc.seed)
    data = prepare(samples, vocab, mc)
    params = model.parameters()
    optimizer = AdamW(params, lr=tc.lr, betas=tc.betas, eps=tc.eps,
                      weight_decay=tc.weight_decay)
    steps_per_epoch = math.ceil(len(data) / tc.batch_size)
    schedule = Schedule(tc.lr, tc.epochs * steps_per_epoch, tc.warmup_fraction)
    rng = np.random.default_rng(tc.seed)
    dropout_rng = rng if mc.dropout > 0.0 else None

    metrics_file = None
    dump_dir = None
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        metrics_file = open(metrics_path, "w", encoding="utf-8", newline="\n")
        dump_dir = metrics_path.parent

    logger.info("training %d samples, %d epochs x %d steps, variant %s",
                len(data), tc.epochs, steps_per_epoch, mc.variant)
    history: List[Dict[str, Any]] = []
    step = 0
    bar = tqdm(total=tc.epochs * steps_per_epoch, desc="train", file=sys.stderr,
               disable=not tc.progress, leave=False)
    try:
        for epoch in range(1, tc.epochs + 1):
            order = rng.permutation(len(data))
            sums = dict.fromkeys(METRIC_KEYS, 0.0)
            lr = 0.0
            for start in range(0, len(order), tc.batch_size):
                batch = [int(i) for i in order[start:start + tc.batch_size]]
                optimizer.zero_grad()
                for idx in batch:
                    item = data[idx]
                    try:
                        result = model(item.token_ids, item.pixels,
                                       with_alignment=tc.use_oa or tc.use_pa, rng=dropout_rng)
                        assignment = match_predictions(result.predictions, item.gt, mc)
                        losses = total_loss(item.gt, result, assignment, mc,
                                            tc.use_oa, tc.use_pa)
                        if not math.isfinite(losses.l_total):
                            raise NumericError("non-finite training loss",
                                               losses=losses.as_dict())
                    except NumericError as e:
                        dump = _dump_nonfinite(dump_dir, {
                            "epoch": epoch, "step": step, "batch": batch, "sample": idx,
                            "phrase": samples[idx].phrase, "error": str(e),
                            "context": {k: repr(v) for k, v in e.context.items()}})
                        logger.error("non-finite loss at epoch %d step %d; batch dumped to %s",
                                     epoch, step, dump)
                        raise NumericError(f"training aborted: {e}", epoch=epoch, step=step,
                                           sample=idx, dump=str(dump)) from e
                    backward(scale(losses.objective, 1.0 / len(batch)))
                    for key in METRIC_KEYS:
                        sums[key] += getattr(losses, key)
                clip_grad_norm(params, tc.grad_clip)
                lr = schedule(step)
                optimizer.step(lr)
                step += 1
                bar.update(1)

            record: Dict[str, Any] = {"epoch": epoch}
            record.update({key: sums[key] / len(data) for key in METRIC_KEYS})
            record["val_acc"] = evaluate(model, val_samples, vocab).accuracy if val_samples else None
            record["lr"] = lr
            history.append(record)
            logger.debug("epoch %d: %s", epoch, record)
            if metrics_file is not None:
                metrics_file.write(json.dumps(record, sort_keys=True) + "\n")
                metrics_file.flush()
    finally:
        bar.close()
        if metrics_file is not None:
            metrics_file.close()
    return TrainResult(model, vocab, history)


# ---------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------

# name -> (model overrides, train overrides)
ABLATIONS: Dict[str, Tuple[Dict[str, Any], Dict[str, Any]]] = {
    "full": ({}, {}),
    "cl_re": ({}, {"use_oa": False, "use_pa": False}),
    "cl_re_oa": ({}, {"use_pa": False}),
    "no_det": ({"variant": "no_det"}, {}),
    "no_cls": ({"variant": "no_cls"}, {}),
    "q1": ({"q": 1}, {}),
    "q10": ({"q": 10}, {}),
}
DET_GAP = 0.03
LOSS_SLACK = 0.01


def ablate(config: Config, samples: Sequence[GroundingSample],
           val_samples: Sequence[GroundingSample], seeds: Sequence[int] = (0, 1, 2),
           variants: Optional[Sequence[str]] = None,
           metrics_path: Optional[PathLike] = None) -> Dict[str, Any]:
    """
    Train every ablation variant for every seed and score it on *val_samples*.

    Appends ``{variant, seed, val_acc}`` lines and a final ``{"summary": ...}``
    line to *metrics_path*. The summary carries the mean accuracy per
    variant, the detection-token gap gate (full beats ``no_det`` by at least
    0.03) and the soft loss check (full within 0.01 of ``cl_re`` or better).
    """
    if not val_samples:
        raise ContractError("ablations need held-out samples")
    names = list(variants) if variants else list(ABLATIONS)
    unknown = sorted(set(names) - set(ABLATIONS))
    if unknown:
        raise InputError(f"unknown ablation variants: {unknown}", variants=unknown)
    vocab = Vocabulary.build(s.phrase for s in samples)
    out = None
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        out = open(metrics_path, "a", encoding="utf-8", newline="\n")
    accuracies: Dict[str, List[float]] = {name: [] for name in names}
    try:
        for name in names:
            model_changes, train_changes = ABLATIONS[name]
            for seed in seeds:
                run = Config(model=config.model.replace(**model_changes),
                             train=config.train.replace(seed=int(seed), **train_changes))
                result = train(run, samples, vocab=vocab)
                acc = evaluate(result.model, val_samples, vocab).accuracy
                accuracies[name].append(acc)
                logger.info("ablation %s seed %d: val_acc %.4f", name, seed, acc)
                if out is not None:
                    out.write(json.dumps({"variant": name, "seed": int(seed), "val_acc": acc},
                                         sort_keys=True) + "\n")
                    out.flush()

        means = {name: float(np.mean(accs)) for name, accs in accuracies.items()}
        summary: Dict[str, Any] = {"mean_val_acc": means, "seeds": [int(s) for s in seeds]}
        if "full" in means and "no_det" in means:
            gap = means["full"] - means["no_det"]
            summary["det_gap"] = gap
            summary["det_gate_passed"] = gap >= DET_GAP
        if "full" in means and "cl_re" in means:
            passed = means["full"] >= means["cl_re"] - LOSS_SLACK
            summary["loss_check_passed"] = passed
            if not passed:
                logger.warning("full loss %.4f trails the CL+RE baseline %.4f",
                               means["full"], means["cl_re"])
        if out is not None:
            out.write(json.dumps({"summary": summary}, sort_keys=True) + "\n")
    finally:
        if out is not None:
            out.close()
    return summary
