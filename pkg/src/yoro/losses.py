"""
Training losses and the combined objective.

Per sample, with ``g`` ground-truth boxes matched to detection tokens::

    L_total = L_bbox + L_cls + L_OA + L_PA
    L_OA    = (L_OTA + L_TOA) / 2        object <-> text contrastive alignment
    L_PA    = (L_TPA + L_PTA) / 2        token <-> patch alignment against table A

``L_OA`` and ``L_PA`` can be switched off for the loss ablations; their
values are then reported as zero and excluded from the objective.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from yoro._errors import ContractError, DimensionError, StateError
from yoro._log import get_logger
from yoro._tensor import (Tensor, log_softmax, matmul, maximum, mul, no_grad, reshape, scale,
                          slice_rows, tabs, take, transpose, tsum)
from yoro.config import ModelConfig
from yoro.geometry import Box, PatchGrid, giou_tensor, patch_coverage
from yoro.matching import Assignment, build_cost, hungarian

logger = get_logger("losses")

PROB_FLOOR = 1e-12
_LOG_FLOOR = math.log(PROB_FLOOR)


@dataclass(frozen=True)
class GroundTruth:
    """
    Targets of one sample.

    ``token_sets[k]`` holds the 0-based phrase positions referring to box
    ``k``; ``alignment`` is the binary ``(m, n)`` table A.
    """

    boxes: np.ndarray
    token_sets: Tuple[Tuple[int, ...], ...]
    alignment: np.ndarray
    num_classes: int

    @property
    def g(self) -> int:
        return self.boxes.shape[0]

    @property
    def m(self) -> int:
        return self.alignment.shape[0]

    @property
    def object_sets(self) -> Tuple[Tuple[int, ...], ...]:
        """``O_i``: boxes referred to by token ``i``."""
        sets: List[List[int]] = [[] for _ in range(self.m)]
        for k, tokens in enumerate(self.token_sets):
            for i in tokens:
                sets[i].append(k)
        return tuple(tuple(s) for s in sets)

    @property
    def class_targets(self) -> np.ndarray:
        """``P_gt``: one row per box, uniform over its tokens (class = position + 1)."""
        p = np.zeros((self.g, self.num_classes))
        for k, tokens in enumerate(self.token_sets):
            for i in tokens:
                p[k, i + 1] = 1.0 / len(tokens)
        return p


def alignment_table(boxes: Sequence[Box], token_sets: Sequence[Sequence[int]], m: int,
                    grid: PatchGrid, threshold: float = 0.5,
                    mode: str = "coverage") -> np.ndarray:
    """Binary ``(m, n)`` table: token ``i`` of box ``k`` marks every patch covering box ``k``."""
    table = np.zeros((m, grid.n))
    for box, tokens in zip(boxes, token_sets):
        patches = sorted(patch_coverage(grid, box, threshold, mode))
        for i in tokens:
            table[i, patches] = 1.0
    return table


def build_ground_truth(boxes: Sequence[Box], token_sets: Sequence[Sequence[int]], m: int,
                       config: ModelConfig) -> GroundTruth:
    """
    Assemble :class:`GroundTruth` for a phrase of ``m`` (possibly truncated) tokens.

    Token positions at or beyond ``m`` are dropped.

    Raises
    ------
    ContractError
        If no boxes are given or a box has no token left.
    """
    if not boxes:
        raise ContractError("a sample needs at least one ground-truth box")
    if len(token_sets) != len(boxes):
        raise ContractError(f"{len(boxes)} boxes but {len(token_sets)} token sets")
    kept = []
    for k, tokens in enumerate(token_sets):
        inside = tuple(sorted({int(i) for i in tokens if 0 <= int(i) < m}))
        if not inside:
            raise ContractError(f"box {k} has an empty token set", box=k)
        kept.append(inside)
    table = alignment_table(boxes, kept, m, config.grid(), config.coverage_threshold,
                            config.coverage_mode)
    return GroundTruth(np.array([b.as_array() for b in boxes]), tuple(kept), table,
                       config.num_classes)


# ---------------------------------------------------------------------
# Individual losses
# ---------------------------------------------------------------------

def bbox_loss(pred: Tensor, target: np.ndarray, lambda1: float = 2.0,
              lambda2: float = 5.0) -> Tensor:
    """``lambda1 * L1 + lambda2 * (1 - GIoU)`` between a ``(4,)`` prediction and a target box."""
    target = np.asarray(target, dtype=np.float64)
    l1 = tsum(tabs(pred - target))
    return scale(l1, lambda1) + scale(1.0 - giou_tensor(pred, target), lambda2)


def class_targets(gt: GroundTruth, assignment: Assignment, q: int) -> np.ndarray:
    """Matched tokens take their box's ``P_gt`` row, every other token the no-text class."""
    targets = np.zeros((q, gt.num_classes))
    targets[:, 0] = 1.0
    p_gt = gt.class_targets
    for i, k in assignment.pairs:
        targets[i] = p_gt[k]
    return targets


def cls_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Soft cross-entropy averaged over all ``q`` detection tokens."""
    if logits.shape != targets.shape:
        raise DimensionError(f"logits {logits.shape} vs targets {targets.shape}",
                             logits=logits.shape, targets=targets.shape)
    logp = log_softmax(logits, axis=-1)
    if np.any((targets > 0) & (logp.data < _LOG_FLOOR)):
        logger.warning("predicted probability below %g at a target class; clamped", PROB_FLOOR)
    logp = maximum(logp, _LOG_FLOOR)
    q = logits.shape[0]
    return scale(tsum(mul(logp, targets)), -1.0 / q)


def _set_weights(sets: Sequence[Sequence[int]], width: int) -> np.ndarray:
    weights = np.zeros((len(sets), width))
    for row, members in enumerate(sets):
        if members:
            weights[row, list(members)] = 1.0 / len(members)
    return weights


def ota_loss(det: Tensor, text: Tensor, token_sets: Sequence[Sequence[int]],
             tau: float) -> Tensor:
    """
    Object-to-text alignment.

    Parameters
    ----------
    det : Tensor
        ``(g, d_align)`` unit-norm embeddings of the matched detection outputs,
        row ``k`` matched to box ``k``.
    text : Tensor
        ``(m, d_align)`` unit-norm token embeddings.
    token_sets : sequence of sequences
        ``T_k`` for every box.
    """
    if any(len(t) == 0 for t in token_sets):
        raise ContractError("object-to-text alignment needs nonempty token sets")
    logits = scale(matmul(det, transpose(text)), 1.0 / tau)
    logp = log_softmax(logits, axis=1)
    return scale(tsum(mul(logp, _set_weights(token_sets, text.shape[0]))), -1.0)


def toa_loss(text: Tensor, det: Tensor, object_sets: Sequence[Sequence[int]],
             tau: float) -> Tensor:
    """Text-to-object alignment; tokens with an empty object set contribute nothing."""
    logits = scale(matmul(text, transpose(det)), 1.0 / tau)
    logp = log_softmax(logits, axis=1)
    return scale(tsum(mul(logp, _set_weights(object_sets, det.shape[0]))), -1.0)


def normalize_alignment(table: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row- and column-normalise the binary table.

    Returns ``(a_tok, a_pat)``: each aligned token's row of ``a_tok`` is a
    distribution over patches, each aligned patch's column of ``a_pat`` a
    distribution over tokens. Unaligned rows/columns stay zero.
    """
    table = np.asarray(table, dtype=np.float64)
    rows = table.sum(axis=1, keepdims=True)
    cols = table.sum(axis=0, keepdims=True)
    a_tok = np.divide(table, rows, out=np.zeros_like(table), where=rows > 0)
    a_pat = np.divide(table, cols, out=np.zeros_like(table), where=cols > 0)
    return a_tok, a_pat


def _neg_entropy(p: np.ndarray) -> float:
    support = p > 0
    return float((p[support] * np.log(p[support])).sum())


def pa_loss(text: Tensor, patches: Tensor, a_tok: np.ndarray, a_pat: np.ndarray,
            tau: float, reduction: str = "mean") -> Tuple[Tensor, Tensor, Tensor]:
    """
    Patch-text alignment: ``KL(A || p)`` per aligned token (TPA) and per
    aligned patch (PTA) with ``p`` the temperature softmax of token/patch
    similarities.

    Returns ``(l_tpa, l_pta, l_pa)``. With ``reduction="mean"`` each side is
    divided by its number of aligned rows; ``"sum"`` keeps the plain sum.
    """
    if reduction not in ("mean", "sum"):
        raise ContractError(f"unknown reduction {reduction!r}")
    m, n = text.shape[0], patches.shape[0]
    if a_tok.shape != (m, n) or a_pat.shape != (m, n):
        raise DimensionError(f"alignment table {a_tok.shape} does not match ({m}, {n})",
                             table=a_tok.shape, expected=(m, n))
    logits = scale(matmul(text, transpose(patches)), 1.0 / tau)

    def side(weights: np.ndarray, axis: int) -> Tensor:
        logp = log_softmax(logits, axis=axis)
        kl = _neg_entropy(weights) - tsum(mul(logp, weights))
        if reduction == "mean":
            aligned = int((weights.sum(axis=axis) > 0).sum())
            kl = scale(kl, 1.0 / max(aligned, 1))
        return kl

    l_tpa = side(a_tok, 1)
    l_pta = side(a_pat, 0)
    return l_tpa, l_pta, scale(l_tpa + l_pta, 0.5)


# ---------------------------------------------------------------------
# Combined objective
# ---------------------------------------------------------------------

@dataclass
class LossBreakdown:
    """Scalar values of every loss term plus the differentiable objective."""

    l_bbox: float
    l_cls: float
    l_ota: float
    l_toa: float
    l_oa: float
    l_tpa: float
    l_pta: float
    l_pa: float
    l_total: float
    objective: Optional[Tensor] = field(default=None, repr=False)

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in
                ("l_bbox", "l_cls", "l_ota", "l_toa", "l_oa", "l_tpa", "l_pta", "l_pa",
                 "l_total")}


def match_predictions(predictions, gt: GroundTruth, config: ModelConfig) -> Assignment:
    """Hungarian assignment on the detached predictions of one sample."""
    with no_grad():
        distributions = predictions.distributions.numpy()
    cost = build_cost(predictions.boxes.numpy(), distributions,
                      gt.boxes, gt.class_targets, config.lambda1, config.lambda2)
    return hungarian(cost)


def total_loss(gt: GroundTruth, result, assignment: Assignment, config: ModelConfig,
               use_oa: bool = True, use_pa: bool = True) -> LossBreakdown:
    """
    Combine all losses of one forward result.

    Parameters
    ----------
    gt : GroundTruth
    result : yoro.model.ForwardResult
        Must carry alignment embeddings when ``use_oa`` or ``use_pa`` is set.
    assignment : Assignment
        Matching of ``result`` to ``gt``; box and alignment losses use the
        matched pairs only.
    """
    preds = result.predictions
    dets = assignment.detections
    if len(dets) != gt.g:
        raise ContractError(f"assignment covers {len(dets)} of {gt.g} boxes")

    l_bbox = None
    for k, i in enumerate(dets):
        term = bbox_loss(reshape(slice_rows(preds.boxes, i, i + 1), (4,)), gt.boxes[k],
                         config.lambda1, config.lambda2)
        l_bbox = term if l_bbox is None else l_bbox + term
    l_cls = cls_loss(preds.logits, class_targets(gt, assignment, preds.logits.shape[0]))
    objective = l_bbox + l_cls

    zero = 0.0
    l_ota = l_toa = l_oa = l_tpa = l_pta = l_pa = zero
    if use_oa or use_pa:
        if result.alignment is None:
            raise StateError("alignment embeddings missing; run forward with_alignment=True")
        al = result.alignment
        if al.text.shape[0] != gt.m:
            raise DimensionError(f"{al.text.shape[0]} encoded tokens vs {gt.m} in ground truth",
                                 tokens=al.text.shape[0], expected=gt.m)
    if use_oa:
        matched = take(al.det, dets, axis=0)
        ota = ota_loss(matched, al.text, gt.token_sets, config.tau)
        toa = toa_loss(al.text, matched, gt.object_sets, config.tau)
        oa = scale(ota + toa, 0.5)
        objective = objective + oa
        l_ota, l_toa, l_oa = ota.item(), toa.item(), oa.item()
    if use_pa:
        a_tok, a_pat = normalize_alignment(gt.alignment)
        tpa, pta, pa = pa_loss(al.pa_text, al.pa_vision, a_tok, a_pat, config.tau,
                               config.pa_reduction)
        objective = objective + pa
        l_tpa, l_pta, l_pa = tpa.item(), pta.item(), pa.item()

    return LossBreakdown(
        l_bbox=l_bbox.item(), l_cls=l_cls.item(),
        l_ota=l_ota, l_toa=l_toa, l_oa=l_oa,
        l_tpa=l_tpa, l_pta=l_pta, l_pa=l_pa,
        l_total=objective.item(), objective=objective)
