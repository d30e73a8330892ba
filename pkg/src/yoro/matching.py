"""
Bipartite matching between detection-token predictions and ground truth.

:func:`hungarian` solves the rectangular assignment problem with the
shortest-augmenting-path form of the Kuhn-Munkres algorithm, then resolves
ties among optimal assignments towards the lowest detection index (first
ground truth first), then the lowest ground-truth index.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from yoro._errors import ContractError, NumericError
from yoro.geometry import Box, giou

_INF = float("inf")


@dataclass(frozen=True)
class Assignment:
    """Matched ``(detection index, ground-truth index)`` pairs, one per ground truth."""

    pairs: Tuple[Tuple[int, int], ...]
    cost: float

    def detection_for(self, gt_index: int) -> int:
        for i, k in self.pairs:
            if k == gt_index:
                return i
        raise KeyError(gt_index)

    @property
    def detections(self) -> List[int]:
        """Detection indices ordered by ground-truth index."""
        return [i for i, _ in sorted(self.pairs, key=lambda p: p[1])]


def _solve(cost: np.ndarray) -> Tuple[float, List[int]]:
    """
    Minimum-cost assignment of every row of ``cost`` (r x c, r <= c) to a
    distinct column. Returns the total cost and the column chosen per row.
    """
    rows, cols = cost.shape
    u = np.zeros(rows + 1)
    v = np.zeros(cols + 1)
    owner = np.zeros(cols + 1, dtype=np.int64)  # owner[j]: 1-based row holding column j
    way = np.zeros(cols + 1, dtype=np.int64)
    for i in range(1, rows + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(cols + 1, _INF)
        used = np.zeros(cols + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = _INF
            j1 = 0
            for j in range(1, cols + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(cols + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    chosen = [0] * rows
    for j in range(1, cols + 1):
        if owner[j]:
            chosen[owner[j] - 1] = j - 1
    total = float(sum(cost[r, chosen[r]] for r in range(rows)))
    return total, chosen


def hungarian(cost: np.ndarray) -> Assignment:
    """
    Minimum-total-cost injective assignment of ground truths to detections.

    Parameters
    ----------
    cost : numpy.ndarray
        ``(q, g)`` matrix; entry ``(i, k)`` is the cost of matching detection
        ``i`` to ground truth ``k``.

    Raises
    ------
    ContractError
        If ``g > q`` or ``g == 0``.
    NumericError
        If any entry is not finite.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost matrix must be 2-D, got shape {cost.shape}")
    q, g = cost.shape
    if g < 1 or g > q:
        raise ContractError(f"need 1 <= g <= q, got q={q}, g={g}", q=q, g=g)
    if not np.all(np.isfinite(cost)):
        raise NumericError("cost matrix holds non-finite entries")

    # rows are ground truths, columns detections
    gt_by_det = cost.T
    best, solved = _solve(gt_by_det)
    slack = 1e-12 * max(1.0, abs(best))

    # Fix pairs greedily in (ground truth, detection) order, keeping the
    # optimum reachable; this selects the lowest detection index first.
    pairs: List[Tuple[int, int]] = []
    fixed_cost = 0.0
    free_dets = list(range(q))
    for k in range(g):
        rest_gts = list(range(k + 1, g))
        for i in free_dets:
            remaining = [d for d in free_dets if d != i]
            sub_cost = 0.0
            if rest_gts:
                sub_cost, _ = _solve(gt_by_det[np.ix_(rest_gts, remaining)])
            if fixed_cost + gt_by_det[k, i] + sub_cost <= best + slack:
                pairs.append((i, k))
                fixed_cost += gt_by_det[k, i]
                free_dets = remaining
                break
        else:
            # rounding left no candidate within slack; keep the solver optimum
            pairs = [(solved[kk], kk) for kk in range(g)]
            break
    total = float(sum(cost[i, k] for i, k in pairs))
    return Assignment(tuple(pairs), total)


def soft_cross_entropy(pred: np.ndarray, target: np.ndarray, floor: float = 1e-12) -> float:
    return float(-(target * np.log(np.maximum(pred, floor))).sum())


def build_cost(boxes: np.ndarray, distributions: np.ndarray, gt_boxes: np.ndarray,
               gt_distributions: np.ndarray, lambda1: float, lambda2: float) -> np.ndarray:
    """
    Matching cost ``lambda1 * L1 + lambda2 * (1 - GIoU) + soft CE`` for
    every (prediction, ground truth) pair, on detached values.

    Parameters
    ----------
    boxes : (q, 4) predicted cxcywh boxes
    distributions : (q, C) predicted class distributions
    gt_boxes : (g, 4) ground-truth cxcywh boxes
    gt_distributions : (g, C) target class distributions
    """
    q, g = boxes.shape[0], gt_boxes.shape[0]
    cost = np.zeros((q, g))
    gts = [Box(*b) for b in gt_boxes]
    for i in range(q):
        pred = Box(*boxes[i])
        for k in range(g):
            l1 = float(np.abs(boxes[i] - gt_boxes[k]).sum())
            cost[i, k] = (lambda1 * l1 + lambda2 * (1.0 - giou(pred, gts[k]))
                          + soft_cross_entropy(distributions[i], gt_distributions[k]))
    return cost
