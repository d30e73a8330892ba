"""
Tests for the bipartite matcher and its cost matrix.
"""

import itertools
import math

import numpy as np
import pytest

from yoro._errors import ContractError, NumericError
from yoro._tensor import Tensor
from yoro.losses import bbox_loss
from yoro.matching import build_cost, hungarian, soft_cross_entropy


def _brute_force(cost: np.ndarray) -> float:
    q, g = cost.shape
    return min(sum(cost[perm[k], k] for k in range(g))
               for perm in itertools.permutations(range(q), g))


class TestHungarian:
    """Test the assignment solver."""

    def test_single_ground_truth_is_argmin(self):
        """Test that g = 1 picks the cheapest detection."""
        cost = np.array([[3.0], [0.5], [2.0]])
        assert hungarian(cost).pairs == ((1, 0),)

    def test_single_ground_truth_tie(self):
        """Test that ties go to the lowest detection index."""
        assert hungarian(np.array([[3.0], [1.0], [1.0]])).pairs == ((1, 0),)

    def test_all_zero_costs(self):
        """Test the tie-break on a cost matrix of zeros."""
        assignment = hungarian(np.zeros((3, 2)))
        assert assignment.pairs == ((0, 0), (1, 1))
        assert assignment.cost == 0.0

    def test_permutation_matrix(self):
        """Test that a hidden zero-cost permutation is recovered."""
        perm = [2, 0, 3, 1]
        cost = np.ones((4, 4))
        for k, i in enumerate(perm):
            cost[i, k] = 0.0
        assignment = hungarian(cost)
        assert assignment.cost == 0.0
        assert sorted(assignment.pairs, key=lambda p: p[1]) == [(i, k) for k, i in enumerate(perm)]
        assert assignment.detections == perm

    def test_brute_force_oracle(self):
        """Test the optimum against exhaustive search on random matrices."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            q = int(rng.integers(1, 7))
            g = int(rng.integers(1, q + 1))
            cost = rng.uniform(0.0, 10.0, size=(q, g))
            assignment = hungarian(cost)
            dets = [i for i, _ in assignment.pairs]
            gts = [k for _, k in assignment.pairs]
            assert len(set(dets)) == g
            assert sorted(gts) == list(range(g))
            assert abs(assignment.cost - _brute_force(cost)) <= 1e-9

    def test_brute_force_with_ties(self):
        """Test integer matrices, where many optima tie."""
        rng = np.random.default_rng(1)
        for _ in range(300):
            q = int(rng.integers(1, 6))
            g = int(rng.integers(1, q + 1))
            cost = rng.integers(0, 3, size=(q, g)).astype(float)
            assert hungarian(cost).cost == _brute_force(cost)

    def test_invariant_to_shift_and_scale(self):
        """Test that adding a constant or scaling by a positive factor keeps the pairs."""
        rng = np.random.default_rng(2)
        for _ in range(100):
            cost = rng.uniform(size=(5, 3))
            pairs = hungarian(cost).pairs
            assert hungarian(cost + 7.0).pairs == pairs
            assert hungarian(cost * 3.0).pairs == pairs

    def test_too_many_ground_truths(self):
        """Test that g > q raises ContractError."""
        with pytest.raises(ContractError):
            hungarian(np.zeros((2, 3)))

    def test_non_finite(self):
        """Test that NaN costs raise NumericError."""
        cost = np.zeros((3, 2))
        cost[1, 0] = np.nan
        with pytest.raises(NumericError):
            hungarian(cost)

    def test_detection_for(self):
        """Test lookup of the detection matched to a ground truth."""
        assignment = hungarian(np.array([[0.0, 5.0], [5.0, 0.0]]))
        assert assignment.detection_for(1) == 1
        with pytest.raises(KeyError):
            assignment.detection_for(2)


class TestCost:
    """Test the matching cost matrix."""

    def test_perfect_prediction(self):
        """Test that an exact box with the target distribution costs the target entropy."""
        target = np.array([[0.0, 0.5, 0.5]])
        boxes = np.array([[0.4, 0.5, 0.2, 0.3]])
        cost = build_cost(boxes, target.copy(), boxes.copy(), target, 2.0, 5.0)
        assert cost[0, 0] == pytest.approx(math.log(2.0), abs=1e-9)

    def test_rows_follow_predictions(self):
        """Test that swapping two predictions swaps their cost rows."""
        rng = np.random.default_rng(3)
        boxes = np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.6, 0.3, 0.4]])
        dists = rng.dirichlet(np.ones(4), size=2)
        gt_boxes = np.array([[0.35, 0.3, 0.2, 0.25]])
        gt_dists = np.array([[0.0, 1.0, 0.0, 0.0]])
        cost = build_cost(boxes, dists, gt_boxes, gt_dists, 2.0, 5.0)
        swapped = build_cost(boxes[::-1], dists[::-1], gt_boxes, gt_dists, 2.0, 5.0)
        np.testing.assert_array_equal(cost[::-1], swapped)

    def test_matches_loss_terms(self):
        """Test each entry against the box loss plus soft cross-entropy."""
        rng = np.random.default_rng(4)
        boxes = np.array([[0.3, 0.3, 0.2, 0.2], [0.6, 0.5, 0.3, 0.4], [0.5, 0.5, 0.5, 0.5]])
        dists = rng.dirichlet(np.ones(5), size=3)
        gt_boxes = np.array([[0.35, 0.3, 0.2, 0.25], [0.7, 0.7, 0.2, 0.2]])
        gt_dists = np.array([[0.0, 0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0]])
        cost = build_cost(boxes, dists, gt_boxes, gt_dists, 2.0, 5.0)
        for i in range(3):
            for k in range(2):
                expected = (bbox_loss(Tensor(boxes[i]), gt_boxes[k]).item()
                            + soft_cross_entropy(dists[i], gt_dists[k]))
                assert cost[i, k] == pytest.approx(expected, abs=1e-12)

    def test_matches_loss_terms_across_edges(self):
        """Test cost against training loss for boxes that extend past the image."""
        rng = np.random.default_rng(6)
        boxes = np.array([[0.1, 0.1, 0.5, 0.5], [0.9, 0.2, 0.6, 0.7], [0.5, 0.95, 1.0, 0.3]])
        dists = rng.dirichlet(np.ones(4), size=3)
        gt_boxes = np.array([[0.2, 0.2, 0.3, 0.3], [0.85, 0.5, 0.4, 0.9]])
        gt_dists = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]])
        cost = build_cost(boxes, dists, gt_boxes, gt_dists, 2.0, 5.0)
        for i in range(3):
            for k in range(2):
                expected = (bbox_loss(Tensor(boxes[i]), gt_boxes[k]).item()
                            + soft_cross_entropy(dists[i], gt_dists[k]))
                assert cost[i, k] == pytest.approx(expected, abs=1e-12)
