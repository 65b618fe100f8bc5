# test_inference.py

import unittest

import numpy as np

from assignment import brute_force_assignment
from core import Box, GroupOutputs, GroupPrediction, IndividualOutputs, IndividualPrediction, Point2
from costs import member_point_cost_matrix
from errors import InputError
from inference import (
    MemberMatching,
    build_scene_result,
    decode_group_size,
    identify_members,
    identify_members_arrays,
    select_top_group,
)
from settings import get_settings
from test_core import make_scene


def P(x, y):
    return Point2(x=x, y=y)


def person(cx, cy, score=1.0):
    return IndividualPrediction(score=score, box=Box(cx=cx, cy=cy, w=0.05, h=0.1), action_probs=(0.5, 0.5))


class TestDecodeGroupSize(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(decode_group_size(0.25, 12), 3)
        self.assertEqual(decode_group_size(0.26, 12), 3)
        self.assertEqual(decode_group_size(0.29167, 12), 4)

    def test_half_rounds_up(self):
        self.assertEqual(decode_group_size(0.5, 5), 3)
        self.assertEqual(decode_group_size(0.125, 4), 1)

    def test_clamped(self):
        self.assertEqual(decode_group_size(0.0, 12), 0)
        self.assertEqual(decode_group_size(1.0, 12), 12)

    def test_exact_fractions_decode_back(self):
        for M in range(1, 21):
            for S in range(M + 1):
                self.assertEqual(decode_group_size(S / M, M), S, msg=f"S={S} M={M}")


class TestIdentifyMembers(unittest.TestCase):
    """Test cases for member identification."""

    def test_empty_group(self):
        group = GroupPrediction(activity_probs=(0.9,), size_norm=0.0, member_points=(P(0.5, 0.5),) * 4)
        result = identify_members(group, [person(0.5, 0.5)], M=4)
        self.assertEqual(result.member_pred_indices, ())
        self.assertFalse(result.truncated)

    def test_point_on_center(self):
        group = GroupPrediction(activity_probs=(0.9,), size_norm=0.25, member_points=(P(0.4, 0.6),) * 4)
        individuals = [person(0.1, 0.1), person(0.4, 0.6), person(0.9, 0.9)]
        result = identify_members(group, individuals, M=4, group_index=2)
        self.assertEqual(result.member_pred_indices, (1,))
        self.assertEqual(result.decoded_size, 1)
        self.assertEqual(result.group_index, 2)

    def test_low_score_loses(self):
        group = GroupPrediction(activity_probs=(0.9,), size_norm=0.25, member_points=(P(0.4, 0.6),) * 4)
        individuals = [person(0.41, 0.6, score=0.01), person(0.45, 0.6, score=0.9)]
        self.assertEqual(identify_members(group, individuals, M=4).member_pred_indices, (1,))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            points = rng.random((4, 2))
            boxes = np.column_stack([rng.random((3, 2)), np.full((3, 2), 0.1)])
            scores = rng.uniform(0.1, 1.0, 3)
            result = identify_members_arrays(points, 2, boxes, scores)
            oracle = brute_force_assignment(member_point_cost_matrix(points[:2], boxes, scores))
            self.assertEqual(result.member_pred_indices, oracle.map)

    def test_positive_scaling_keeps_members(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            points = rng.random((5, 2))
            boxes = np.column_stack([rng.random((7, 2)), np.full((7, 2), 0.05)])
            scores = rng.uniform(0.1, 1.0, 7)
            size = int(rng.integers(1, 6))
            base = identify_members_arrays(points, size, boxes, scores)
            for k in (0.5, 3.0):
                scaled = boxes.copy()
                scaled[:, :2] *= k
                moved = identify_members_arrays(points * k, size, scaled, scores)
                self.assertEqual(moved.member_pred_indices, base.member_pred_indices)
            halved = identify_members_arrays(points, size, boxes, scores * 0.5)
            self.assertEqual(halved.member_pred_indices, base.member_pred_indices)

    def _check_injective(self, n_instances, seed):
        rng = np.random.default_rng(seed)
        for _ in range(n_instances):
            m = int(rng.integers(1, 13))
            n_q = int(rng.integers(1, 13))
            size = int(rng.integers(0, m + 1))
            points = rng.random((m, 2))
            boxes = np.column_stack([rng.random((n_q, 2)), np.full((n_q, 2), 0.05)])
            result = identify_members_arrays(points, size, boxes, rng.uniform(0.01, 1.0, n_q))
            members = result.member_pred_indices
            self.assertEqual(len(members), len(set(members)))
            self.assertEqual(len(members), min(size, n_q))
            self.assertEqual(result.truncated, size > n_q)

    def test_members_distinct(self):
        self._check_injective(200, seed=5)

    @unittest.skipUnless(get_settings().slow_tests, "set GROUPSET_SLOW_TESTS=1 to run")
    def test_members_distinct_fuzz(self):
        self._check_injective(10000, seed=6)

    def test_truncated(self):
        points = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]])
        boxes = np.array([[0.5, 0.5, 0.1, 0.1], [0.1, 0.1, 0.1, 0.1]])
        result = identify_members_arrays(points, 3, boxes, np.ones(2))
        self.assertTrue(result.truncated)
        self.assertEqual(result.decoded_size, 3)
        self.assertEqual(result.member_pred_indices, (1, 0))

    def test_no_individuals(self):
        group = GroupPrediction(activity_probs=(0.9,), size_norm=0.5, member_points=(P(0.5, 0.5),) * 4)
        result = identify_members(group, [], M=4)
        self.assertEqual(result.member_pred_indices, ())
        self.assertTrue(result.truncated)

    def test_nearest_collapses_duplicates(self):
        points = np.array([[0.5, 0.5], [0.52, 0.5]])
        boxes = np.array([[0.5, 0.5, 0.1, 0.1], [0.9, 0.9, 0.1, 0.1]])
        nearest = identify_members_arrays(points, 2, boxes, np.ones(2), MemberMatching.NEAREST)
        self.assertEqual(nearest.member_pred_indices, (0,))
        hungarian = identify_members_arrays(points, 2, boxes, np.ones(2), MemberMatching.HUNGARIAN)
        self.assertEqual(len(hungarian.member_pred_indices), 2)


class TestSelectTopGroup(unittest.TestCase):
    def _pred(self, probs):
        return GroupPrediction(activity_probs=probs, size_norm=0.5, member_points=(P(0.5, 0.5),))

    def test_single(self):
        self.assertEqual(select_top_group([self._pred((0.1, 0.9))]), (0, 1))

    def test_highest_wins(self):
        self.assertEqual(select_top_group([self._pred((0.7, 0.1)), self._pred((0.2, 0.8))]), (1, 1))

    def test_tie_goes_to_lowest_index(self):
        self.assertEqual(select_top_group([self._pred((0.1, 0.6)), self._pred((0.6, 0.1))]), (0, 1))

    def test_empty(self):
        with self.assertRaisesRegex(InputError, "no group predictions"):
            select_top_group([])


class TestSceneResult(unittest.TestCase):
    def test_build(self):
        scene = make_scene(n_a=2)
        group = GroupOutputs(
            activity=np.array([[0.1, 0.9, 0.0, 0.0], [0.2, 0.1, 0.0, 0.0]]),
            size=np.array([2 / 6, 0.0]),
            points=np.tile([[0.2, 0.5], [0.3, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]], (2, 1, 1)),
        )
        individual = IndividualOutputs(
            scores=np.array([1.0, 1.0, 0.0]),
            boxes=np.array([[0.3, 0.5, 0.05, 0.1], [0.2, 0.5, 0.05, 0.1], [0.5, 0.5, 0.1, 0.1]]),
            actions=np.full((3, 2), 0.5),
        )
        result = build_scene_result(scene, group, individual, M=6)
        self.assertEqual(result.top_group(), (0, 1))
        self.assertEqual(result.memberships[0].member_pred_indices, (1, 0))
        self.assertEqual(result.memberships[1].member_pred_indices, ())
        np.testing.assert_allclose(result.member_boxes(0)[:, 0], [0.2, 0.3])


if __name__ == "__main__":
    unittest.main()
