# test_core.py

import os
import shutil
import tempfile
import unittest

import numpy as np
from pydantic import ValidationError

from core import (
    Box,
    GroundTruthGroup,
    GroundTruthPerson,
    GroupOutputs,
    GroupPrediction,
    HyperParams,
    IndividualOutputs,
    IndividualPrediction,
    Point2,
    PointOrder,
    Scene,
    member_order,
    read_scenes,
    sort_member_points,
    validate_scene,
    write_scenes,
)
from errors import DatasetIOError, InputError


def P(x, y):
    return Point2(x=x, y=y)


def make_scene(n_v=4, n_a=4, d_tok=16):
    persons = (
        GroundTruthPerson(box=Box(cx=0.2, cy=0.5, w=0.05, h=0.1), action=(1,) + (0,) * (n_a - 1)),
        GroundTruthPerson(box=Box(cx=0.3, cy=0.5, w=0.05, h=0.1), action=(0, 1) + (0,) * (n_a - 2)),
    )
    group = GroundTruthGroup(
        activity=(0, 1) + (0,) * (n_v - 2),
        size=2,
        member_indices=(0, 1),
        member_points=(P(0.2, 0.5), P(0.3, 0.5)),
    )
    return Scene(persons=persons, groups=(group,), tokens=((0.0,) * d_tok,) * 2)


class TestSortMemberPoints(unittest.TestCase):
    """Test cases for canonical member point ordering."""

    def test_two_points(self):
        self.assertEqual(sort_member_points([P(0.7, 0.1), P(0.2, 0.9)]), (P(0.2, 0.9), P(0.7, 0.1)))

    def test_singleton(self):
        self.assertEqual(sort_member_points([P(0.5, 0.5)]), (P(0.5, 0.5),))

    def test_ties_broken_by_other_coordinate(self):
        points = [P(0.3, 0.4), P(0.3, 0.1), P(0.1, 0.9)]
        self.assertEqual(sort_member_points(points, PointOrder.ASC_X), (P(0.1, 0.9), P(0.3, 0.1), P(0.3, 0.4)))

    def test_asc_y(self):
        points = [P(0.3, 0.4), P(0.9, 0.1), P(0.1, 0.4)]
        self.assertEqual(sort_member_points(points, PointOrder.ASC_Y), (P(0.9, 0.1), P(0.1, 0.4), P(0.3, 0.4)))

    def test_empty_raises(self):
        with self.assertRaisesRegex(InputError, "empty point sequence"):
            sort_member_points([])

    def test_member_order_is_permutation(self):
        rng = np.random.default_rng(3)
        pts = rng.random((7, 2))
        idx = member_order(pts)
        self.assertEqual(sorted(idx.tolist()), list(range(7)))
        self.assertTrue(np.all(np.diff(pts[idx, 0]) >= 0))


class TestTypes(unittest.TestCase):
    """Test construction-time checks of the domain types."""

    def test_box_range(self):
        with self.assertRaises(ValidationError):
            Box(cx=1.2, cy=0.5, w=0.1, h=0.1)
        with self.assertRaises(ValidationError):
            Box(cx=0.5, cy=0.5, w=0.0, h=0.1)

    def test_box_corner_round_trip(self):
        box = Box(cx=0.5, cy=0.5, w=0.2, h=0.1)
        x1, y1, x2, y2 = box.corners()
        again = Box.from_corners(x1, y1, x2, y2)
        self.assertAlmostEqual(again.cx, 0.5)
        self.assertAlmostEqual(again.cy, 0.5)
        self.assertAlmostEqual(again.w, 0.2)

    def test_frozen(self):
        box = Box(cx=0.5, cy=0.5, w=0.2, h=0.1)
        with self.assertRaises(ValidationError):
            box.cx = 0.1

    def test_extra_fields_rejected(self):
        with self.assertRaises(ValidationError):
            Point2(x=0.1, y=0.2, z=0.3)

    def test_binary_labels(self):
        with self.assertRaises(ValidationError):
            GroundTruthPerson(box=Box(cx=0.5, cy=0.5, w=0.1, h=0.1), action=(0, 2))

    def test_prediction_probabilities(self):
        with self.assertRaises(ValidationError):
            GroupPrediction(activity_probs=(0.5, 1.5), size_norm=0.5, member_points=(P(0.1, 0.1),))
        pred = GroupPrediction(activity_probs=(0.1, 0.9), size_norm=0.5, member_points=(P(0.1, 0.1),))
        self.assertEqual(pred.score(), 0.9)

    def test_desk_overrides(self):
        hp = HyperParams.desk(N_q=4)
        self.assertEqual(hp.N_q, 4)
        self.assertEqual(hp.M, 6)
        self.assertEqual(HyperParams().N_q, 300)


class TestValidateScene(unittest.TestCase):
    """Test cases for scene invariant checks."""

    def setUp(self):
        self.hp = HyperParams.desk()

    def test_well_formed(self):
        self.assertEqual(validate_scene(make_scene(), self.hp), [])

    def test_group_larger_than_m(self):
        hp = HyperParams(M=12, N_v=4, N_a=4, D_tok=16)
        persons = tuple(
            GroundTruthPerson(box=Box(cx=0.05 + 0.07 * k, cy=0.5, w=0.05, h=0.1), action=(1, 0, 0, 0)) for k in range(13)
        )
        group = GroundTruthGroup(
            activity=(1, 0, 0, 0),
            size=13,
            member_indices=tuple(range(13)),
            member_points=tuple(P(p.box.cx, p.box.cy) for p in persons),
        )
        scene = Scene(persons=persons, groups=(group,), tokens=((0.0,) * 16,) * 13)
        violations = validate_scene(scene, hp)
        self.assertTrue(any("group size exceeds M" in v for v in violations))

    def test_overlapping_membership(self):
        scene = make_scene()
        second = GroundTruthGroup(activity=(1, 0, 0, 0), size=1, member_indices=(1,), member_points=(P(0.3, 0.5),))
        scene = scene.model_copy(update={"groups": scene.groups + (second,)})
        violations = validate_scene(scene, self.hp)
        self.assertTrue(any("overlapping membership" in v for v in violations))

    def test_unsorted_points(self):
        scene = make_scene()
        g = scene.groups[0].model_copy(update={"member_points": (P(0.3, 0.5), P(0.2, 0.5))})
        scene = scene.model_copy(update={"groups": (g,)})
        self.assertTrue(any("unsorted member points" in v for v in validate_scene(scene, self.hp)))

    def test_size_mismatch_and_bad_index(self):
        scene = make_scene()
        g = scene.groups[0].model_copy(update={"size": 3, "member_indices": (0, 5)})
        scene = scene.model_copy(update={"groups": (g,)})
        violations = validate_scene(scene, self.hp)
        self.assertTrue(any("does not match" in v for v in violations))
        self.assertTrue(any("member index out of range" in v for v in violations))

    def test_token_width(self):
        scene = make_scene(d_tok=8)
        self.assertTrue(any("D_tok" in v for v in validate_scene(scene, self.hp)))


class TestSceneFiles(unittest.TestCase):
    """Test reading and writing newline-delimited scene files."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp(prefix="test_core")

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_write_read(self):
        path = os.path.join(self.test_dir, "sub", "scenes.jsonl")
        scenes = [make_scene(), make_scene()]
        self.assertEqual(write_scenes(path, scenes), 2)
        self.assertEqual(read_scenes(path), scenes)

    def test_missing_file(self):
        with self.assertRaises(DatasetIOError) as ctx:
            read_scenes(os.path.join(self.test_dir, "missing.jsonl"))
        self.assertIn("missing.jsonl", str(ctx.exception))

    def test_invalid_line(self):
        path = os.path.join(self.test_dir, "bad.jsonl")
        with open(path, "w") as f:
            f.write(make_scene().model_dump_json() + "\n")
            f.write('{"persons": 3}\n')
        with self.assertRaisesRegex(InputError, ":2: invalid scene"):
            read_scenes(path)


class TestOutputs(unittest.TestCase):
    """Test the array containers of head outputs."""

    def test_group_outputs_round_trip(self):
        out = GroupOutputs(
            activity=np.array([[0.1, 0.9], [0.4, 0.2]]),
            size=np.array([0.5, 0.25]),
            points=np.full((2, 3, 2), 0.5),
        )
        preds = out.to_predictions()
        self.assertEqual(len(preds), 2)
        again = GroupOutputs.from_predictions(preds)
        np.testing.assert_array_equal(again.activity, out.activity)
        np.testing.assert_array_equal(again.points, out.points)

    def test_individual_box_size_floor(self):
        out = IndividualOutputs(
            scores=np.array([0.5]),
            boxes=np.array([[0.5, 0.5, 0.0, 0.2]]),
            actions=np.array([[0.3, 0.7]]),
        )
        pred = out.to_predictions()[0]
        self.assertGreater(pred.box.w, 0.0)
        self.assertEqual(out.boxes[0, 2], 0.0)

    def test_empty_predictions(self):
        with self.assertRaisesRegex(InputError, "empty prediction list"):
            GroupOutputs.from_predictions([])
        with self.assertRaisesRegex(InputError, "empty prediction list"):
            IndividualOutputs.from_predictions([])

    def test_ragged_predictions(self):
        a = GroupPrediction(activity_probs=(0.1, 0.9), size_norm=0.5, member_points=(P(0.1, 0.1), P(0.2, 0.2)))
        b = GroupPrediction(activity_probs=(0.1, 0.9), size_norm=0.5, member_points=(P(0.1, 0.1),))
        c = GroupPrediction(activity_probs=(0.1, 0.9, 0.0), size_norm=0.5, member_points=(P(0.1, 0.1), P(0.2, 0.2)))
        with self.assertRaisesRegex(InputError, "member point count differs"):
            GroupOutputs.from_predictions([a, b])
        with self.assertRaisesRegex(InputError, "activity length differs"):
            GroupOutputs.from_predictions([a, c])
        box = Box(cx=0.5, cy=0.5, w=0.1, h=0.1)
        with self.assertRaisesRegex(InputError, "action length differs"):
            IndividualOutputs.from_predictions([
                IndividualPrediction(score=0.5, box=box, action_probs=(0.5, 0.5)),
                IndividualPrediction(score=0.5, box=box, action_probs=(0.5,)),
            ])


class TestJsonRoundTrip(unittest.TestCase):
    """Serialised predictions and hyper-parameters read back bit for bit."""

    def test_group_prediction(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = GroupPrediction(
                activity_probs=tuple(float(p) for p in rng.random(4)),
                size_norm=float(rng.random()),
                member_points=tuple(P(float(x), float(y)) for x, y in rng.random((6, 2))),
            )
            again = GroupPrediction.model_validate_json(pred.model_dump_json())
            self.assertEqual(again, pred)
            np.testing.assert_array_equal(again.points_array(), pred.points_array())

    def test_individual_prediction(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pred = IndividualPrediction(
                score=float(rng.random()),
                box=Box(cx=float(rng.uniform(0.1, 0.9)), cy=float(rng.uniform(0.1, 0.9)), w=float(rng.uniform(0.01, 0.2)), h=float(rng.uniform(0.01, 0.2))),
                action_probs=tuple(float(p) for p in rng.random(4)),
            )
            again = IndividualPrediction.model_validate_json(pred.model_dump_json())
            self.assertEqual(again, pred)
            self.assertEqual(again.box.as_array().tobytes(), pred.box.as_array().tobytes())

    def test_hyper_params(self):
        hp = HyperParams.desk(lambda_b=2.5, eta_u=0.1 + 0.2, normalize_lu=True)
        self.assertEqual(HyperParams.model_validate_json(hp.model_dump_json()), hp)


if __name__ == "__main__":
    unittest.main()
