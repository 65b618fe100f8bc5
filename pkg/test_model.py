# test_model.py

import os
import shutil
import tempfile
import unittest

import numpy as np

from core import HyperParams
from errors import DatasetIOError, DivergenceError, InputError
from gradcheck import TOLERANCE, run_gradcheck
from models.checkpoint import load_checkpoint, save_checkpoint
from models.decoder import anchor_reference, anchor_tokens, decoder_backward, decoder_forward
from models.heads import group_heads_forward, heads_forward, individual_heads_forward
from models.network import model_forward
from models.optim import AdamState, optimizer_step
from models.params import GradientBuffer, ModelParams, parameter_specs
from settings import get_settings


def small_hp(**overrides):
    values = dict(D_emb=8, N_q=4, M=3, N_v=3, N_a=2, D_tok=6)
    values.update(overrides)
    return HyperParams(**values)


class TestParams(unittest.TestCase):
    """Test cases for parameter tensors."""

    def test_shapes_follow_specs(self):
        hp = small_hp()
        params = ModelParams.init(hp, seed=0)
        self.assertEqual(params.names(), [name for name, _ in parameter_specs(hp)])
        self.assertEqual(params["pts_w3"].shape, (8, 6))
        self.assertEqual(params["act_w"].shape, (8, 3))
        self.assertEqual(params["box_b3"].shape, (4,))

    def test_seeded_init(self):
        hp = small_hp()
        self.assertTrue(ModelParams.init(hp, 3).array_equal(ModelParams.init(hp, 3)))
        self.assertFalse(ModelParams.init(hp, 3).array_equal(ModelParams.init(hp, 4)))

    def test_flat_round_trip(self):
        hp = small_hp()
        params = ModelParams.init(hp, 1)
        self.assertTrue(ModelParams.from_flat(hp, params.flatten()).array_equal(params))
        with self.assertRaises(InputError):
            ModelParams.from_flat(hp, np.zeros(3))

    def test_setitem_checks_shape(self):
        params = ModelParams.zeros(small_hp())
        with self.assertRaises(InputError):
            params["queries"] = np.zeros((2, 2))

    def test_gradient_buffer(self):
        params = ModelParams.zeros(small_hp())
        grads = GradientBuffer.like(params)
        grads.accumulate("ffn_b1", np.full(8, 2.0))
        grads.accumulate("ffn_b1", np.full(8, 1.0))
        grads.scale(0.5)
        np.testing.assert_array_equal(grads["ffn_b1"], np.full(8, 1.5))
        np.testing.assert_array_equal(grads["ffn_b2"], np.zeros(8))
        self.assertEqual(params.names(), grads.names())

    def test_anchor_projection_follows_value_projection(self):
        names = ModelParams.zeros(small_hp()).names()
        self.assertEqual(names.index("attn_wa"), names.index("attn_wv") + 1)
        self.assertEqual(ModelParams.init(small_hp(), 0)["attn_wa"].shape, (6, 8))


class TestDecoder(unittest.TestCase):
    """Test cases for the cross-attention decoder."""

    def setUp(self):
        self.hp = small_hp()
        self.params = ModelParams.init(self.hp, 0)

    def test_single_token(self):
        token = np.random.default_rng(0).random((1, 6))
        out, cache = decoder_forward(self.params, token)
        np.testing.assert_allclose(cache.attention, np.ones((4, 1)))
        attended = np.tile(token @ self.params["attn_wv"], (4, 1))
        hidden = np.maximum(attended @ self.params["ffn_w1"] + self.params["ffn_b1"], 0.0)
        np.testing.assert_allclose(out, attended + hidden @ self.params["ffn_w2"] + self.params["ffn_b2"])

    def test_duplicate_tokens(self):
        token = np.random.default_rng(1).random((1, 6))
        single, _ = decoder_forward(self.params, token)
        double, _ = decoder_forward(self.params, np.vstack([token, token]))
        np.testing.assert_allclose(single, double, atol=1e-12)

    def test_bad_tokens(self):
        with self.assertRaisesRegex(InputError, "no tokens"):
            decoder_forward(self.params, np.zeros((0, 6)))
        with self.assertRaisesRegex(InputError, "token dimension"):
            decoder_forward(self.params, np.zeros((2, 5)))

    def test_backward_shape_mismatch(self):
        _, cache = decoder_forward(self.params, np.ones((2, 6)))
        with self.assertRaises(InputError):
            decoder_backward(self.params, cache, np.zeros((3, 8)), GradientBuffer.like(self.params))

    def test_anchor_tokens(self):
        tokens = np.arange(18, dtype=float).reshape(3, 6)
        anchors, anchored = anchor_tokens(tokens, 4)
        np.testing.assert_array_equal(anchors[:3], tokens)
        np.testing.assert_array_equal(anchors[3], np.zeros(6))
        self.assertEqual(list(anchored), [True, True, True, False])
        anchors, anchored = anchor_tokens(np.ones((6, 6)), 4)
        self.assertEqual(anchors.shape, (4, 6))
        self.assertTrue(anchored.all())

    def test_anchor_reference(self):
        tokens = np.zeros((2, 6))
        tokens[0, :2] = (0.3, 0.8)
        tokens[1, :2] = (1.2, -0.1)
        anchors, anchored = anchor_tokens(tokens, 3)
        learned = np.full((3, 2), 0.7)
        ref = anchor_reference(anchors, anchored, learned)
        np.testing.assert_allclose(1.0 / (1.0 + np.exp(-ref[0])), (0.3, 0.8))
        np.testing.assert_allclose(1.0 / (1.0 + np.exp(-ref[1])), (0.99, 0.01))
        np.testing.assert_array_equal(ref[2], (0.7, 0.7))

    def test_zero_anchors_match_plain_queries(self):
        tokens = np.random.default_rng(3).random((5, 6))
        plain, _ = decoder_forward(self.params, tokens)
        anchored, _ = decoder_forward(self.params, tokens, np.zeros((4, 6)))
        np.testing.assert_array_equal(plain, anchored)

    def test_anchors_change_output(self):
        tokens = np.random.default_rng(4).random((5, 6))
        anchors, _ = anchor_tokens(tokens, 4)
        plain, _ = decoder_forward(self.params, tokens)
        out, _ = decoder_forward(self.params, tokens, anchors)
        self.assertGreater(float(np.abs(out - plain).max()), 1e-6)
        with self.assertRaisesRegex(InputError, "anchor shape"):
            decoder_forward(self.params, tokens, np.zeros((3, 6)))

    def test_anchored_backward_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        tokens = rng.random((3, 6))
        anchors, _ = anchor_tokens(tokens, 4)
        weights = rng.normal(size=(4, 8))
        _, cache = decoder_forward(self.params, tokens, anchors)
        grads = GradientBuffer.like(self.params)
        decoder_backward(self.params, cache, weights, grads)
        step = 1e-6
        for name in ("attn_wa", "queries", "attn_wq", "attn_wk", "ffn_w1"):
            for _ in range(4):
                index = tuple(int(rng.integers(d)) for d in self.params[name].shape)
                original = self.params[name][index]
                self.params[name][index] = original + step
                up = float((decoder_forward(self.params, tokens, anchors)[0] * weights).sum())
                self.params[name][index] = original - step
                down = float((decoder_forward(self.params, tokens, anchors)[0] * weights).sum())
                self.params[name][index] = original
                numeric = (up - down) / (2 * step)
                self.assertAlmostEqual(float(grads[name][index]), numeric, delta=1e-6 * max(1.0, abs(numeric)), msg=name)


class TestHeads(unittest.TestCase):
    """Test cases for the prediction heads."""

    def setUp(self):
        self.hp = small_hp()
        self.zero = ModelParams.zeros(self.hp)

    def test_zero_parameters(self):
        group, individual, _ = heads_forward(self.zero, np.zeros((4, 8)), np.zeros((4, 2)))
        np.testing.assert_allclose(group.size, 0.5)
        np.testing.assert_allclose(group.points, 0.5)
        np.testing.assert_allclose(group.activity, 0.5)
        np.testing.assert_allclose(individual.scores, 0.5)
        np.testing.assert_allclose(individual.boxes, 0.5)
        np.testing.assert_allclose(individual.actions, 0.5)

    def test_reference_logits_move_points(self):
        ref = np.full((4, 2), 20.0)
        group, individual, _ = heads_forward(self.zero, np.zeros((4, 8)), ref)
        self.assertTrue(np.all(group.points > 0.999))
        self.assertTrue(np.all(individual.boxes[:, :2] > 0.999))
        np.testing.assert_allclose(individual.boxes[:, 2:], 0.5)

    def test_single_query_forms(self):
        params = ModelParams.init(self.hp, 2)
        h = np.random.default_rng(2).random((4, 8))
        group, individual, _ = heads_forward(params, h, params["ref_logits"])
        g = group_heads_forward(params, h[1], 1)
        self.assertAlmostEqual(g.size_norm, float(group.size[1]))
        p = individual_heads_forward(params, h[3], 3)
        self.assertAlmostEqual(p.score, float(individual.scores[3]))

    def test_embedding_width_checked(self):
        with self.assertRaises(InputError):
            heads_forward(self.zero, np.zeros((4, 7)), np.zeros((4, 2)))

    def test_individual_pair_drives_individual_heads(self):
        params = ModelParams.init(self.hp, 3)
        rng = np.random.default_rng(3)
        h, h_ind = rng.random((4, 8)), rng.random((4, 8))
        ref, ref_ind = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        group, individual, _ = heads_forward(params, h, ref, h_ind, ref_ind)
        group_only, _, _ = heads_forward(params, h, ref)
        _, individual_only, _ = heads_forward(params, h_ind, ref_ind)
        np.testing.assert_array_equal(group.points, group_only.points)
        np.testing.assert_array_equal(individual.boxes, individual_only.boxes)
        p = individual_heads_forward(params, h_ind[2], 2, ref_ind[2])
        self.assertAlmostEqual(p.box.cx, float(individual.boxes[2, 0]))


class TestNetwork(unittest.TestCase):
    """Test cases for the full forward pass."""

    def test_anchored_boxes_start_at_token_centres(self):
        hp = small_hp()
        tokens = np.random.default_rng(6).uniform(0.1, 0.9, size=(3, 6))
        fwd = model_forward(ModelParams.zeros(hp), tokens)
        np.testing.assert_allclose(fwd.individual.boxes[:3, :2], tokens[:, :2])
        np.testing.assert_allclose(fwd.individual.boxes[3], 0.5)
        np.testing.assert_allclose(fwd.group.points, 0.5)
        self.assertEqual(list(fwd.anchored), [True, True, True, False])

    def test_group_pass_ignores_anchors(self):
        hp = small_hp()
        params = ModelParams.init(hp, 7)
        tokens = np.random.default_rng(7).random((5, 6))
        fwd = model_forward(params, tokens)
        plain, _ = decoder_forward(params, tokens)
        group, _, _ = heads_forward(params, plain, params["ref_logits"])
        np.testing.assert_array_equal(fwd.group.points, group.points)
        np.testing.assert_array_equal(fwd.group.activity, group.activity)


class TestGradients(unittest.TestCase):
    """Finite-difference checks of the full backward pass."""

    def test_spot_check(self):
        errors = run_gradcheck(seed=0, n_points=5)
        self.assertEqual(set(errors), {"l_v", "l_s", "l_u", "l_c", "l_b", "l_o", "l_a", "total"})
        for name, err in errors.items():
            self.assertLess(err, TOLERANCE, msg=name)

    @unittest.skipUnless(get_settings().slow_tests, "set GROUPSET_SLOW_TESTS=1 to run")
    def test_full_suite(self):
        for seed in range(3):
            for name, err in run_gradcheck(seed=seed, n_points=100).items():
                self.assertLess(err, TOLERANCE, msg=f"seed {seed} {name}")


class TestOptimizer(unittest.TestCase):
    """Test cases for the AdamW step."""

    def setUp(self):
        self.params = ModelParams.init(small_hp(), 0)

    def test_zero_gradient_no_decay(self):
        new, state = optimizer_step(self.params, GradientBuffer.like(self.params), lr=1e-2, weight_decay=0.0)
        self.assertTrue(new.array_equal(self.params))
        self.assertEqual(state.step, 1)

    def test_zero_gradient_decay(self):
        new, _ = optimizer_step(self.params, GradientBuffer.like(self.params), lr=1e-2, weight_decay=0.5)
        for name, t in self.params.items():
            np.testing.assert_allclose(new[name], t * (1 - 1e-2 * 0.5))

    def test_first_step_size(self):
        grads = GradientBuffer.like(self.params)
        grads.accumulate("ffn_b1", np.full(8, 3.0))
        new, _ = optimizer_step(self.params, grads, lr=1e-3, weight_decay=0.0)
        # bias-corrected first step moves by lr * sign(g)
        np.testing.assert_allclose(new["ffn_b1"], self.params["ffn_b1"] - 1e-3, rtol=1e-6)

    def test_inputs_untouched(self):
        before = self.params.copy()
        grads = GradientBuffer.like(self.params)
        grads.accumulate("queries", np.ones_like(self.params["queries"]))
        state = AdamState.zeros_like(self.params)
        optimizer_step(self.params, grads, state, lr=0.1)
        self.assertTrue(self.params.array_equal(before))
        self.assertEqual(state.step, 0)

    def test_non_finite_gradient(self):
        grads = GradientBuffer.like(self.params)
        grads["ffn_b2"] = np.full(8, np.nan)
        with self.assertRaisesRegex(DivergenceError, "diverged at step 1"):
            optimizer_step(self.params, grads)


class TestCheckpoint(unittest.TestCase):
    """Test cases for checkpoint files."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp(prefix="test_ckpt")
        self.hp = small_hp()
        self.params = ModelParams.init(self.hp, 5)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_round_trip_with_state(self):
        grads = GradientBuffer.like(self.params)
        grads.accumulate("queries", np.ones_like(self.params["queries"]))
        params, state = optimizer_step(self.params, grads, lr=0.01)
        path = os.path.join(self.test_dir, "ckpt.bin")
        save_checkpoint(path, self.hp, params, 7, state, train_config={"steps": 10})
        ckpt = load_checkpoint(path)
        self.assertEqual(ckpt.step, 7)
        self.assertEqual(ckpt.hyper_params, self.hp)
        self.assertEqual(ckpt.header.train_config, {"steps": 10})
        self.assertTrue(ckpt.params.array_equal(params))
        self.assertEqual(ckpt.state.step, 1)
        self.assertTrue(ckpt.state.m.array_equal(state.m))
        self.assertTrue(ckpt.state.v.array_equal(state.v))
        self.assertFalse(os.path.exists(path + ".tmp"))

    def test_round_trip_without_state(self):
        path = os.path.join(self.test_dir, "ckpt.bin")
        save_checkpoint(path, self.hp, self.params, 0)
        ckpt = load_checkpoint(path)
        self.assertIsNone(ckpt.state)
        self.assertTrue(ckpt.params.array_equal(self.params))

    def test_missing(self):
        with self.assertRaises(DatasetIOError):
            load_checkpoint(os.path.join(self.test_dir, "nope.bin"))

    def test_truncated(self):
        path = os.path.join(self.test_dir, "ckpt.bin")
        save_checkpoint(path, self.hp, self.params, 0)
        with open(path, "rb") as f:
            data = f.read()
        for cut in (4, 20, len(data) - 8, len(data) - 3):
            with open(path, "wb") as f:
                f.write(data[:cut])
            with self.assertRaises(InputError):
                load_checkpoint(path)

    def test_hyper_params_mismatch(self):
        path = os.path.join(self.test_dir, "ckpt.bin")
        save_checkpoint(path, small_hp(D_emb=6), self.params, 0)
        with self.assertRaisesRegex(InputError, "tensor list"):
            load_checkpoint(path)


if __name__ == "__main__":
    unittest.main()
