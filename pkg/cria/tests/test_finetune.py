import math

import numpy as np
from django.test import SimpleTestCase
from numpy import testing as npt

from cria import tensor as T
from cria.checkpoint import new_state
from cria.encoder import STREAM, VIEWS, MaskSpec
from cria.exceptions import ConfigError, LabelError
from cria.finetune import (HeadParams, bce_loss, finetune, finetune_step, focal_loss, head_forward, init_head,
                           multiclass_ce, predict_scores, scores_to_proba)
from cria.model import embed_slices
from cria.purification import PurifyConfig
from cria.tests.factories import random_segments, small_config


def np_elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def np_head(f, head, eps=1e-5):
    z = np_elu(f @ head['head.fc1.w'].data + head['head.fc1.b'].data)
    mu = z.mean(-1, keepdims=True)
    z = (z - mu) / np.sqrt(((z - mu) ** 2).mean(-1, keepdims=True) + eps)
    z = z * head['head.ln.g'].data + head['head.ln.b'].data
    return np_elu(z @ head['head.fc2.w'].data + head['head.fc2.b'].data)


def sigmoid(s):
    return 1.0 / (1.0 + math.exp(-s))


class HeadTests(SimpleTestCase):

    def test_zero_weights_give_zero(self):
        head = init_head(8, 8, 3, 'ce', 0.0, np.random.default_rng(0))
        for name in ('head.fc1.w', 'head.fc2.w'):
            head[name].assign(np.zeros(head[name].shape))
        out = head_forward(np.random.default_rng(1).normal(size=(4, 8)), head).data
        npt.assert_array_equal(out, 0.0)

    def test_against_numpy(self):
        head = init_head(8, 6, 4, 'ce', 0.0, np.random.default_rng(2))
        f = np.random.default_rng(3).normal(size=(5, 8))
        npt.assert_allclose(head_forward(f, head).data, np_head(f, head), atol=1e-12)

    def test_eval_is_deterministic(self):
        head = init_head(8, 0, 2, 'bce', 0.5, np.random.default_rng(4))
        self.assertEqual(head.hidden, 8)
        f = np.random.default_rng(5).normal(size=(3, 8))
        npt.assert_array_equal(head_forward(f, head).data, head_forward(f, head).data)

    def test_binary_head_has_one_output(self):
        self.assertEqual(init_head(8, 4, 2, 'focal', 0.0, np.random.default_rng(0)).n_out, 1)
        self.assertEqual(init_head(8, 4, 2, 'ce', 0.0, np.random.default_rng(0)).n_out, 2)

    def test_validation(self):
        with self.assertRaises(ConfigError):
            init_head(8, 4, 1, 'ce', 0.0, np.random.default_rng(0))
        with self.assertRaises(ConfigError):
            init_head(8, 4, 3, 'bce', 0.0, np.random.default_rng(0))
        with self.assertRaises(ConfigError):
            init_head(8, 4, 2, 'ce', 1.0, np.random.default_rng(0))


class BinaryLossTests(SimpleTestCase):

    def test_bce_at_zero(self):
        self.assertAlmostEqual(bce_loss([0.0], [1]).item(), math.log(2.0), delta=1e-15)

    def test_bce_confident(self):
        self.assertLess(bce_loss([50.0], [1]).item(), 1e-20)
        self.assertAlmostEqual(bce_loss([-800.0], [1]).item(), 800.0, delta=1e-9)

    def test_bce_against_naive(self):
        rng = np.random.default_rng(0)
        s = rng.normal(0.0, 3.0, 20)
        y = rng.integers(0, 2, 20)
        naive = np.mean([-(yi * math.log(sigmoid(si)) + (1 - yi) * math.log(1 - sigmoid(si)))
                         for si, yi in zip(s, y)])
        self.assertAlmostEqual(bce_loss(s, y).item(), naive, delta=1e-12)

    def test_column_scores(self):
        s = np.array([[0.3], [-1.2]])
        self.assertEqual(bce_loss(s, [1, 0]).item(), bce_loss(s.reshape(-1), [1, 0]).item())

    def test_focal_reduces_to_half_bce(self):
        rng = np.random.default_rng(1)
        s = rng.normal(size=10)
        y = rng.integers(0, 2, 10)
        self.assertAlmostEqual(focal_loss(s, y, gamma=0.0, alpha=0.5).item(), 0.5 * bce_loss(s, y).item(),
                               delta=1e-12)

    def test_focal_at_zero(self):
        self.assertAlmostEqual(focal_loss([0.0], [1], 2.0, 0.25).item(), 0.25 * 0.25 * math.log(2.0), delta=1e-7)
        self.assertAlmostEqual(focal_loss([0.0], [1]).item(), 0.043322, delta=1e-6)

    def test_focal_certain_sample_contributes_nothing(self):
        self.assertEqual(focal_loss([800.0], [1]).item(), 0.0)

    def test_focal_gradient(self):
        y = np.array([1, 0, 1, 0])
        r = T.grad_check(lambda t: focal_loss(t, y), np.random.default_rng(2).normal(size=4))
        npt.assert_allclose(r.analytic, r.numeric, rtol=1e-4, atol=1e-7)

    def test_bad_labels(self):
        with self.assertRaises(LabelError):
            bce_loss([0.0, 1.0], [0, 2])
        with self.assertRaises(LabelError):
            focal_loss([0.0], [1, 0])
        with self.assertRaises(ConfigError):
            focal_loss([0.0], [1], gamma=-1.0)


class MulticlassLossTests(SimpleTestCase):

    def test_uniform_scores(self):
        self.assertAlmostEqual(multiclass_ce(np.zeros((3, 6)), [0, 2, 5]).item(), math.log(6.0), delta=1e-12)

    def test_confident(self):
        s = np.full((1, 4), -100.0)
        s[0, 2] = 100.0
        self.assertLess(multiclass_ce(s, [2]).item(), 1e-12)

    def test_against_naive(self):
        s = np.random.default_rng(0).normal(size=(3, 4))
        y = np.array([1, 3, 0])
        naive = np.mean([-s[i, y[i]] + math.log(sum(math.exp(v) for v in s[i])) for i in range(3)])
        self.assertAlmostEqual(multiclass_ce(s, y).item(), naive, delta=1e-12)

    def test_bad_labels(self):
        for labels in ([0, 4], [0, -1], [0.0, 1.0], [0]):
            with self.subTest(labels=labels), self.assertRaises(LabelError):
                multiclass_ce(np.zeros((2, 4)), np.array(labels))


class ProbabilityTests(SimpleTestCase):

    def test_binary(self):
        head = HeadParams({}, 2, loss='bce')
        p = scores_to_proba(np.array([[0.0], [2.0]]), head)
        npt.assert_allclose(p[0], [0.5, 0.5])
        self.assertAlmostEqual(p[1, 1], sigmoid(2.0), delta=1e-15)
        npt.assert_allclose(p.sum(axis=1), 1.0)

    def test_multiclass(self):
        head = HeadParams({}, 3, loss='ce')
        p = scores_to_proba(np.array([[0.0, 0.0, math.log(2.0)]]), head)
        npt.assert_allclose(p, [[0.25, 0.25, 0.5]], atol=1e-15)


class FinetuneTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.train = random_segments(rng, count=6, labels=[0, 1, 2, 0, 1, 2])

    def _state(self, **kw):
        cfg = small_config(**kw)
        state = new_state(cfg, cfg.seed)
        state.head = init_head(8, 8, 3, cfg.loss, cfg.dropout, np.random.default_rng(1))
        return cfg, state

    def test_full_model_gradient(self):
        """20 случайных проверок градиента энкодер + голова против центральных разностей."""
        families = ('e_channel', 'pad.', 'view.', 'layers.', 'fuse.', 'head.')
        h = 1e-5
        for trial in range(20):
            rng = np.random.default_rng(100 + trial)
            masked = VIEWS[(trial // len(families)) % 3]
            cfg = small_config(seed=trial, view_merge='concat' if (trial // 2) % 2 else 'mean')
            state = new_state(cfg, cfg.seed)
            state.head = init_head(8, 8, 3, 'ce', 0.0, rng)
            slices = random_segments(rng, count=3)
            labels = rng.integers(0, 3, 3)
            mask = MaskSpec(masked)
            tensors = {**state.params.tensors, **state.head.tensors}

            family = families[trial % len(families)]
            if family == 'pad.':
                name = f'pad.{STREAM[masked]}'
            else:
                names = sorted(n for n in tensors if n.startswith(family))
                name = names[rng.integers(len(names))]
            target = tensors[name]
            base = target.numpy()
            if name == 'e_channel':
                # используются только строки каналов среза
                coords = [(int(rng.integers(3)), int(rng.integers(base.shape[1]))) for _ in range(4)]
            else:
                coords = [tuple(int(rng.integers(s)) for s in base.shape) for _ in range(4)]

            def loss():
                f = embed_slices(slices, state.params, PurifyConfig(), mask)
                return multiclass_ce(head_forward(f, state.head), labels)

            state.params.zero_grad()
            state.head.zero_grad()
            T.backward(loss())
            grad = target.grad if target.grad is not None else np.zeros_like(base)
            analytic = np.array([grad[c] for c in coords])
            numeric = np.zeros(len(coords))
            with T.no_grad():
                for i, c in enumerate(coords):
                    for sign in (1.0, -1.0):
                        shifted = base.copy()
                        shifted[c] += sign * h
                        target.assign(shifted)
                        numeric[i] += sign * loss().item() / (2 * h)
            target.assign(base)
            with self.subTest(trial=trial, name=name):
                npt.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_zero_learning_rate(self):
        cfg, state = self._state(lr=0.0)
        before = {n: t.numpy() for n, t in state.params.items()}
        head_before = {n: t.numpy() for n, t in state.head.tensors.items()}
        finetune(self.train, state, cfg, steps=1)
        for n, t in state.params.items():
            npt.assert_array_equal(t.data, before[n], err_msg=n)
        for n, t in state.head.tensors.items():
            npt.assert_array_equal(t.data, head_before[n], err_msg=n)

    def test_frozen_encoder_only_trains_head(self):
        cfg, state = self._state()
        state.params.freeze('')
        before = {n: t.numpy() for n, t in state.params.items()}
        w = state.head['head.fc2.w'].numpy()
        finetune(self.train, state, cfg, steps=2)
        for n, t in state.params.items():
            npt.assert_array_equal(t.data, before[n], err_msg=n)
        self.assertGreater(np.abs(state.head['head.fc2.w'].data - w).max(), 0.0)

    def test_attention_masking_path(self):
        cfg, state = self._state(attn_mask_ratio=0.3)
        loss = finetune_step(self.train[:4], np.array([0, 1, 2, 0]), state, cfg)
        self.assertTrue(math.isfinite(loss))
        self.assertEqual(state.step, 1)

    def test_epoch_callback(self):
        cfg, state = self._state()
        seen = []
        losses = finetune(self.train, state, cfg, steps=5, on_epoch=lambda e, loss: seen.append(e))
        self.assertEqual(len(losses), 5)
        self.assertEqual(seen, [1, 2, 3])

    def test_unlabeled_slices(self):
        cfg, state = self._state()
        with self.assertRaises(LabelError):
            finetune(random_segments(np.random.default_rng(2), count=3), state, cfg, steps=1)
        with self.assertRaises(LabelError):
            finetune([], state, cfg, steps=1)

    def test_predict_matches_forward(self):
        cfg, state = self._state()
        scores = predict_scores(self.train, state.params, state.head, PurifyConfig(), batch_size=4)
        f = embed_slices(self.train, state.params, PurifyConfig()).data
        npt.assert_allclose(scores, np_head(f, state.head), atol=1e-12)
