"""
Сквозные проверки на синтетике в полном масштабе. Долгие: включаются через CRIA_ACCEPTANCE=1.
"""
import csv
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from cria.config import RunConfig
from cria.evaluation import LEVELS
from cria.services import run_evaluate, run_finetune, run_pretrain, run_robustness, run_synthesize

SEEDS = (0, 1, 2, 3, 4)


@unittest.skipUnless(os.getenv('CRIA_ACCEPTANCE'), 'CRIA_ACCEPTANCE не задан')
class SyntheticAcceptanceTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        cls.tmp = Path(cls._tmp.name)
        cls.dataset = cls.tmp / 'syn.cria'
        run_synthesize(cls.dataset, RunConfig({'seed': 0}))
        cls._pretrained: dict[int, Path] = {}

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def pretrained(self, seed: int) -> Path:
        if seed not in self._pretrained:
            run_pretrain(self.dataset, self.tmp / f'pre{seed}', RunConfig({'seed': seed}))
            self._pretrained[seed] = self.tmp / f'pre{seed}' / 'pretrain.ckpt'
        return self._pretrained[seed]

    def finetuned(self, seed: int, steps: int, pretrained: bool = True) -> Path:
        out = self.tmp / f'ft{seed}_{steps}_{"pre" if pretrained else "scratch"}'
        if not (out / 'finetune.ckpt').is_file():
            checkpoint = self.pretrained(seed) if pretrained else None
            run_finetune(self.dataset, out, RunConfig({'seed': seed}), steps, checkpoint)
        return out / 'finetune.ckpt'

    def test_end_to_end(self):
        report = run_evaluate(self.dataset, self.finetuned(0, 300), RunConfig())
        self.assertGreaterEqual(report.bacc, 0.9)
        self.assertGreaterEqual(report.kappa, 0.8)

    def test_pretrained_training_loss_below_scratch(self):
        def last_loss(ckpt: Path) -> float:
            with open(ckpt.parent / 'finetune_metrics.csv', newline='', encoding='utf-8') as fh:
                return float(list(csv.DictReader(fh))[-1]['loss'])

        self.assertLess(last_loss(self.finetuned(0, 300)), last_loss(self.finetuned(0, 300, pretrained=False)))

    def test_pretraining_benefit(self):
        for steps in (50, 100, 200):
            pre = [run_evaluate(self.dataset, self.finetuned(s, steps), RunConfig()).bacc for s in SEEDS]
            scratch = [run_evaluate(self.dataset, self.finetuned(s, steps, False), RunConfig()).bacc for s in SEEDS]
            with self.subTest(steps=steps):
                self.assertGreaterEqual(np.mean(pre), np.mean(scratch))

    def test_robustness_monotone(self):
        inversions = []
        for seed in SEEDS:
            rows = run_robustness(self.dataset, self.finetuned(seed, 300), RunConfig())
            for kind in {r['kind'] for r in rows}:
                bacc = {r['level']: r['bacc'] for r in rows if r['kind'] == kind}
                for a, b in zip(LEVELS, LEVELS[1:]):
                    if bacc[b] > bacc[a]:
                        inversions.append(bacc[b] - bacc[a])
        self.assertLessEqual(len(inversions), 1)
        self.assertTrue(all(d <= 0.01 for d in inversions))
