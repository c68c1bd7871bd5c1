import csv
import io
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings
from numpy import testing as npt

from cria.checkpoint import checkpoint_bytes, load_checkpoint
from cria.cli import run_command
from cria.config import RunConfig
from cria.datasets import read_dataset
from cria.edf import write_edf
from cria.encoder import ModelShape, init_encoder_params
from cria.records import EegRecording
from cria.seeding import stream
from cria.services import run_evaluate, run_finetune, run_pretrain, run_robustness
from cria.tests.factories import small_config, tiny_dataset


def read_csv(path) -> list[list[str]]:
    with open(path, newline='', encoding='utf-8') as fh:
        return list(csv.reader(fh))


class CommandTestCase(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.dataset = self.tmp / 'syn.cria'
        tiny_dataset(self.dataset)
        self.config = self.tmp / 'run.env'
        self.config.write_text(small_config().dumps(), encoding='utf-8')
        override = override_settings(CRIA_DATA_DIR=self.tmp / 'data', CRIA_CONFIG_FILE='')
        override.enable()
        self.addCleanup(override.disable)

    def tearDown(self):
        self._tmp.cleanup()

    def call(self, *args, **kw):
        out = io.StringIO()
        call_command(*args, stdout=out, stderr=io.StringIO(), **kw)
        return out.getvalue()

    def pretrained(self, steps=2) -> Path:
        self.call('pretrain', str(self.dataset), '--config', str(self.config), '--out', str(self.tmp / 'pre'),
                  '--steps', str(steps))
        return self.tmp / 'pre' / 'pretrain.ckpt'

    def finetuned(self) -> Path:
        ckpt = self.pretrained()
        self.call('finetune', str(self.dataset), '--config', str(self.config), '--checkpoint', str(ckpt),
                  '--out', str(self.tmp / 'ft'), '--steps', '3')
        return self.tmp / 'ft' / 'finetune.ckpt'


class DataCommandTests(CommandTestCase):

    def test_synthesize(self):
        out = self.tmp / 'a.cria'
        self.call('synthesize', '--out', str(out), '--seed', '3', '--channels', '2', '--per-class', '2',
                  '--set', 'syn_seconds=1')
        ds = read_dataset(out)
        self.assertEqual((len(ds), len(ds.channel_names), ds.slice_length), (6, 2, 200))
        again = self.tmp / 'b.cria'
        self.call('synthesize', '--out', str(again), '--seed', '3', '--channels', '2', '--per-class', '2',
                  '--set', 'syn_seconds=1')
        self.assertEqual(out.read_bytes(), again.read_bytes())

    def test_preprocess_edf(self):
        t = np.arange(200 * 25) / 200.0
        rec = EegRecording(['Fp1', 'Cz', 'O1'], 200.0, np.vstack([np.sin(2 * np.pi * f * t) for f in (5, 10, 20)]))
        edf = write_edf(self.tmp / 'rec.edf', rec)
        out = self.tmp / 'rec.cria'
        with self.assertLogs('cria.dsp', 'WARNING'):
            self.call('preprocess', str(edf), '--out', str(out), '--label', '1', '--n-classes', '2')
        ds = read_dataset(out)
        self.assertEqual(ds.data.shape, (2, 3, 2000))
        npt.assert_array_equal(ds.labels, [1, 1])
        self.assertEqual(ds.n_classes, 2)

    def test_preprocess_slice_file(self):
        out = self.tmp / 'again.cria'
        self.call('preprocess', str(self.dataset), '--out', str(out), '--set', 'slice_seconds=0.2',
                  '--set', 'band_high=80')
        ds = read_dataset(out)
        self.assertEqual(ds.data.shape, (36, 3, 40))
        self.assertEqual(ds.n_classes, 3)


class TrainingCommandTests(CommandTestCase):

    def test_zero_steps_checkpoint_is_initialization(self):
        ckpt = self.pretrained(steps=0)
        state = load_checkpoint(ckpt)
        ref = init_encoder_params(ModelShape.from_config(small_config()), stream(0, 'init'))
        for name, t in ref.items():
            npt.assert_array_equal(state.params[name].data, t.data, err_msg=name)
        self.assertEqual(checkpoint_bytes(state), ckpt.read_bytes())
        self.assertEqual(read_csv(self.tmp / 'pre' / 'pretrain_loss.csv'),
                         [['step', 'loss', 'temporal', 'spatial', 'spectral']])

    def test_pretrain_is_deterministic(self):
        first = self.pretrained(steps=2).read_bytes()
        loss = (self.tmp / 'pre' / 'pretrain_loss.csv').read_bytes()
        self.assertEqual(self.pretrained(steps=2).read_bytes(), first)
        self.assertEqual((self.tmp / 'pre' / 'pretrain_loss.csv').read_bytes(), loss)
        rows = read_csv(self.tmp / 'pre' / 'pretrain_loss.csv')
        self.assertEqual([r[0] for r in rows[1:]], ['1', '2'])

    def test_intermediate_checkpoints(self):
        self.call('pretrain', str(self.dataset), '--config', str(self.config), '--out', str(self.tmp / 'pre'),
                  '--steps', '3', '--set', 'checkpoint_every=1')
        names = sorted(p.name for p in (self.tmp / 'pre').glob('*.ckpt'))
        self.assertEqual(names, ['pretrain.ckpt', 'pretrain_step1.ckpt', 'pretrain_step2.ckpt'])
        self.assertEqual(load_checkpoint(self.tmp / 'pre' / 'pretrain_step2.ckpt').step, 2)

    def test_default_output_directory(self):
        self.call('pretrain', str(self.dataset), '--config', str(self.config), '--steps', '0')
        self.assertTrue((self.tmp / 'data' / 'pretrain' / 'pretrain.ckpt').is_file())

    def test_finetune(self):
        state = load_checkpoint(self.finetuned())
        self.assertIsNotNone(state.head)
        self.assertEqual(state.head.num_classes, 3)
        self.assertEqual(state.step, 3)
        rows = read_csv(self.tmp / 'ft' / 'finetune_metrics.csv')
        self.assertEqual(rows[0], ['epoch', 'step', 'loss', 'bacc', 'auroc', 'kappa'])
        self.assertEqual(rows[1][:2], ['1', '3'])

    def test_seed_flag_beats_config_file(self):
        self.call('pretrain', str(self.dataset), '--config', str(self.config), '--out', str(self.tmp / 'pre'),
                  '--steps', '0', '--seed', '5', '--set', 'seed=4')
        state = load_checkpoint(self.tmp / 'pre' / 'pretrain.ckpt')
        self.assertEqual(state.config['seed'], 5)
        ref = init_encoder_params(state.params.hp, stream(5, 'init'))
        npt.assert_array_equal(state.params['e_channel'].data, ref['e_channel'].data)


class EvaluationCommandTests(CommandTestCase):

    def test_evaluate(self):
        ckpt = self.finetuned()
        text = self.call('evaluate', str(self.dataset), '--checkpoint', str(ckpt), '--out', str(self.tmp / 'ev'))
        self.assertIn('bacc', text)
        rows = read_csv(self.tmp / 'ev' / 'metrics.csv')
        self.assertEqual(rows[0], ['metric', 'value'])
        self.assertEqual([r[0] for r in rows[1:]], ['bacc', 'auroc', 'pr_auc', 'kappa', 'f1_weighted', 'n'])
        self.assertEqual(rows[-1], ['n', '5'])
        self.assertEqual(len(read_csv(self.tmp / 'ev' / 'confusion.csv')), 4)

    def test_evaluate_needs_head(self):
        ckpt = self.pretrained(steps=0)
        with self.assertRaises(CommandError) as ctx:
            self.call('evaluate', str(self.dataset), '--checkpoint', str(ckpt))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_zero_noise_matches_evaluate(self):
        ckpt = self.finetuned()
        cfg = RunConfig({'noise_gaussian': '0,0,0', 'noise_impulse_p': '0,0,0', 'noise_dropout': '0,0,0',
                         'noise_sine': '0,0,0'})
        clean = run_evaluate(self.dataset, ckpt, RunConfig()).as_row()
        rows = run_robustness(self.dataset, ckpt, cfg, out_dir=self.tmp / 'rob')
        self.assertEqual(len(rows), 16)
        for row in rows:
            npt.assert_equal({k: v for k, v in row.items() if k not in ('kind', 'level')}, clean)
        self.assertEqual(len(read_csv(self.tmp / 'rob' / 'robustness.csv')), 17)

    def test_robustness_command(self):
        ckpt = self.finetuned()
        text = self.call('robustness', str(self.dataset), '--checkpoint', str(ckpt), '--set', 'noise_kinds=gaussian')
        self.assertIn('gaussian', text)
        rows = read_csv(self.tmp / 'data' / 'robustness' / 'robustness.csv')
        self.assertEqual([r[1] for r in rows[1:]], ['none', 'low', 'mid', 'high'])

    def test_dump_features(self):
        ckpt = self.finetuned()
        out = self.tmp / 'features.csv'
        self.call('dump_features', str(self.dataset), '--checkpoint', str(ckpt), '--out', str(out), '--limit', '2')
        rows = read_csv(out)
        self.assertEqual(rows[0], ['slice', 'layer', 'view', 'channel', 'segment', *(f'f{k}' for k in range(8))])
        # 2 среза × (вход + 1 слой) × 3 вида × 3 канала × 10 сегментов
        self.assertEqual(len(rows) - 1, 2 * 2 * 3 * 3 * 10)
        self.assertEqual({r[2] for r in rows[1:]}, {'temporal', 'spatial', 'spectral'})


class ExitCodeTests(CommandTestCase):

    def test_success(self):
        self.assertEqual(run_command(['synthesize', '--out', str(self.tmp / 'x.cria'), '--per-class', '1',
                                      '--set', 'syn_seconds=1']), 0)

    def test_config_errors(self):
        self.assertEqual(run_command(['pretrain', str(self.dataset), '--set', 'colour=red']), 2)
        self.assertEqual(run_command(['pretrain', str(self.dataset), '--steps', '0']), 2)   # нет seed
        self.assertEqual(run_command(['pretrain', str(self.dataset), '--config', str(self.tmp / 'nope.env')]), 2)

    def test_data_errors(self):
        self.assertEqual(run_command(['pretrain', str(self.tmp / 'missing.cria'), '--seed', '0']), 3)
        self.assertEqual(run_command(['evaluate', str(self.dataset), '--checkpoint', str(self.tmp / 'none.ckpt')]), 3)

    def test_checkpoint_header_without_keys(self):
        meta = b'{"version":1}'
        bad = self.tmp / 'bad.ckpt'
        bad.write_bytes(struct.pack('<8sHI', b'CRIACKPT', 1, len(meta)) + meta)
        self.assertEqual(run_command(['evaluate', str(self.dataset), '--checkpoint', str(bad)]), 3)

    def test_divergence(self):
        code = run_command(['pretrain', str(self.dataset), '--config', str(self.config), '--out',
                            str(self.tmp / 'pre'), '--steps', '2', '--set', 'temperature=1e-320'])
        self.assertEqual(code, 4)
        self.assertTrue((self.tmp / 'pre' / 'pretrain_loss.csv').is_file())

    def test_dashed_command_name(self):
        ckpt = self.finetuned()
        code = run_command(['dump-features', str(self.dataset), '--checkpoint', str(ckpt), '--out',
                            str(self.tmp / 'f.csv'), '--limit', '1'])
        self.assertEqual(code, 0)


class ServiceTests(CommandTestCase):

    def test_finetune_from_scratch(self):
        state = run_finetune(self.dataset, self.tmp / 'scratch', small_config(), steps=2)
        self.assertEqual(state.step, 2)
        ref = init_encoder_params(state.params.hp, stream(0, 'init'))
        self.assertGreater(np.abs(state.params['fuse.ln.g'].data - ref['fuse.ln.g'].data).max(), 0.0)

    def test_pretrain_uses_train_split_only(self):
        state = run_pretrain(self.dataset, self.tmp / 'p', small_config(), steps=1)
        self.assertEqual(state.registry.names, ['CH1', 'CH2', 'CH3'])
        self.assertEqual(state.step, 1)
