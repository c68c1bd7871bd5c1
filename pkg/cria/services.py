"""
cria/services.py — Сценарии команд

Каждая функция делает одну команду целиком: читает входы, гоняет модель,
пишет артефакты (датасет, чекпоинты, CSV). CSV без отметок времени, поэтому
повторный запуск с тем же сидом даёт те же байты.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import TrainState, config_record, load_checkpoint, new_state, save_checkpoint
from .config import RunConfig
from .datasets import (SliceDataset, SyntheticSpec, generate_synthetic_dataset, read_dataset, segment_dataset,
                       split_indices, write_dataset)
from .dsp import preprocess_recording, segment_slice
from .edf import parse_edf
from .encoder import STREAM, VIEWS, encoder_forward
from .evaluation import LEVELS, MetricsReport, NoiseLevels, NoiseSpec, inject_noise, make_report
from .exceptions import CheckpointError, DatasetFormatError, EmptySignalError, LabelError
from .finetune import finetune, init_head, predict_scores, scores_to_proba
from .model import apply_layer_policy, layers_to_run
from .multiview import build_views
from .optim import Adam
from .pretrain import StepLog, pretrain
from .purification import PurifyConfig
from .records import EegRecording, EegSlice, SegmentedSlice
from .seeding import stream

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test', 'all')


# ─── Вспомогательное ─────────────────────────────────────

def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _part(ds: SliceDataset, cfg, name: str) -> np.ndarray:
    if name == 'all':
        return np.arange(len(ds))
    split = split_indices(len(ds), cfg.val_fraction, cfg.test_fraction, cfg.require_seed())
    return getattr(split, name)


def _labels(segs: list[SegmentedSlice]) -> np.ndarray:
    if any(s.label is None for s in segs):
        raise LabelError('Для оценки все срезы должны иметь метку')
    return np.array([s.label for s in segs], dtype=np.int64)


def checkpoint_config(state: TrainState, cfg: RunConfig) -> RunConfig:
    """Конфигурация из чекпоинта; ключи, заданные явно (файл или флаг), перекрывают её."""
    merged = RunConfig(state.config)
    explicit = {k: v for k, v in cfg.as_dict().items() if cfg.source(k) != 'default'}
    merged.update(explicit, source='flag')
    return merged


# ─── Данные ──────────────────────────────────────────────

def run_synthesize(out: str | Path, cfg: RunConfig) -> SliceDataset:
    spec = SyntheticSpec.from_config(cfg, cfg.seed if cfg.seed is not None else 0)
    ds = generate_synthetic_dataset(spec)
    write_dataset(out, ds)
    logger.info('Синтетический датасет: %s срезов, %s классов → %s', len(ds), ds.n_classes, out)
    return ds


def _recordings(path: Path, label: int | None):
    if path.suffix.lower() == '.edf':
        yield parse_edf(path), label
        return
    for s in read_dataset(path).slices():
        yield EegRecording(list(s.channel_names), s.sample_rate, s.data), s.label if label is None else label


def run_preprocess(inputs, out: str | Path, cfg: RunConfig, label: int | None = None,
                   n_classes: int = 0) -> SliceDataset:
    """EDF или файл срезов → ресемплинг, фильтры, нарезка, нормировка → файл срезов."""
    slices: list[EegSlice] = []
    for path in map(Path, inputs):
        before = len(slices)
        for rec, rec_label in _recordings(path, label):
            slices.extend(preprocess_recording(rec, cfg, rec_label))
        logger.info('%s: %s срезов', path, len(slices) - before)
    if not slices:
        raise EmptySignalError('Предобработка не дала ни одного среза')
    known = [s.label for s in slices if s.label is not None]
    n_classes = n_classes or (max(known) + 1 if known else 0)
    ds = SliceDataset.from_slices(slices, n_classes)
    write_dataset(out, ds)
    return ds


# ─── Обучение ────────────────────────────────────────────

def run_pretrain(dataset: str | Path, out_dir: str | Path, cfg: RunConfig, steps: int | None = None) -> TrainState:
    """Предобучение на train-части; pretrain_loss.csv, чекпоинты каждые checkpoint_every шагов и финальный."""
    seed = cfg.require_seed()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = cfg.pretrain_steps if steps is None else steps
    ds = read_dataset(dataset)
    state = new_state(cfg, seed)
    train = segment_dataset(ds, state.params.hp.d_model, state.registry, _part(ds, cfg, 'train'), grow=True)
    logger.info('Предобучение: %s срезов, %s шагов', len(train), steps)

    rows = []

    def on_step(log: StepLog):
        rows.append([log.step, log.loss, *(log.histogram[v] for v in VIEWS)])
        if cfg.checkpoint_every and log.step % cfg.checkpoint_every == 0 and log.step < steps:
            save_checkpoint(out_dir / f'pretrain_step{log.step}.ckpt', state)

    try:
        pretrain(train, state, cfg, steps, on_step)
    finally:
        write_csv(out_dir / 'pretrain_loss.csv', ['step', 'loss', *VIEWS], rows)
    save_checkpoint(out_dir / 'pretrain.ckpt', state)
    return state


def _evaluate_segments(segs: list[SegmentedSlice], state: TrainState, cfg, layers=None) -> MetricsReport:
    scores = predict_scores(segs, state.params, state.head, PurifyConfig.from_config(cfg), layers)
    return make_report(scores_to_proba(scores, state.head), _labels(segs), state.head.num_classes)


def run_finetune(dataset: str | Path, out_dir: str | Path, cfg: RunConfig, steps: int | None = None,
                 checkpoint: str | Path | None = None) -> TrainState:
    """Дообучение с новой головой поверх чекпоинта (или с нуля); finetune_metrics.csv по эпохам."""
    seed = cfg.require_seed()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = cfg.finetune_steps if steps is None else steps
    ds = read_dataset(dataset)

    if checkpoint:
        state = load_checkpoint(checkpoint)
        logger.info('Энкодер загружен из %s (шаг %s)', checkpoint, state.step)
    else:
        state = new_state(cfg, seed)
        logger.info('Дообучение с нуля')
    hp = state.params.hp
    values = cfg.as_dict()
    values.update(hp.to_dict())
    state.config = config_record(values)
    state.optimizer = Adam.from_config(cfg)
    state.rng = stream(seed, 'finetune')
    state.step = 0
    state.params.frozen = set()
    state.head = init_head(hp.d_model, cfg.hidden, ds.n_classes, cfg.loss, cfg.dropout, stream(seed, 'head'))
    layers = apply_layer_policy(state.params, cfg.task_layers, cfg.unused_layers, cfg.freeze_encoder)

    train = segment_dataset(ds, hp.d_model, state.registry, _part(ds, cfg, 'train'), grow=True)
    val = segment_dataset(ds, hp.d_model, state.registry, _part(ds, cfg, 'val'), grow=True)

    rows = []

    def on_epoch(epoch: int, loss: float):
        row = [epoch, state.step, loss]
        if val:
            report = _evaluate_segments(val, state, cfg, layers)
            row += [report.bacc, report.auroc, report.kappa]
            logger.info('Эпоха %s: loss=%.4f bacc=%.4f', epoch, loss, report.bacc)
        else:
            row += [float('nan')] * 3
        rows.append(row)

    try:
        finetune(train, state, cfg, steps, layers, on_epoch)
    finally:
        write_csv(out_dir / 'finetune_metrics.csv', ['epoch', 'step', 'loss', 'bacc', 'auroc', 'kappa'], rows)
    save_checkpoint(out_dir / 'finetune.ckpt', state)
    return state


# ─── Оценка ──────────────────────────────────────────────

def _trained(checkpoint: str | Path, cfg: RunConfig) -> tuple[TrainState, RunConfig]:
    state = load_checkpoint(checkpoint)
    if state.head is None:
        raise CheckpointError(f'{checkpoint}: в чекпоинте нет классификационной головы, сначала finetune')
    return state, checkpoint_config(state, cfg)


def evaluate_slices(slices: list[EegSlice], state: TrainState, cfg) -> MetricsReport:
    if not slices:
        raise DatasetFormatError('Нет срезов для оценки')
    hp = state.params.hp
    segs = [segment_slice(s, hp.d_model, state.registry, grow=True) for s in slices]
    return _evaluate_segments(segs, state, cfg, layers_to_run(hp.n_layers, cfg.task_layers, cfg.unused_layers))


def write_report(out_dir: str | Path, report: MetricsReport) -> Path:
    out_dir = Path(out_dir)
    row = report.as_row()
    write_csv(out_dir / 'confusion.csv', ['label', *(f'pred_{k}' for k in range(len(report.confusion_matrix)))],
              ([k, *counts] for k, counts in enumerate(report.confusion_matrix)))
    return write_csv(out_dir / 'metrics.csv', ['metric', 'value'], row.items())


def run_evaluate(dataset: str | Path, checkpoint: str | Path, cfg: RunConfig, split: str = 'test',
                 out_dir: str | Path | None = None) -> MetricsReport:
    state, cfg = _trained(checkpoint, cfg)
    ds = read_dataset(dataset)
    report = evaluate_slices(ds.slices(_part(ds, cfg, split)), state, cfg)
    if out_dir:
        write_report(out_dir, report)
    return report


ROBUSTNESS_COLUMNS = ['kind', 'level', 'bacc', 'auroc', 'pr_auc', 'kappa', 'f1_weighted', 'n']


def run_robustness(dataset: str | Path, checkpoint: str | Path, cfg: RunConfig, split: str = 'test',
                   out_dir: str | Path | None = None) -> list[dict]:
    """Сетка вид шума × уровень; у каждого среза свой сид, одинаковый на всех уровнях."""
    state, cfg = _trained(checkpoint, cfg)
    levels = NoiseLevels.from_config(cfg)
    ds = read_dataset(dataset)
    idx = _part(ds, cfg, split)
    clean = ds.slices(idx)
    rows = []
    for kind in cfg.noise_kinds:
        for level in LEVELS:
            noisy = [inject_noise(s, NoiseSpec(kind, level, seed=cfg.noise_seed + int(j)), levels)
                     for j, s in zip(idx, clean)]
            report = evaluate_slices(noisy, state, cfg)
            rows.append({'kind': kind, 'level': level, **report.as_row()})
            logger.info('%s/%s: bacc=%.4f', kind, level, report.bacc)
    if out_dir:
        write_csv(Path(out_dir) / 'robustness.csv', ROBUSTNESS_COLUMNS,
                  ([r[c] for c in ROBUSTNESS_COLUMNS] for r in rows))
    return rows


# ─── Выгрузка признаков ──────────────────────────────────

def dump_features(dataset: str | Path, checkpoint: str | Path, out: str | Path, cfg: RunConfig,
                  split: str = 'test', limit: int = 4) -> Path:
    """Признаки видов на входе энкодера (layer 0) и после каждого слоя, строка на (канал, сегмент)."""
    state = load_checkpoint(checkpoint)
    cfg = checkpoint_config(state, cfg)
    hp = state.params.hp
    ds = read_dataset(dataset)
    idx = _part(ds, cfg, split)[:limit]
    layers = layers_to_run(hp.n_layers, cfg.task_layers, cfg.unused_layers)
    views = [v for v in VIEWS if STREAM[v] in hp.streams]
    rows = []
    with T.no_grad():
        for j in idx:
            sl = ds.slice(int(j))
            seg = segment_slice(sl, hp.d_model, state.registry, grow=True)
            inputs = build_views(seg.data[None], np.array([seg.channel_ids]), state.params)
            _, captured = encoder_forward(inputs, state.params, layers=layers, capture=True)
            for layer, feats in enumerate(captured):
                per_view = dict(zip(VIEWS, feats.as_tuple()))
                for view in views:
                    arr = per_view[view].data[0]
                    for c, name in enumerate(sl.channel_names):
                        for n in range(arr.shape[1]):
                            rows.append([int(j), layer, view, name, n, *arr[c, n]])
    header = ['slice', 'layer', 'view', 'channel', 'segment', *(f'f{k}' for k in range(hp.d_model))]
    path = write_csv(out, header, rows)
    logger.info('Признаки %s срезов записаны в %s', len(idx), path)
    return path
