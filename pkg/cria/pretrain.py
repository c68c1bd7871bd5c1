"""
cria/pretrain.py — Контрастное предобучение с маскированием вида

Шаг:
  1. Батч из B ≥ 2 срезов, каждому — случайный маскируемый вид
  2. Два прохода с общими параметрами: F без маски, F′ с маской
  3. Строки F и F′ нормируются по L2, лосс — CE(softmax(F·F′ᵀ / T), I)
  4. backward + шаг Adam по всем параметрам (включая E_channel и pad'ы)
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import tensor as T
from .encoder import NO_MASK, VIEWS, MaskSpec
from .exceptions import BatchSizeError, DivergenceError, TemperatureError
from .model import embed_slices
from .purification import PurifyConfig
from .records import SegmentedSlice
from .tensor import Tensor

if TYPE_CHECKING:
    from .checkpoint import TrainState

logger = logging.getLogger(__name__)


@dataclass
class PretrainBatch:
    slices: list[SegmentedSlice]
    mask_choices: tuple[str, ...]

    def __post_init__(self):
        if len(self.slices) < 2:
            raise BatchSizeError(f'Контрастному лоссу нужен батч B ≥ 2, получено {len(self.slices)}')
        self.mask_choices = tuple(self.mask_choices)
        if len(self.mask_choices) != len(self.slices):
            raise BatchSizeError(f'{len(self.mask_choices)} масок на {len(self.slices)} срезов')

    def histogram(self) -> dict[str, int]:
        counts = Counter(self.mask_choices)
        return {v: counts.get(v, 0) for v in VIEWS}


@dataclass
class StepLog:
    step: int
    loss: float
    histogram: dict = field(default_factory=dict)


def maskable_views(hp) -> tuple[str, ...]:
    # без спектрального потока маскировать его бессмысленно
    return ('temporal', 'spatial') if hp.encoder_variant == 'only_st' else VIEWS


def sample_batch(slices: list[SegmentedSlice], rng: np.random.Generator, batch_size: int, hp,
                 per_batch: bool = False) -> PretrainBatch:
    if len(slices) < 2 or batch_size < 2:
        raise BatchSizeError(f'Нужно ≥ 2 среза и batch_size ≥ 2 (срезов {len(slices)}, batch_size {batch_size})')
    idx = rng.choice(len(slices), size=min(batch_size, len(slices)), replace=False)
    views = maskable_views(hp)
    if per_batch:
        choices = (views[int(rng.integers(len(views)))],) * len(idx)
    else:
        choices = tuple(views[int(k)] for k in rng.integers(len(views), size=len(idx)))
    return PretrainBatch([slices[int(i)] for i in idx], choices)


def twin_embed(batch: PretrainBatch, params, purify: PurifyConfig) -> tuple[Tensor, Tensor]:
    """(F, F′), оба B × D и нормированы по строкам."""
    f = embed_slices(batch.slices, params, purify, NO_MASK)
    f_masked = embed_slices(batch.slices, params, purify, MaskSpec(batch.mask_choices))
    return T.l2_normalize(f), T.l2_normalize(f_masked)


def contrastive_loss(f, f_prime, temperature: float = 0.2, symmetric: bool = False) -> Tensor:
    """mean_i −log softmax(F·F′ᵀ / T)[i, i]; symmetric усредняет с транспонированным вариантом."""
    if not temperature > 0:
        raise TemperatureError(f'Температура должна быть > 0, получено {temperature}')
    f, f_prime = T.as_tensor(f), T.as_tensor(f_prime)
    b = f.shape[0]
    sim = T.matmul(f, T.transpose(f_prime)) * (1.0 / temperature)
    diag = (np.arange(b), np.arange(b))
    loss = -T.tmean(T.take(T.log_softmax_lastdim(sim), diag))
    if symmetric:
        back = -T.tmean(T.take(T.log_softmax_lastdim(T.transpose(sim)), diag))
        loss = (loss + back) * 0.5
    return loss


def pretrain_step(batch: PretrainBatch, state: 'TrainState', cfg) -> float:
    params = state.params
    params.zero_grad()
    f, f_masked = twin_embed(batch, params, PurifyConfig.from_config(cfg))
    loss = contrastive_loss(f, f_masked, cfg.temperature, cfg.symmetric_loss)
    value = loss.item()
    if not math.isfinite(value):
        T.current_tape().clear()
        raise DivergenceError(state.step + 1, value)
    T.backward(loss)
    state.optimizer.step(params.trainable())
    state.step += 1
    return value


def pretrain(slices: list[SegmentedSlice], state: 'TrainState', cfg, steps: int,
             on_step: Callable[[StepLog], None] | None = None) -> list[StepLog]:
    logs = []
    for _ in range(steps):
        batch = sample_batch(slices, state.rng, cfg.batch_size, state.params.hp, cfg.mask_per_batch)
        loss = pretrain_step(batch, state, cfg)
        log = StepLog(state.step, loss, batch.histogram())
        logs.append(log)
        logger.debug('pretrain шаг %s: loss=%.6f', state.step, loss)
        if on_step:
            on_step(log)
    return logs
