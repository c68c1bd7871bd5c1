"""
cria/finetune.py — Дообучение: классификационная голова и лоссы задачи

Голова (как есть, без отказа от финального ELU):
  Z  = ELU(FC1(Dropout(F)))
  y′ = ELU(FC2(LayerNorm(Z)))

Лоссы: bce (бинарный), focal (несбалансированный бинарный), ce (многоклассовый).
При обучении внимание энкодера маскируется с долей attn_mask_ratio.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import tensor as T
from .encoder import NO_MASK, MaskSpec
from .exceptions import ConfigError, DivergenceError, LabelError
from .model import embed_slices
from .purification import PurifyConfig
from .records import SegmentedSlice
from .tensor import Tensor

if TYPE_CHECKING:
    from .checkpoint import TrainState

logger = logging.getLogger(__name__)

BINARY_LOSSES = ('bce', 'focal')


# ─── Голова ──────────────────────────────────────────────

@dataclass
class HeadParams:
    tensors: dict[str, Tensor]
    num_classes: int
    dropout: float = 0.0
    loss: str = 'ce'

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f'num_classes={self.num_classes}, нужно ≥ 2')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f'dropout={self.dropout} вне [0, 1)')
        if self.loss in BINARY_LOSSES and self.num_classes != 2:
            raise ConfigError(f'Лосс {self.loss} только для двух классов, получено {self.num_classes}')

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def n_out(self) -> int:
        return 1 if self.loss in BINARY_LOSSES else self.num_classes

    @property
    def hidden(self) -> int:
        return self.tensors['head.fc1.b'].shape[0]

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()


def init_head(d: int, hidden: int, num_classes: int, loss: str, dropout: float,
              rng: np.random.Generator) -> HeadParams:
    """Случайная инициализация головы; hidden=0 означает H = D."""
    h = hidden or d
    n_out = 1 if loss in BINARY_LOSSES else num_classes
    arrays = {
        'head.fc1.w': rng.normal(0.0, 1.0 / np.sqrt(d), (d, h)),
        'head.fc1.b': np.zeros(h),
        'head.ln.g': np.ones(h),
        'head.ln.b': np.zeros(h),
        'head.fc2.w': rng.normal(0.0, 1.0 / np.sqrt(h), (h, n_out)),
        'head.fc2.b': np.zeros(n_out),
    }
    tensors = {n: Tensor(a, requires_grad=True, name=n) for n, a in arrays.items()}
    return HeadParams(tensors, num_classes, dropout, loss)


def head_forward(f, head: HeadParams, training: bool = False, rng: np.random.Generator | None = None,
                 eps: float = 1e-5) -> Tensor:
    f = T.as_tensor(f)
    if training and head.dropout > 0:
        f = T.dropout(f, head.dropout, rng)
    z = T.elu(T.matmul(f, head['head.fc1.w']) + head['head.fc1.b'])
    z = T.layer_norm(z, head['head.ln.g'], head['head.ln.b'], eps)
    return T.elu(T.matmul(z, head['head.fc2.w']) + head['head.fc2.b'])


# ─── Лоссы ───────────────────────────────────────────────

def _binary_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n,) or not np.isin(y, (0, 1)).all():
        raise LabelError(f'Ожидаются метки 0/1 длины {n}')
    return y.astype(np.float64)


def _flat_scores(scores) -> Tensor:
    s = T.as_tensor(scores)
    return T.reshape(s, (s.shape[0],)) if s.ndim == 2 else s


def bce_loss(scores, labels) -> Tensor:
    """mean(relu(s) − s·y + ln(1 + e^{−|s|})) — устойчивая форма BCE с логитами."""
    s = _flat_scores(scores)
    y = _binary_labels(labels, s.shape[0])
    return T.tmean(T.relu(s) - s * y + T.log1p(T.exp(-T.tabs(s))))


def focal_loss(scores, labels, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """mean(−α_t (1 − p_t)^γ ln p_t); (1 − p_t)^γ считается как exp(γ ln σ(−s_t))."""
    if gamma < 0 or not 0 < alpha < 1:
        raise ConfigError(f'focal: gamma={gamma} должно быть ≥ 0, alpha={alpha} — в (0, 1)')
    s = _flat_scores(scores)
    y = _binary_labels(labels, s.shape[0])
    s_t = s * (2.0 * y - 1.0)
    alpha_t = np.where(y == 1, alpha, 1.0 - alpha)
    weight = T.exp(T.log_sigmoid(-s_t) * gamma)
    return T.tmean(-(weight * T.log_sigmoid(s_t)) * alpha_t)


def multiclass_ce(scores, labels) -> Tensor:
    s = T.as_tensor(scores)
    y = np.asarray(labels)
    b, k = s.shape
    if y.shape != (b,) or not np.issubdtype(y.dtype, np.integer) or (y < 0).any() or (y >= k).any():
        raise LabelError(f'Метки должны быть целыми в [0, {k}) длины {b}')
    return -T.tmean(T.take(T.log_softmax_lastdim(s), (np.arange(b), y)))


def task_loss(scores, labels, head: HeadParams, cfg) -> Tensor:
    if head.loss == 'bce':
        return bce_loss(scores, labels)
    if head.loss == 'focal':
        return focal_loss(scores, labels, cfg.focal_gamma, cfg.focal_alpha)
    return multiclass_ce(scores, labels)


def scores_to_proba(scores: np.ndarray, head: HeadParams) -> np.ndarray:
    """n × K вероятностей классов из выходов головы."""
    if head.n_out == 1:
        p1 = 1.0 / (1.0 + np.exp(-scores.reshape(-1)))
        return np.stack([1.0 - p1, p1], axis=1)
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ─── Обучение ────────────────────────────────────────────

@dataclass
class EpochLog:
    epoch: int
    step: int
    loss: float
    metrics: dict = field(default_factory=dict)


def _all_trainable(state: 'TrainState') -> dict[str, Tensor]:
    out = dict(state.params.trainable())
    out.update(state.head.tensors)
    return out


def finetune_step(slices: list[SegmentedSlice], labels, state: 'TrainState', cfg, layers=None) -> float:
    params, head = state.params, state.head
    params.zero_grad()
    head.zero_grad()
    ratio = cfg.attn_mask_ratio
    mask = MaskSpec('none', ratio, int(state.rng.integers(2 ** 31))) if ratio > 0 else NO_MASK
    f = embed_slices(slices, params, PurifyConfig.from_config(cfg), mask, layers=layers)
    scores = head_forward(f, head, training=True, rng=state.rng, eps=params.hp.ln_eps)
    loss = task_loss(scores, labels, head, cfg)
    value = loss.item()
    if not math.isfinite(value):
        T.current_tape().clear()
        raise DivergenceError(state.step + 1, value)
    T.backward(loss)
    state.optimizer.step(_all_trainable(state))
    state.step += 1
    return value


def predict_scores(slices: list[SegmentedSlice], params, head: HeadParams, purify: PurifyConfig,
                   layers=None, batch_size: int = 64) -> np.ndarray:
    """Выходы головы n × n_out без dropout и маскирования."""
    out = []
    with T.no_grad():
        for start in range(0, len(slices), batch_size):
            chunk = slices[start:start + batch_size]
            f = embed_slices(chunk, params, purify, NO_MASK, layers=layers)
            out.append(head_forward(f, head, training=False, eps=params.hp.ln_eps).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, head.n_out))


def finetune(train: list[SegmentedSlice], state: 'TrainState', cfg, steps: int, layers=None,
             on_epoch: Callable[[int, float], None] | None = None) -> list[float]:
    """steps шагов; эпоха — ceil(n_train / batch_size) шагов, on_epoch(эпоха, средний лосс)."""
    if not train:
        raise LabelError('Нет размеченных срезов для дообучения')
    labels = np.array([s.label for s in train])
    if any(s.label is None for s in train):
        raise LabelError('Все срезы для дообучения должны иметь метку')
    per_epoch = max(1, math.ceil(len(train) / cfg.batch_size))
    losses, epoch_losses = [], []
    for i in range(steps):
        idx = state.rng.choice(len(train), size=min(cfg.batch_size, len(train)), replace=False)
        loss = finetune_step([train[int(j)] for j in idx], labels[idx].astype(np.int64), state, cfg, layers)
        losses.append(loss)
        epoch_losses.append(loss)
        if (i + 1) % per_epoch == 0 or i + 1 == steps:
            mean = float(np.mean(epoch_losses))
            logger.debug('finetune эпоха %s: loss=%.6f', math.ceil((i + 1) / per_epoch), mean)
            if on_epoch:
                on_epoch(math.ceil((i + 1) / per_epoch), mean)
            epoch_losses = []
    return losses
