"""
cria/purification.py — Очистка представления и слияние в один вектор

  1. Оценка канала: среднее по сегментам евклидовой нормы вектора сегмента
  2. Берём top-k_c каналов, внутри каждого — top-k_t сегментов по норме
  3. Усредняем выбранные сегменты, затем каналы, и нормируем LayerNorm

Выбор жёсткий: у невыбранных сегментов градиент ровно 0.
При равных оценках побеждает меньший индекс.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .multiview import MultiViewFeatures
from .tensor import Tensor


@dataclass(frozen=True)
class PurifyConfig:
    """k_c / k_t = 0 означает ceil(C/2) / ceil(N/2); значения вне [1, C] и [1, N] зажимаются."""

    k_c: int = 0
    k_t: int = 0
    eps: float = 1e-5

    def resolve(self, c: int, n: int) -> tuple[int, int]:
        k_c = self.k_c if self.k_c > 0 else math.ceil(c / 2)
        k_t = self.k_t if self.k_t > 0 else math.ceil(n / 2)
        return min(max(k_c, 1), c), min(max(k_t, 1), n)

    @classmethod
    def from_config(cls, cfg) -> 'PurifyConfig':
        if cfg.fusion == 'avg_pool':
            return cls(k_c=_ALL, k_t=_ALL, eps=cfg.ln_eps)
        return cls(k_c=cfg.k_c, k_t=cfg.k_t, eps=cfg.ln_eps)


# зажим в resolve превращает _ALL в k_c = C, k_t = N (обычное усреднение)
_ALL = 2 ** 31 - 1
AVG_POOL = PurifyConfig(k_c=_ALL, k_t=_ALL)


def _norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt((x * x).sum(axis=-1))


def channel_scores(x) -> np.ndarray:
    """(..., C, N, D) → (..., C): среднее по N нормы сегмента."""
    return _norms(T.as_tensor(x).data).mean(axis=-1)


def _top(scores: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-scores, axis=-1, kind='stable')[..., :k]


def select_top(x, cfg: PurifyConfig) -> Tensor:
    """B × C × N × D → B × k_c × k_t × D (выбранные каналы и сегменты)."""
    x = T.as_tensor(x)
    b, c, n, _ = x.shape
    k_c, k_t = cfg.resolve(c, n)
    data = x.data
    sel_c = _top(channel_scores(data), k_c)                                  # B × k_c
    bi = np.arange(b)[:, None]
    seg = _norms(data[bi, sel_c])                                            # B × k_c × N
    sel_t = _top(seg, k_t)                                                   # B × k_c × k_t
    return T.take(x, (bi[:, :, None], sel_c[:, :, None], sel_t))


def purify_batch(x, cfg: PurifyConfig, gain=None, bias=None) -> Tensor:
    """B × C × N × D → B × D."""
    x = T.as_tensor(x)
    d = x.shape[-1]
    pooled = T.tmean(select_top(x, cfg), axis=(1, 2))
    gain = np.ones(d) if gain is None else gain
    bias = np.zeros(d) if bias is None else bias
    return T.layer_norm(pooled, gain, bias, cfg.eps)


def purify_and_fuse(x, cfg: PurifyConfig, gain=None, bias=None) -> Tensor:
    """C × N × D → D."""
    x = T.as_tensor(x)
    out = purify_batch(T.reshape(x, (1,) + x.shape), cfg, gain, bias)
    return T.reshape(out, (x.shape[-1],))


def merge_views(views: MultiViewFeatures, params) -> Tensor:
    """Слияние потоков в один тензор той же формы: среднее или конкатенация + проекция."""
    hp = params.hp
    streams = {'tem': views.f_tem, 'spa': views.f_spa, 'spe': views.f_spe}
    chosen = [streams[s] for s in hp.streams]
    if hp.view_merge == 'concat':
        return T.matmul(T.concat(chosen, axis=-1), params['fuse.proj'])
    total = chosen[0]
    for t in chosen[1:]:
        total = total + t
    return total * (1.0 / len(chosen))


def fuse(views: MultiViewFeatures, params, cfg: PurifyConfig) -> Tensor:
    """Признак среза F (B × D, для одиночного среза — D) из выходов энкодера."""
    merged = merge_views(views, params)
    squeeze = merged.ndim == 3
    if squeeze:
        merged = T.reshape(merged, (1,) + merged.shape)
    out = purify_batch(merged, cfg, params['fuse.ln.g'], params['fuse.ln.b'])
    return T.reshape(out, (out.shape[-1],)) if squeeze else out
