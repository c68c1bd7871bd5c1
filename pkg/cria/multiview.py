"""
cria/multiview.py — Три вида среза: временной, пространственный, спектральный

Вход — сегментированный срез C × N × D (или батч B × C × N × D).
  temporal: RoPE по сегментам + E_channel, линейное внимание вдоль N в каждом канале
  spatial:  RoPE по сегментам + E_channel, линейное внимание вдоль C в каждом сегменте
  spectral: |БПФ| каждого сегмента + E_channel, затем RoPE; внимания нет

Все три выхода имеют форму входа. Параметры берутся из EncoderParams
по именам 'e_channel', 'view.tem.*', 'view.spa.*'.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .exceptions import PairingError, RegistryError
from .records import ChannelRegistry, SegmentedSlice
from .tensor import Tensor


@dataclass
class MultiViewFeatures:
    f_tem: Tensor
    f_spa: Tensor
    f_spe: Tensor

    @property
    def shape(self) -> tuple:
        return self.f_spe.shape

    def as_tuple(self) -> tuple:
        return self.f_tem, self.f_spa, self.f_spe


# ─── БПФ ─────────────────────────────────────────────────

@lru_cache(maxsize=32)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(x: np.ndarray) -> np.ndarray:
    """Итеративный Кули–Тьюки по последней оси; длина — степень двойки."""
    n = x.shape[-1]
    lead = x.shape[:-1]
    a = np.asarray(x, dtype=np.complex128)[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        w = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * w
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return a


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    """ДПФ произвольной длины через свёртку с чирпом на БПФ степени двойки."""
    n = x.shape[-1]
    m = 1 << (2 * n - 2).bit_length()
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    prod = _fft_radix2(a) * _fft_radix2(b)
    conv = np.conj(_fft_radix2(np.conj(prod))) / m
    return conv[..., :n] * chirp


def fft(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 0:
        return x.copy()
    if n & (n - 1) == 0:
        return _fft_radix2(x)
    return _fft_bluestein(x)


def fft_magnitude(x) -> np.ndarray:
    """|ДПФ| по последней оси, полная длина D (обе симметричные половины)."""
    return np.abs(fft(x))


# ─── RoPE ────────────────────────────────────────────────

@lru_cache(maxsize=16)
def _pair_swap(d: int) -> np.ndarray:
    # x @ R переставляет пары (a, b) → (−b, a)
    r = np.zeros((d, d))
    for i in range(0, d, 2):
        r[i + 1, i] = -1.0
        r[i, i + 1] = 1.0
    return r


def rope_angles(n: int, d: int, start_index: int = 1, base: float = 10000.0) -> np.ndarray:
    """θ[n, j] = pos_n · base^(−2j/D), j = 1..D/2; каждая пара занимает две соседние колонки."""
    pos = np.arange(start_index, start_index + n, dtype=np.float64)
    freqs = base ** (-2.0 * np.arange(1, d // 2 + 1) / d)
    return np.repeat(np.outer(pos, freqs), 2, axis=1)


def rope_encode(x, start_index: int = 1, base: float = 10000.0) -> Tensor:
    """Поворачивает соседние пары признаков на угол позиции; позиции — предпоследняя ось."""
    x = T.as_tensor(x)
    d = x.shape[-1]
    if d % 2:
        raise PairingError(f'RoPE требует чётную размерность, D={d}')
    theta = rope_angles(x.shape[-2], d, start_index, base)
    return x * np.cos(theta) + T.matmul(x, _pair_swap(d)) * np.sin(theta)


# ─── Линейное внимание ──────────────────────────────────

def _phi(u: Tensor) -> Tensor:
    return T.elu(u) + 1.0


def kernel_attention(q, k, v) -> Tensor:
    """φ(Q)(φ(K)ᵀV), нормированное на φ(Q)(φ(K)ᵀ1); φ = elu + 1 > 0."""
    fq, fk = _phi(T.as_tensor(q)), _phi(T.as_tensor(k))
    num = T.matmul(fq, T.matmul(T.swapaxes(fk, -1, -2), v))
    den = T.matmul(fq, T.swapaxes(T.tsum(fk, axis=-2, keepdims=True), -1, -2))
    return num / den


def linear_attention(x, w_q, w_k, w_v, ln_gain, ln_bias, eps: float = 1e-5) -> Tensor:
    """LN(x + LT(x)); последовательность — предпоследняя ось."""
    x = T.as_tensor(x)
    out = kernel_attention(T.matmul(x, w_q), T.matmul(x, w_k), T.matmul(x, w_v))
    return T.layer_norm(x + out, ln_gain, ln_bias, eps)


def _lt(x: Tensor, params, view: str) -> Tensor:
    p = f'view.{view}'
    return linear_attention(x, params[f'{p}.w_q'], params[f'{p}.w_k'], params[f'{p}.w_v'],
                            params[f'{p}.ln.g'], params[f'{p}.ln.b'], params.hp.ln_eps)


# ─── Построение видов ───────────────────────────────────

def _check_ids(ids: np.ndarray, params, registry: ChannelRegistry | None):
    limit = params.hp.c_max if registry is None else min(len(registry), params.hp.c_max)
    bad = ids[(ids < 0) | (ids >= limit)]
    if bad.size:
        raise RegistryError(f'Неизвестные индексы каналов: {sorted(set(bad.tolist()))}')


def channel_embedding(ids, params) -> Tensor:
    """Строки E_channel для индексов (..., C) в форме (..., C, 1, D) для сложения по N."""
    ids = np.asarray(ids, dtype=np.intp)
    e = T.take(params['e_channel'], ids)
    return T.reshape(e, ids.shape + (1, params.hp.d_model))


def _positioned(data, ids, params) -> Tensor:
    hp = params.hp
    e = channel_embedding(ids, params)
    if hp.embed_before_rope:
        return rope_encode(T.as_tensor(data) + e, hp.rope_start, hp.rope_base)
    return rope_encode(data, hp.rope_start, hp.rope_base) + e


def temporal_view(data, ids, params) -> Tensor:
    return _lt(_positioned(data, ids, params), params, 'tem')


def spatial_view(data, ids, params) -> Tensor:
    h = T.swapaxes(_positioned(data, ids, params), -3, -2)
    return T.swapaxes(_lt(h, params, 'spa'), -3, -2)


def spectral_view(data, ids, params) -> Tensor:
    hp = params.hp
    mag = T.as_tensor(fft_magnitude(T.as_tensor(data).data))
    return rope_encode(mag + channel_embedding(ids, params), hp.rope_start, hp.rope_base)


def _unpack(s: SegmentedSlice, params, registry):
    ids = np.asarray(s.channel_ids, dtype=np.intp)
    _check_ids(ids, params, registry)
    return s.data, ids


def build_temporal_view(s: SegmentedSlice, params, registry: ChannelRegistry | None = None) -> Tensor:
    return temporal_view(*_unpack(s, params, registry), params)


def build_spatial_view(s: SegmentedSlice, params, registry: ChannelRegistry | None = None) -> Tensor:
    return spatial_view(*_unpack(s, params, registry), params)


def build_spectral_view(s: SegmentedSlice, params, registry: ChannelRegistry | None = None) -> Tensor:
    return spectral_view(*_unpack(s, params, registry), params)


def build_views(data, ids, params, registry: ChannelRegistry | None = None) -> MultiViewFeatures:
    """Все три вида для среза (C, N, D) или батча (B, C, N, D) с ids формы (C,) или (B, C)."""
    ids = np.asarray(ids, dtype=np.intp)
    _check_ids(ids, params, registry)
    return MultiViewFeatures(
        f_tem=temporal_view(data, ids, params),
        f_spa=spatial_view(data, ids, params),
        f_spe=spectral_view(data, ids, params),
    )
