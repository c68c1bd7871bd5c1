"""
cria/encoder.py — Асимметричный кросс-энкодер

Слой l (все потоки читают состояние слоя l−1 и обновляются синхронно):
  spe: SA(F_spe)                    — доминирующий спектральный поток
  tem: CA(Q = F_tem, K/V = F_spe)   — боковые запросы к спектру
  spa: CA(Q = F_spa, K/V = F_spe)
Каждый подблок: LN(x + attn) → LN(h + FFN(h)), FFN: D → mult·D → D с ELU.

Внутри энкодера потоки имеют форму B × (C·N) × D.

Маскирование вида (на каждом слое):
  spectral         — Q, K, V спектрального SA заменяются на A_spe
  temporal/spatial — Q соответствующего CA заменяется на A_tem / A_spa
Любое чтение состояния замаскированного потока (остаточная связь, K/V
для соседей) получает pad, поэтому исходное содержимое вида не протекает.

Варианты (encoder_variant):
  full       — как выше
  no_cross   — tem/spa делают SA сами на себя
  only_st    — спектра нет, tem и spa перекрёстно спрашивают друг друга
  triple_dim — как full, но внутренняя размерность внимания спектрального
               SA равна 3·D (w_q, w_k, w_v: D × 3D, w_o: 3D × D); pad A_spe
               в пространстве проекций повторяется трижды
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Iterable

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, DimensionError
from .multiview import MultiViewFeatures
from .tensor import Tensor

logger = logging.getLogger(__name__)

VIEWS = ('temporal', 'spatial', 'spectral')
STREAM = {'temporal': 'tem', 'spatial': 'spa', 'spectral': 'spe'}

# кого спрашивает каждый поток: {вариант: {поток: источник K/V}}
KV_SOURCE = {
    'full':       {'spe': 'spe', 'tem': 'spe', 'spa': 'spe'},
    'no_cross':   {'spe': 'spe', 'tem': 'tem', 'spa': 'spa'},
    'only_st':    {'tem': 'spa', 'spa': 'tem'},
    'triple_dim': {'spe': 'spe', 'tem': 'spe', 'spa': 'spe'},
}


# ─── Гиперпараметры и параметры ─────────────────────────

@dataclass(frozen=True)
class ModelShape:
    d_model: int = 200
    n_layers: int = 5
    n_heads: int = 4
    c_max: int = 32
    n_max: int = 64
    ffn_mult: int = 4
    ln_eps: float = 1e-5
    rope_base: float = 10000.0
    rope_start: int = 1
    embed_before_rope: bool = False
    encoder_variant: str = 'full'
    view_merge: str = 'mean'

    def __post_init__(self):
        if self.d_model < 2 or self.d_model % 2:
            raise ConfigError(f'd_model={self.d_model} должен быть чётным и ≥ 2')
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f'd_model={self.d_model} не делится на n_heads={self.n_heads}')
        if self.n_layers < 1:
            raise ConfigError('n_layers должен быть ≥ 1')
        if self.c_max < 1 or self.n_max < 1 or self.ffn_mult < 1:
            raise ConfigError('c_max, n_max и ffn_mult должны быть ≥ 1')
        if self.encoder_variant not in KV_SOURCE:
            raise ConfigError(f'Неизвестный encoder_variant: {self.encoder_variant}')
        if self.view_merge not in ('mean', 'concat'):
            raise ConfigError(f'Неизвестный view_merge: {self.view_merge}')

    @classmethod
    def from_config(cls, cfg) -> 'ModelShape':
        return cls(**{f.name: cfg[f.name] for f in fields(cls)})

    @classmethod
    def from_dict(cls, d: dict) -> 'ModelShape':
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def streams(self) -> tuple:
        return ('tem', 'spa') if self.encoder_variant == 'only_st' else ('tem', 'spa', 'spe')

    def attn_dim(self, stream: str) -> int:
        """Внутренняя размерность внимания потока."""
        if stream == 'spe' and self.encoder_variant == 'triple_dim':
            return 3 * self.d_model
        return self.d_model


class EncoderParams:
    """Именованный набор тензоров-листьев энкодера плюс гиперпараметры."""

    def __init__(self, hp: ModelShape, tensors: dict[str, Tensor]):
        self.hp = hp
        self.tensors = tensors
        self.frozen: set[str] = set()

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise KeyError(f'Нет параметра {name}') from None

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def freeze(self, prefix: str = ''):
        self.frozen.update(n for n in self.tensors if n.startswith(prefix))

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.tensors.items() if n not in self.frozen}

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()


def _add(tensors: dict, name: str, arr):
    tensors[name] = Tensor(arr, requires_grad=True, name=name)


def param_layout(hp: ModelShape) -> list[tuple[str, str, tuple]]:
    """(имя, способ инициализации, форма) в порядке выборки из rng."""
    d, m = hp.d_model, hp.ffn_mult
    rows = [('e_channel', 'normal', (hp.c_max, d))]
    rows += [(f'pad.{s}', 'normal', (d,)) for s in ('tem', 'spa', 'spe')]
    for v in ('tem', 'spa'):
        rows += [(f'view.{v}.{w}', 'dense', (d, d)) for w in ('w_q', 'w_k', 'w_v')]
        rows += [(f'view.{v}.ln.g', 'ones', (d,)), (f'view.{v}.ln.b', 'zeros', (d,))]
    for layer in range(hp.n_layers):
        for s in ('spe', 'tem', 'spa'):
            p = f'layers.{layer}.{s}'
            a = hp.attn_dim(s)
            rows += [(f'{p}.attn.{w}', 'dense', (d, a)) for w in ('w_q', 'w_k', 'w_v')]
            rows += [(f'{p}.attn.w_o', 'dense', (a, d)),
                     (f'{p}.ln1.g', 'ones', (d,)), (f'{p}.ln1.b', 'zeros', (d,)),
                     (f'{p}.ffn.w1', 'dense', (d, m * d)), (f'{p}.ffn.b1', 'zeros', (m * d,)),
                     (f'{p}.ffn.w2', 'dense', (m * d, d)), (f'{p}.ffn.b2', 'zeros', (d,)),
                     (f'{p}.ln2.g', 'ones', (d,)), (f'{p}.ln2.b', 'zeros', (d,))]
    rows += [('fuse.ln.g', 'ones', (d,)), ('fuse.ln.b', 'zeros', (d,))]
    if hp.view_merge == 'concat':
        rows.append(('fuse.proj', 'dense', (len(hp.streams) * d, d)))
    return rows


def init_encoder_params(hp: ModelShape, rng: np.random.Generator) -> EncoderParams:
    """Свежая инициализация; порядок выборки из rng фиксирован."""
    tensors: dict[str, Tensor] = {}
    for name, how, shape in param_layout(hp):
        if how == 'normal':
            arr = rng.normal(0.0, 1.0, shape)
        elif how == 'dense':
            arr = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        else:
            arr = np.ones(shape) if how == 'ones' else np.zeros(shape)
        _add(tensors, name, arr)
    logger.debug('Инициализировано %s тензоров энкодера', len(tensors))
    return EncoderParams(hp, tensors)


# ─── Маски ───────────────────────────────────────────────

@dataclass(frozen=True)
class MaskSpec:
    """masked_view — один вид на весь батч или кортеж по образцам."""

    masked_view: str | tuple = 'none'
    attn_value_mask_ratio: float = 0.0
    rng_seed: int | None = None

    def __post_init__(self):
        views = (self.masked_view,) if isinstance(self.masked_view, str) else self.masked_view
        for v in views:
            if v != 'none' and v not in VIEWS:
                raise ConfigError(f'Неизвестный вид для маскирования: {v}')
        if not 0.0 <= self.attn_value_mask_ratio < 1.0:
            raise ConfigError(f'attn_value_mask_ratio={self.attn_value_mask_ratio} вне [0, 1)')
        if self.attn_value_mask_ratio > 0 and self.rng_seed is None:
            raise ConfigError('Маскирование весов внимания требует rng_seed')

    def per_sample(self, batch: int) -> tuple:
        if isinstance(self.masked_view, str):
            return (self.masked_view,) * batch
        if len(self.masked_view) != batch:
            raise DimensionError(f'MaskSpec: {len(self.masked_view)} видов на батч из {batch}')
        return tuple(self.masked_view)

    def rng(self) -> np.random.Generator | None:
        return None if self.rng_seed is None else np.random.default_rng(self.rng_seed)


NO_MASK = MaskSpec()


def _stream_masks(mask: MaskSpec, batch: int) -> dict:
    """{поток: массив (B,1,1) из 0/1 или None, если поток не маскируется ни в одном образце}."""
    chosen = mask.per_sample(batch)
    out = {}
    for view, s in STREAM.items():
        m = np.array([1.0 if c == view else 0.0 for c in chosen]).reshape(batch, 1, 1)
        out[s] = m if m.any() else None
    return out


def blend(m: np.ndarray | None, pad: Tensor, x: Tensor) -> Tensor:
    """m·pad + (1−m)·x; при m∈{0,1} результат побитно равен x или pad."""
    if m is None:
        return x
    return T.mul(pad, m) + T.mul(x, 1.0 - m)


# ─── Внимание ────────────────────────────────────────────

def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, t, d = x.shape
    return T.swapaxes(T.reshape(x, tuple(lead) + (t, h, d // h)), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dk = x.shape
    return T.reshape(T.swapaxes(x, -3, -2), tuple(lead) + (t, h * dk))


def mask_attention_values(a: Tensor, ratio: float, rng: np.random.Generator | None) -> Tensor:
    """Обнуляет веса внимания с вероятностью ratio и перенормирует строки; пустая строка → равномерная."""
    if ratio <= 0:
        return a
    keep = (rng.random(a.shape) >= ratio).astype(np.float64)
    kept = a * keep
    rowsum = T.tsum(kept, axis=-1, keepdims=True)
    empty = (rowsum.data == 0).astype(np.float64)
    return (kept + empty / a.shape[-1]) / (rowsum + empty)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, ratio: float = 0.0, rng=None) -> Tensor:
    dk = q.shape[-1]
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
    weights = mask_attention_values(T.softmax_lastdim(scores), ratio, rng)
    return T.matmul(weights, v)


def multi_head(q_src, kv_src, params, prefix: str, n_heads: int,
               q_pad: Tensor | None = None, kv_pad: Tensor | None = None, m: np.ndarray | None = None,
               ratio: float = 0.0, rng=None) -> Tensor:
    """Многоголовое внимание q_src → kv_src; q_pad/kv_pad подменяют проекции там, где m = 1."""
    q_src, kv_src = T.as_tensor(q_src), T.as_tensor(kv_src)
    d = q_src.shape[-1]
    if d % n_heads:
        raise ConfigError(f'D={d} не делится на число голов {n_heads}')
    q = T.matmul(q_src, params[f'{prefix}.w_q'])
    k = T.matmul(kv_src, params[f'{prefix}.w_k'])
    v = T.matmul(kv_src, params[f'{prefix}.w_v'])
    width = q.shape[-1]
    if width != d:
        # проекции шире D: pad повторяется до ширины проекций
        q_pad = None if q_pad is None else T.concat([q_pad] * (width // d))
        kv_pad = None if kv_pad is None else T.concat([kv_pad] * (width // d))
    if q_pad is not None:
        q = blend(m, q_pad, q)
    if kv_pad is not None:
        k = blend(m, kv_pad, k)
        v = blend(m, kv_pad, v)
    heads = scaled_dot_attention(_split_heads(q, n_heads), _split_heads(k, n_heads),
                                 _split_heads(v, n_heads), ratio, rng)
    return T.matmul(_merge_heads(heads), params[f'{prefix}.w_o'])


def _batched(x) -> tuple[Tensor, bool]:
    x = T.as_tensor(x)
    return (T.reshape(x, (1,) + x.shape), True) if x.ndim == 2 else (x, False)


def _mask_array(mask: MaskSpec, view: str, batch: int) -> np.ndarray | None:
    return _stream_masks(mask, batch)[STREAM[view]]


def self_attention(x, params, prefix: str = 'layers.0.spe.attn', mask: MaskSpec = NO_MASK) -> Tensor:
    """SA над T × D (или B × T × D); при маске spectral Q, K, V заменяются на A_spe."""
    xb, squeeze = _batched(x)
    m = _mask_array(mask, 'spectral', xb.shape[0])
    pad = params['pad.spe'] if m is not None else None
    out = multi_head(xb, xb, params, prefix, params.hp.n_heads, q_pad=pad, kv_pad=pad, m=m,
                     ratio=mask.attn_value_mask_ratio, rng=mask.rng())
    return T.reshape(out, out.shape[1:]) if squeeze else out


def cross_attention(q_src, kv_src, params, prefix: str = 'layers.0.tem.attn', view: str = 'temporal',
                    mask: MaskSpec = NO_MASK) -> Tensor:
    """CA: Q из q_src, K/V из kv_src; при маске view заменяется только Q (на pad этого вида)."""
    qb, squeeze = _batched(q_src)
    kb, _ = _batched(kv_src)
    m = _mask_array(mask, view, qb.shape[0])
    pad = params[f'pad.{STREAM[view]}'] if m is not None else None
    out = multi_head(qb, kb, params, prefix, params.hp.n_heads, q_pad=pad, m=m,
                     ratio=mask.attn_value_mask_ratio, rng=mask.rng())
    return T.reshape(out, out.shape[1:]) if squeeze else out


# ─── Слои ────────────────────────────────────────────────

def _block(base: Tensor, attn: Tensor, params, prefix: str, eps: float) -> Tensor:
    h = T.layer_norm(base + attn, params[f'{prefix}.ln1.g'], params[f'{prefix}.ln1.b'], eps)
    f = T.elu(T.matmul(h, params[f'{prefix}.ffn.w1']) + params[f'{prefix}.ffn.b1'])
    f = T.matmul(f, params[f'{prefix}.ffn.w2']) + params[f'{prefix}.ffn.b2']
    return T.layer_norm(h + f, params[f'{prefix}.ln2.g'], params[f'{prefix}.ln2.b'], eps)


def _layer_step(state: dict, params, layer: int, masks: dict, ratio: float, rng) -> dict:
    hp = params.hp
    sources = KV_SOURCE[hp.encoder_variant]

    def read(s):
        return blend(masks[s], params[f'pad.{s}'], state[s])

    new = dict(state)
    for s, kv in sources.items():
        prefix = f'layers.{layer}.{s}'
        pad = params[f'pad.{s}'] if masks[s] is not None else None
        attn = multi_head(read(s), read(kv), params, f'{prefix}.attn', hp.n_heads,
                          q_pad=pad, kv_pad=pad if s == 'spe' else None, m=masks[s],
                          ratio=ratio, rng=rng)
        new[s] = _block(read(s), attn, params, prefix, hp.ln_eps)
    return new


def _tokens(views: MultiViewFeatures) -> tuple[dict, tuple, bool]:
    shapes = {v.shape for v in views.as_tuple()}
    if len(shapes) != 1:
        raise DimensionError(f'Формы видов расходятся: {sorted(shapes)}')
    shape = shapes.pop()
    squeeze = len(shape) == 3
    if squeeze:
        shape = (1,) + shape
    if len(shape) != 4:
        raise DimensionError(f'Ожидается C × N × D или B × C × N × D, получено {shape}')
    b, c, n, d = shape
    state = {s: T.reshape(t, (b, c * n, d)) for s, t in zip(('tem', 'spa', 'spe'), views.as_tuple())}
    return state, shape, squeeze


def _features(state: dict, shape: tuple, squeeze: bool) -> MultiViewFeatures:
    out_shape = shape[1:] if squeeze else shape
    return MultiViewFeatures(*(T.reshape(state[s], out_shape) for s in ('tem', 'spa', 'spe')))


def encoder_layer(views: MultiViewFeatures, params, layer: int = 0, mask: MaskSpec = NO_MASK) -> MultiViewFeatures:
    state, shape, squeeze = _tokens(views)
    new = _layer_step(state, params, layer, _stream_masks(mask, shape[0]), mask.attn_value_mask_ratio, mask.rng())
    return _features(new, shape, squeeze)


def encoder_forward(views: MultiViewFeatures, params, mask: MaskSpec = NO_MASK,
                    layers: Iterable[int] | None = None, capture: bool = False):
    """Прогон слоёв `layers` (по умолчанию всех); маска действует на каждом слое.

    capture=True дополнительно возвращает список признаков: вход и выход каждого слоя.
    """
    state, shape, squeeze = _tokens(views)
    masks = _stream_masks(mask, shape[0])
    ratio, rng = mask.attn_value_mask_ratio, mask.rng()
    layers = range(params.hp.n_layers) if layers is None else list(layers)
    captured = [_features(state, shape, squeeze)] if capture else None
    for layer in layers:
        state = _layer_step(state, params, layer, masks, ratio, rng)
        if capture:
            captured.append(_features(state, shape, squeeze))
    out = _features(state, shape, squeeze)
    return (out, captured) if capture else out
