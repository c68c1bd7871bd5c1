"""
cria/model.py — Срезы → признак F: виды, энкодер, очистка

Срезы батча могут иметь разные C и N: они группируются по форме,
прогоняются группами и собираются обратно в исходном порядке.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import NO_MASK, MaskSpec, encoder_forward
from .exceptions import ConfigError
from .multiview import build_views
from .purification import PurifyConfig, fuse
from .records import ChannelRegistry, SegmentedSlice
from .tensor import Tensor


def group_by_shape(slices) -> dict[tuple, list[int]]:
    groups: dict[tuple, list[int]] = {}
    for i, s in enumerate(slices):
        groups.setdefault(s.data.shape, []).append(i)
    return groups


def _group_mask(mask: MaskSpec, idx: list[int], batch: int, group_no: int) -> MaskSpec:
    if mask is NO_MASK:
        return mask
    chosen = mask.per_sample(batch)
    seed = None if mask.rng_seed is None else mask.rng_seed + group_no
    return MaskSpec(tuple(chosen[i] for i in idx), mask.attn_value_mask_ratio, seed)


def embed_slices(slices: list[SegmentedSlice], params, purify: PurifyConfig, mask: MaskSpec = NO_MASK,
                 layers=None, registry: ChannelRegistry | None = None) -> Tensor:
    """B срезов → B × D (до L2-нормировки)."""
    hp = params.hp
    outs, order = [], []
    for group_no, (shape, idx) in enumerate(group_by_shape(slices).items()):
        if shape[0] > hp.c_max or shape[1] > hp.n_max or shape[2] != hp.d_model:
            raise ConfigError(
                f'Срез {shape} не помещается в модель (c_max={hp.c_max}, n_max={hp.n_max}, D={hp.d_model})')
        data = np.stack([slices[i].data for i in idx])
        ids = np.array([slices[i].channel_ids for i in idx], dtype=np.intp)
        views = build_views(data, ids, params, registry)
        out = encoder_forward(views, params, _group_mask(mask, idx, len(slices), group_no), layers=layers)
        outs.append(fuse(out, params, purify))
        order.extend(idx)
    if len(outs) == 1 and order == sorted(order):
        return outs[0]
    return T.take(T.concat(outs, axis=0), np.argsort(np.array(order), kind='stable'))


def active_layers(n_layers: int, task_layers: int) -> list[int]:
    """Последние task_layers слоёв (0 — все)."""
    if task_layers < 0 or task_layers > n_layers:
        raise ConfigError(f'task_layers={task_layers} вне [0, {n_layers}]')
    k = task_layers or n_layers
    return list(range(n_layers - k, n_layers))


def layers_to_run(n_layers: int, task_layers: int, unused_layers: str) -> list[int] | None:
    """None — прогонять все слои."""
    keep = active_layers(n_layers, task_layers)
    return keep if len(keep) < n_layers and unused_layers == 'drop' else None


def apply_layer_policy(params, task_layers: int, unused_layers: str, freeze_encoder: bool) -> list[int] | None:
    """Замораживает нужные параметры и возвращает список слоёв для прогона."""
    n_layers = params.hp.n_layers
    keep = active_layers(n_layers, task_layers)
    if freeze_encoder:
        params.freeze('')
    if unused_layers == 'freeze':
        for layer in range(n_layers):
            if layer not in keep:
                params.freeze(f'layers.{layer}.')
    return layers_to_run(n_layers, task_layers, unused_layers)
