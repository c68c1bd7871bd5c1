"""
cria/config.py — Конфигурация запуска (плоский документ key=value)

Приоритет источников:
  1. флаг командной строки (--set key=value или выделенный флаг)
  2. файл конфигурации (--config path или CRIA_CONFIG_FILE)
  3. значение по умолчанию из OPTIONS

Неизвестные ключи отклоняются. Файл читается через python-dotenv.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from dotenv import dotenv_values

from .exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Option:
    kind: str          # int | float | bool | str | floats | strs
    default: object
    help: str
    choices: tuple = ()


OPTIONS: dict[str, Option] = {
    # ── общее ──
    'seed':              Option('int', None, 'Сид запуска; обязателен для pretrain/finetune'),
    # ── модель ──
    'd_model':           Option('int', 200, 'Длина сегмента D (она же скрытая размерность)'),
    'n_layers':          Option('int', 5, 'Число слоёв кросс-энкодера L'),
    'n_heads':           Option('int', 4, 'Число голов внимания h (D кратно h)'),
    'c_max':             Option('int', 32, 'Размер таблицы E_channel'),
    'n_max':             Option('int', 64, 'Максимальное число сегментов N'),
    'ffn_mult':          Option('int', 4, 'Расширение feed-forward блока (D → mult·D → D)'),
    'ln_eps':            Option('float', 1e-5, 'eps во всех LayerNorm'),
    'rope_base':         Option('float', 10000.0, 'Основание частот RoPE'),
    'rope_start':        Option('int', 1, 'Индекс первой позиции RoPE'),
    'embed_before_rope': Option('bool', False, 'Добавлять E_channel до RoPE во временном/пространственном видах'),
    'encoder_variant':   Option('str', 'full', 'Вариант энкодера', ('full', 'no_cross', 'only_st', 'triple_dim')),
    'view_merge':        Option('str', 'mean', 'Слияние трёх потоков перед очисткой', ('mean', 'concat')),
    'fusion':            Option('str', 'purify', 'Пулинг признаков', ('purify', 'avg_pool')),
    'k_c':               Option('int', 0, 'Сколько каналов оставлять (0 → ceil(C/2))'),
    'k_t':               Option('int', 0, 'Сколько сегментов оставлять (0 → ceil(N/2))'),
    # ── предобучение ──
    'temperature':       Option('float', 0.2, 'Температура контрастного лосса'),
    'symmetric_loss':    Option('bool', False, 'Двусторонний контрастный лосс'),
    'mask_per_batch':    Option('bool', False, 'Один маскируемый вид на весь батч'),
    'pretrain_steps':    Option('int', 500, 'Шагов предобучения'),
    'batch_size':        Option('int', 16, 'Размер батча'),
    'lr':                Option('float', 1e-3, 'Шаг Adam'),
    'beta1':             Option('float', 0.9, 'Adam beta1'),
    'beta2':             Option('float', 0.999, 'Adam beta2'),
    'adam_eps':          Option('float', 1e-8, 'Adam eps'),
    'checkpoint_every':  Option('int', 100, 'Период промежуточных чекпоинтов (0 — только финальный)'),
    # ── дообучение ──
    'finetune_steps':    Option('int', 300, 'Шагов дообучения'),
    'attn_mask_ratio':   Option('float', 0.1, 'Доля обнуляемых весов внимания при дообучении'),
    'dropout':           Option('float', 0.1, 'Dropout в классификационной голове'),
    'hidden':            Option('int', 0, 'Ширина головы H (0 → D)'),
    'loss':              Option('str', 'ce', 'Лосс задачи', ('ce', 'bce', 'focal')),
    'focal_gamma':       Option('float', 2.0, 'gamma focal loss'),
    'focal_alpha':       Option('float', 0.25, 'alpha focal loss'),
    'task_layers':       Option('int', 0, 'Сколько последних слоёв энкодера использовать (0 — все)'),
    'unused_layers':     Option('str', 'drop', 'Что делать с неиспользуемыми слоями', ('drop', 'freeze')),
    'freeze_encoder':    Option('bool', False, 'Обучать только голову'),
    # ── препроцессинг ──
    'target_rate':       Option('float', 200.0, 'Частота после ресемплинга, Гц'),
    'band_low':          Option('float', 0.5, 'Нижняя граница полосового фильтра, Гц'),
    'band_high':         Option('float', 120.0, 'Верхняя граница полосового фильтра, Гц'),
    'filter_order':      Option('int', 4, 'Порядок Баттерворта'),
    'notch_freqs':       Option('floats', (1.0, 60.0), 'Частоты режекторных фильтров, Гц'),
    'notch_q':           Option('float', 30.0, 'Добротность режекторов'),
    'notch_drift':       Option('bool', True, 'Включать режектор 1 Гц'),
    'slice_seconds':     Option('float', 10.0, 'Длина среза, с'),
    # ── разбиение ──
    'val_fraction':      Option('float', 0.15, 'Доля валидации'),
    'test_fraction':     Option('float', 0.15, 'Доля теста'),
    # ── шум ──
    'noise_kinds':       Option('strs', ('gaussian', 'impulse', 'dropout', 'sinusoidal_50hz'), 'Виды шума для robustness'),
    'noise_gaussian':    Option('floats', (0.1, 0.3, 0.5), 'sigma гауссова шума: low,mid,high'),
    'noise_impulse_p':   Option('floats', (0.001, 0.005, 0.01), 'Вероятность импульса: low,mid,high'),
    'noise_impulse_amp': Option('floats', (3.0, 5.0, 8.0), 'Амплитуда импульса: low,mid,high'),
    'noise_dropout':     Option('floats', (0.05, 0.15, 0.3), 'Вероятность выпадения отсчёта: low,mid,high'),
    'noise_sine':        Option('floats', (0.1, 0.3, 0.5), 'Амплитуда синусоиды: low,mid,high'),
    'noise_sine_freq':   Option('float', 50.0, 'Частота синусоидальной помехи, Гц'),
    'noise_seed':        Option('int', 0, 'Сид шума'),
    # ── синтетика ──
    'syn_classes':       Option('int', 3, 'Число классов'),
    'syn_channels':      Option('int', 8, 'Число каналов'),
    'syn_seconds':       Option('float', 10.0, 'Длина среза, с'),
    'syn_rate':          Option('float', 200.0, 'Частота, Гц'),
    'syn_per_class':     Option('int', 300, 'Срезов на класс'),
    'syn_centers':       Option('floats', (6.0, 15.0, 35.0), 'Центральные частоты классов, Гц'),
    'syn_bandwidth':     Option('float', 2.0, 'Полуширина полосы класса, Гц'),
    'syn_snr':           Option('float', 2.0, 'Отношение амплитуды тонов к фону'),
}

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def parse_value(key: str, raw) -> object:
    """Приводит строку (или готовое значение) к типу опции `key`."""
    opt = OPTIONS[key]
    if raw is None:
        return None
    try:
        if opt.kind == 'int':
            value = int(raw)
        elif opt.kind == 'float':
            value = float(raw)
        elif opt.kind == 'bool':
            if isinstance(raw, bool):
                value = raw
            elif str(raw).strip().lower() in _TRUE:
                value = True
            elif str(raw).strip().lower() in _FALSE:
                value = False
            else:
                raise ValueError(raw)
        elif opt.kind == 'floats':
            items = raw.split(',') if isinstance(raw, str) else raw
            value = tuple(float(x) for x in items if str(x).strip() != '')
        elif opt.kind == 'strs':
            items = raw.split(',') if isinstance(raw, str) else raw
            value = tuple(str(x).strip() for x in items if str(x).strip())
        else:
            value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f'Некорректное значение {key}={raw!r} (ожидается {opt.kind})') from None
    if opt.choices and value not in opt.choices:
        raise ConfigError(f'{key}={value!r}: допустимо {", ".join(opt.choices)}')
    return value


class RunConfig:
    """Плоский документ key=value со значениями по умолчанию и источником каждого ключа."""

    def __init__(self, values: dict | None = None, sources: dict | None = None):
        self._values = {k: opt.default for k, opt in OPTIONS.items()}
        self._sources = {k: 'default' for k in OPTIONS}
        if values:
            self.update(values, source='flag')
        if sources:
            self._sources.update(sources)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> 'RunConfig':
        cfg = cls()
        if path:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f'Файл конфигурации не найден: {path}')
            cfg.update(dotenv_values(path), source='file')
            logger.debug('Конфигурация прочитана из %s', path)
        if overrides:
            cfg.update(overrides, source='flag')
        return cfg

    def update(self, values: dict, source: str = 'flag'):
        for key, raw in values.items():
            key = key.strip().lower()
            if key not in OPTIONS:
                raise ConfigError(f'Неизвестный ключ конфигурации: {key}')
            if raw is None:
                continue
            self._values[key] = parse_value(key, raw)
            self._sources[key] = source

    def replace(self, **values) -> 'RunConfig':
        clone = RunConfig()
        clone._values = dict(self._values)
        clone._sources = dict(self._sources)
        clone.update(values, source='flag')
        return clone

    def __getattr__(self, key):
        if key.startswith('_'):
            raise AttributeError(key)
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def __getitem__(self, key):
        return self._values[key]

    def source(self, key: str) -> str:
        return self._sources[key]

    def require_seed(self) -> int:
        if self._values['seed'] is None:
            raise ConfigError('Для обучения обязателен seed (--seed или seed=... в конфиге)')
        return int(self._values['seed'])

    def as_dict(self) -> dict:
        return dict(self._values)

    def dumps(self) -> str:
        lines = []
        for key in sorted(self._values):
            value = self._values[key]
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ','.join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, bool):
                value = 'true' if value else 'false'
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f'{key}={value}')
        return '\n'.join(lines) + '\n'


def parse_overrides(pairs) -> dict:
    """Список строк 'key=value' из --set в словарь."""
    out = {}
    for pair in pairs or ():
        if '=' not in pair:
            raise ConfigError(f'Ожидается key=value, получено: {pair!r}')
        key, value = pair.split('=', 1)
        out[key.strip()] = value.strip()
    return out
