"""
cria/datasets.py — Нативный формат срезов, синтетический датасет, разбиение

Формат файла (little-endian):
  b'CRIA' | u16 версия | u32 C | u32 L | f64 частота | u32 классов | u32 записей
  C имён каналов: u16 длина + UTF-8
  записи фиксированного шага: i32 метка (−1 — без метки) + C·L float32
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import percentile_normalize, segment_slice
from .exceptions import ConfigError, DatasetFormatError
from .records import ChannelRegistry, EegSlice, SegmentedSlice
from .seeding import stream

logger = logging.getLogger(__name__)

MAGIC = b'CRIA'
VERSION = 1
_HEAD = struct.Struct('<4sHIIdII')
UNLABELED = -1


@dataclass
class SliceDataset:
    channel_names: list[str]
    sample_rate: float
    n_classes: int
    data: np.ndarray = None          # n × C × L, float32
    labels: np.ndarray = None        # n, int32

    def __post_init__(self):
        c = len(self.channel_names)
        if self.data is None:
            self.data = np.zeros((0, c, 0), dtype=np.float32)
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.labels is None:
            self.labels = np.full(len(self.data), UNLABELED, dtype=np.int32)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.data.ndim != 3 or self.data.shape[1] != c or len(self.labels) != len(self.data):
            raise DatasetFormatError(
                f'Несогласованный датасет: data {self.data.shape}, каналов {c}, меток {len(self.labels)}')

    def __len__(self):
        return len(self.data)

    @property
    def slice_length(self) -> int:
        return self.data.shape[2]

    def slice(self, i: int) -> EegSlice:
        label = int(self.labels[i])
        return EegSlice(list(self.channel_names), self.data[i].astype(np.float64),
                        None if label == UNLABELED else label, self.sample_rate)

    def slices(self, indices=None) -> list[EegSlice]:
        idx = range(len(self)) if indices is None else indices
        return [self.slice(int(i)) for i in idx]

    @classmethod
    def from_slices(cls, slices: list[EegSlice], n_classes: int = 0) -> 'SliceDataset':
        if not slices:
            raise DatasetFormatError('Нельзя собрать датасет из пустого списка без заголовка')
        first = slices[0]
        for s in slices:
            if s.channel_names != first.channel_names or s.data.shape != first.data.shape:
                raise DatasetFormatError('Срезы датасета должны иметь одинаковые каналы и длину')
        labels = [UNLABELED if s.label is None else s.label for s in slices]
        return cls(list(first.channel_names), first.sample_rate, n_classes,
                   np.stack([s.data for s in slices]), np.array(labels))


# ─── Файл ────────────────────────────────────────────────

def dataset_bytes(ds: SliceDataset) -> bytes:
    c, length = len(ds.channel_names), ds.slice_length
    out = [_HEAD.pack(MAGIC, VERSION, c, length, float(ds.sample_rate), ds.n_classes, len(ds))]
    for name in ds.channel_names:
        raw = name.encode('utf-8')
        out.append(struct.pack('<H', len(raw)) + raw)
    record = np.dtype([('label', '<i4'), ('data', '<f4', (c, length))])
    recs = np.zeros(len(ds), dtype=record)
    recs['label'] = ds.labels
    recs['data'] = ds.data
    out.append(recs.tobytes())
    return b''.join(out)


def write_dataset(path: str | Path, ds: SliceDataset) -> Path:
    path = Path(path)
    path.write_bytes(dataset_bytes(ds))
    return path


def read_dataset(path: str | Path) -> SliceDataset:
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f'Файл датасета не найден: {path}')
    buf = path.read_bytes()
    if len(buf) < _HEAD.size:
        raise DatasetFormatError(f'{path}: файл короче заголовка')
    magic, version, c, length, rate, n_classes, count = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f'{path}: неверная сигнатура {magic!r}')
    if version != VERSION:
        raise DatasetFormatError(f'{path}: версия формата {version}, поддерживается {VERSION}')
    offset, names = _HEAD.size, []
    for _ in range(c):
        if offset + 2 > len(buf):
            raise DatasetFormatError(f'{path}: обрезан список каналов')
        (n,) = struct.unpack_from('<H', buf, offset)
        offset += 2
        if offset + n > len(buf):
            raise DatasetFormatError(f'{path}: обрезан список каналов')
        try:
            names.append(buf[offset:offset + n].decode('utf-8'))
        except UnicodeDecodeError:
            raise DatasetFormatError(f'{path}: имя канала {len(names) + 1} не в UTF-8 (байт {offset})') from None
        offset += n
    try:
        record = np.dtype([('label', '<i4'), ('data', '<f4', (c, length))])
    except ValueError:
        raise DatasetFormatError(f'{path}: недопустимый размер записи {c} × {length}') from None
    if len(buf) - offset != count * record.itemsize:
        raise DatasetFormatError(
            f'{path}: заявлено {count} записей по {record.itemsize} байт, данных {len(buf) - offset} байт')
    recs = np.frombuffer(buf, dtype=record, count=count, offset=offset) if count else np.zeros(0, dtype=record)
    return SliceDataset(names, rate, n_classes, recs['data'].copy(), recs['label'].copy())


# ─── Синтетика ──────────────────────────────────────────

@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 3
    channels: int = 8
    seconds: float = 10.0
    rate: float = 200.0
    per_class: int = 300
    seed: int = 0
    centers: tuple = (6.0, 15.0, 35.0)
    bandwidth: float = 2.0
    snr: float = 2.0
    tones: int = 3

    @classmethod
    def from_config(cls, cfg, seed: int | None = None) -> 'SyntheticSpec':
        return cls(cfg.syn_classes, cfg.syn_channels, cfg.syn_seconds, cfg.syn_rate, cfg.syn_per_class,
                   cfg.seed if seed is None else seed, tuple(cfg.syn_centers), cfg.syn_bandwidth, cfg.syn_snr)


def generate_synthetic_dataset(spec: SyntheticSpec) -> SliceDataset:
    """Класс k — смесь тонов из полосы centers[k] ± bandwidth с канальными усилениями на гауссовом фоне.

    Фазы случайны, поэтому классы различимы по спектру, но не линейно во времени.
    """
    if spec.classes > len(spec.centers):
        raise ConfigError(f'Классов {spec.classes}, а центральных частот {len(spec.centers)}')
    if spec.classes < 2:
        raise ConfigError('Нужно хотя бы два класса')
    if max(spec.centers[:spec.classes]) + spec.bandwidth >= spec.rate / 2:
        raise ConfigError('Полосы классов должны быть ниже частоты Найквиста')
    rng = stream(spec.seed, 'synthetic')
    length = int(round(spec.seconds * spec.rate))
    t = np.arange(length) / spec.rate
    names = [f'CH{i + 1}' for i in range(spec.channels)]
    data, labels = [], []
    for k in range(spec.classes):
        lo, hi = spec.centers[k] - spec.bandwidth, spec.centers[k] + spec.bandwidth
        for _ in range(spec.per_class):
            freqs = rng.uniform(lo, hi, spec.tones)
            phases = rng.uniform(0.0, 2.0 * np.pi, (spec.channels, spec.tones))
            gains = rng.uniform(0.5, 1.5, spec.channels)
            tones = np.sin(2.0 * np.pi * freqs[None, :, None] * t + phases[:, :, None]).sum(axis=1)
            x = spec.snr * gains[:, None] * tones / np.sqrt(spec.tones)
            x = x + rng.normal(0.0, 1.0, (spec.channels, length))
            data.append(percentile_normalize(EegSlice(names, x, k, spec.rate)).data)
            labels.append(k)
    if not data:
        return SliceDataset(names, spec.rate, spec.classes,
                            np.zeros((0, spec.channels, length), dtype=np.float32), np.zeros(0, dtype=np.int32))
    return SliceDataset(names, spec.rate, spec.classes, np.stack(data), np.array(labels))


# ─── Разбиение ──────────────────────────────────────────

@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    sizes: dict = field(default_factory=dict)


def split_indices(n: int, val_fraction: float, test_fraction: float, seed: int, groups=None) -> Split:
    """Перемешивание с фиксированным сидом; groups (например, пациенты) не разрываются между частями."""
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ConfigError(f'Доли val={val_fraction}, test={test_fraction} недопустимы')
    rng = stream(seed, 'split')
    if groups is None:
        order = rng.permutation(n)
        n_test, n_val = int(round(n * test_fraction)), int(round(n * val_fraction))
        test, val, train = order[:n_test], order[n_test:n_test + n_val], order[n_test + n_val:]
    else:
        groups = np.asarray(groups)
        if len(groups) != n:
            raise ConfigError(f'groups: {len(groups)} меток на {n} срезов')
        unique = rng.permutation(np.unique(groups))
        g_test, g_val = int(round(len(unique) * test_fraction)), int(round(len(unique) * val_fraction))
        test_g, val_g = set(unique[:g_test].tolist()), set(unique[g_test:g_test + g_val].tolist())
        member = np.array([g in test_g for g in groups.tolist()])
        member_val = np.array([g in val_g for g in groups.tolist()])
        idx = np.arange(n)
        test, val, train = idx[member], idx[member_val], idx[~(member | member_val)]
    split = Split(np.sort(train), np.sort(val), np.sort(test))
    split.sizes = {'train': len(split.train), 'val': len(split.val), 'test': len(split.test)}
    return split


def segment_dataset(ds: SliceDataset, d: int, registry: ChannelRegistry, indices=None,
                    grow: bool = False) -> list[SegmentedSlice]:
    """Срезы датасета → C × N × D с индексами каналов из реестра."""
    return [segment_slice(s, d, registry, grow=grow) for s in ds.slices(indices)]
