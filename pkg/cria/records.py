"""
cria/records.py — Типы сигналов: запись, срез, сегментированный срез, реестр каналов
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, PairingError, RegistryError


@dataclass
class EegRecording:
    """Сырая многоканальная запись: каналы × отсчёты."""

    channel_names: list[str]
    sample_rate: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError(f'Запись должна быть матрицей каналы × отсчёты, получена форма {self.data.shape}')
        if len(self.channel_names) != self.data.shape[0]:
            raise DataError(
                f'Число имён каналов ({len(self.channel_names)}) не совпадает с числом строк ({self.data.shape[0]})')
        if not self.sample_rate > 0:
            raise DataError(f'Частота дискретизации должна быть > 0, получено {self.sample_rate}')
        if not np.all(np.isfinite(self.data)):
            raise DataError('Запись содержит нечисловые отсчёты')

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class EegSlice:
    """Срез фиксированной длины C × L, обычно на 200 Гц и после нормировки."""

    channel_names: list[str]
    data: np.ndarray
    label: int | None = None
    sample_rate: float = 200.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or len(self.channel_names) != self.data.shape[0]:
            raise DataError(f'Срез: форма {self.data.shape} не согласована с {len(self.channel_names)} каналами')


@dataclass
class SegmentedSlice:
    """C × N × D: каждый канал нарезан на N сегментов длины D."""

    data: np.ndarray
    channel_ids: tuple[int, ...]
    label: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DataError(f'Ожидается C × N × D, получена форма {self.data.shape}')
        if self.data.shape[2] % 2:
            raise PairingError(f'Длина сегмента D={self.data.shape[2]} должна быть чётной')
        self.channel_ids = tuple(int(i) for i in self.channel_ids)
        if len(self.channel_ids) != self.data.shape[0]:
            raise RegistryError(f'channel_ids: {len(self.channel_ids)} индексов на {self.data.shape[0]} каналов')
        if len(set(self.channel_ids)) != len(self.channel_ids):
            raise RegistryError(f'channel_ids повторяются: {self.channel_ids}')

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass
class ChannelRegistry:
    """Имя электрода → строка таблицы E_channel. Индексы выдаются подряд с нуля."""

    c_max: int
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.names) > self.c_max:
            raise RegistryError(f'В реестре {len(self.names)} каналов при c_max={self.c_max}')
        if len(set(self.names)) != len(self.names):
            raise RegistryError('Имена каналов в реестре повторяются')
        self._index = {name: i for i, name in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise RegistryError(f'Неизвестный канал: {name}') from None

    def register(self, name: str) -> int:
        if name in self._index:
            return self._index[name]
        if len(self.names) >= self.c_max:
            raise RegistryError(f'Нет свободных строк E_channel для канала {name} (c_max={self.c_max})')
        self._index[name] = len(self.names)
        self.names.append(name)
        return self._index[name]

    def lookup(self, names, grow: bool = False) -> tuple[int, ...]:
        fn = self.register if grow else self.index
        return tuple(fn(n) for n in names)

    def to_dict(self) -> dict:
        return {'c_max': self.c_max, 'names': list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> 'ChannelRegistry':
        return cls(c_max=int(d['c_max']), names=list(d['names']))
