"""
cria/edf.py — Минимальный разбор и запись EDF

Формат:
  256 байт фиксированного заголовка
  256 байт на сигнал (поля сгруппированы по полю, не по сигналу)
  записи данных: для каждого сигнала samples[i] отсчётов int16 little-endian

Физические единицы: (digital − dig_min)·(phys_max − phys_min)/(dig_max − dig_min) + phys_min.
Каналы 'EDF Annotations' пропускаются.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from pathlib import Path

import numpy as np

from .exceptions import DataError, ParseError
from .records import EegRecording

logger = logging.getLogger(__name__)

HEADER_BYTES = 256
ANNOTATION_LABEL = 'EDF Annotations'

# (имя, ширина) полей фиксированного заголовка
_FIXED = (('version', 8), ('patient', 80), ('recording', 80), ('startdate', 8), ('starttime', 8),
          ('header_bytes', 8), ('reserved', 44), ('records', 8), ('duration', 8), ('ns', 4))
# (имя, ширина) полей сигнала, каждое повторяется ns раз подряд
_SIGNAL = (('label', 16), ('transducer', 80), ('units', 8), ('phys_min', 8), ('phys_max', 8),
           ('dig_min', 8), ('dig_max', 8), ('prefilter', 80), ('samples', 8), ('reserved', 32))


def _text(buf: bytes, offset: int, width: int) -> str:
    if offset + width > len(buf):
        raise ParseError('Заголовок EDF обрезан', offset=len(buf))
    return buf[offset:offset + width].decode('latin-1').strip()


def _number(buf: bytes, offset: int, width: int, kind=float):
    raw = _text(buf, offset, width)
    try:
        return kind(raw)
    except ValueError:
        raise ParseError(f'Нечисловое поле заголовка: {raw!r}', offset=offset) from None


def _read_header(buf: bytes) -> dict:
    header, offset = {}, 0
    for name, width in _FIXED:
        header[name] = _text(buf, offset, width)
        header[f'{name}@'] = offset
        offset += width
    for name in ('header_bytes', 'records', 'ns'):
        header[name] = _number(buf, header[f'{name}@'], dict(_FIXED)[name], int)
    header['duration'] = _number(buf, header['duration@'], 8)
    ns = header['ns']
    if ns < 0:
        raise ParseError(f'Отрицательное число сигналов: {ns}', offset=header['ns@'])
    if len(buf) < HEADER_BYTES * (ns + 1):
        raise ParseError(f'Заголовок объявляет {ns} сигналов, но файл короче их описаний', offset=len(buf))
    if header['header_bytes'] != HEADER_BYTES * (ns + 1):
        raise ParseError(f'Размер заголовка {header["header_bytes"]} не равен 256·(ns+1)',
                         offset=header['header_bytes@'])
    for name, width in _SIGNAL:
        kind = {'label': str, 'transducer': str, 'units': str, 'prefilter': str, 'reserved': str,
                'dig_min': int, 'dig_max': int, 'samples': int}.get(name, float)
        values = []
        for i in range(ns):
            values.append(_text(buf, offset, width) if kind is str else _number(buf, offset, width, kind))
            offset += width
        header[name] = values
    return header


def parse_edf(path: str | Path) -> EegRecording:
    """Читает EDF целиком; при любой ошибке — ParseError, частичного результата нет."""
    buf = Path(path).read_bytes()
    header = _read_header(buf)
    ns, start = header['ns'], header['header_bytes']
    samples = np.array(header['samples'], dtype=np.int64)
    if (samples < 0).any():
        raise ParseError('Отрицательное число отсчётов в записи', offset=start)
    record_len = int(samples.sum())
    available = len(buf) - start
    records = header['records']
    if records < 0:
        # −1: число записей неизвестно, выводим из длины файла
        records = available // (2 * record_len) if record_len else 0
    expected = records * record_len * 2
    if available != expected:
        raise ParseError(f'Заголовок объявляет {records} записей ({expected} байт данных), '
                         f'в файле {available} байт', offset=start + min(available, expected))
    if header['duration'] <= 0 and records > 0:
        raise ParseError(f'Длительность записи должна быть > 0: {header["duration"]}', offset=header['duration@'])

    if records * record_len:
        raw = np.frombuffer(buf, dtype='<i2', count=records * record_len, offset=start).reshape(records, record_len)
    else:
        raw = np.zeros((records, record_len), dtype='<i2')
    bounds = np.concatenate([[0], np.cumsum(samples)])
    keep = [i for i in range(ns) if not header['label'][i].startswith(ANNOTATION_LABEL)]
    if not keep:
        raise ParseError('В файле нет сигнальных каналов', offset=start)

    duration = header['duration'] if header['duration'] > 0 else 1.0
    rates = {i: samples[i] / duration for i in keep}
    common, _ = Counter(rates.values()).most_common(1)[0]
    dropped = [header['label'][i] for i in keep if rates[i] != common]
    if dropped:
        logger.warning('Каналы с другой частотой пропущены: %s', ', '.join(dropped))
    keep = [i for i in keep if rates[i] == common]

    rows = []
    for i in keep:
        d_min, d_max = header['dig_min'][i], header['dig_max'][i]
        if d_max == d_min:
            raise ParseError(f'Канал {header["label"][i]}: dig_max == dig_min', offset=start)
        p_min, p_max = header['phys_min'][i], header['phys_max'][i]
        digital = raw[:, bounds[i]:bounds[i + 1]].reshape(-1).astype(np.float64)
        rows.append((digital - d_min) * (p_max - p_min) / (d_max - d_min) + p_min)
    data = np.vstack(rows) if rows else np.zeros((0, 0))
    return EegRecording([header['label'][i] for i in keep], float(common), data)


# ─── Запись ──────────────────────────────────────────────

def _fit8(value: float, up: bool) -> str:
    """Число в 8 символов ASCII, округлённое наружу диапазона."""
    for decimals in range(7, -1, -1):
        q = 10 ** decimals
        v = (math.ceil if up else math.floor)(value * q) / q
        s = f'{v:.{decimals}f}'
        if len(s) <= 8:
            return s
    raise DataError(f'Значение {value} не помещается в поле EDF из 8 символов')


def _field(value, width: int) -> bytes:
    s = str(value)[:width]
    return s.ljust(width).encode('latin-1', errors='replace')


def write_edf(path: str | Path, rec: EegRecording, record_seconds: float = 1.0,
              digital: tuple[int, int] = (-32768, 32767)) -> Path:
    """Пишет запись в EDF (16 бит). Хвост до целой записи дополняется нулевым физическим значением."""
    spr = rec.sample_rate * record_seconds
    if abs(spr - round(spr)) > 1e-9 or round(spr) < 1:
        raise DataError(f'sample_rate·record_seconds = {spr} должно быть целым')
    spr = int(round(spr))
    ns, length = rec.data.shape
    records = math.ceil(length / spr)
    d_min, d_max = digital

    phys = []
    for row in rec.data:
        lo, hi = (float(row.min()), float(row.max())) if row.size else (-1.0, 1.0)
        lo, hi = min(lo, 0.0), max(hi, 0.0)
        if hi == lo:
            hi = lo + 1.0
        phys.append((_fit8(lo, up=False), _fit8(hi, up=True)))

    padded = np.zeros((ns, records * spr))
    padded[:, :length] = rec.data
    digital_rows = []
    for row, (lo_s, hi_s) in zip(padded, phys):
        lo, hi = float(lo_s), float(hi_s)
        q = np.round((row - lo) * (d_max - d_min) / (hi - lo) + d_min)
        digital_rows.append(np.clip(q, d_min, d_max).astype('<i2'))
    blocks = np.stack(digital_rows).reshape(ns, records, spr).transpose(1, 0, 2)

    head = b''.join([
        _field('0', 8), _field('X X X X', 80), _field('Startdate X X X X', 80),
        _field('01.01.00', 8), _field('00.00.00', 8), _field(HEADER_BYTES * (ns + 1), 8),
        _field('', 44), _field(records, 8), _field(_fit8(record_seconds, up=True), 8), _field(ns, 4),
    ])
    per_signal = {
        'label': [n for n in rec.channel_names], 'transducer': [''] * ns, 'units': ['uV'] * ns,
        'phys_min': [p[0] for p in phys], 'phys_max': [p[1] for p in phys],
        'dig_min': [d_min] * ns, 'dig_max': [d_max] * ns, 'prefilter': [''] * ns,
        'samples': [spr] * ns, 'reserved': [''] * ns,
    }
    for name, width in _SIGNAL:
        head += b''.join(_field(v, width) for v in per_signal[name])

    path = Path(path)
    path.write_bytes(head + np.ascontiguousarray(blocks).tobytes())
    return path
