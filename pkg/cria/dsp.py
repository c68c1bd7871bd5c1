"""
cria/dsp.py — Предобработка ЭЭГ

Цепочка preprocess_recording:
  1. Ресемплинг до target_rate (полифазный, рациональное отношение)
  2. Полосовой Баттерворт 0.5–120 Гц (вперёд-назад, нулевая фаза)
  3. Режекторы 1 и 60 Гц (Q=30, нулевая фаза)
  4. Нарезка на срезы slice_seconds
  5. Нормировка каждого канала на 95-й перцентиль |x|
"""
from __future__ import annotations

import logging
from fractions import Fraction

import numpy as np
from scipy import signal

from .exceptions import CutoffError, EmptySignalError, TooShortError
from .records import ChannelRegistry, EegRecording, EegSlice, SegmentedSlice

logger = logging.getLogger(__name__)


def _ratio(target: float, source: float) -> Fraction:
    return Fraction(str(float(target))) / Fraction(str(float(source)))


def resample(rec: EegRecording, target_rate: float) -> EegRecording:
    if not target_rate > 0:
        raise CutoffError(f'Целевая частота должна быть > 0, получено {target_rate}')
    if rec.n_samples == 0:
        raise EmptySignalError('Ресемплинг пустой записи')
    if float(target_rate) == float(rec.sample_rate):
        return EegRecording(list(rec.channel_names), rec.sample_rate, rec.data.copy())

    ratio = _ratio(target_rate, rec.sample_rate)
    n_out = int(round(rec.n_samples * ratio.numerator / ratio.denominator))
    # resample_poly сам ставит КИХ-антиалиасинг на min(Найквистов)
    out = signal.resample_poly(rec.data, ratio.numerator, ratio.denominator, axis=-1)
    if out.shape[-1] < n_out:
        out = np.pad(out, ((0, 0), (0, n_out - out.shape[-1])))
    return EegRecording(list(rec.channel_names), float(target_rate), out[:, :n_out])


def _sos_padlen(sos: np.ndarray, n: int) -> int:
    # как в scipy.signal.sosfiltfilt, но не длиннее сигнала
    n_zero = min(int((sos[:, 2] == 0).sum()), int((sos[:, 5] == 0).sum()))
    return max(0, min(3 * (2 * len(sos) + 1 - n_zero), n - 1))


def bandpass_butterworth(rec: EegRecording, low: float = 0.5, high: float = 120.0, order: int = 4) -> EegRecording:
    nyq = rec.sample_rate / 2.0
    if not 0 < low < high < nyq:
        raise CutoffError(f'Полоса {low}–{high} Гц недопустима при частоте Найквиста {nyq} Гц')
    if rec.n_samples == 0:
        raise EmptySignalError('Фильтрация пустой записи')
    sos = signal.butter(order, [low, high], btype='bandpass', fs=rec.sample_rate, output='sos')
    out = signal.sosfiltfilt(sos, rec.data, axis=-1, padlen=_sos_padlen(sos, rec.n_samples))
    return EegRecording(list(rec.channel_names), rec.sample_rate, out)


def notch_filter(rec: EegRecording, freqs=(1.0, 60.0), quality: float = 30.0) -> EegRecording:
    nyq = rec.sample_rate / 2.0
    for f in freqs:
        if not 0 < f < nyq:
            raise CutoffError(f'Режектор {f} Гц вне (0, {nyq}) Гц')
    out = rec.data
    if rec.n_samples == 0:
        raise EmptySignalError('Фильтрация пустой записи')
    for f in freqs:
        b, a = signal.iirnotch(f, quality, fs=rec.sample_rate)
        out = signal.filtfilt(b, a, out, axis=-1, method='gust')
    return EegRecording(list(rec.channel_names), rec.sample_rate, np.array(out))


def percentile_normalize(sl: EegSlice) -> EegSlice:
    """Делит каждый канал на 95-й перцентиль |x| (линейная интерполяция); нулевой канал не трогает."""
    if sl.data.size == 0:
        raise EmptySignalError('Нормировка пустого среза')
    p95 = np.percentile(np.abs(sl.data), 95, axis=-1, keepdims=True)
    scale = np.where(p95 > 0, p95, 1.0)
    return EegSlice(list(sl.channel_names), sl.data / scale, sl.label, sl.sample_rate)


def segment_slice(sl: EegSlice, d: int, registry: ChannelRegistry | None = None, grow: bool = False) -> SegmentedSlice:
    """C × L → C × N × D, N = floor(L / D); хвост короче D отбрасывается."""
    c, length = sl.data.shape
    if length < d:
        raise TooShortError(f'Срез длины {length} короче сегмента D={d}')
    n = length // d
    ids = registry.lookup(sl.channel_names, grow=grow) if registry is not None else tuple(range(c))
    return SegmentedSlice(sl.data[:, :n * d].reshape(c, n, d), ids, sl.label)


def preprocess_recording(rec: EegRecording, cfg, label: int | None = None) -> list[EegSlice]:
    """Полная цепочка предобработки одной записи в список нормированных срезов."""
    rec = resample(rec, cfg.target_rate)
    nyq = rec.sample_rate / 2.0

    high = cfg.band_high
    if high >= nyq:
        high = 0.95 * nyq
        logger.warning('band_high=%s Гц не ниже Найквиста %s Гц, используется %s Гц', cfg.band_high, nyq, high)
    rec = bandpass_butterworth(rec, cfg.band_low, high, cfg.filter_order)

    freqs = [f for f in cfg.notch_freqs if cfg.notch_drift or f >= 2.0]
    skipped = [f for f in freqs if f >= nyq]
    if skipped:
        logger.warning('Режекторы %s Гц выше Найквиста, пропущены', skipped)
    freqs = [f for f in freqs if f < nyq]
    if freqs:
        rec = notch_filter(rec, freqs, cfg.notch_q)

    slice_len = int(round(cfg.slice_seconds * rec.sample_rate))
    count = rec.n_samples // slice_len if slice_len > 0 else 0
    if count == 0:
        logger.warning('Запись (%s отсчётов) короче одного среза (%s)', rec.n_samples, slice_len)
    return [
        percentile_normalize(EegSlice(
            list(rec.channel_names), rec.data[:, i * slice_len:(i + 1) * slice_len], label, rec.sample_rate))
        for i in range(count)
    ]
