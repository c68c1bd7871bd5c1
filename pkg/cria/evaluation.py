"""
cria/evaluation.py — Метрики, шум для проверки устойчивости и оракул взаимной информации
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn import metrics

from .exceptions import EmptyTableError, NoiseSpecError, UndefinedMetricError
from .records import EegSlice
from .seeding import stream

logger = logging.getLogger(__name__)


# ─── Метрики ─────────────────────────────────────────────

def _labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.size == 0:
        raise UndefinedMetricError('Метрика по пустой выборке')
    return y


def balanced_accuracy(preds, labels) -> float:
    """Среднее recall по классам, присутствующим в labels."""
    y = _labels(labels)
    return float(metrics.balanced_accuracy_score(y, np.asarray(preds)))


def _binary_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    return s[:, 1] if s.ndim == 2 and s.shape[1] == 2 else s


def _check_two_classes(y: np.ndarray):
    if np.unique(y).size < 2:
        raise UndefinedMetricError('AUROC/PR-AUC не определены: в метках один класс')


def auroc(scores, labels) -> float:
    """Бинарный AUROC (ранговая статистика, ничьи — по половине); для n × K — macro one-vs-rest."""
    y = _labels(labels)
    _check_two_classes(y)
    s = _binary_scores(scores)
    if s.ndim == 2:
        try:
            return float(metrics.roc_auc_score(y, s, multi_class='ovr', average='macro',
                                               labels=np.arange(s.shape[1])))
        except ValueError as e:
            raise UndefinedMetricError(f'AUROC не определён: {e}') from None
    return float(metrics.roc_auc_score(y, s))


def pr_auc(scores, labels) -> float:
    """Площадь под ступенчатой кривой precision-recall; для n × K — среднее one-vs-rest."""
    y = _labels(labels)
    _check_two_classes(y)
    s = _binary_scores(scores)
    if s.ndim == 2:
        onehot = np.eye(s.shape[1])[y]
        present = onehot.sum(axis=0) > 0
        return float(metrics.average_precision_score(onehot[:, present], s[:, present], average='macro'))
    return float(metrics.average_precision_score(y, s))


def cohens_kappa(preds, labels) -> float:
    """κ = (p_o − p_e) / (1 − p_e)."""
    y = _labels(labels)
    p = np.asarray(preds)
    classes = np.union1d(y, p)
    cm = metrics.confusion_matrix(y, p, labels=classes).astype(np.float64)
    n = cm.sum()
    p_e = float((cm.sum(axis=0) * cm.sum(axis=1)).sum() / (n * n))
    if p_e >= 1.0:
        raise UndefinedMetricError('Каппа не определена: p_e = 1 (оба ряда — один и тот же класс)')
    return float(metrics.cohen_kappa_score(y, p))


def weighted_f1(preds, labels) -> float:
    y = _labels(labels)
    return float(metrics.f1_score(y, np.asarray(preds), average='weighted', zero_division=0))


@dataclass
class MetricsReport:
    bacc: float
    auroc: float
    pr_auc: float
    kappa: float
    f1_weighted: float
    confusion_matrix: list = field(default_factory=list)
    n: int = 0

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop('confusion_matrix')
        return row


def _safe(fn, *args) -> float:
    try:
        return fn(*args)
    except UndefinedMetricError as e:
        logger.warning('%s', e)
        return float('nan')


def make_report(proba: np.ndarray, labels, num_classes: int) -> MetricsReport:
    """Отчёт по вероятностям классов n × K; предсказание — argmax."""
    y = _labels(labels).astype(np.int64)
    proba = np.asarray(proba, dtype=np.float64)
    preds = proba.argmax(axis=1)
    cm = metrics.confusion_matrix(y, preds, labels=np.arange(num_classes))
    return MetricsReport(
        bacc=balanced_accuracy(preds, y),
        auroc=_safe(auroc, proba, y),
        pr_auc=_safe(pr_auc, proba, y),
        kappa=_safe(cohens_kappa, preds, y),
        f1_weighted=weighted_f1(preds, y),
        confusion_matrix=cm.tolist(),
        n=int(y.size),
    )


# ─── Шум ─────────────────────────────────────────────────

NOISE_KINDS = ('gaussian', 'impulse', 'dropout', 'sinusoidal_50hz')
LEVELS = ('none', 'low', 'mid', 'high')


@dataclass(frozen=True)
class NoiseLevels:
    """Числовые параметры по уровням low, mid, high для каждого вида шума."""

    gaussian: tuple = (0.1, 0.3, 0.5)
    impulse_p: tuple = (0.001, 0.005, 0.01)
    impulse_amp: tuple = (3.0, 5.0, 8.0)
    dropout: tuple = (0.05, 0.15, 0.3)
    sine: tuple = (0.1, 0.3, 0.5)
    sine_freq: float = 50.0

    def __post_init__(self):
        for name in ('gaussian', 'impulse_p', 'impulse_amp', 'dropout', 'sine'):
            values = tuple(getattr(self, name))
            if len(values) != 3:
                raise NoiseSpecError(f'{name}: нужно ровно три значения low,mid,high, получено {values}')
            if name != 'impulse_amp' and any(a > b for a, b in zip(values, values[1:])):
                raise NoiseSpecError(f'{name}: уровни не должны убывать, получено {values}')

    @classmethod
    def from_config(cls, cfg) -> 'NoiseLevels':
        return cls(cfg.noise_gaussian, cfg.noise_impulse_p, cfg.noise_impulse_amp,
                   cfg.noise_dropout, cfg.noise_sine, cfg.noise_sine_freq)

    def resolve(self, kind: str, level: str) -> tuple[float, float]:
        """(основной параметр, амплитуда импульса) для вида и уровня."""
        if level not in LEVELS:
            raise NoiseSpecError(f'Неизвестный уровень шума: {level}')
        if level == 'none':
            return 0.0, 0.0
        i = LEVELS.index(level) - 1
        table = {'gaussian': self.gaussian, 'impulse': self.impulse_p,
                 'dropout': self.dropout, 'sinusoidal_50hz': self.sine}
        amplitude = float(self.impulse_amp[i]) if kind == 'impulse' else 0.0
        return float(table[kind][i]), amplitude


DEFAULT_LEVELS = NoiseLevels()


@dataclass(frozen=True)
class NoiseSpec:
    """amount/amplitude, если заданы, перекрывают табличные значения уровня."""

    kind: str
    level: str = 'low'
    seed: int = 0
    amount: float | None = None
    amplitude: float | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise NoiseSpecError(f'Неизвестный вид шума: {self.kind}')
        if self.level not in LEVELS:
            raise NoiseSpecError(f'Неизвестный уровень шума: {self.level}')

    def parameters(self, levels: NoiseLevels = DEFAULT_LEVELS) -> tuple[float, float]:
        amount, amplitude = levels.resolve(self.kind, self.level)
        if self.amount is not None:
            amount = float(self.amount)
        if self.amplitude is not None:
            amplitude = float(self.amplitude)
        return amount, amplitude


def inject_noise(sl: EegSlice, spec: NoiseSpec, levels: NoiseLevels = DEFAULT_LEVELS) -> EegSlice:
    amount, amplitude = spec.parameters(levels)
    x = sl.data
    rng = stream(spec.seed, f'noise.{spec.kind}')
    if amount == 0:
        out = x.copy()
    elif spec.kind == 'gaussian':
        out = x + rng.normal(0.0, amount, x.shape)
    elif spec.kind == 'impulse':
        hit = rng.random(x.shape) < amount
        sign = np.where(rng.random(x.shape) < 0.5, -1.0, 1.0)
        out = np.where(hit, sign * amplitude, x)
    elif spec.kind == 'dropout':
        out = np.where(rng.random(x.shape) < amount, 0.0, x)
    else:
        t = np.arange(x.shape[1]) / sl.sample_rate
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out = x + amount * np.sin(2.0 * np.pi * levels.sine_freq * t + phase)
    return EegSlice(list(sl.channel_names), out, sl.label, sl.sample_rate)


# ─── Взаимная информация ────────────────────────────────

def _joint(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 2 or (c < 0).any():
        raise EmptyTableError('Таблица сопряжённости должна быть двумерной и неотрицательной')
    if c.sum() <= 0:
        raise EmptyTableError('Таблица сопряжённости пуста')
    return c


def mi_estimate_discrete(joint_counts) -> float:
    """Plug-in взаимная информация (наты) эмпирического совместного распределения."""
    c = _joint(joint_counts)
    return float(metrics.mutual_info_score(None, None, contingency=c))


def mi_standard_error(joint_counts) -> float:
    """sqrt(Var(log p(a,x)/(p(a)p(x))) / n) по эмпирическому распределению."""
    c = _joint(joint_counts)
    n = c.sum()
    p = c / n
    pa = p.sum(axis=1, keepdims=True)
    px = p.sum(axis=0, keepdims=True)
    nz = p > 0
    ratio = np.zeros_like(p)
    ratio[nz] = np.log(p[nz] / (pa * px)[nz])
    mean = (p * ratio).sum()
    var = max((p * ratio * ratio).sum() - mean * mean, 0.0)
    return math.sqrt(var / n)


def _contingency(a: np.ndarray, x: np.ndarray, n_a: int, n_x: int) -> np.ndarray:
    table = np.zeros((n_a, n_x))
    np.add.at(table, (a, x), 1.0)
    return table


@dataclass
class MiCheckReport:
    n_trials: int
    passes: int
    mean_mi: float
    mean_mi_masked: float

    @property
    def pass_rate(self) -> float:
        return self.passes / self.n_trials if self.n_trials else 0.0


def mask_mi_inequality_check(n_trials: int = 100, n_samples: int = 100_000, states: int = 4,
                             keep: float = 0.5, seed: int = 0, g=None) -> MiCheckReport:
    """Монте-Карло: X ~ U{0..states−1}, A = g(X), A′ = A·M, M ~ Bernoulli(keep).

    Проверка I(A′; X) ≤ I(A; X) + 3·SE в каждом испытании. keep=1 — тождественная
    маска, keep=0 — нулевая. g по умолчанию x + 1, чтобы 0 означал только «замаскировано».
    """
    if states > 8:
        raise ValueError(f'Алфавит оракула ограничен 8 состояниями, получено {states}')
    g = g or (lambda x: x + 1)
    passes, mi_a, mi_m = 0, [], []
    for trial in range(n_trials):
        rng = stream(seed, f'mi.{trial}')
        x = rng.integers(0, states, n_samples)
        a = np.asarray(g(x), dtype=np.intp)
        m = (rng.random(n_samples) < keep).astype(np.intp)
        a_masked = a * m
        n_a = int(max(a.max(), a_masked.max())) + 1
        joint = _contingency(a, x, n_a, states)
        joint_masked = _contingency(a_masked, x, n_a, states)
        i_a = mi_estimate_discrete(joint)
        i_m = mi_estimate_discrete(joint_masked)
        eps = 3.0 * mi_standard_error(joint_masked)
        passes += int(i_m <= i_a + eps)
        mi_a.append(i_a)
        mi_m.append(i_m)
    logger.info('Оракул ИБ: %s/%s испытаний прошли', passes, n_trials)
    return MiCheckReport(n_trials, passes, float(np.mean(mi_a)) if mi_a else 0.0,
                         float(np.mean(mi_m)) if mi_m else 0.0)
