"""
cria/exceptions.py — Иерархия ошибок CRIA

Семейства и коды выхода CLI:
  ConfigError      — 2 (плохой ключ/значение конфигурации)
  DataError        — 3 (битый файл, пустой сигнал, несовместимый чекпоинт)
  DivergenceError  — 4 (нечисловой лосс при обучении)
Остальные — ошибки аргументов численных операций (наследуют ValueError).
"""


class CriaError(Exception):
    """Базовая ошибка проекта."""

    exit_code = 1


# ─── Конфигурация ────────────────────────────────────────

class ConfigError(CriaError, ValueError):
    exit_code = 2


# ─── Данные ──────────────────────────────────────────────

class DataError(CriaError):
    exit_code = 3


class ParseError(DataError, ValueError):
    """Ошибка разбора файла; offset — смещение в байтах, где обнаружена проблема."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f'{message} (байт {offset})'
        super().__init__(message)
        self.offset = offset


class DatasetFormatError(DataError, ValueError):
    pass


class CheckpointError(DataError, ValueError):
    pass


class EmptySignalError(DataError, ValueError):
    pass


class TooShortError(DataError, ValueError):
    pass


# ─── Обучение ────────────────────────────────────────────

class DivergenceError(CriaError, ArithmeticError):
    exit_code = 4

    def __init__(self, step: int, loss: float):
        super().__init__(f'Лосс расходится на шаге {step}: {loss}')
        self.step = step
        self.loss = loss


# ─── Численные операции ─────────────────────────────────

class DimensionError(CriaError, ValueError):
    pass


class RankError(CriaError, ValueError):
    pass


class NoTapeError(CriaError, RuntimeError):
    pass


class OracleError(CriaError, ArithmeticError):
    pass


class DegenerateVarianceError(CriaError, ValueError):
    pass


class CutoffError(CriaError, ValueError):
    pass


class PairingError(CriaError, ValueError):
    pass


class RegistryError(CriaError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ''


class TemperatureError(CriaError, ValueError):
    pass


class BatchSizeError(CriaError, ValueError):
    pass


class LabelError(CriaError, ValueError):
    pass


class UndefinedMetricError(CriaError, ValueError):
    pass


class NoiseSpecError(CriaError, ValueError):
    pass


class EmptyTableError(CriaError, ValueError):
    pass
