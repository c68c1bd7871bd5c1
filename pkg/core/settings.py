"""
core/settings.py — Настройки CRIA (кросс-видовое предобучение ЭЭГ)
"""
from pathlib import Path
import os
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

INSTALLED_APPS = [
    'cria',
]

# ─── Запуски CRIA ───────────────────────────────────────
# Файл конфигурации запуска по умолчанию (формат key=value)
CRIA_CONFIG_FILE = os.getenv('CRIA_CONFIG_FILE', '')
# Каталог данных (датасеты, чекпоинты, CSV-логи)
CRIA_DATA_DIR = Path(os.getenv('CRIA_DATA_DIR', str(BASE_DIR / 'data')))
CRIA_LOG_LEVEL = os.getenv('CRIA_LOG_LEVEL', 'INFO')

# ─── Логирование ────────────────────────────────────────
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '[{levelname}] {name}: {message}', 'style': '{'},
    },
    'handlers': {
        'stderr': {'class': 'logging.StreamHandler', 'formatter': 'plain'},
    },
    'loggers': {
        'cria': {'handlers': ['stderr'], 'level': CRIA_LOG_LEVEL, 'propagate': False},
    },
}
