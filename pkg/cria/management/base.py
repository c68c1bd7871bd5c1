"""
cria/management/base.py — Общая основа команд CRIA

Коды выхода: 0 — успех, 2 — конфигурация, 3 — данные, 4 — расхождение обучения.
"""
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from cria.config import RunConfig, parse_overrides
from cria.exceptions import CriaError

logger = logging.getLogger(__name__)


class CriaCommand(BaseCommand):
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Файл конфигурации key=value (по умолчанию CRIA_CONFIG_FILE)')
        parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                            help='Переопределить ключ конфигурации; можно повторять')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def load_config(self, options, **flags) -> RunConfig:
        """Флаг > файл > значение по умолчанию; выделенные флаги (--seed, ...) сильнее --set."""
        path = options.get('config') or settings.CRIA_CONFIG_FILE or None
        overrides = parse_overrides(options.get('set'))
        overrides.update({k: v for k, v in flags.items() if v is not None})
        return RunConfig.load(path, overrides)

    def data_path(self, *parts) -> Path:
        return Path(settings.CRIA_DATA_DIR, *parts)

    def handle(self, *args, **options):
        try:
            self.run(options)
        except CriaError as e:
            logger.debug('Команда завершилась ошибкой', exc_info=True)
            raise CommandError(str(e), returncode=e.exit_code) from e

    def run(self, options):
        raise NotImplementedError
