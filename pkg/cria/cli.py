"""
cria/cli.py — Запуск команд CRIA из кода с возвратом кода выхода

    run_command(['pretrain', 'data/syn.cria', '--seed', '0', '--steps', '0'])

Имена команд принимаются и через дефис: dump-features == dump_features.
"""
import os


def run_command(argv: list[str]) -> int:
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'core.settings')
    from django.core.management import ManagementUtility

    argv = list(argv)
    if argv and not argv[0].startswith('-'):
        argv[0] = argv[0].replace('-', '_')
    try:
        ManagementUtility(['manage.py', *argv]).execute()
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return 0
