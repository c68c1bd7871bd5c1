#!/usr/bin/env python
"""
manage.py — CRIA: команды обучения и оценки (dump-features == dump_features)
"""
import os
import sys


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'core.settings')
    try:
        import django  # noqa: F401
    except ImportError as exc:
        raise ImportError("Django не установлен.") from exc
    from cria.cli import run_command
    sys.exit(run_command(sys.argv[1:]))


if __name__ == '__main__':
    main()
