#!/usr/bin/env python
"""Command-line entry point for hdlab experiments."""
import os
import sys


def main():
    """Run hdlab management commands (datagen, train, eval, oracle, ...)."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'hdlab.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the packages in requirements.txt "
            "into the active environment first."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
