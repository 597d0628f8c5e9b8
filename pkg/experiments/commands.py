"""
Shared base class for the experiment management commands.
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from experiments.config import ExperimentConfig, load_config
from experiments.runs import RunDirectory

logger = logging.getLogger(__name__)


class ExperimentCommand(BaseCommand):
    """
    Parses the common flags, resolves the run directory and turns domain
    errors into CommandError so the process exits nonzero.

    Subclasses set ``name`` and implement ``run(config, run, options)``.
    """

    name = ''

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            required=True,
            help='Path to the experiment YAML file'
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=None,
            help='Replace every seed of the config with this value'
        )
        parser.add_argument(
            '--force',
            action='store_true',
            help='Overwrite an earlier run with the same fingerprint'
        )
        parser.add_argument(
            '--parallelism',
            type=int,
            default=None,
            help='Number of shards simulated concurrently (default: HDLAB_PARALLELISM)'
        )
        parser.add_argument(
            '--out',
            default=None,
            help='Output root (default: the config out field, then HDLAB_OUT)'
        )

    def handle(self, *args, **options):
        try:
            config = self.load(options)
            run = RunDirectory(config, self.name, options['out']).claim(options['force'])
            self.stdout.write(f'{self.name}: {config.name} [{config.short_fingerprint}] -> {run.path}')
            self.run(config, run, options)
        except (ValueError, RuntimeError, OSError, KeyError) as exc:
            logger.error('%s failed: %s', self.name, exc)
            raise CommandError(str(exc)) from exc

    def load(self, options) -> ExperimentConfig:
        parallelism = options['parallelism']
        if parallelism is not None and parallelism < 1:
            raise ValueError('--parallelism must be positive')
        config = load_config(options['config']).with_seed(options['seed'])
        options['parallelism'] = parallelism or settings.HDLAB_PARALLELISM
        return config.with_parallelism(parallelism)

    def run(self, config: ExperimentConfig, run: RunDirectory, options) -> None:
        raise NotImplementedError
