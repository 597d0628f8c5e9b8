"""
Management command to score a trained checkpoint on the test split and
report its gap to the configured oracle.

Usage:
    python manage.py eval --config experiments/presets/backlogged_single_store.yaml
"""
from pathlib import Path

from django.core.management.base import CommandError

from experiments.commands import ExperimentCommand
from experiments.management.commands.train import CHECKPOINT
from experiments.pipeline import compute_oracle, load_dataset, load_policy, oracle_cache, scenario_batches, test_metrics
from trainer.hdpo import gap_percent


class Command(ExperimentCommand):
    help = 'Evaluate a trained policy on the test split against the configured oracle.'
    name = 'eval'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--checkpoint',
            default=None,
            help='Checkpoint to evaluate (default: the train run of this config)'
        )

    def run(self, config, run, options):
        instance = config.require('instance', 'eval')
        store = load_dataset(config, options['out'])
        batches = scenario_batches(config, store, instance)
        checkpoint = Path(options['checkpoint'] or run.sibling('train', CHECKPOINT))
        if not checkpoint.exists():
            raise FileNotFoundError(f'no checkpoint at {checkpoint}; run train with this config first')
        policy = load_policy(config, instance, batches['train'], checkpoint)
        metrics = test_metrics(config, policy, batches, instance)
        scored = metrics.get('test_cost_rounded', metrics['test_cost'])

        oracle = None
        if config.oracle.kind is not None:
            oracle = compute_oracle(config, batches, oracle_cache(config, options['out']))
            metrics['oracle_cost'] = oracle['cost']
            metrics['gap_percent'] = gap_percent(scored, oracle['cost'])
        run.write_json('run.json', {
            'fingerprint': config.fingerprint,
            'checkpoint': str(checkpoint),
            'metrics': metrics,
            'oracle': oracle,
        })
        run.write_metrics(metrics)

        self.stdout.write(f'test cost {scored:.4f}')
        if oracle is None:
            return
        gap = metrics['gap_percent']
        message = f'{config.oracle.kind} oracle {oracle["cost"]:.4f}, gap {gap:.3f}%'
        threshold = config.oracle.gap_threshold
        if threshold is not None and gap > threshold:
            self.stdout.write(self.style.ERROR(message))
            raise CommandError(f'gap {gap:.3f}% exceeds the threshold of {threshold}%')
        self.stdout.write(self.style.SUCCESS(message))
