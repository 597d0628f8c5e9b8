"""
Management command to train a policy with HDPO on the experiment's traces.

Usage:
    python manage.py train --config experiments/presets/lost_single_store.yaml --parallelism 4
"""
from experiments.commands import ExperimentCommand
from experiments.pipeline import load_dataset, save_policy, scenario_batches, test_metrics, train_policy
from experiments.runs import flatten

CHECKPOINT = 'checkpoint.bin'


class Command(ExperimentCommand):
    help = 'Train the configured policy and score it on the test split.'
    name = 'train'

    def run(self, config, run, options):
        instance = config.require('instance', 'train')
        store = load_dataset(config, options['out'])
        batches = scenario_batches(config, store, instance)
        policy, record = train_policy(config, batches, instance, run)
        save_policy(policy, config, run.file(CHECKPOINT))
        record.best_checkpoint = CHECKPOINT
        record.test_metrics = test_metrics(config, policy, batches, instance)
        run.file('run.json').write_text(record.to_json())

        summary = record.deterministic_dict()
        metrics = dict(flatten('', {
            'best_dev_loss': summary['best_dev_loss'],
            'best_epoch': summary['best_epoch'],
            'gradient_steps': summary['gradient_steps'],
            'test': summary['test_metrics'],
        }))
        for epoch in summary['epochs']:
            metrics[f'epoch.{epoch["epoch"]:05d}.train_loss'] = epoch['train_loss']
        run.write_metrics(metrics)

        self.stdout.write(self.style.SUCCESS(
            f'Stopped on {record.stop_reason} after {record.gradient_steps} steps; '
            f'best dev cost {record.best_dev_loss:.4f}, test cost {record.test_metrics["test_cost"]:.4f}'
        ))
