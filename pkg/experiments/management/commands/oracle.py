"""
Management command to compute the benchmark cost of an experiment's instance.

Usage:
    python manage.py oracle --config experiments/presets/lost_single_store.yaml
"""
from experiments.commands import ExperimentCommand
from experiments.pipeline import SCENARIO_ORACLES, compute_oracle, load_dataset, oracle_cache, scenario_batches
from experiments.runs import flatten


class Command(ExperimentCommand):
    help = 'Compute the configured oracle (newsvendor, dp, cbs, echelon or transshipment).'
    name = 'oracle'

    def run(self, config, run, options):
        instance = config.require('instance', 'oracle')
        batches = None
        if config.oracle.kind in SCENARIO_ORACLES:
            batches = scenario_batches(config, load_dataset(config, options['out']), instance)
        result = compute_oracle(config, batches, oracle_cache(config, options['out']))
        run.write_json('run.json', {'fingerprint': config.fingerprint, 'kind': config.oracle.kind, 'result': result})
        run.write_metrics(dict(flatten('', result)))
        self.stdout.write(self.style.SUCCESS(f'{config.oracle.kind} oracle cost {result["cost"]:.4f}'))
