"""
Management command to generate or ingest the demand traces of an experiment.

Usage:
    python manage.py datagen --config experiments/presets/lost_single_store.yaml
"""
from experiments.commands import ExperimentCommand
from experiments.pipeline import build_dataset
from experiments.runs import TRACES


class Command(ExperimentCommand):
    help = 'Generate (or ingest) demand traces and split them into train, dev and test.'
    name = 'datagen'

    def run(self, config, run, options):
        store = build_dataset(config, run.path, options['parallelism'])
        path = store.save(run.file(TRACES))
        run.write_json('run.json', {
            'fingerprint': config.fingerprint,
            'shape': list(store.demand.shape),
            'splits': store.splits,
            'provenance': store.provenance,
        })
        metrics = {f'scenarios.{label}': float(stop - start) for label, (start, stop) in store.splits.items()}
        metrics['mean_demand'] = float(store.demand.mean())
        metrics['periods'] = float(store.periods)
        metrics['stores'] = float(store.stores)
        run.write_metrics(metrics)
        self.stdout.write(self.style.SUCCESS(
            f'Wrote {len(store)} traces of {store.periods} periods x {store.stores} locations to {path}'
        ))
