"""
Management command to fit the quantile forecaster and compare the
generalized-newsvendor policies with end-to-end HDPO on sales traces.

Usage:
    python manage.py datagen --config experiments/presets/forecast_newsvendor.yaml
    python manage.py forecast --config experiments/presets/forecast_newsvendor.yaml
"""
from experiments.commands import ExperimentCommand
from experiments.pipeline import load_dataset, run_forecast, write_forecast
from experiments.runs import flatten


class Command(ExperimentCommand):
    help = 'Train the forecaster and the newsvendor policy suite; report profits.'
    name = 'forecast'

    def run(self, config, run, options):
        store = load_dataset(config, options['out'])
        result = run_forecast(config, store, run)
        write_forecast(result, run)
        run.write_json('run.json', {
            'fingerprint': config.fingerprint,
            'forecaster': result.fit,
            'policies': result.records,
            'best_newsvendor': result.best,
        })
        metrics = dict(flatten('loss_ratio', {f'horizon_{m}': v for m, v in result.loss_ratio.items()}))
        metrics['forecaster.best_dev_loss'] = result.fit['best_dev_loss']
        for row in result.summary.itertuples(index=False):
            metrics[f'{row.name}.mean_profit'] = float(row.mean_profit)
            metrics[f'{row.name}.percent_of_jit'] = float(row.percent_of_jit)
        run.write_metrics(metrics)

        self.stdout.write(result.summary[['name', 'mean_profit', 'percent_of_jit']].to_string(index=False))
        self.stdout.write(self.style.SUCCESS(f'best admissible newsvendor policy: {result.best}'))
