"""
Management command to sweep the hyperparameter grid over the benchmark
instances and tabulate optimality gaps.

Usage:
    python manage.py bench --config experiments/presets/lost_demand_grid.yaml --parallelism 8
"""
from experiments.commands import ExperimentCommand
from experiments.pipeline import load_dataset, oracle_cache, run_bench


class Command(ExperimentCommand):
    help = 'Train every grid combination on every instance and report gaps to the oracle.'
    name = 'bench'

    def run(self, config, run, options):
        store = load_dataset(config, options['out'])
        result = run_bench(config, store, oracle_cache(config, options['out']))
        run.write_frame(result.runs, 'bench.csv')
        run.write_frame(result.summary, 'bench_summary.csv')
        run.write_json('run.json', {'fingerprint': config.fingerprint, 'records': result.records})

        runs = result.runs
        metrics = {
            'instances': float(runs[['underage', 'lead_time']].drop_duplicates().shape[0]),
            'combinations': float(runs['combo'].nunique()),
            'mean_gap': float(runs['gap'].mean()),
            'max_gap': float(runs['gap'].max()),
        }
        for _, row in runs.iterrows():
            metrics[f'gap.p={row["underage"]:g}.L={row["lead_time"]}.{row["combo"]}'] = float(row['gap'])
        run.write_metrics(metrics)

        self.stdout.write(result.summary.to_string(index=False))
        solved = int(runs['solved'].sum())
        style = self.style.SUCCESS if solved == len(runs) else self.style.WARNING
        self.stdout.write(style(
            f'{solved} of {len(runs)} runs within {config.bench.solved_gap}% of the oracle'
        ))
