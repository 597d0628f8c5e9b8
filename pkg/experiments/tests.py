"""
Tests for experiments app.
"""
import json
import math
import os
import re
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import environ
import numpy as np
import pandas as pd
import yaml
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from .config import ConfigError, load_config, parse_config
from .pipeline import (
    bench_instances,
    build_dataset,
    build_policy,
    combo_label,
    load_policy,
    save_policy,
    scenario_batches,
    split_counts,
    summarize_bench,
)
from .runs import RunDirectory, RunExistsError, flatten

PRESETS = Path(__file__).resolve().parent / 'presets'


def tiny_config(name='tiny', **sections):
    config = {
        'name': name,
        'instance': {
            'topology': 'single_store', 'mode': 'backlogged',
            'underage': [9.0], 'holding': [1.0], 'lead_times': [2],
        },
        'demand': {'kind': 'poisson', 'mean': [5.0]},
        'data': {'periods': 40, 'train_scenarios': 32, 'dev_scenarios': 16, 'test_scenarios': 16},
        'architecture': {'kind': 'vanilla', 'hidden': [8, 8]},
        'train': {
            'batch_size': 16,
            'learning_rate': 0.01,
            'max_gradient_steps': 6,
            'train_horizon': {'periods': 20, 'burn_in': 5},
            'dev_horizon': {'periods': 20, 'burn_in': 5},
            'test_horizon': {'periods': 40, 'burn_in': 10},
        },
        'oracle': {'kind': 'newsvendor', 'round_actions': False},
    }
    config.update(sections)
    return config


def lost_instance(underage=4.0, lead_time=1):
    return {
        'topology': 'single_store', 'mode': 'lost',
        'underage': [underage], 'holding': [1.0], 'lead_times': [lead_time],
    }


def write_config(directory, data, filename='config.yaml'):
    path = Path(directory) / filename
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run_command(name, config_path, out, **options):
    stdout = StringIO()
    call_command(name, config=config_path, out=str(out), stdout=stdout, **options)
    return stdout.getvalue()


class EnvironmentFileTest(SimpleTestCase):
    """Test cases for reading settings from a .env file"""

    def test_env_file_values_are_typed(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / '.env'
            path.write_text('HDLAB_PARALLELISM=3\nHDLAB_LOG_LEVEL=DEBUG\n')
            with mock.patch.dict(os.environ, clear=False):
                os.environ.pop('HDLAB_PARALLELISM', None)
                os.environ.pop('HDLAB_LOG_LEVEL', None)
                environ.Env.read_env(str(path))
                env = environ.Env(HDLAB_PARALLELISM=(int, 1))
                self.assertEqual(env('HDLAB_PARALLELISM'), 3)
                self.assertEqual(env('HDLAB_LOG_LEVEL', default='INFO'), 'DEBUG')

    def test_settings_expose_typed_defaults(self):
        self.assertIsInstance(settings.HDLAB_PARALLELISM, int)
        self.assertIsInstance(settings.HDLAB_MC_SAMPLES, int)


class ConfigParsingTest(SimpleTestCase):
    """Test cases for building configs from nested mappings"""

    def test_minimal_config_uses_defaults(self):
        config = parse_config({'name': 'bare'})
        self.assertIsNone(config.instance)
        self.assertEqual(config.data.source, 'synthetic')
        self.assertEqual(config.train.batch_size, 1024)
        self.assertEqual(config.bench.depths, (2, 3))

    def test_missing_demand_field_names_the_field(self):
        with self.assertRaises(ConfigError) as raised:
            parse_config(tiny_config(demand={'mean': [5.0]}))
        self.assertEqual(raised.exception.path, 'demand.kind')

    def test_unknown_field_is_rejected(self):
        with self.assertRaises(ConfigError) as raised:
            parse_config(tiny_config(train={'batchsize': 16}))
        self.assertEqual(raised.exception.path, 'train.batchsize')

    def test_malformed_values_name_their_path(self):
        cases = [
            ({'train': {'batch_size': 'large'}}, 'train.batch_size'),
            ({'train': {'train_horizon': {'periods': 2.5}}}, 'train.train_horizon.periods'),
            ({'architecture': {'hidden': [8, 'wide']}}, 'architecture.hidden[1]'),
            ({'data': {'allow_negative': 'yes'}}, 'data.allow_negative'),
        ]
        for override, path in cases:
            with self.subTest(path=path):
                with self.assertRaises(ConfigError) as raised:
                    parse_config(tiny_config(**override))
                self.assertEqual(raised.exception.path, path)

    def test_constructor_checks_report_the_section(self):
        with self.assertRaises(ConfigError) as raised:
            parse_config(tiny_config(demand={'kind': 'gamma'}))
        self.assertEqual(raised.exception.path, 'demand')
        self.assertIn('gamma', str(raised.exception))

    def test_scalar_broadcasts_to_tuple(self):
        config = parse_config(tiny_config(architecture={'hidden': 16}))
        self.assertEqual(config.architecture.hidden, (16,))

    def test_gap_threshold_needs_an_oracle(self):
        with self.assertRaises(ConfigError) as raised:
            parse_config(tiny_config(oracle={'gap_threshold': 1.0}))
        self.assertEqual(raised.exception.path, 'oracle.gap_threshold')

    def test_oracle_must_fit_the_topology(self):
        with self.assertRaises(ConfigError) as raised:
            parse_config(tiny_config(oracle={'kind': 'dp'}))
        self.assertEqual(raised.exception.path, 'oracle.kind')
        with self.assertRaises(ConfigError) as raised:
            parse_config(tiny_config(instance=lost_instance(), demand={'kind': 'trunc_normal', 'std': [1.0]},
                                     oracle={'kind': 'dp'}))
        self.assertEqual(raised.exception.path, 'demand.kind')

    def test_infinite_cap_round_trips(self):
        config = parse_config(tiny_config(instance=lost_instance(), oracle={'kind': 'cbs', 'level': 9, 'cap': 'inf'}))
        self.assertTrue(math.isinf(config.oracle.cap))
        again = parse_config(config.to_dict())
        self.assertTrue(math.isinf(again.oracle.cap))
        self.assertEqual(again.fingerprint, config.fingerprint)

    def test_round_trip_is_lossless(self):
        config = load_config(PRESETS / 'transshipment.yaml')
        again = parse_config(config.to_dict())
        self.assertEqual(again.to_dict(), config.to_dict())
        self.assertEqual(again.fingerprint, config.fingerprint)
        np.testing.assert_array_equal(again.instance.lead_times, config.instance.lead_times)

    def test_fingerprint_ignores_output_and_parallelism(self):
        config = parse_config(tiny_config())
        moved = parse_config(dict(tiny_config(), out='/elsewhere'))
        self.assertEqual(moved.fingerprint, config.fingerprint)
        self.assertEqual(config.with_parallelism(4).fingerprint, config.fingerprint)
        self.assertEqual(config.with_parallelism(4).train.parallelism, 4)
        self.assertEqual(len(config.short_fingerprint), 12)

    def test_seed_override_changes_fingerprint(self):
        config = parse_config(tiny_config())
        reseeded = config.with_seed(7)
        self.assertEqual((reseeded.seeds.data, reseeded.seeds.init, reseeded.seeds.shuffle), (7, 7, 7))
        self.assertNotEqual(reseeded.fingerprint, config.fingerprint)
        self.assertIs(config.with_seed(None), config)

    def test_every_preset_loads(self):
        presets = sorted(PRESETS.glob('*.yaml'))
        self.assertGreaterEqual(len(presets), 9)
        for path in presets:
            with self.subTest(preset=path.name):
                config = load_config(path)
                self.assertEqual(config.name, path.stem)

    def test_unreadable_files_raise_config_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / 'missing.yaml')
            broken = Path(tmp) / 'broken.yaml'
            broken.write_text('name: [unclosed\n')
            with self.assertRaises(ConfigError):
                load_config(broken)


class RunDirectoryTest(SimpleTestCase):
    """Test cases for run directory layout and overwrite protection"""

    def test_layout_uses_name_and_fingerprint(self):
        config = parse_config(tiny_config())
        with tempfile.TemporaryDirectory() as tmp:
            run = RunDirectory(config, 'train', tmp).claim()
            self.assertEqual(run.path, Path(tmp) / 'tiny' / config.short_fingerprint / 'train')
            self.assertTrue((run.root / 'config.yaml').exists())
            self.assertEqual(run.sibling('datagen', 'traces.bin').parent.name, 'datagen')

    def test_existing_run_needs_force(self):
        config = parse_config(tiny_config())
        with tempfile.TemporaryDirectory() as tmp:
            run = RunDirectory(config, 'train', tmp).claim()
            run.write_metrics({'b': 2.0, 'a': 1.0})
            with self.assertRaises(RunExistsError):
                RunDirectory(config, 'train', tmp).claim()
            RunDirectory(config, 'train', tmp).claim(force=True)
            self.assertFalse(run.file('metrics.csv').exists())

    def test_metrics_are_sorted(self):
        config = parse_config(tiny_config())
        with tempfile.TemporaryDirectory() as tmp:
            run = RunDirectory(config, 'oracle', tmp).claim()
            frame = pd.read_csv(run.write_metrics({'b': 2.0, 'a': 1.0}))
            self.assertEqual(frame['metric'].tolist(), ['a', 'b'])

    def test_flatten_keeps_numbers_only(self):
        pairs = dict(flatten('', {'cost': 1.5, 'nested': {'steps': 3, 'label': 'x'}, 'ok': True}))
        self.assertEqual(pairs, {'cost': 1.5, 'nested.steps': 3.0, 'ok': 1.0})


class PipelineTest(SimpleTestCase):
    """Test cases for datasets, policy construction and checkpoints"""

    def test_split_counts_give_the_remainder_to_test(self):
        self.assertEqual(split_counts(10, (0.5, 0.25, 0.25)), {'train': 5, 'dev': 2, 'test': 3})

    def test_dataset_has_configured_splits(self):
        config = parse_config(tiny_config())
        with tempfile.TemporaryDirectory() as tmp:
            store = build_dataset(config, tmp)
        self.assertEqual(store.demand.shape, (64, 40, 1))
        self.assertEqual(store.splits, {'train': [0, 32], 'dev': [32, 48], 'test': [48, 64]})

    def test_per_scenario_primitives(self):
        config = parse_config(tiny_config(
            data={'periods': 40, 'train_scenarios': 8, 'dev_scenarios': 4, 'test_scenarios': 4,
                  'primitives': {'underage_mean': 5.0, 'lead_range': [1, 3]}},
            oracle={},
        ))
        with tempfile.TemporaryDirectory() as tmp:
            store = build_dataset(config, tmp)
        self.assertEqual(store.underage.shape, (16, 1))
        self.assertTrue(set(np.unique(store.lead_times)) <= {1, 2, 3})
        batches = scenario_batches(config, store, config.instance)
        for batch in batches.values():
            self.assertEqual(batch.initial.pipeline.shape[2], int(store.lead_times.max()) - 1)

    def test_checkpoint_reloads_into_the_same_architecture(self):
        config = parse_config(tiny_config())
        with tempfile.TemporaryDirectory() as tmp:
            store = build_dataset(config, tmp)
            batches = scenario_batches(config, store, config.instance)
            policy = build_policy(config, config.instance, batches['train'], label='other')
            path = save_policy(policy, config, Path(tmp) / 'checkpoint.bin')
            loaded = load_policy(config, config.instance, batches['train'], path)
            self.assertEqual(loaded.params.names, policy.params.names)
            for name, array in policy.params.items():
                np.testing.assert_array_equal(loaded.params[name], array)
            np.testing.assert_array_equal(loaded.max_order, policy.max_order)
            with self.assertRaises(ValueError):
                load_policy(config.with_seed(9), config.instance, batches['test'], path)


class BenchTableTest(SimpleTestCase):
    """Test cases for the benchmark grid and its summary table"""

    def test_grid_covers_every_instance(self):
        config = parse_config(tiny_config(instance=lost_instance(), oracle={'kind': 'dp'}))
        instances = list(bench_instances(config))
        self.assertEqual(len(instances), 16)
        underage, lead_time, variant = instances[5]
        self.assertEqual((underage, lead_time), (9.0, 2))
        self.assertEqual(variant.instance.underage.tolist(), [9.0])
        self.assertEqual(variant.instance.lead_times.tolist(), [2])

    def test_twelve_combinations_by_default(self):
        bench = parse_config({'name': 'grid'}).bench
        combos = {combo_label(lr, depth, batch)
                  for lr in bench.learning_rates for depth in bench.depths for batch in bench.batch_sizes}
        self.assertEqual(len(combos), 12)

    def test_summary_counts_solved_instances(self):
        runs = pd.DataFrame({
            'combo': ['a', 'a', 'b', 'b'],
            'gap': [0.1, 0.3, 0.2, 0.05],
            'rounding': [0.0, 0.01, 0.02, 0.0],
        })
        table = summarize_bench(runs, 0.25).set_index('metric')
        self.assertEqual(list(table.columns), ['a', 'b'])
        self.assertAlmostEqual(table.loc['Average opt. gap (%)', 'a'], 0.2)
        self.assertAlmostEqual(table.loc['Max opt. gap (%)', 'b'], 0.2)
        self.assertEqual(table.loc['Instances solved (#)', 'a'], 1)
        self.assertEqual(table.loc['Instances solved (#)', 'b'], 2)


class DatagenCommandTest(SimpleTestCase):
    """Test cases for the datagen management command"""

    def test_same_config_gives_identical_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            run_command('datagen', path, Path(tmp) / 'one')
            run_command('datagen', path, Path(tmp) / 'two')
            fp = load_config(path).short_fingerprint
            for name in ('traces.bin', 'metrics.csv', 'traces.bin.provenance.json'):
                first = Path(tmp) / 'one' / 'tiny' / fp / 'datagen' / name
                second = Path(tmp) / 'two' / 'tiny' / fp / 'datagen' / name
                self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_rerun_requires_force(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            run_command('datagen', path, tmp)
            with self.assertRaises(CommandError):
                run_command('datagen', path, tmp)
            output = run_command('datagen', path, tmp, force=True)
            self.assertIn('Wrote 64 traces', output)

    def test_missing_demand_field_fails(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config(demand={'mean': [5.0]}))
            with self.assertRaises(CommandError) as raised:
                run_command('datagen', path, tmp)
            self.assertIn('demand.kind', str(raised.exception))

    def test_seed_flag_moves_the_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            run_command('datagen', path, tmp)
            run_command('datagen', path, tmp, seed=11)
            self.assertEqual(len(list((Path(tmp) / 'tiny').iterdir())), 2)


class OracleCommandTest(SimpleTestCase):
    """Test cases for the oracle management command"""

    def test_lost_demand_dp_cost(self):
        config = tiny_config(instance=lost_instance(4.0, 1), oracle={'kind': 'dp'})
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, config)
            output = run_command('oracle', path, tmp)
            cost = float(re.search(r'dp oracle cost (\d+\.\d+)', output).group(1))
            self.assertAlmostEqual(cost, 4.04, delta=0.005)
            cache = json.loads((Path(tmp) / 'oracle_cache.json').read_text())
            self.assertEqual(len(cache), 1)
            again = run_command('oracle', path, tmp, force=True)
            self.assertIn(f'dp oracle cost {cost:.4f}', again)

    def test_simulated_oracle_needs_datagen(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            with self.assertRaises(CommandError) as raised:
                run_command('oracle', path, tmp)
            self.assertIn('datagen', str(raised.exception))

    def test_newsvendor_oracle_after_datagen(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            run_command('datagen', path, tmp)
            output = run_command('oracle', path, tmp)
            self.assertIn('newsvendor oracle cost', output)
            metrics = pd.read_csv(Path(tmp) / 'tiny' / load_config(path).short_fingerprint / 'oracle' / 'metrics.csv')
            self.assertIn('level', metrics['metric'].tolist())


class TrainEvalCommandTest(SimpleTestCase):
    """Test cases for the train and eval management commands"""

    def test_train_writes_record_and_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            run_command('datagen', path, tmp)
            output = run_command('train', path, tmp)
            self.assertIn('Stopped on max_gradient_steps after 6 steps', output)
            run = Path(tmp) / 'tiny' / load_config(path).short_fingerprint / 'train'
            record = json.loads((run / 'run.json').read_text())
            self.assertEqual(record['best_checkpoint'], 'checkpoint.bin')
            self.assertIn('test_cost', record['test_metrics'])
            self.assertTrue((run / 'progress.csv').exists())
            self.assertTrue((run / 'checkpoint.bin').exists())

    def test_train_without_dataset_fails(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            with self.assertRaises(CommandError):
                run_command('train', path, tmp)

    def test_metrics_are_reproducible(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            fp = load_config(path).short_fingerprint
            for out in ('one', 'two'):
                run_command('datagen', path, Path(tmp) / out)
                run_command('train', path, Path(tmp) / out, parallelism=2 if out == 'two' else 1)
            first = Path(tmp) / 'one' / 'tiny' / fp / 'train' / 'metrics.csv'
            second = Path(tmp) / 'two' / 'tiny' / fp / 'train' / 'metrics.csv'
            self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_eval_reports_gap_and_enforces_threshold(self):
        with tempfile.TemporaryDirectory() as tmp:
            loose = write_config(tmp, tiny_config(oracle={'kind': 'newsvendor', 'gap_threshold': 1e6,
                                                          'round_actions': False}))
            run_command('datagen', loose, tmp)
            run_command('train', loose, tmp)
            output = run_command('eval', loose, tmp)
            self.assertRegex(output, r'newsvendor oracle \d+\.\d+, gap -?\d+\.\d+%')
            run = Path(tmp) / 'tiny' / load_config(loose).short_fingerprint / 'eval'
            metrics = pd.read_csv(run / 'metrics.csv').set_index('metric')['value']
            cost, oracle = metrics['test_cost'], metrics['oracle_cost']
            self.assertAlmostEqual(metrics['gap_percent'], 100.0 * (cost - oracle) / oracle)

            strict = write_config(tmp, tiny_config(oracle={'kind': 'newsvendor', 'gap_threshold': -1e6,
                                                           'round_actions': False}), 'strict.yaml')
            run_command('datagen', strict, tmp)
            run_command('train', strict, tmp)
            with self.assertRaises(CommandError) as raised:
                run_command('eval', strict, tmp)
            self.assertIn('exceeds the threshold', str(raised.exception))

    def test_eval_reloads_the_trained_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            run_command('datagen', path, tmp)
            run_command('train', path, tmp)
            root = Path(tmp) / 'tiny' / load_config(path).short_fingerprint
            run_command('eval', path, tmp, checkpoint=str(root / 'train' / 'checkpoint.bin'))
            trained = json.loads((root / 'train' / 'run.json').read_text())
            evaluated = json.loads((root / 'eval' / 'run.json').read_text())
            self.assertAlmostEqual(evaluated['metrics']['test_cost'], trained['test_metrics']['test_cost'])

    def test_eval_rejects_a_checkpoint_from_another_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = write_config(tmp, tiny_config())
            run_command('datagen', first, tmp)
            run_command('train', first, tmp)
            checkpoint = Path(tmp) / 'tiny' / load_config(first).short_fingerprint / 'train' / 'checkpoint.bin'
            other = write_config(tmp, tiny_config(architecture={'kind': 'vanilla', 'hidden': [4]}), 'other.yaml')
            run_command('datagen', other, tmp)
            with self.assertRaises(CommandError) as raised:
                run_command('eval', other, tmp, checkpoint=str(checkpoint))
            self.assertIn('was trained under config', str(raised.exception))

    def test_eval_without_checkpoint_fails(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, tiny_config())
            run_command('datagen', path, tmp)
            with self.assertRaises(CommandError) as raised:
                run_command('eval', path, tmp)
            self.assertIn('run train', str(raised.exception))


class BenchCommandTest(SimpleTestCase):
    """Test cases for the bench management command"""

    def test_small_grid_writes_tables(self):
        config = tiny_config(
            instance=lost_instance(),
            oracle={'kind': 'dp'},
            bench={'learning_rates': [0.01, 0.001], 'depths': [2], 'width': 4, 'batch_sizes': [16],
                   'underages': [4.0], 'lead_times': [1]},
        )
        config['train']['max_gradient_steps'] = 3
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, config)
            run_command('datagen', path, tmp)
            output = run_command('bench', path, tmp)
            self.assertIn('Instances solved (#)', output)
            run = Path(tmp) / 'tiny' / load_config(path).short_fingerprint / 'bench'
            runs = pd.read_csv(run / 'bench.csv')
            self.assertEqual(len(runs), 2)
            self.assertEqual(sorted(runs['learning_rate']), [0.001, 0.01])
            self.assertTrue(np.allclose(runs['oracle_cost'], runs['oracle_cost'].iloc[0]))
            summary = pd.read_csv(run / 'bench_summary.csv')
            self.assertEqual(len(summary.columns), 3)


class TheoryCommandTest(SimpleTestCase):
    """Test cases for the theory management command"""

    def test_gap_scaling_outputs(self):
        config = {
            'name': 'scaling',
            'theory': {'store_counts': [4, 8, 16, 32], 'scenarios': 40, 'periods': 15},
        }
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, config)
            output = run_command('theory', path, tmp)
            self.assertIn('fitted exponent', output)
            run = Path(tmp) / 'scaling' / load_config(path).short_fingerprint / 'theory'
            table = pd.read_csv(run / 'gap_scaling.csv')
            self.assertEqual(table['stores'].tolist(), [4, 8, 16, 32])
            levels = json.loads((run / 'base_levels.json').read_text())
            self.assertEqual(sorted(levels, key=int), ['4', '8', '16', '32'])

    def test_too_few_store_counts_fail(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, {'name': 'short', 'theory': {'store_counts': [4, 16]}})
            with self.assertRaises(CommandError):
                run_command('theory', path, tmp)


class ForecastCommandTest(SimpleTestCase):
    """Test cases for the forecast management command"""

    @tag('slow')
    def test_suite_on_synthetic_sales(self):
        config = {
            'name': 'forecast',
            'data': {'source': 'synthetic_sales', 'sales_traces': 40, 'sales_weeks': 60},
            'train': {
                'batch_size': 8, 'max_gradient_steps': 3,
                'train_horizon': {'periods': 30, 'burn_in': 0},
                'dev_horizon': {'periods': 30, 'burn_in': 0},
            },
            'forecast': {'hidden': [8], 'max_steps': 5, 'evaluate_every': 5, 'policy_hidden': [8]},
        }
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, config)
            run_command('datagen', path, tmp)
            output = run_command('forecast', path, tmp)
            self.assertIn('best admissible newsvendor policy', output)
            run = Path(tmp) / 'forecast' / load_config(path).short_fingerprint / 'forecast'
            summary = pd.read_csv(run / 'summary.csv')
            self.assertIn('hdpo_vanilla', summary['name'].tolist())
            self.assertTrue((run / 'forecaster.bin').exists())
            self.assertTrue((run / 'calibration.csv').exists())
            self.assertTrue((run / 'implied_newsvendor.csv').exists())
