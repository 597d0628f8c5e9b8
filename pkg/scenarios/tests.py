"""
Tests for scenarios app.
"""
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from .generators import (
    DemandModel,
    PrimitiveRanges,
    days_to_anchor,
    generate,
    many_store_family,
    sample_primitives,
    synthetic_sales,
    transshipment_family,
)
from .ingest import IngestConfig, IngestError, ingest_csv
from .store import TraceStore, provenance_path


def daily_rows(trace_id, weekly_pattern, start='2016-01-04'):
    """One row per day; every day of week w sells weekly_pattern[w] units."""
    days = pd.date_range(start, periods=7 * len(weekly_pattern), freq='D')
    quantity = np.repeat(np.asarray(weekly_pattern, dtype=float), 7)
    return pd.DataFrame({'trace_id': trace_id, 'date': days.strftime('%Y-%m-%d'), 'quantity': quantity})


class GenerateTest(SimpleTestCase):
    """Test cases for synthetic demand generation."""

    def test_poisson_sample_mean(self):
        store = generate(DemandModel('poisson', mean=5.0), periods=1000, stores=1, count=1000, seed=1)
        self.assertAlmostEqual(store.demand.mean(), 5.0, delta=0.01)

    def test_correlated_normal_correlation(self):
        model = DemandModel('corr_normal', mean=(50.0, 40.0), cv=(0.2, 0.3), rho=0.5, truncate=False)
        store = generate(model, periods=1000, stores=2, count=200, seed=2)
        flat = store.demand.reshape(-1, 2)
        self.assertAlmostEqual(np.corrcoef(flat.T)[0, 1], 0.5, delta=0.01)

    def test_high_low_with_equal_levels(self):
        model = DemandModel('high_low', gamma_high=2.0, gamma_low=2.0, q=0.3, lower=1.0, upper=3.0)
        store = generate(model, periods=1000, stores=3, count=200, seed=3)
        aggregate = store.demand.sum(axis=2).ravel()
        self.assertAlmostEqual(aggregate.var() / (4.0 * 3 * (2.0 ** 2) / 12), 1.0, delta=0.02)

    def test_truncated_normal_is_nonnegative(self):
        store = generate(DemandModel('trunc_normal', mean=1.0, std=3.0), periods=50, stores=2, count=100, seed=4)
        self.assertGreaterEqual(store.demand.min(), 0.0)
        self.assertGreater((store.demand == 0).mean(), 0.2)

    def test_negative_demand_when_allowed(self):
        store = generate(DemandModel('trunc_normal', mean=1.0, std=3.0), periods=50, stores=1, count=20, seed=4,
                         allow_negative=True)
        self.assertLess(store.demand.min(), 0.0)

    def test_invalid_correlation(self):
        model = DemandModel('corr_normal', mean=5.0, cv=0.3, rho=-0.9)
        with self.assertRaises(ValueError):
            generate(model, periods=5, stores=3, count=2, seed=0)

    def test_assumption_check_refuses(self):
        with self.assertRaises(ValueError):
            DemandModel('high_low', gamma_high=2.0, gamma_low=1.0, lower=1.0, upper=3.0, enforce_assumption=True)
        DemandModel('high_low', gamma_high=1.2, gamma_low=1.0, lower=2.0, upper=2.5, enforce_assumption=True)

    def test_invalid_parameters(self):
        with self.assertRaises(ValueError):
            DemandModel('trunc_normal', mean=5.0, std=0.0)
        with self.assertRaises(ValueError):
            DemandModel('high_low', q=1.0, lower=1.0, upper=2.0)
        with self.assertRaises(ValueError):
            DemandModel('gamma')

    def test_independent_of_parallelism(self):
        model = DemandModel('corr_normal', mean=5.0, cv=0.3, rho=0.5)
        serial = generate(model, periods=20, stores=3, count=37, seed=8)
        threaded = generate(model, periods=20, stores=3, count=37, seed=8, parallelism=4)
        np.testing.assert_array_equal(serial.demand, threaded.demand)

    def test_prefix_of_larger_draw(self):
        small = generate(DemandModel('poisson', mean=3.0), periods=10, stores=1, count=5, seed=6)
        large = generate(DemandModel('poisson', mean=3.0), periods=10, stores=1, count=50, seed=6)
        np.testing.assert_array_equal(small.demand, large.demand[:5])


class PrimitivesTest(SimpleTestCase):
    """Test cases for per-scenario primitive sampling."""

    def setUp(self):
        self.rng = np.random.default_rng(12)

    def test_underage_mean(self):
        underage, _ = sample_primitives(PrimitiveRanges(underage_mean=9.0), 100_000, self.rng)
        self.assertAlmostEqual(underage.mean(), 9.0, delta=0.05)
        self.assertTrue(np.all((underage >= 9.0 * 0.7) & (underage <= 9.0 * 1.3)))

    def test_collapsed_lead_range(self):
        _, lead_times = sample_primitives(PrimitiveRanges(9.0, lead_range=(4, 4)), 1000, self.rng)
        self.assertTrue(np.all(lead_times == 4))

    def test_lead_times_uniform(self):
        _, lead_times = sample_primitives(PrimitiveRanges(9.0), 100_000, self.rng)
        for value in (4, 5, 6):
            self.assertAlmostEqual((lead_times == value).mean(), 1 / 3, delta=0.01)

    def test_rejects_nonpositive_mean(self):
        with self.assertRaises(ValueError):
            sample_primitives(PrimitiveRanges(0.0), 10, self.rng)


class FamilyTest(SimpleTestCase):
    """Test cases for instance-family samplers."""

    def test_many_store_family_ranges(self):
        family = many_store_family(20, np.random.default_rng(0))
        instance = family.instance
        self.assertEqual(instance.store_count, 20)
        self.assertTrue(np.all((instance.underage >= 6.3) & (instance.underage <= 11.7)))
        self.assertTrue(set(instance.lead_times.tolist()) <= {2, 3})
        self.assertEqual(instance.warehouse_lead_time, 6)
        self.assertEqual(family.model.rho, 0.5)

    def test_transshipment_family_allows_negative_demand(self):
        family = transshipment_family(5, 2, 9.0, 0.5, np.random.default_rng(0))
        self.assertTrue(family.instance.allow_negative_demand)
        self.assertFalse(family.model.truncate)
        self.assertTrue(np.all((family.store_cvs >= 0.16) & (family.store_cvs <= 0.32)))


class TraceStoreTest(SimpleTestCase):
    """Test cases for trace persistence and splits."""

    def setUp(self):
        self.store = generate(DemandModel('poisson', mean=4.0), periods=6, stores=2, count=10, seed=5)

    def test_splits_are_disjoint(self):
        self.store.assign_splits({'train': 5, 'dev': 3, 'test': 2})
        train, dev = self.store.split('train'), self.store.split('dev')
        np.testing.assert_array_equal(train.demand, self.store.demand[:5])
        np.testing.assert_array_equal(dev.demand, self.store.demand[5:8])
        with self.assertRaises(ValueError):
            self.store.assign_splits({'train': 8, 'dev': 3})

    def test_save_load_and_deterministic_bytes(self):
        self.store.assign_splits({'train': 6, 'test': 4})
        self.store.underage = np.full((10, 1), 9.0)
        self.store.lead_times = np.full((10, 1), 4)
        with tempfile.TemporaryDirectory() as tmp:
            first = self.store.save(Path(tmp) / 'a.traces')
            again = generate(DemandModel('poisson', mean=4.0), periods=6, stores=2, count=10, seed=5)
            again.assign_splits({'train': 6, 'test': 4})
            again.underage, again.lead_times = self.store.underage, self.store.lead_times
            second = again.save(Path(tmp) / 'b.traces')
            self.assertEqual(first.read_bytes(), second.read_bytes())
            self.assertTrue(provenance_path(first).exists())
            loaded = TraceStore.load(first)
        np.testing.assert_array_equal(loaded.demand, self.store.demand)
        self.assertEqual(loaded.splits, {'train': [0, 6], 'test': [6, 10]})
        self.assertEqual(loaded.lead_times.dtype, np.int64)
        self.assertEqual(loaded.provenance['seed'], 5)


class IngestTest(SimpleTestCase):
    """Test cases for CSV ingestion."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'sales.csv'

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, frames):
        pd.concat(frames, ignore_index=True).to_csv(self.path, index=False)

    def test_zero_week_rule(self):
        frames = [daily_rows(f'ok{i}', [1] * 20) for i in range(7)]
        frames += [daily_rows(f'sparse{i}', [1] * 16 + [0] * 4) for i in range(3)]
        self.write(frames)
        store = ingest_csv(self.path)
        self.assertEqual(len(store), 7)
        self.assertEqual(store.provenance['dropped']['zero_weeks'], 3)

    def test_first_window_rule(self):
        self.write([daily_rows('late', [0] * 16 + [5] * 4), daily_rows('ok', [2] * 20)])
        store = ingest_csv(self.path, IngestConfig(zero_week_threshold=1.1))
        self.assertEqual(store.ids, ['ok'])
        self.assertEqual(store.provenance['dropped']['first_window'], 1)

    def test_weekly_aggregation(self):
        self.write([daily_rows('t', [1, 1, 1])])
        store = ingest_csv(self.path, IngestConfig(first_window=3))
        np.testing.assert_array_equal(store.demand[0, :, 0], [7.0, 7.0, 7.0])
        self.assertEqual(store.weeks, ['2016-01-04', '2016-01-11', '2016-01-18'])
        self.assertEqual(store.covariates.shape, (1, 3, 1))

    def test_partial_boundary_weeks_dropped(self):
        frame = daily_rows('t', [1, 1, 1], start='2016-01-06')
        self.write([frame])
        store = ingest_csv(self.path, IngestConfig(first_window=2))
        self.assertEqual(store.weeks, ['2016-01-11', '2016-01-18'])

    def test_malformed_rows_are_skipped(self):
        frame = daily_rows('t', [1, 1])
        frame.loc[3, 'quantity'] = 'abc'
        frame.loc[10, 'date'] = 'not-a-date'
        self.write([frame])
        with self.assertLogs('scenarios.ingest', level='WARNING') as logs:
            store = ingest_csv(self.path, IngestConfig(first_window=2, zero_week_threshold=1.1))
        self.assertEqual(len([line for line in logs.output if 'malformed' in line]), 2)
        self.assertEqual(store.provenance['rows_skipped'], 2)
        np.testing.assert_array_equal(store.demand[0, :, 0], [6.0, 6.0])

    def test_flagged_traces_excluded(self):
        perishable = daily_rows('fish', [3] * 20).assign(perishable_flag=1)
        regular = daily_rows('rice', [3] * 20).assign(perishable_flag=0)
        self.write([perishable, regular])
        store = ingest_csv(self.path)
        self.assertEqual(store.ids, ['rice'])

    def test_empty_result(self):
        self.write([daily_rows('late', [0] * 20)])
        with self.assertRaises(IngestError):
            ingest_csv(self.path)

    def test_missing_columns(self):
        pd.DataFrame({'trace_id': ['a'], 'quantity': [1]}).to_csv(self.path, index=False)
        with self.assertRaises(IngestError):
            ingest_csv(self.path)

    def test_synthetic_sales_round_trip_through_filters(self):
        synthetic_sales(40, 60, seed=3).to_csv(self.path, index=False)
        store = ingest_csv(self.path)
        self.assertGreater(len(store), 0)
        self.assertLess(len(store), 40)
        self.assertEqual(store.periods, 60)


class DaysToAnchorTest(SimpleTestCase):
    """Test cases for the seasonal covariate."""

    def test_days_until_next_christmas(self):
        ahead = days_to_anchor(pd.to_datetime(['2016-12-20', '2016-12-25', '2016-12-26']))
        np.testing.assert_array_equal(ahead, [5.0, 0.0, 364.0])
