"""
Weekly demand traces from daily sales CSVs.

Expected columns: trace_id, date, quantity and optionally flag columns such
as perishable_flag. Daily rows are summed into ISO weeks (Monday start);
weeks only partly covered by the data range are dropped.
"""
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from scenarios.generators import days_to_anchor
from scenarios.store import TraceStore

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ('trace_id', 'date', 'quantity')


class IngestError(ValueError):
    """The CSV cannot produce any usable trace."""


@dataclass(frozen=True)
class IngestConfig:
    start: Optional[str] = None
    end: Optional[str] = None
    first_window: int = 16
    min_first_window_sales: float = 1.0
    zero_week_threshold: float = 0.1
    exclude_flags: Tuple[str, ...] = ('perishable_flag',)
    anchor: Tuple[int, int] = (12, 25)

    def to_dict(self) -> dict:
        return asdict(self)


def _clean_rows(frame: pd.DataFrame) -> Tuple[pd.DataFrame, int]:
    dates = pd.to_datetime(frame['date'], errors='coerce')
    quantity = pd.to_numeric(frame['quantity'], errors='coerce')
    trace = frame['trace_id'].fillna('').astype(str).str.strip()
    bad = dates.isna() | quantity.isna() | (quantity < 0) | (trace == '')
    for index in np.flatnonzero(bad.to_numpy()):
        # +2: header line and 1-based numbering
        logger.warning('skipping malformed row %d: %s', index + 2, frame.iloc[index].to_dict())
    clean = frame.loc[~bad].copy()
    clean['trace_id'] = trace[~bad]
    clean['date'] = dates[~bad].dt.normalize()
    clean['quantity'] = quantity[~bad].astype(float)
    return clean, int(bad.sum())


def weekly_totals(rows: pd.DataFrame) -> pd.DataFrame:
    """Traces x ISO-week-start table of summed quantities over complete weeks."""
    if rows.empty:
        return pd.DataFrame()
    first_day, last_day = rows['date'].min(), rows['date'].max()
    week_start = rows['date'] - pd.to_timedelta(rows['date'].dt.dayofweek, unit='D')
    complete = (week_start >= first_day) & (week_start + pd.Timedelta(days=6) <= last_day)
    rows = rows.assign(week=week_start)[complete]
    if rows.empty:
        return pd.DataFrame()
    table = rows.pivot_table(index='trace_id', columns='week', values='quantity', aggfunc='sum', fill_value=0.0)
    if table.empty:
        return table
    weeks = pd.date_range(table.columns.min(), table.columns.max(), freq='7D')
    return table.reindex(columns=weeks, fill_value=0.0).sort_index()


def ingest_csv(path: Path, config: Optional[IngestConfig] = None) -> TraceStore:
    """
    Read, aggregate and filter daily sales.

    Drops, in order: traces carrying any exclusion flag, rows outside the
    date range, traces without ``min_first_window_sales`` units in their
    first ``first_window`` weeks, and traces with zero sales in at least
    ``zero_week_threshold`` of the weeks. Counts per filter land in the
    store's provenance under ``dropped``.
    """
    config = config or IngestConfig()
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[''])
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestError(f'cannot read {path}: {exc}') from exc
    missing = [column for column in REQUIRED_COLUMNS if column not in frame.columns]
    if missing:
        raise IngestError(f'{path} is missing columns {missing}')

    rows, skipped = _clean_rows(frame)
    dropped = {}

    flagged = set()
    for flag in config.exclude_flags:
        if flag in rows.columns:
            marks = pd.to_numeric(rows[flag], errors='coerce').fillna(0) != 0
            flagged |= set(rows.loc[marks, 'trace_id'])
    dropped['flagged'] = len(flagged)
    rows = rows[~rows['trace_id'].isin(flagged)]

    if config.start is not None:
        rows = rows[rows['date'] >= pd.Timestamp(config.start)]
    if config.end is not None:
        rows = rows[rows['date'] <= pd.Timestamp(config.end)]

    table = weekly_totals(rows)
    if table.empty:
        raise IngestError(f'{path} has no complete weeks of usable sales')

    values = table.to_numpy(dtype=np.float64)
    first = values[:, :config.first_window].sum(axis=1) >= config.min_first_window_sales
    dropped['first_window'] = int((~first).sum())
    values, ids = values[first], table.index[first]

    sparse = (values == 0).mean(axis=1) >= config.zero_week_threshold
    dropped['zero_weeks'] = int(sparse.sum())
    values, ids = values[~sparse], ids[~sparse]

    for name, count in dropped.items():
        logger.info('ingest filter %s dropped %d traces', name, count)
    if values.shape[0] == 0:
        raise IngestError(f'every trace in {path} was removed by the filters {dropped}')

    weeks = table.columns
    ahead = np.broadcast_to(days_to_anchor(weeks, config.anchor), values.shape)
    return TraceStore(
        demand=values[:, :, None].copy(),
        covariates=ahead[:, :, None].copy(),
        ids=[str(i) for i in ids],
        weeks=[week.strftime('%Y-%m-%d') for week in weeks],
        provenance={
            'source': path.name,
            'config': config.to_dict(),
            'rows_skipped': skipped,
            'dropped': dropped,
            'retained': int(values.shape[0]),
        },
    )
