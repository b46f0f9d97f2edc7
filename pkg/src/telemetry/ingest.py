"""Read metrics, logs and traces from files and turn them into aligned time series."""

from collections import Counter, defaultdict
from dataclasses import dataclass
import json
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import InputError
from src.telemetry.core_model import AnalysisWindow, SourceKind, SystemSnapshot, TelemetryBundle, TimeSeries, \
    fill_missing
from src.telemetry.log_parser import DrainConfig, LogRecord, LogTemplate, LogTemplateParser

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['time', 'trace_id', 'service', 'operation', 'latency_ms', 'status']
SUCCESS_STATUSES = {'OK', 'SUCCESS'}
BUNDLE_FORMAT = 'telemetry-bundle/1'


@dataclass(frozen=True)
class TraceRecord:
    timestamp: float
    service: str
    operation: str
    latency: float
    status: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.latency) or self.latency < 0:
            raise InputError('Trace latency must be finite and non-negative, got %s' % self.latency)


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise InputError('%s is empty' % path)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputError('Cannot parse %s: %s' % (path, e))


def _check_time(frame: pd.DataFrame, path) -> np.ndarray:
    try:
        times = pd.to_numeric(frame['time'], errors='raise').to_numpy(dtype=float)
    except (ValueError, TypeError):
        raise InputError('%s: `time` must hold epoch seconds' % path)
    if not np.all(np.isfinite(times)):
        raise InputError('%s: `time` holds missing or non-finite values' % path)
    if np.any(np.diff(times) < 0):
        raise InputError('%s: `time` is not monotonic' % path)
    return times


def split_metric_column(column: str, service_map: Optional[Dict[str, str]] = None) -> Tuple[str, str]:
    """Split a `<service>_<metric>` column on its first underscore, unless the map names the service.

    :param column: The CSV header.
    :param service_map: Optional mapping of column name to service name.
    :return: A tuple of service name and indicator name.
    """
    if service_map and column in service_map:
        service = service_map[column]
        prefix = service + '_'
        return service, column[len(prefix):] if column.startswith(prefix) and len(column) > len(prefix) else column
    service, sep, metric = column.partition('_')
    if not sep or not service or not metric:
        raise InputError('Metric column %r is not of the form <service>_<metric>' % column)
    return service, metric


def read_metrics(path, window: AnalysisWindow, service_map: Optional[Dict[str, str]] = None) -> List[TimeSeries]:
    """Read a wide metrics CSV and resample every column onto the window's bins by mean-within-bin.

    :param path: CSV with a `time` column followed by `<service>_<metric>` columns.
    :param window: The analysis window.
    :param service_map: Optional mapping of column name to service name.
    :return: One Metric series per column.
    """
    frame = _read_csv(path)
    if 'time' not in frame.columns or len(frame.columns) < 2:
        raise InputError('%s: header must be `time,<service>_<metric>,...`' % path)
    if frame.empty:
        raise InputError('%s holds no rows' % path)
    times = _check_time(frame, path)
    bins = window.bin_indexes(times)
    inside = bins >= 0

    series = []
    for column in frame.columns:
        if column == 'time':
            continue
        service, metric = split_metric_column(column, service_map)
        try:
            values = pd.to_numeric(frame[column], errors='raise').to_numpy(dtype=float)
        except (ValueError, TypeError):
            raise InputError('%s: column %r holds non-numeric values' % (path, column))
        per_bin = pd.Series(values[inside]).groupby(bins[inside]).mean()
        raw = per_bin.reindex(range(window.n_bins)).to_numpy()
        filled, missing = fill_missing(raw)
        series.append(TimeSeries(service, metric, SourceKind.METRIC, filled, missing))
    logger.debug('read %d metric series from %s', len(series), path)
    return series


def read_logs(path) -> List[LogRecord]:
    """Read JSON Lines log records with fields `time`, `service` and `message`."""
    records = []
    with open(path, encoding='utf-8') as f:
        try:
            lines = list(f)
        except UnicodeDecodeError as e:
            raise InputError('%s is not valid UTF-8: %s' % (path, e))
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            record = LogRecord(float(obj['time']), str(obj['service']), str(obj['message']))
        except (ValueError, KeyError, TypeError) as e:
            raise InputError('%s:%d: invalid log record (%s)' % (path, lineno, e))
        if not record.service or not math.isfinite(record.timestamp):
            raise InputError('%s:%d: log record needs a service and a finite time' % (path, lineno))
        records.append(record)
    return records


def read_traces(path) -> List[TraceRecord]:
    """Read a trace CSV with header `time,trace_id,service,operation,latency_ms,status`."""
    try:
        frame = pd.read_csv(path, dtype={'service': str, 'operation': str, 'status': str, 'trace_id': str},
                            keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise InputError('%s is empty' % path)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputError('Cannot parse %s: %s' % (path, e))
    if list(frame.columns) != TRACE_COLUMNS:
        raise InputError('%s: header must be `%s`' % (path, ','.join(TRACE_COLUMNS)))
    if frame.empty:
        return []
    times = _check_time(frame, path)
    try:
        latencies = pd.to_numeric(frame['latency_ms'], errors='raise').to_numpy(dtype=float)
    except (ValueError, TypeError):
        raise InputError('%s: `latency_ms` must be numeric' % path)
    return [TraceRecord(t, service, operation, latency, status)
            for t, service, operation, latency, status
            in zip(times, frame['service'], frame['operation'], latencies, frame['status'])]


def is_error_status(status: Union[str, int, float]) -> bool:
    """HTTP codes >= 400 and any string other than OK/SUCCESS count as errors."""
    text = str(status).strip()
    try:
        return float(text) >= 400
    except ValueError:
        return text.upper() not in SUCCESS_STATUSES


def parse_logs(records: Sequence[LogRecord], parser: LogTemplateParser) -> List[Tuple[LogRecord, LogTemplate]]:
    """Parse records service by service in timestamp order so each Drain tree sees a stable sequence."""
    by_service = defaultdict(list)
    for i, record in enumerate(records):
        by_service[record.service].append((record.timestamp, i, record))
    parsed = []
    for service in sorted(by_service):
        for _, _, record in sorted(by_service[service], key=lambda item: item[:2]):
            template = parser.parse(record)
            if template is not None:
                parsed.append((record, template))
    return parsed


def logs_to_series(parsed: Sequence[Tuple[LogRecord, LogTemplate]], window: AnalysisWindow,
                   counters: Optional[Counter] = None) -> List[TimeSeries]:
    """Bin template occurrences; one Log series per (service, template) seen inside the window.

    :param parsed: Records paired with their templates.
    :param window: The analysis window.
    :param counters: Optional diagnostics counter.
    :return: Zero-filled occurrence-count series.
    """
    counters = counters if counters is not None else Counter()
    occurrences = defaultdict(list)
    for record, template in parsed:
        occurrences[(record.service, template.id)].append(record.timestamp)

    series = []
    for (service, template_id), stamps in sorted(occurrences.items()):
        bins = window.bin_indexes(stamps)
        inside = bins[bins >= 0]
        counters['log_records_outside_window'] += len(bins) - len(inside)
        if len(inside) == 0:
            continue
        counts = np.bincount(inside, minlength=window.n_bins).astype(float)
        series.append(TimeSeries(service, 'log:%d' % template_id, SourceKind.LOG, counts))
    return series


def traces_to_series(records: Sequence[TraceRecord], window: AnalysisWindow,
                     counters: Optional[Counter] = None) -> List[TimeSeries]:
    """Per (service, operation): mean latency per bin (forward-filled) and error count per bin (zero-filled)."""
    counters = counters if counters is not None else Counter()
    if not records:
        return []
    frame = pd.DataFrame({
        'service': [r.service for r in records],
        'operation': [r.operation for r in records],
        'latency': [r.latency for r in records],
        'error': [1.0 if is_error_status(r.status) else 0.0 for r in records],
        'bin': window.bin_indexes([r.timestamp for r in records]),
    })
    outside = frame['bin'] < 0
    counters['trace_records_outside_window'] += int(outside.sum())
    frame = frame[~outside]

    series = []
    for (service, operation), group in frame.groupby(['service', 'operation'], sort=True):
        latency = group.groupby('bin')['latency'].mean().reindex(range(window.n_bins)).to_numpy()
        latency, missing = fill_missing(latency)
        errors = group.groupby('bin')['error'].sum().reindex(range(window.n_bins), fill_value=0.0).to_numpy()
        series.append(TimeSeries(service, 'op:%s:latency' % operation, SourceKind.TRACE, latency, missing))
        series.append(TimeSeries(service, 'op:%s:errors' % operation, SourceKind.TRACE, errors))
    return series


def build_bundle(metrics: Iterable[TimeSeries], logs: Iterable[TimeSeries], traces: Iterable[TimeSeries],
                 window: AnalysisWindow, templates: Optional[Dict[Tuple[str, str], str]] = None) -> TelemetryBundle:
    """Merge the per-source series into one bundle with per-service source availability.

    :return: The bundle; services are the sorted union over all sources.
    """
    series = [*metrics, *logs, *traces]
    if not series:
        raise InputError('No telemetry: metrics, logs and traces are all empty')
    series.sort(key=lambda ts: ts.ref.sort_key())
    snapshot = SystemSnapshot.from_names(ts.service for ts in series)
    available = defaultdict(set)
    for ts in series:
        available[ts.service].add(ts.source)
    availability = {s: frozenset(available[s]) for s in snapshot.services}
    bundle = TelemetryBundle(snapshot, window, tuple(series), availability, dict(templates or {}))
    logger.info('bundle: %d services, %d series, %d blind spots',
                snapshot.n, len(series), len(bundle.blind_spots))
    return bundle


def load_bundle(window: AnalysisWindow, metrics_path=None, logs_path=None, traces_path=None,
                drain_cfg: Optional[DrainConfig] = None, service_map: Optional[Dict[str, str]] = None,
                counters: Optional[Counter] = None) -> TelemetryBundle:
    """Read whichever telemetry files are given and build the bundle."""
    counters = counters if counters is not None else Counter()
    if not any([metrics_path, logs_path, traces_path]):
        raise InputError('At least one of metrics, logs or traces is required')

    metrics = read_metrics(metrics_path, window, service_map) if metrics_path else []
    logs, templates = [], {}
    if logs_path:
        parser = LogTemplateParser(drain_cfg)
        parsed = parse_logs(read_logs(logs_path), parser)
        logs = logs_to_series(parsed, window, counters)
        counters.update(parser.counters)
        templates = {(service, 'log:%d' % tid): t.text for (service, tid), t in parser.templates.items()}
    traces = traces_to_series(read_traces(traces_path), window, counters) if traces_path else []
    return build_bundle(metrics, logs, traces, window, templates)


def bundle_to_dict(bundle: TelemetryBundle) -> dict:
    w = bundle.window
    return {
        'format': BUNDLE_FORMAT,
        'window': {'t0': w.t0, 'tA': w.tA, 'T': w.T, 'bin': w.bin},
        'series': [{
            'service': ts.service,
            'indicator': ts.indicator,
            'source': ts.source.value,
            'values': ts.values.tolist(),
            'missing': ts.missing.tolist(),
        } for ts in bundle.series],
        'templates': [[service, indicator, text] for (service, indicator), text in sorted(bundle.templates.items())],
    }


def bundle_from_dict(data: dict) -> TelemetryBundle:
    if data.get('format') != BUNDLE_FORMAT:
        raise InputError('Unknown bundle format %r' % data.get('format'))
    try:
        window = AnalysisWindow(**data['window'])
        series = [TimeSeries(s['service'], s['indicator'], SourceKind(s['source']), s['values'], s['missing'])
                  for s in data['series']]
        templates = {(service, indicator): text for service, indicator, text in data.get('templates', [])}
    except (KeyError, TypeError) as e:
        raise InputError('Malformed bundle: %s' % e)
    return build_bundle(series, [], [], window, templates)


def save_bundle(bundle: TelemetryBundle, path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(bundle_to_dict(bundle), f)


def load_saved_bundle(path) -> TelemetryBundle:
    try:
        with open(path, encoding='utf-8') as f:
            return bundle_from_dict(json.load(f))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputError('Cannot parse bundle %s: %s' % (path, e))
