"""Synthetic microservice fault injection with provable ground truth.

Services form a random DAG whose topological order is the lexicographic order of their names. A fault
shifts one indicator of the root service; every DAG descendant at distance d sees the shift attenuated
by decay**d, d bins later, on its `serve` latency (or errors, for packet loss), and by one more factor of
decay on its `call` latency (errors) and its error log.

Every service carries four metrics, three to six log templates (one of them an error template) and two
traced operations, `serve` for incoming requests and `call` for its outgoing requests, so services differ in
their shifts rather than in indicator count. The root shifts no `call` series: its own calls do not wait on
the fault.

Fault kinds map to indicators as follows:

    cpu    -> metric `cpu`            delay -> trace `op:serve:latency`
    mem    -> metric `mem`            loss  -> trace `op:serve:errors`
    disk   -> metric `disk`
    socket -> metric `net`
"""

from collections import deque
from dataclasses import asdict, dataclass
import json
import logging
import math
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.errors import InputError
from src.telemetry.core_model import AnalysisWindow

logger = logging.getLogger(__name__)

FAULT_KINDS = ('cpu', 'mem', 'disk', 'socket', 'delay', 'loss')
FAULT_INDICATORS = {
    'cpu': ('metric', 'cpu'),
    'mem': ('metric', 'mem'),
    'disk': ('metric', 'disk'),
    'socket': ('metric', 'net'),
    'delay': ('trace', 'op:serve:latency'),
    'loss': ('trace', 'op:serve:errors'),
}

# metric: (baseline, per-sample std)
METRIC_BASELINES = {
    'cpu': (0.35, 0.03),
    'mem': (512.0, 12.0),
    'disk': (20.0, 2.0),
    'net': (150.0, 10.0),
}
SAMPLES_PER_BIN = 3
REQUESTS_PER_BIN = 20
ERROR_RATE = 2.0
ERROR_LOG_RATE = 4.0
OPERATIONS = ('serve', 'call')
MIN_TEMPLATES, MAX_TEMPLATES = 3, 6

LOG_PATTERNS = [
    'request served path=/api/{word} in {int} ms',
    'connected to {ip} port {int}',
    'cache hit ratio {float} for shard {int}',
    'session {uuid} refreshed',
    'flushed {int} records to disk',
    'gc pause {float} ms',
    'health check ok from {ip}',
]
ERROR_PATTERN = 'ERROR failed to handle request {uuid} upstream timeout after {int} ms'
WORDS = ['cart', 'user', 'order', 'item', 'search', 'checkout']

DEFAULT_T0 = 1700000000.0
DEFAULT_NORMAL_WINDOW = 600.0
DEFAULT_ABNORMAL_WINDOW = 300.0
DEFAULT_BIN = 15.0


@dataclass(frozen=True)
class SynthConfig:
    n_services: int = 12
    edge_prob: float = 0.2
    fault_kind: str = 'cpu'
    fault_magnitude: float = 8.0
    propagation_decay: float = 0.5
    blind_spot_fraction: float = 0.0
    onset_lead: float = 0.0
    seed: int = 0
    t0: float = DEFAULT_T0
    normal_window: float = DEFAULT_NORMAL_WINDOW
    abnormal_window: float = DEFAULT_ABNORMAL_WINDOW
    bin: float = DEFAULT_BIN

    def __post_init__(self) -> None:
        if self.n_services < 2:
            raise InputError('n_services must be >= 2, got %s' % self.n_services)
        if not 0.0 < self.edge_prob < 1.0:
            raise InputError('edge_prob must lie in (0, 1), got %s' % self.edge_prob)
        if self.fault_kind not in FAULT_KINDS:
            raise InputError('Unknown fault kind %r, expected one of %s' % (self.fault_kind, ', '.join(FAULT_KINDS)))
        if self.fault_magnitude <= 0:
            raise InputError('fault_magnitude must be positive, got %s' % self.fault_magnitude)
        if not 0.0 < self.propagation_decay < 1.0:
            raise InputError('propagation_decay must lie in (0, 1), got %s' % self.propagation_decay)
        if not 0.0 <= self.blind_spot_fraction <= 1.0:
            raise InputError('blind_spot_fraction must lie in [0, 1], got %s' % self.blind_spot_fraction)
        if not 0.0 <= self.onset_lead < 1.0:
            raise InputError('onset_lead must lie in [0, 1), got %s' % self.onset_lead)
        self.window()

    def window(self) -> AnalysisWindow:
        return AnalysisWindow(self.t0, self.t0 + self.normal_window, self.abnormal_window, self.bin)


@dataclass(frozen=True)
class GroundTruth:
    case_id: str
    service: str
    indicator: str
    fault_kind: str

    def to_dict(self) -> dict:
        return {'case_id': self.case_id, 'service': self.service, 'indicator': self.indicator,
                'fault': self.fault_kind}

    @classmethod
    def from_dict(cls, data: dict) -> 'GroundTruth':
        return cls(data['case_id'], data['service'], data['indicator'], data['fault'])


@dataclass(frozen=True)
class CaseFiles:
    directory: str
    metrics: str
    logs: str
    traces: str
    case: str


class MicroserviceSimulator:
    """One synthetic system: topology, baselines, the injected fault and the telemetry it produces."""

    def __init__(self, cfg: SynthConfig) -> None:
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.window = cfg.window()
        width = max(2, len(str(cfg.n_services - 1)))
        self.services = ['svc%0*d' % (width, i) for i in range(cfg.n_services)]
        n = cfg.n_services
        upper = np.triu(self.rng.random((n, n)) < cfg.edge_prob, k=1)
        self.edges = {s: [self.services[j] for j in np.flatnonzero(upper[i])] for i, s in enumerate(self.services)}
        self.root = self.services[int(self.rng.integers(n))]
        self.distances = self._descendant_distances(self.root)
        self.blind_spots = self._choose_blind_spots()
        self.onset = self.window.n_normal - int(round(cfg.onset_lead * self.window.n_normal))
        self.shifts: Dict[Tuple[str, str], float] = {}

    def _descendant_distances(self, root: str) -> Dict[str, int]:
        distances, queue = {root: 0}, deque([root])
        while queue:
            node = queue.popleft()
            for child in self.edges[node]:
                if child not in distances:
                    distances[child] = distances[node] + 1
                    queue.append(child)
        return distances

    def _choose_blind_spots(self) -> List[str]:
        count = int(round(self.cfg.blind_spot_fraction * self.cfg.n_services))
        candidates = list(self.services)
        if count < len(candidates):
            # the root keeps its traces unless every service is blind
            candidates.remove(self.root)
        chosen = self.rng.choice(len(candidates), size=min(count, len(candidates)), replace=False)
        return sorted(candidates[i] for i in chosen)

    @property
    def truth_indicator(self) -> str:
        return FAULT_INDICATORS[self.cfg.fault_kind][1]

    def _shift(self, service: str, indicator: str) -> Tuple[float, int]:
        """Injected shift, in units of the bin-level standard deviation, and its lag in bins."""
        cfg = self.cfg
        if service not in self.distances:
            return 0.0, 0
        d = self.distances[service]
        if d == 0:
            if indicator == self.truth_indicator:
                return cfg.fault_magnitude, 0
            secondary = 'op:serve:errors' if cfg.fault_kind == 'loss' else 'op:serve:latency'
            if indicator == secondary:
                return cfg.fault_magnitude * cfg.propagation_decay, 0
            if indicator == 'error_log':
                return cfg.fault_magnitude * cfg.propagation_decay ** 2, 0
            return 0.0, 0
        attenuated = cfg.fault_magnitude * cfg.propagation_decay ** d
        kind = 'errors' if cfg.fault_kind == 'loss' else 'latency'
        if indicator == 'op:serve:%s' % kind:
            return attenuated, d
        # outgoing calls wait on the faulty path one hop further up
        if indicator == 'op:call:%s' % kind:
            return attenuated * cfg.propagation_decay, d
        if indicator == 'error_log':
            return attenuated * cfg.propagation_decay, d
        return 0.0, 0

    def _profile(self, service: str, indicator: str, sigma_bin: float) -> np.ndarray:
        """Per-bin additive shift in the indicator's own units."""
        magnitude, lag = self._shift(service, indicator)
        profile = np.zeros(self.window.n_bins)
        if magnitude > 0:
            start = min(self.onset + lag, self.window.n_bins)
            profile[start:] = magnitude * sigma_bin
            self.shifts[(service, indicator)] = magnitude
        return profile

    def _bin_start(self, i) -> float:
        return self.window.t0 + i * self.window.bin

    def _stamp(self, i: int, size: int) -> np.ndarray:
        offsets = np.floor(self.rng.uniform(0.0, self.window.bin, size=size) * 1000.0) / 1000.0
        return self._bin_start(i) + offsets

    def metrics_frame(self) -> pd.DataFrame:
        n_bins = self.window.n_bins
        step = self.window.bin / SAMPLES_PER_BIN
        times = self.window.t0 + step * np.arange(n_bins * SAMPLES_PER_BIN)
        columns = {'time': times}
        for service in self.services:
            for metric, (baseline, sigma) in METRIC_BASELINES.items():
                scale = baseline * (0.5 + self.rng.random())
                sample_sigma = sigma * scale / baseline
                profile = self._profile(service, metric, sample_sigma / math.sqrt(SAMPLES_PER_BIN))
                noise = self.rng.normal(scale, sample_sigma, size=len(times))
                columns['%s_%s' % (service, metric)] = noise + np.repeat(profile, SAMPLES_PER_BIN)
        return pd.DataFrame(columns)

    def _render(self, pattern: str) -> str:
        fill = {
            'word': WORDS[int(self.rng.integers(len(WORDS)))],
            'int': str(int(self.rng.integers(1, 10000))),
            'float': '%.3f' % self.rng.random(),
            'ip': '10.%d.%d.%d' % tuple(int(v) for v in self.rng.integers(0, 256, size=3)),
            'uuid': '%08x-%04x-%04x-%04x-%012x' % tuple(int(self.rng.integers(0, 16 ** w)) for w in (8, 4, 4, 4, 12)),
        }
        return pattern.format(**fill)

    def log_lines(self) -> List[dict]:
        lines = []
        for service in self.services:
            n_templates = int(self.rng.integers(MIN_TEMPLATES, MAX_TEMPLATES + 1))
            chosen = self.rng.choice(len(LOG_PATTERNS), size=n_templates - 1, replace=False)
            templates = [(LOG_PATTERNS[i], float(self.rng.uniform(3.0, 8.0)), None) for i in sorted(chosen)]
            error_profile = self._profile(service, 'error_log', math.sqrt(ERROR_LOG_RATE))
            templates.append((ERROR_PATTERN, ERROR_LOG_RATE, error_profile))
            for pattern, rate, profile in templates:
                extra = profile if profile is not None else np.zeros(self.window.n_bins)
                counts = self.rng.poisson(rate, size=self.window.n_bins) + np.round(extra).astype(int)
                for i, count in enumerate(counts):
                    for t in self._stamp(i, int(count)):
                        lines.append({'time': float(t), 'service': service, 'message': self._render(pattern)})
        lines.sort(key=lambda line: (line['time'], line['service'], line['message']))
        return lines

    def trace_frame(self) -> pd.DataFrame:
        rows = []
        for service in self.services:
            if service in self.blind_spots:
                continue
            for operation in OPERATIONS:
                base = float(self.rng.uniform(20.0, 80.0))
                sigma = 0.15 * base
                latency_shift = self._profile(service, 'op:%s:latency' % operation, sigma / math.sqrt(REQUESTS_PER_BIN))
                error_shift = self._profile(service, 'op:%s:errors' % operation, math.sqrt(ERROR_RATE))
                for i in range(self.window.n_bins):
                    n_errors = min(REQUESTS_PER_BIN,
                                   int(self.rng.poisson(ERROR_RATE)) + int(round(error_shift[i])))
                    failed = set(self.rng.permutation(REQUESTS_PER_BIN)[:n_errors].tolist())
                    stamps = self._stamp(i, REQUESTS_PER_BIN)
                    latencies = np.maximum(0.1, self.rng.normal(base, sigma, REQUESTS_PER_BIN) + latency_shift[i])
                    for r in range(REQUESTS_PER_BIN):
                        rows.append((float(stamps[r]), '%016x' % int(self.rng.integers(0, 2 ** 62)), service,
                                     operation, float(latencies[r]), '500' if r in failed else '200'))
        frame = pd.DataFrame(rows, columns=['time', 'trace_id', 'service', 'operation', 'latency_ms', 'status'])
        return frame.sort_values(['time', 'service', 'operation', 'trace_id'], kind='mergesort')

    def check_ground_truth(self) -> None:
        # a trace-borne root shift goes unrecorded when every service is blind
        root_shift = self.cfg.fault_magnitude
        others = [v for (service, _), v in self.shifts.items() if service != self.root]
        assert all(v < root_shift for v in others), 'root carries the largest injected shift'


def generate_case(cfg: SynthConfig, out_dir, case_id: str = 'case_000') -> Tuple[CaseFiles, GroundTruth]:
    """Simulate one faulty system and write its telemetry in the ingest formats.

    :param cfg: Generator parameters.
    :param out_dir: Directory to create the case directory in.
    :param case_id: Name of the case directory.
    :return: A tuple of the written file paths and the ground truth.
    """
    sim = MicroserviceSimulator(cfg)
    directory = os.path.join(out_dir, case_id)
    os.makedirs(directory, exist_ok=True)
    files = CaseFiles(directory, *(os.path.join(directory, name)
                                   for name in ('metrics.csv', 'logs.jsonl', 'traces.csv', 'case.json')))

    sim.metrics_frame().to_csv(files.metrics, index=False, float_format='%.6f')
    with open(files.logs, 'w', encoding='utf-8') as f:
        for line in sim.log_lines():
            f.write(json.dumps(line) + '\n')
    sim.trace_frame().to_csv(files.traces, index=False, float_format='%.3f')
    sim.check_ground_truth()

    truth = GroundTruth(case_id, sim.root, sim.truth_indicator, cfg.fault_kind)
    w = sim.window
    case = {
        'case_id': case_id,
        'window': {'t0': w.t0, 'anomaly_at': w.tA, 'normal_window': w.tA - w.t0, 'abnormal_window': w.T,
                   'bin': w.bin},
        'truth': truth.to_dict(),
        'blind_spots': sim.blind_spots,
        'edges': {s: children for s, children in sim.edges.items() if children},
        'config': asdict(cfg),
    }
    with open(files.case, 'w', encoding='utf-8') as f:
        json.dump(case, f, indent=2, sort_keys=True)
    logger.debug('%s: root=%s fault=%s blind=%d', case_id, sim.root, cfg.fault_kind, len(sim.blind_spots))
    return files, truth


def read_case(path) -> Tuple[AnalysisWindow, GroundTruth]:
    """Window and ground truth from a case's `case.json`."""
    with open(path, encoding='utf-8') as f:
        case = json.load(f)
    w = case['window']
    return AnalysisWindow(w['t0'], w['anomaly_at'], w['abnormal_window'], w['bin']), \
        GroundTruth.from_dict(case['truth'])


def write_truth(truths: List[GroundTruth], path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump([t.to_dict() for t in truths], f, indent=2)
        f.write('\n')


def read_truth(path) -> List[GroundTruth]:
    try:
        with open(path, encoding='utf-8') as f:
            return [GroundTruth.from_dict(item) for item in json.load(f)]
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as e:
        raise InputError('Cannot read truth file %s: %s' % (path, e))


def case_seed(base_seed: int, index: int) -> int:
    """Independent, reproducible seed for the index-th case of a run."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def case_config(template: SynthConfig, index: int, fault_kind: Optional[str] = None) -> SynthConfig:
    """Derive a case's config from a template; fault kind `all` cycles through every kind."""
    kind = fault_kind or template.fault_kind
    if kind == 'all':
        kind = FAULT_KINDS[index % len(FAULT_KINDS)]
    values = asdict(template)
    values.update({'fault_kind': kind, 'seed': case_seed(template.seed, index)})
    return SynthConfig(**values)
