"""Configuration builders turning parsed command-line arguments into typed configs."""

from dataclasses import dataclass
import json
import logging
import os
from typing import Dict, Optional

from src.bench.synth import SynthConfig
from src.errors import InputError
from src.rca.pipeline import RcaConfig
from src.telemetry.core_model import AnalysisWindow
from src.telemetry.log_parser import DrainConfig

logger = logging.getLogger(__name__)

THREADS_ENV = 'TORAI_THREADS'
DEFAULT_TOP_K = 5


@dataclass(frozen=True)
class RunConfig:
    anomaly_at: float
    normal_window: float
    abnormal_window: float
    out: str
    bin: float = 15.0
    metrics: Optional[str] = None
    logs: Optional[str] = None
    traces: Optional[str] = None
    top_k: int = DEFAULT_TOP_K
    service_map: Optional[Dict[str, str]] = None
    dump_bundle: Optional[str] = None

    def __post_init__(self) -> None:
        if not any([self.metrics, self.logs, self.traces]):
            raise InputError('At least one of --metrics, --logs or --traces is required')
        for name in ('normal_window', 'abnormal_window', 'bin'):
            if getattr(self, name) <= 0:
                raise InputError('%s must be positive, got %s' % (name, getattr(self, name)))
        if self.top_k < 1:
            raise InputError('top_k must be >= 1, got %s' % self.top_k)


def get_thread_count(args) -> int:
    """`--threads` wins, then the TORAI_THREADS environment variable, then a single thread.

    :param args: Command line arguments.
    :return: The worker cap, at least 1.
    """
    threads = getattr(args, 'threads', None)
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw.strip() == '':
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise InputError('%s must be an integer, got %r' % (THREADS_ENV, raw))
    if threads < 1:
        raise InputError('Thread count must be >= 1, got %s' % threads)
    return threads


def load_service_map(path) -> Optional[Dict[str, str]]:
    """Read a JSON object mapping metric column names to service names."""
    if path is None:
        return None
    try:
        with open(path, encoding='utf-8') as f:
            mapping = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputError('Cannot parse service map %s: %s' % (path, e))
    if not isinstance(mapping, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()):
        raise InputError('Service map %s must be a JSON object of column -> service' % path)
    return mapping


def get_run_config(args) -> RunConfig:
    return RunConfig(
        anomaly_at=args.anomaly_at,
        normal_window=args.normal_window,
        abnormal_window=args.abnormal_window,
        out=args.out,
        bin=args.bin,
        metrics=args.metrics,
        logs=args.logs,
        traces=args.traces,
        top_k=args.top_k,
        service_map=load_service_map(args.service_map),
        dump_bundle=args.dump_bundle,
    )


def get_window(run_config: RunConfig) -> AnalysisWindow:
    """The analysis window ending the normal period at the anomaly detection time.

    :raises InsufficientDataError: When the normal period holds fewer than two bins.
    """
    return AnalysisWindow(
        t0=run_config.anomaly_at - run_config.normal_window,
        tA=run_config.anomaly_at,
        T=run_config.abnormal_window,
        bin=run_config.bin,
    )


def get_drain_config(args) -> DrainConfig:
    return DrainConfig(depth=args.drain_depth, similarity_threshold=args.drain_similarity)


def get_rca_config(args, variant: Optional[str] = None) -> RcaConfig:
    """Analysis config from the run flags; `variant` overrides `--variant` when given."""
    return RcaConfig(
        alpha=args.alpha,
        chunk_size=args.chunk_size,
        max_cond_size=args.max_cond_size,
        tau=args.tau,
        k_max=args.k_max,
        seed=args.seed,
        threads=get_thread_count(args),
        variant=variant or getattr(args, 'variant', 'full'),
    )


def get_synth_config(args, fault_kind: Optional[str] = None) -> SynthConfig:
    """Template generator config; per-case seeds and `all` fault kinds are resolved by the suite.

    :param args: Command line arguments.
    :param fault_kind: Concrete fault kind to use in place of `--fault`.
    """
    return SynthConfig(
        n_services=args.services,
        edge_prob=args.edge_prob,
        fault_kind=fault_kind or args.fault,
        fault_magnitude=args.magnitude,
        propagation_decay=args.decay,
        blind_spot_fraction=args.blind_spots,
        onset_lead=args.onset_lead,
        seed=args.seed,
    )
