"""The ranked root-cause report and its JSON form."""

from dataclasses import dataclass, field
import json
from typing import Dict, List, Tuple

from src.errors import InputError
from src.telemetry.core_model import AnalysisWindow, SourceKind

REPORT_VERSION = 'torai-report/1'


@dataclass(frozen=True)
class RankedIndicator:
    rank: int
    indicator: str
    source: SourceKind
    gamma: float


@dataclass(frozen=True)
class RankedService:
    rank: int
    service: str
    score: float
    cluster: int
    indicators: Tuple[RankedIndicator, ...]


@dataclass(frozen=True)
class RcaReport:
    window: AnalysisWindow
    services: Tuple[RankedService, ...]
    config: Dict[str, object]
    diagnostics: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        assert [s.rank for s in self.services] == list(range(1, len(self.services) + 1)), 'service ranks contiguous'
        assert len({s.service for s in self.services}) == len(self.services), 'each service ranked once'
        for s in self.services:
            assert [i.rank for i in s.indicators] == list(range(1, len(s.indicators) + 1))
            gammas = [i.gamma for i in s.indicators]
            assert all(a >= b for a, b in zip(gammas, gammas[1:])), 'gamma non-increasing within %s' % s.service

    @property
    def ranked_services(self) -> List[str]:
        return [s.service for s in self.services]

    def to_dict(self) -> dict:
        return {
            'version': REPORT_VERSION,
            'anomaly_at': self.window.tA,
            'config': dict(self.config),
            'services': [{
                'rank': s.rank,
                'service': s.service,
                'score': s.score,
                'cluster': s.cluster,
                'indicators': [{
                    'rank': i.rank,
                    'indicator': i.indicator,
                    'source': i.source.value,
                    'gamma': i.gamma,
                } for i in s.indicators],
            } for s in self.services],
            'diagnostics': {k: self.diagnostics[k] for k in sorted(self.diagnostics)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + '\n'


def write_report(report: RcaReport, path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(report.to_json())


def _load_report(path) -> dict:
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputError('Cannot parse report %s: %s' % (path, e))
    if not isinstance(data, dict) or data.get('version') != REPORT_VERSION:
        raise InputError('%s is not a %s report' % (path, REPORT_VERSION))
    services = data.get('services')
    if not isinstance(services, list) or not all(isinstance(s, dict) and 'rank' in s and 'service' in s
                                                 for s in services):
        raise InputError('%s: `services` must list objects with a rank and a service' % path)
    return data


def read_ranking(path) -> List[str]:
    """Ranked service names from a serialized report."""
    services = sorted(_load_report(path)['services'], key=lambda s: s['rank'])
    return [s['service'] for s in services]


def read_indicator_ranking(path, service: str) -> List[str]:
    for s in _load_report(path)['services']:
        if s['service'] == service:
            try:
                return [i['indicator'] for i in sorted(s.get('indicators', []), key=lambda i: i['rank'])]
            except (KeyError, TypeError) as e:
                raise InputError('%s: malformed indicators of %s: %s' % (path, service, e))
    return []
