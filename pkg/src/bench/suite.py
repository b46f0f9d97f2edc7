"""Generate a batch of synthetic cases, diagnose each and score the rankings."""

from collections import Counter
from dataclasses import dataclass, replace
from functools import partial
import json
import logging
import os
import time
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.bench.metrics import AccuracyTracker, rank_of
from src.bench.synth import GroundTruth, SynthConfig, case_config, generate_case, write_truth
from src.errors import InputError
from src.rca.pipeline import RcaConfig, run_rca
from src.rca.report import read_indicator_ranking, read_ranking, write_report
from src.telemetry.ingest import load_bundle
from src.workers import parallel_map

logger = logging.getLogger(__name__)

SUMMARY_FILE = 'summary.json'
CASES_FILE = 'cases.csv'
TRUTH_FILE = 'truth.json'


@dataclass(frozen=True)
class CaseResult:
    truth: GroundTruth
    ranking: List[str]
    indicator_rank: Optional[int] = None
    error: Optional[str] = None
    elapsed: Optional[float] = None

    @property
    def rank_of_truth(self) -> Optional[int]:
        return rank_of(self.ranking, self.truth.service)


def _run_case(index: int, template: SynthConfig, rca_config: RcaConfig, out_dir: str,
              fault_kind: Optional[str] = None) -> CaseResult:
    cfg = case_config(template, index, fault_kind)
    case_id = 'case_%03d' % index
    files, truth = generate_case(cfg, os.path.join(out_dir, 'cases'), case_id)
    start = time.perf_counter()
    try:
        counters = Counter()
        bundle = load_bundle(cfg.window(), files.metrics, files.logs, files.traces, counters=counters)
        report = run_rca(bundle, rca_config, counters)
    except Exception as e:
        logger.warning('%s failed: %s', case_id, e)
        return CaseResult(truth, [], error='%s: %s' % (type(e).__name__, e))
    elapsed = time.perf_counter() - start
    write_report(report, os.path.join(out_dir, 'reports', '%s.json' % case_id))

    indicator_rank = None
    for service in report.services:
        if service.service == truth.service:
            names = [i.indicator for i in service.indicators]
            indicator_rank = names.index(truth.indicator) + 1 if truth.indicator in names else None
    return CaseResult(truth, report.ranked_services, indicator_rank, elapsed=elapsed)


def summarise(results: Sequence[CaseResult]) -> dict:
    """AC@1, AC@3, AC@5 and Avg@5 per fault kind and overall, plus failure count and fine-grained top-1.

    Failed cases count as misses.
    """
    if not results:
        raise InputError('Nothing to summarise')
    tracker = AccuracyTracker()
    for result in sorted(results, key=lambda r: r.truth.case_id):
        tracker.add(result.ranking, [result.truth.service], result.truth.fault_kind,
                    indicator_hit=result.indicator_rank == 1)
    return {
        'n_cases': len(tracker),
        'failures': sum(1 for r in results if r.error is not None),
        'per_fault': tracker.per_group(),
        'overall': tracker.summary(),
        'fine_top1': tracker.fine_top1,
    }


def runtime(results: Sequence[CaseResult]) -> Optional[Dict[str, float]]:
    """Wall-clock seconds per diagnosed case, ingestion included; None when no case finished."""
    elapsed = np.array([r.elapsed for r in results if r.elapsed is not None])
    if len(elapsed) == 0:
        return None
    return {'mean_s': float(elapsed.mean()), 'median_s': float(np.median(elapsed)), 'max_s': float(elapsed.max())}


def write_summary(summary: dict, results: Sequence[CaseResult], out_dir) -> None:
    with open(os.path.join(out_dir, SUMMARY_FILE), 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write('\n')
    rows = [(r.truth.case_id, r.truth.fault_kind, r.rank_of_truth, r.elapsed)
            for r in sorted(results, key=lambda r: r.truth.case_id)]
    frame = pd.DataFrame(rows, columns=['case_id', 'fault', 'rank_of_truth', 'elapsed_s'])
    frame['rank_of_truth'] = frame['rank_of_truth'].astype('Int64')
    frame.to_csv(os.path.join(out_dir, CASES_FILE), index=False)


def run_suite(n_cases: int, template: SynthConfig, rca_config: Optional[RcaConfig] = None, out_dir: str = '.',
              fault_kind: Optional[str] = None, threads: int = 1) -> dict:
    """Generate n_cases cases with derived seeds, diagnose them and write the summary and per-case CSV.

    :param n_cases: Number of cases.
    :param template: Generator parameters shared by every case; seeds are derived per case.
    :param rca_config: Pipeline parameters.
    :param out_dir: Directory receiving cases/, reports/, truth.json, summary.json and cases.csv.
    :param fault_kind: Overrides the template's fault kind; `all` cycles through every kind.
    :param threads: Cases diagnosed in parallel.
    :return: The summary.
    """
    if n_cases < 1:
        raise InputError('n_cases must be >= 1, got %s' % n_cases)
    # cases already run in parallel; the pipeline itself stays in-process
    rca_config = replace(rca_config or RcaConfig(), threads=1)
    os.makedirs(os.path.join(out_dir, 'reports'), exist_ok=True)
    task = partial(_run_case, template=template, rca_config=rca_config, out_dir=out_dir, fault_kind=fault_kind)
    results = parallel_map(task, list(range(n_cases)), threads)

    write_truth([r.truth for r in results], os.path.join(out_dir, TRUTH_FILE))
    summary = summarise(results)
    # runtime is wall-clock time and differs between runs
    summary.update({'variant': rca_config.variant, 'runtime': runtime(results)})
    write_summary(summary, results, out_dir)
    logger.info('suite: %d cases, %d failures, overall %s', n_cases, summary['failures'], summary['overall'])
    return summary


def evaluate_reports(reports: Dict[str, str], truths: Sequence[GroundTruth]) -> dict:
    """Score existing reports, keyed by case id, against the truth file.

    :raises InputError: When report and truth case ids differ.
    """
    truth_ids = {t.case_id for t in truths}
    if len(truth_ids) != len(truths):
        raise InputError('Duplicate case ids in truth')
    if set(reports) != truth_ids:
        missing = sorted(truth_ids - set(reports))
        extra = sorted(set(reports) - truth_ids)
        raise InputError('Case ids differ: missing reports %s, reports without truth %s' % (missing, extra))
    results = []
    for truth in truths:
        path = reports[truth.case_id]
        ranking = read_ranking(path)
        indicators = read_indicator_ranking(path, truth.service)
        indicator_rank = indicators.index(truth.indicator) + 1 if truth.indicator in indicators else None
        results.append(CaseResult(truth, ranking, indicator_rank))
    return summarise(results)
