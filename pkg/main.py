"""Diagnose a microservice failure from its telemetry, generate synthetic failures, and score diagnoses."""

import argparse
from collections import Counter
import glob
import json
import logging
import os
import sys

import pandas as pd

from src.bench.suite import evaluate_reports
from src.bench.synth import FAULT_KINDS, case_config, generate_case, read_truth, write_truth
from src.errors import InputError, InsufficientDataError
from src.rca.causal_ranker import DEFAULT_ALPHA, DEFAULT_CHUNK_SIZE, DEFAULT_MAX_COND_SIZE
from src.rca.pipeline import VARIANTS, run_rca
from src.rca.report import write_report
from src.rca.symptom_cluster import DEFAULT_K_MAX, DEFAULT_TAU
from src.telemetry.core_model import DEFAULT_BIN
from src.telemetry.ingest import load_bundle, save_bundle
from src.telemetry.log_parser import DEFAULT_DEPTH, DEFAULT_SIMILARITY_THRESHOLD
from src.utils import DEFAULT_TOP_K, get_drain_config, get_rca_config, get_run_config, get_synth_config, \
    get_window

logger = logging.getLogger('torai')

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INSUFFICIENT = 3


def cmd_run(args) -> int:
    run_config = get_run_config(args)
    window = get_window(run_config)
    rca_config = get_rca_config(args)
    counters = Counter()
    bundle = load_bundle(window, run_config.metrics, run_config.logs, run_config.traces,
                         get_drain_config(args), run_config.service_map, counters)
    if run_config.dump_bundle:
        save_bundle(bundle, run_config.dump_bundle)

    try:
        report = run_rca(bundle, rca_config, counters)
    except InputError as e:
        logger.error('%s', e)
        return EXIT_INSUFFICIENT
    write_report(report, run_config.out)

    rows = []
    for s in report.services[:run_config.top_k]:
        top = s.indicators[0] if s.indicators else None
        rows.append({
            'rank': s.rank,
            'service': s.service,
            'score': '%.3g' % s.score,
            'cluster': s.cluster,
            'indicator': top.indicator if top else '',
            'gamma': '%.2f' % top.gamma if top else '',
            'template': bundle.templates.get((s.service, top.indicator), '') if top else '',
        })
    print(pd.DataFrame(rows).to_string(index=False))
    return EXIT_OK


def cmd_synth(args) -> int:
    template = get_synth_config(args, FAULT_KINDS[0] if args.fault == 'all' else None)
    os.makedirs(args.out, exist_ok=True)
    truths = []
    for index in range(args.cases):
        cfg = case_config(template, index, args.fault)
        _, truth = generate_case(cfg, args.out, 'case_%03d' % index)
        truths.append(truth)
    write_truth(truths, os.path.join(args.out, 'truth.json'))
    logger.info('wrote %d cases to %s', len(truths), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    truths = read_truth(args.truth)
    reports = {os.path.splitext(os.path.basename(path))[0]: path
               for path in sorted(glob.glob(os.path.join(args.reports, '*.json')))}
    summary = evaluate_reports(reports, truths)
    with open(args.out, 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write('\n')

    rows = [dict({'fault': 'overall'}, **summary['overall'])]
    rows += [dict({'fault': fault}, **values) for fault, values in summary['per_fault'].items()]
    print(pd.DataFrame(rows).to_string(index=False, float_format=lambda v: '%.3f' % v))
    return EXIT_OK


def _add_common(parser) -> None:
    parser.add_argument('--seed', type=int, default=0, help='Seed for every random choice')
    parser.add_argument('--threads', type=int, default=None,
                        help='Worker cap; falls back to $TORAI_THREADS, then 1')
    parser.add_argument('--debug', action='store_true', help='Log at DEBUG level on stderr')


def build_parser() -> argparse.ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=formatter)
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='Rank root causes of one failure', formatter_class=formatter)
    run.add_argument('--metrics', type=str, default=None, help='Metrics CSV: time column plus <service>_<metric>')
    run.add_argument('--logs', type=str, default=None, help='JSON Lines logs with time, service, message')
    run.add_argument('--traces', type=str, default=None,
                     help='Trace CSV: time,trace_id,service,operation,latency_ms,status')
    run.add_argument('--anomaly-at', type=float, required=True, help='Anomaly detection time, epoch seconds')
    run.add_argument('--normal-window', type=float, default=600.0, help='Seconds of normal data before the anomaly')
    run.add_argument('--abnormal-window', type=float, default=300.0, help='Seconds of data after the anomaly')
    run.add_argument('--bin', type=float, default=DEFAULT_BIN, help='Bin width in seconds')
    run.add_argument('--top-k', type=int, default=DEFAULT_TOP_K, help='Services printed to stdout')
    run.add_argument('--alpha', type=float, default=DEFAULT_ALPHA, help='Significance level of the CI tests')
    run.add_argument('--chunk-size', type=int, default=DEFAULT_CHUNK_SIZE, help='Series per causal chunk')
    run.add_argument('--max-cond-size', type=int, default=DEFAULT_MAX_COND_SIZE,
                     help='Largest conditioning set tried')
    run.add_argument('--tau', type=float, default=DEFAULT_TAU, help='Soft cluster membership threshold')
    run.add_argument('--k-max', type=int, default=DEFAULT_K_MAX, help='Most mixture components tried')
    run.add_argument('--variant', type=str, default='full',
                     help='Ranking variant: %s (the others are ablations)' % ', '.join(VARIANTS))
    run.add_argument('--drain-depth', type=int, default=DEFAULT_DEPTH, help='Drain parse tree depth')
    run.add_argument('--drain-similarity', type=float, default=DEFAULT_SIMILARITY_THRESHOLD,
                     help='Drain similarity threshold')
    run.add_argument('--service-map', type=str, default=None, help='JSON {metric column: service} overrides')
    run.add_argument('--dump-bundle', type=str, default=None, help='Also write the ingested bundle as JSON')
    run.add_argument('--out', type=str, required=True, help='Report JSON path')
    _add_common(run)
    run.set_defaults(func=cmd_run)

    synth = commands.add_parser('synth', help='Generate synthetic failure cases', formatter_class=formatter)
    synth.add_argument('--services', type=int, default=12, help='Services per case')
    synth.add_argument('--cases', type=int, default=1, help='Number of cases')
    synth.add_argument('--fault', type=str, default='cpu', choices=[*FAULT_KINDS, 'all'],
                       help='Fault kind; all cycles through every kind')
    synth.add_argument('--magnitude', type=float, default=8.0, help='Fault shift in standard deviations')
    synth.add_argument('--decay', type=float, default=0.5, help='Attenuation per propagation hop')
    synth.add_argument('--edge-prob', type=float, default=0.2, help='Dependency edge probability')
    synth.add_argument('--blind-spots', type=float, default=0.0, help='Fraction of services without traces')
    synth.add_argument('--onset-lead', type=float, default=0.0,
                       help='Fraction of the normal window the fault starts before the anomaly time')
    synth.add_argument('--out', type=str, required=True, help='Output directory')
    _add_common(synth)
    synth.set_defaults(func=cmd_synth)

    evaluate = commands.add_parser('eval', help='Score reports against ground truth', formatter_class=formatter)
    evaluate.add_argument('--reports', type=str, required=True, help='Directory of <case_id>.json reports')
    evaluate.add_argument('--truth', type=str, required=True, help='Ground truth JSON')
    evaluate.add_argument('--out', type=str, required=True, help='Summary JSON path')
    _add_common(evaluate)
    evaluate.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO, stream=sys.stderr,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    try:
        return args.func(args)
    except InsufficientDataError as e:
        logger.error('%s', e)
        return EXIT_INSUFFICIENT
    except (InputError, OSError) as e:
        logger.error('%s', e)
        return EXIT_INPUT


if __name__ == '__main__':
    sys.exit(main())
