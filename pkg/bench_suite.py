"""Run the synthetic benchmark suite, optionally sweeping the share of services without traces and the ranking
variants."""

import argparse
import json
import logging
import os
import sys

import pandas as pd

from src.bench.suite import run_suite
from src.bench.synth import FAULT_KINDS
from src.errors import InputError
from src.rca.causal_ranker import DEFAULT_ALPHA, DEFAULT_CHUNK_SIZE, DEFAULT_MAX_COND_SIZE
from src.rca.pipeline import VARIANTS
from src.rca.symptom_cluster import DEFAULT_K_MAX, DEFAULT_TAU
from src.utils import get_rca_config, get_synth_config, get_thread_count

logger = logging.getLogger('torai.bench')


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('--cases', type=int, default=60, help='Cases per blind-spot level')
    parser.add_argument('--services', type=int, default=12, help='Services per case')
    parser.add_argument('--fault', type=str, default='all', choices=[*FAULT_KINDS, 'all'], help='Fault kind')
    parser.add_argument('--magnitude', type=float, default=8.0, help='Fault shift in standard deviations')
    parser.add_argument('--decay', type=float, default=0.5, help='Attenuation per propagation hop')
    parser.add_argument('--edge-prob', type=float, default=0.2, help='Dependency edge probability')
    parser.add_argument('--blind-spots', type=float, default=0.3, help='Blind-spot fraction without a sweep')
    parser.add_argument('--blind-spot-levels', type=float, nargs='*', default=None,
                        help='Blind-spot fractions to sweep, e.g. 0 0.5 1.0')
    parser.add_argument('--onset-lead', type=float, default=0.0, help='Fault onset before the anomaly time')
    parser.add_argument('--alpha', type=float, default=DEFAULT_ALPHA, help='Significance level of the CI tests')
    parser.add_argument('--chunk-size', type=int, default=DEFAULT_CHUNK_SIZE, help='Series per causal chunk')
    parser.add_argument('--max-cond-size', type=int, default=DEFAULT_MAX_COND_SIZE, help='Largest conditioning set')
    parser.add_argument('--tau', type=float, default=DEFAULT_TAU, help='Soft cluster membership threshold')
    parser.add_argument('--k-max', type=int, default=DEFAULT_K_MAX, help='Most mixture components tried')
    parser.add_argument('--variant', type=str, nargs='*', default=['full'], choices=[*VARIANTS, 'all'],
                        help='Ranking variants to run; all runs every ablation')
    parser.add_argument('--seed', type=int, default=0, help='Base seed; case seeds derive from it')
    parser.add_argument('--threads', type=int, default=None, help='Cases run in parallel')
    parser.add_argument('--out', type=str, default='bench_results', help='Output directory')
    parser.add_argument('--debug', action='store_true', help='Log at DEBUG level')
    args = parser.parse_args()

    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO, stream=sys.stderr)
    try:
        threads = get_thread_count(args)
        levels = args.blind_spot_levels if args.blind_spot_levels else [args.blind_spots]
        variants = list(VARIANTS) if 'all' in args.variant else list(dict.fromkeys(args.variant))
        sweeping = len(levels) * len(variants) > 1
        rows = []
        for level in levels:
            args.blind_spots = level
            template = get_synth_config(args, FAULT_KINDS[0] if args.fault == 'all' else None)
            for variant in variants:
                out_dir = args.out
                if len(levels) > 1:
                    out_dir = os.path.join(out_dir, 'blind_%.2f' % level)
                if len(variants) > 1:
                    out_dir = os.path.join(out_dir, variant)
                summary = run_suite(args.cases, template, get_rca_config(args, variant), out_dir, args.fault, threads)
                rows.append(dict({'blind_spots': level, 'variant': variant, 'failures': summary['failures'],
                                  'fine_top1': summary['fine_top1'],
                                  'mean_s': (summary['runtime'] or {}).get('mean_s')},
                                 **summary['overall']))
    except InputError as e:
        logger.error('%s', e)
        sys.exit(2)

    sweep = pd.DataFrame(rows)
    if sweeping:
        sweep.to_csv(os.path.join(args.out, 'sweep.csv'), index=False)
        with open(os.path.join(args.out, 'sweep.json'), 'w', encoding='utf-8') as f:
            json.dump(rows, f, indent=2)
            f.write('\n')
    print(sweep.to_string(index=False, float_format=lambda v: '%.3f' % v))
