import json

import pandas as pd
import pytest

from src.bench.suite import CASES_FILE, SUMMARY_FILE, TRUTH_FILE, CaseResult, evaluate_reports, run_suite, \
    summarise
from src.bench.synth import GroundTruth, SynthConfig, read_truth
from src.errors import InputError
from src.rca.pipeline import RcaConfig
from src.rca.report import REPORT_VERSION


def fake_report(path, ranking, indicators=()):
    services = [{'rank': i + 1, 'service': s, 'score': 0.5, 'cluster': 0,
                 'indicators': [{'rank': j + 1, 'indicator': name, 'source': 'metric', 'gamma': 1.0}
                                for j, name in enumerate(indicators)]}
                for i, s in enumerate(ranking)]
    path.write_text(json.dumps({'version': REPORT_VERSION, 'services': services}), encoding='utf-8')
    return str(path)


def test_run_suite_writes_its_outputs(tmp_path):
    summary = run_suite(3, SynthConfig(n_services=8, seed=4), out_dir=str(tmp_path), fault_kind='all')
    assert summary['n_cases'] == 3
    assert summary['failures'] == 0
    assert list(summary['per_fault']) == ['cpu', 'disk', 'mem']
    assert set(summary['overall']) == {'ac1', 'ac3', 'ac5', 'avg5'}
    assert 0.0 <= summary['fine_top1'] <= 1.0
    assert summary['variant'] == 'full'
    assert set(summary['runtime']) == {'mean_s', 'median_s', 'max_s'}
    assert 0.0 < summary['runtime']['mean_s'] <= summary['runtime']['max_s']

    with open(tmp_path / SUMMARY_FILE, encoding='utf-8') as f:
        assert json.load(f) == summary
    cases = pd.read_csv(tmp_path / CASES_FILE)
    assert list(cases.columns) == ['case_id', 'fault', 'rank_of_truth', 'elapsed_s']
    assert (cases['elapsed_s'] > 0).all()
    assert cases['case_id'].tolist() == ['case_000', 'case_001', 'case_002']
    assert [t.case_id for t in read_truth(str(tmp_path / TRUTH_FILE))] == cases['case_id'].tolist()
    assert sorted(p.name for p in (tmp_path / 'reports').iterdir()) == \
        ['case_000.json', 'case_001.json', 'case_002.json']


def test_run_suite_is_reproducible(tmp_path):
    template = SynthConfig(n_services=6, seed=9)
    first = run_suite(1, template, out_dir=str(tmp_path / 'a'))
    second = run_suite(1, template, out_dir=str(tmp_path / 'b'))
    assert first.pop('runtime') is not None and second.pop('runtime') is not None
    assert first == second
    assert (tmp_path / 'a' / 'reports' / 'case_000.json').read_bytes() == \
        (tmp_path / 'b' / 'reports' / 'case_000.json').read_bytes()


def test_run_suite_ablation_variant(tmp_path):
    summary = run_suite(2, SynthConfig(n_services=6, seed=1), RcaConfig(variant='severity'), out_dir=str(tmp_path))
    assert summary['variant'] == 'severity'
    with open(tmp_path / 'reports' / 'case_000.json', encoding='utf-8') as f:
        report = json.load(f)
    assert report['config']['variant'] == 'severity'
    assert {s['cluster'] for s in report['services']} == {0}


def test_run_suite_needs_cases(tmp_path):
    with pytest.raises(InputError):
        run_suite(0, SynthConfig(), out_dir=str(tmp_path))


def test_summarise_counts_failures_as_misses():
    truth = GroundTruth('case_000', 'a', 'cpu', 'cpu')
    summary = summarise([CaseResult(truth, [], error='InputError: boom'),
                         CaseResult(GroundTruth('case_001', 'a', 'cpu', 'cpu'), ['a'], 1)])
    assert summary['failures'] == 1
    assert summary['overall']['ac1'] == 0.5
    assert summary['fine_top1'] == 0.5


def test_evaluate_reports(tmp_path):
    truths = [GroundTruth('case_000', 'a', 'cpu', 'cpu'), GroundTruth('case_001', 'd', 'net', 'socket')]
    reports = {
        'case_000': fake_report(tmp_path / 'r0.json', ['a', 'b', 'c'], ['cpu', 'mem']),
        'case_001': fake_report(tmp_path / 'r1.json', ['a', 'b', 'c', 'd', 'e'], ['mem', 'net']),
    }
    summary = evaluate_reports(reports, truths)
    assert summary['overall']['ac1'] == 0.5
    assert summary['overall']['ac3'] == 0.5
    assert summary['overall']['ac5'] == 1.0
    assert summary['per_fault']['socket']['ac5'] == 1.0
    assert summary['fine_top1'] == 0.5


def test_evaluate_reports_rejects_mismatched_cases(tmp_path):
    truths = [GroundTruth('case_000', 'a', 'cpu', 'cpu')]
    with pytest.raises(InputError):
        evaluate_reports({'case_001': fake_report(tmp_path / 'r.json', ['a'])}, truths)
    with pytest.raises(InputError):
        evaluate_reports({'case_000': fake_report(tmp_path / 'r.json', ['a'])}, truths * 2)
    bad = tmp_path / 'bad.json'
    bad.write_text('{not json', encoding='utf-8')
    with pytest.raises(InputError):
        evaluate_reports({'case_000': str(bad)}, truths)


def test_malformed_reports_are_input_errors(tmp_path):
    truths = [GroundTruth('case_000', 'a', 'cpu', 'cpu')]
    for name, content in [('no_services.json', json.dumps({'version': REPORT_VERSION})),
                          ('bad_entries.json', json.dumps({'version': REPORT_VERSION, 'services': [{'rank': 1}]})),
                          ('binary.json', b'\xff\xfe{')]:
        path = tmp_path / name
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content, encoding='utf-8')
        with pytest.raises(InputError):
            evaluate_reports({'case_000': str(path)}, truths)
