import pytest

from src.errors import InputError
from src.telemetry.log_parser import DrainConfig, LogRecord, LogTemplateParser, WILDCARD, parse_log


def record(message, service='cart', t=0.0):
    return LogRecord(t, service, message)


def test_variables_are_masked_into_one_template():
    parser = LogTemplateParser()
    first = parse_log(record('connected to 10.0.0.1 port 8080'), parser)
    second = parse_log(record('connected to 10.0.0.2 port 9090'), parser)
    assert first.id == second.id
    assert second.text == 'connected to <*> port <*>'
    assert parser.template_count == 1


def test_distinct_messages_get_distinct_templates():
    parser = LogTemplateParser()
    ids = {parse_log(record(m), parser).id for m in [
        'session 3f2a1c9e-1111-2222-3333-444455556666 refreshed',
        'flushed 120 records to disk',
        'gc pause 0.25 ms',
    ]}
    assert len(ids) == 3


def test_templates_are_kept_per_service():
    parser = LogTemplateParser()
    a = parse_log(record('flushed 10 records to disk', service='a'), parser)
    b = parse_log(record('user login failed', service='b'), parser)
    assert a.id == b.id == 1
    assert set(parser.templates) == {('a', 1), ('b', 1)}


def test_lines_without_constant_tokens_are_counted():
    parser = LogTemplateParser()
    assert parse_log(record('12345 10.0.0.1'), parser) is None
    assert parse_log(record('   '), parser) is None
    assert parser.counters['log_lines_unparsed'] == 2
    assert parser.template_count == 0


def test_error_template_keeps_constant_words():
    parser = LogTemplateParser()
    template = parse_log(record('ERROR failed to handle request 0a1b2c3d-0000-1111-2222-333344445555 upstream '
                                'timeout after 300 ms'), parser)
    assert template.tokens[:4] == ('ERROR', 'failed', 'to', 'handle')
    assert WILDCARD in template.tokens


def test_drain_config_validation():
    with pytest.raises(InputError):
        DrainConfig(depth=1)
    with pytest.raises(InputError):
        DrainConfig(similarity_threshold=1.5)
    with pytest.raises(InputError):
        DrainConfig(max_children=0)
