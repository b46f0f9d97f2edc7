"""Online log template mining with a fixed-depth Drain tree, one miner per service."""

from collections import Counter
from dataclasses import dataclass
import logging
from typing import Dict, Optional, Tuple

from drain3 import TemplateMiner
from drain3.masking import MaskingInstruction
from drain3.template_miner_config import TemplateMinerConfig

from src.errors import InputError

logger = logging.getLogger(__name__)

DEFAULT_DEPTH = 4
DEFAULT_SIMILARITY_THRESHOLD = 0.4
DEFAULT_MAX_CHILDREN = 100
WILDCARD = '<*>'

# variable tokens masked before tree search; order matters, the most specific patterns go first
MASKING_PATTERNS = [
    r'[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}',
    r'((?<=[^A-Za-z0-9])|^)(\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3})((?=[^A-Za-z0-9])|$)',
    r'((?<=[^A-Za-z0-9])|^)(0[xX][0-9a-fA-F]+)((?=[^A-Za-z0-9])|$)',
    r'((?<=[^A-Za-z0-9])|^)([\-\+]?\d+(\.\d+)?)((?=[^A-Za-z0-9])|$)',
]


@dataclass(frozen=True)
class DrainConfig:
    depth: int = DEFAULT_DEPTH
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    max_children: int = DEFAULT_MAX_CHILDREN

    def __post_init__(self) -> None:
        if self.depth < 2:
            raise InputError('Drain depth must be >= 2, got %s' % self.depth)
        if not 0.0 < self.similarity_threshold < 1.0:
            raise InputError('Drain similarity threshold must lie in (0, 1), got %s' % self.similarity_threshold)
        if self.max_children < 1:
            raise InputError('Drain max_children must be >= 1, got %s' % self.max_children)


@dataclass(frozen=True)
class LogRecord:
    timestamp: float
    service: str
    message: str


@dataclass(frozen=True)
class LogTemplate:
    id: int
    tokens: Tuple[str, ...]
    service: str

    @property
    def text(self) -> str:
        return ' '.join(self.tokens)


def _miner_config(cfg: DrainConfig) -> TemplateMinerConfig:
    config = TemplateMinerConfig()
    config.drain_depth = cfg.depth
    config.drain_sim_th = cfg.similarity_threshold
    config.drain_max_children = cfg.max_children
    config.profiling_enabled = False
    # masked slots render as the Drain wildcard so both kinds of variable look alike
    config.mask_prefix = '<'
    config.mask_suffix = '>'
    config.masking_instructions = [MaskingInstruction(pattern, '*') for pattern in MASKING_PATTERNS]
    return config


class LogTemplateParser:
    """Keeps one Drain tree per service; feed each service's records in timestamp order."""

    def __init__(self, cfg: Optional[DrainConfig] = None) -> None:
        self.cfg = cfg or DrainConfig()
        self.miners: Dict[str, TemplateMiner] = {}
        self.templates: Dict[Tuple[str, int], LogTemplate] = {}
        self.counters = Counter()

    def _miner(self, service: str) -> TemplateMiner:
        if service not in self.miners:
            self.miners[service] = TemplateMiner(config=_miner_config(self.cfg))
        return self.miners[service]

    def parse(self, record: LogRecord) -> Optional[LogTemplate]:
        """Match a record against its service's templates, creating one if nothing is similar enough.

        :param record: The raw log record.
        :return: The matched or new template, or None when nothing is left after masking.
        """
        miner = self._miner(record.service)
        message = record.message.strip()
        masked = miner.masker.mask(message) if message else ''
        if not [token for token in masked.split() if token != WILDCARD]:
            self.counters['log_lines_unparsed'] += 1
            logger.debug('skipping log line without constant tokens: %r', record.message)
            return None

        result = miner.add_log_message(message)
        template = LogTemplate(
            id=int(result['cluster_id']),
            tokens=tuple(result['template_mined'].split()),
            service=record.service,
        )
        # the template text of a cluster may generalise as more lines arrive
        self.templates[(record.service, template.id)] = template
        return template

    @property
    def template_count(self) -> int:
        return len(self.templates)


def parse_log(record: LogRecord, parser: LogTemplateParser) -> Optional[LogTemplate]:
    return parser.parse(record)
