from src.telemetry.core_model import AnalysisWindow, SeriesRef, SourceKind, SystemSnapshot, TelemetryBundle, \
    TimeSeries
from src.telemetry.ingest import load_bundle
from src.telemetry.log_parser import DrainConfig, LogTemplateParser
