import numpy as np

from src.telemetry.core_model import AnalysisWindow, SourceKind, TimeSeries

T0 = 1700000000.0


def make_window(n_normal=40, n_abnormal=20, bin=15.0):
    return AnalysisWindow(T0, T0 + n_normal * bin, n_abnormal * bin, bin)


def make_series(service, indicator, values, source=SourceKind.METRIC):
    return TimeSeries(service, indicator, source, np.asarray(values, dtype=float))


def noise_series(rng, service, indicator, window, shift=0.0, source=SourceKind.METRIC, lag=0):
    """Unit-variance noise with an optional mean shift from the anomaly bin onwards."""
    values = rng.normal(0.0, 1.0, window.n_bins)
    values[window.n_normal + lag:] += shift
    return make_series(service, indicator, values, source)
