from src.bench.metrics import AccuracyTracker, ac_at_k, avg_at_k
from src.bench.synth import GroundTruth, SynthConfig, generate_case
