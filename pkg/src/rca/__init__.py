from src.rca.pipeline import RcaConfig, run_rca
from src.rca.report import RcaReport, write_report
