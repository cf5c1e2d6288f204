"""Deterministic simulator for proactive service orchestration on volatile edge nodes."""
from .config import ScenarioConfig, load_config, parse_config
from .harness import RunMetrics, RunResult, compare_policies, run_scenario, write_outputs
from .predictor import LstmModel, load_model, predict, save_model

__version__ = "0.1.0"

__all__ = [
    "LstmModel",
    "RunMetrics",
    "RunResult",
    "ScenarioConfig",
    "compare_policies",
    "load_config",
    "load_model",
    "parse_config",
    "predict",
    "run_scenario",
    "save_model",
    "write_outputs",
]
