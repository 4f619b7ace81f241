from relu_lab.harness.config import ExperimentConfig, ExperimentKind, ProblemSpec, load_config

__all__ = ["ExperimentConfig", "ExperimentKind", "ProblemSpec", "load_config"]
