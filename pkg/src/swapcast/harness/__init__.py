"""Configuration, run loop, reports and CLI."""

from .config import ConfigError, ExperimentConfig
from .report import emit_rate_study, emit_report
from .run import ExperimentReport, RateStudy, rate_study, reproduce_lemma, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "RateStudy",
    "emit_rate_study",
    "emit_report",
    "rate_study",
    "reproduce_lemma",
    "run_experiment",
]
