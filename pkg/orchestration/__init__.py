"""
Orchestration package for the stability toolkit.
"""

from .base_orchestrator import AnalyzerOutput, BaseOrchestrator, OrchestratorConfig
from .stability_orchestrator import (
    AnalysisConfig,
    AnalysisKind,
    StabilityOrchestrator,
    exit_code_for,
    load_config,
)

__all__ = [
    'AnalyzerOutput',
    'BaseOrchestrator',
    'OrchestratorConfig',
    'AnalysisConfig',
    'AnalysisKind',
    'StabilityOrchestrator',
    'exit_code_for',
    'load_config',
]
