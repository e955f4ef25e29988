"""
Tools package for the stability toolkit.
"""

from .base_tool import BaseTool
from .search_tool import (
    AdversarialSearchTool,
    SearchObjective,
    SearchProblem,
    SearchResult,
    adversarial_search,
    stress_verdict,
)
from .construction_tool import (
    ConstructionTool,
    EnvelopeValidation,
    kl_envelope,
    lagrange_sigma,
    smooth_tau,
    validate_envelope,
)
from .export_tool import ExportSummary, ExportTool, export_plots

__all__ = [
    'BaseTool',
    'AdversarialSearchTool',
    'SearchObjective',
    'SearchProblem',
    'SearchResult',
    'adversarial_search',
    'stress_verdict',
    'ConstructionTool',
    'EnvelopeValidation',
    'kl_envelope',
    'lagrange_sigma',
    'smooth_tau',
    'validate_envelope',
    'ExportSummary',
    'ExportTool',
    'export_plots',
]
