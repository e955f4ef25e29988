"""
Analyzers package for the stability toolkit.
"""

from .base_analyzer import BaseAnalyzer
from .reach_analyzer import ReachAnalyzer, a_eps, estimate_rfc, p_plus, probe_invariance, reach_set
from .property_analyzer import PropertyAnalyzer, cross_check_pugas, cross_check_ugas
from .lyapunov_analyzer import LyapunovAnalyzer, LyapunovCandidate, StabilityConclusion, conclude

__all__ = [
    'BaseAnalyzer',
    'ReachAnalyzer',
    'a_eps',
    'estimate_rfc',
    'p_plus',
    'probe_invariance',
    'reach_set',
    'PropertyAnalyzer',
    'cross_check_pugas',
    'cross_check_ugas',
    'LyapunovAnalyzer',
    'LyapunovCandidate',
    'StabilityConclusion',
    'conclude',
]
