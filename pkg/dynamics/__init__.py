"""
Dynamics package: systems, disturbance signals, flows and axiom checks.
"""

from .axioms import AxiomReport, check_axioms
from .expressions import Expression, ExpressionRhs
from .integrator import (
    BLOWUP_GUARD,
    TrajectoryBatch,
    flow,
    integrate_paired,
    replay,
    simulate_batch,
    simulate_pairs,
)
from .signals import (
    DisturbanceSignal,
    SignalStrategy,
    concatenate,
    sample_signals,
    segment_count,
)
from .systems import (
    BuiltinEntry,
    DynamicalSystem,
    ExponentialStabilityReport,
    LinearSystem,
    OdeSystem,
    builtin,
    builtin_family,
    exponential_stability,
    list_systems,
)

__all__ = [
    'AxiomReport',
    'check_axioms',
    'Expression',
    'ExpressionRhs',
    'BLOWUP_GUARD',
    'TrajectoryBatch',
    'flow',
    'integrate_paired',
    'replay',
    'simulate_batch',
    'simulate_pairs',
    'DisturbanceSignal',
    'SignalStrategy',
    'concatenate',
    'sample_signals',
    'segment_count',
    'BuiltinEntry',
    'DynamicalSystem',
    'ExponentialStabilityReport',
    'LinearSystem',
    'OdeSystem',
    'builtin',
    'builtin_family',
    'exponential_stability',
    'list_systems',
]
