"""
Core package: set geometry, monotone tables, verdicts and errors.
"""

from .errors import BlowUp, ConstructionRefused, InputError, StabilityError
from .sets import (
    SetDescriptor,
    SetKind,
    SetNeighborhood,
    ball,
    ball_around_set,
    box,
    distance_to_set,
    origin,
    point_set,
    set_norm,
)
from .tables import (
    Direction,
    EnvelopeKnots,
    Extrapolation,
    KLEnvelope,
    MonotoneGrid,
    MonotoneTable,
    TauTable,
    fit_monotone_envelope,
)
from .reports import (
    SEMANTICS_NOTE,
    BoundednessCertificate,
    Certificates,
    ConsistencyItem,
    ConsistencyReport,
    LagrangeCertificate,
    PropertyKind,
    PropertyReport,
    ReachCloud,
    RfcEnvelope,
    build_report,
)
from .verdict import Budget, Verdict, VerdictStatus, Witness, combine

__all__ = [
    'BlowUp',
    'ConstructionRefused',
    'InputError',
    'StabilityError',
    'SetDescriptor',
    'SetKind',
    'SetNeighborhood',
    'ball',
    'ball_around_set',
    'box',
    'distance_to_set',
    'origin',
    'point_set',
    'set_norm',
    'Direction',
    'EnvelopeKnots',
    'Extrapolation',
    'KLEnvelope',
    'MonotoneGrid',
    'MonotoneTable',
    'fit_monotone_envelope',
    'TauTable',
    'SEMANTICS_NOTE',
    'BoundednessCertificate',
    'Certificates',
    'ConsistencyItem',
    'ConsistencyReport',
    'LagrangeCertificate',
    'PropertyKind',
    'PropertyReport',
    'ReachCloud',
    'RfcEnvelope',
    'build_report',
    'Budget',
    'Verdict',
    'VerdictStatus',
    'Witness',
    'combine',
]
