"""
System definitions and the builtin registry.
"""

import re
import threading
from abc import ABC, abstractmethod
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.linalg import expm

from core.errors import InputError
from core.sets import SetDescriptor, box
from .expressions import ExpressionRhs

CLAMP_THRESHOLD = 1e-9
PROPAGATOR_CACHE = 32


class DynamicalSystem(ABC):
    """Common interface of ODE and linear systems."""

    name: str
    dimension: int
    disturbance_box: SetDescriptor
    clamp_below: float = 0.0
    disturbance_bound: Optional[float] = None

    @property
    def disturbance_dimension(self) -> int:
        return self.disturbance_box.dimension

    @property
    def is_linear(self) -> bool:
        return False

    @abstractmethod
    def evaluate(self, states: np.ndarray, disturbances: np.ndarray, check: bool = True) -> np.ndarray:
        """Vectorized right-hand side on rows of states and disturbances.

        With ``check`` a non-finite value raises InputError; trial stages of
        the integrator pass ``check=False`` and reject the step instead.
        """

    def clamp(self, states: np.ndarray) -> np.ndarray:
        """Snap components below the clamp threshold to zero (in place)."""
        if self.clamp_below > 0:
            states[np.abs(states) < self.clamp_below] = 0.0
        return states

    def note(self) -> str:
        if self.disturbance_bound is not None:
            return f"relative to D=[-{self.disturbance_bound:g},{self.disturbance_bound:g}]"
        return ""


class OdeSystem(DynamicalSystem):
    """
    ẋ = f(x, d) with d in a compact box D.

    Args:
        name: Registry or user name
        dimension: State dimension n
        rhs: Callable (X[N,n], D[N,m]) -> F[N,n]
        disturbance_box: Box D in R^m
        clamp_below: Components with smaller magnitude are set to zero after each step
        description: One-line description for listings
    """

    def __init__(
        self,
        name: str,
        dimension: int,
        rhs: Callable[[np.ndarray, np.ndarray], np.ndarray],
        disturbance_box: SetDescriptor,
        clamp_below: float = 0.0,
        description: str = "",
        disturbance_bound: Optional[float] = None,
    ):
        if dimension < 1:
            raise InputError(f"dimension must be positive, got {dimension}")
        self.name = name
        self.dimension = dimension
        self.rhs = rhs
        self.disturbance_box = disturbance_box
        self.clamp_below = clamp_below
        self.description = description
        self.disturbance_bound = disturbance_bound

    def evaluate(self, states: np.ndarray, disturbances: np.ndarray, check: bool = True) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = np.asarray(self.rhs(states, disturbances), dtype=float)
        if check and not np.all(np.isfinite(out)):
            raise InputError(f"non-finite right-hand side in system '{self.name}'")
        return out

    @classmethod
    def from_expressions(
        cls,
        expressions: Sequence[str],
        disturbance_lower: Sequence[float],
        disturbance_upper: Sequence[float],
        name: str = "custom",
        clamp_below: float = 0.0,
    ) -> "OdeSystem":
        """
        Build ẋ = f(x, d) from one expression per state component.

        Example:
            >>> OdeSystem.from_expressions(["-x1/(abs(d1)+1)"], [-1.0], [1.0])
        """
        if not expressions:
            raise InputError("a custom system needs at least one expression")
        D = box(disturbance_lower, disturbance_upper)
        rhs = ExpressionRhs(expressions, D.dimension)
        return cls(
            name=name,
            dimension=len(expressions),
            rhs=rhs,
            disturbance_box=D,
            clamp_below=clamp_below,
            description="; ".join(e.text for e in rhs.expressions),
        )


class LinearSystem(DynamicalSystem):
    """ẋ = Ax, flowed with the matrix exponential."""

    def __init__(self, name: str, matrix: Sequence[Sequence[float]], description: str = ""):
        A = np.asarray(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InputError(f"linear system matrix must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise InputError("linear system matrix must be finite")
        self.name = name
        self.matrix = A
        self.dimension = A.shape[0]
        self.disturbance_box = box([0.0], [0.0])
        self.description = description
        self._propagators: Dict[float, np.ndarray] = {}
        self._propagator_lock = threading.Lock()

    @property
    def is_linear(self) -> bool:
        return True

    def evaluate(self, states: np.ndarray, disturbances: np.ndarray, check: bool = True) -> np.ndarray:
        return states @ self.matrix.T

    def propagator(self, dt: float) -> np.ndarray:
        """e^{A dt}, cached per step length; the oldest entry goes once PROPAGATOR_CACHE are held."""
        key = round(float(dt), 15)
        with self._propagator_lock:
            cached = self._propagators.get(key)
            if cached is None:
                cached = expm(self.matrix * dt)
                if len(self._propagators) >= PROPAGATOR_CACHE:
                    self._propagators.pop(next(iter(self._propagators)))
                self._propagators[key] = cached
            return cached

    def spectral_abscissa(self) -> float:
        return float(np.max(np.linalg.eigvals(self.matrix).real))


class PlanarCounterexample:
    """ẋ = |d|(1−x)|y| − x³ − x^{1/3},  ẏ = −y³ − y^{1/3} (signed cube roots)."""

    def __call__(self, X: np.ndarray, D: np.ndarray) -> np.ndarray:
        x, y = X[..., 0], X[..., 1]
        push = np.abs(D[..., 0]) * (1.0 - x) * np.abs(y)
        return np.stack([push - x ** 3 - np.cbrt(x), -y ** 3 - np.cbrt(y)], axis=-1)


class ScalarNonuniform:
    """ẋ = −x / (|d| + 1)."""

    def __call__(self, X: np.ndarray, D: np.ndarray) -> np.ndarray:
        return -X / (np.abs(D[..., :1]) + 1.0)


class ScalarCube:
    """ẏ = −y³ − y^{1/3}."""

    def __call__(self, X: np.ndarray, D: np.ndarray) -> np.ndarray:
        return -X ** 3 - np.cbrt(X)


def _disturbance_interval(M: float) -> SetDescriptor:
    if M < 0:
        raise InputError(f"disturbance bound must be nonnegative, got {M}")
    return box([-M], [M])


def planar_counterexample(M: float = 1.0) -> OdeSystem:
    return OdeSystem(
        name=f"planar_counterexample({M:g})",
        dimension=2,
        rhs=PlanarCounterexample(),
        disturbance_box=_disturbance_interval(M),
        clamp_below=CLAMP_THRESHOLD,
        description="planar system with a non-robust attractive equilibrium, D=[-M,M]",
        disturbance_bound=float(M),
    )


def scalar_nonuniform(M: float = 1.0) -> OdeSystem:
    return OdeSystem(
        name=f"scalar_nonuniform({M:g})",
        dimension=1,
        rhs=ScalarNonuniform(),
        disturbance_box=_disturbance_interval(M),
        description="x' = -x/(|d|+1), decay slows as |d| grows, D=[-M,M]",
        disturbance_bound=float(M),
    )


def scalar_cube() -> OdeSystem:
    return OdeSystem(
        name="scalar_cube",
        dimension=1,
        rhs=ScalarCube(),
        disturbance_box=_disturbance_interval(0.0),
        clamp_below=CLAMP_THRESHOLD,
        description="y' = -y^3 - y^(1/3), finite-time convergence",
    )


def scalar_stable() -> LinearSystem:
    return LinearSystem("scalar_stable", [[-1.0]], description="x' = -x")


def scalar_unstable() -> LinearSystem:
    return LinearSystem("scalar_unstable", [[1.0]], description="x' = x")


def linear_diag(N: int = 2) -> LinearSystem:
    if int(N) != N or N < 1:
        raise InputError(f"linear_diag needs a positive integer size, got {N}")
    N = int(N)
    return LinearSystem(
        f"linear_diag({N})",
        np.diag([-1.0 / k for k in range(1, N + 1)]),
        description="diag(-1, -1/2, ..., -1/N), decay rate -1/N",
    )


def linear_dense(seed: int = 0) -> LinearSystem:
    rng = np.random.default_rng(int(seed))
    n = 4
    B = rng.standard_normal((n, n))
    Q = rng.standard_normal((n, n))
    A = 0.5 * (B - B.T) - (Q @ Q.T / n + 0.1 * np.eye(n))
    return LinearSystem(f"linear_dense({int(seed)})", A, description="random 4x4 matrix with negative definite symmetric part")


def spiral() -> LinearSystem:
    return LinearSystem("spiral", [[-0.1, -1.0], [1.0, -0.1]], description="slowly decaying rotation")


class BuiltinEntry(BaseModel):
    """Registry metadata for a builtin system."""
    name: str
    signature: str
    description: str
    parameter: Optional[str] = Field(default=None, description="Name of the single numeric parameter")


_REGISTRY: Dict[str, Tuple[Callable[..., DynamicalSystem], BuiltinEntry]] = {
    "planar_counterexample": (planar_counterexample, BuiltinEntry(
        name="planar_counterexample", signature="planar_counterexample(M)", parameter="M",
        description="|d|(1-x)|y| - x^3 - x^(1/3), -y^3 - y^(1/3) with D=[-M,M]")),
    "scalar_nonuniform": (scalar_nonuniform, BuiltinEntry(
        name="scalar_nonuniform", signature="scalar_nonuniform(M)", parameter="M",
        description="-x/(|d|+1) with D=[-M,M]")),
    "scalar_cube": (scalar_cube, BuiltinEntry(
        name="scalar_cube", signature="scalar_cube", description="-y^3 - y^(1/3)")),
    "linear_diag": (linear_diag, BuiltinEntry(
        name="linear_diag", signature="linear_diag(N)", parameter="N",
        description="diag(-1, -1/2, ..., -1/N)")),
    "linear_dense": (linear_dense, BuiltinEntry(
        name="linear_dense", signature="linear_dense(seed)", parameter="seed",
        description="seeded random stable 4x4 matrix")),
    "scalar_stable": (scalar_stable, BuiltinEntry(
        name="scalar_stable", signature="scalar_stable", description="-x, D={0}")),
    "scalar_unstable": (scalar_unstable, BuiltinEntry(
        name="scalar_unstable", signature="scalar_unstable", description="x, D={0}")),
    "spiral": (spiral, BuiltinEntry(
        name="spiral", signature="spiral", description="(-0.1x - y, x - 0.1y)")),
}

_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\(\s*([^()]*?)\s*\))?\s*$")


def parse_builtin_name(name: str) -> Tuple[str, Optional[float]]:
    match = _CALL.match(name or "")
    if not match:
        raise InputError(f"malformed system name '{name}'")
    base, arg = match.group(1), match.group(2)
    if base not in _REGISTRY:
        raise InputError(f"unknown system '{base}'; known: {', '.join(sorted(_REGISTRY))}")
    if arg is None or arg == "":
        return base, None
    try:
        return base, float(arg)
    except ValueError as e:
        raise InputError(f"system parameter must be numeric in '{name}'") from e


def builtin(name: str) -> DynamicalSystem:
    """
    Look up a builtin system by name, e.g. ``"linear_diag(4)"``.

    Raises:
        InputError: unknown name or malformed parameter
    """
    base, arg = parse_builtin_name(name)
    factory, entry = _REGISTRY[base]
    if arg is None:
        return factory()
    if entry.parameter is None:
        raise InputError(f"system '{base}' takes no parameter")
    if entry.parameter in ("N", "seed"):
        if arg != int(arg):
            raise InputError(f"parameter {entry.parameter} of '{base}' must be an integer")
        return factory(int(arg))
    return factory(arg)


def builtin_family(name: str) -> Callable[[float], DynamicalSystem]:
    """Map a disturbance bound M to the named system with D=[-M,M]."""
    base, _ = parse_builtin_name(name)
    factory, entry = _REGISTRY[base]
    if entry.parameter != "M":
        raise InputError(f"system '{base}' has no disturbance bound to sweep")
    return factory


def list_systems() -> List[BuiltinEntry]:
    return [entry for _, entry in _REGISTRY.values()]


class ExponentialStabilityReport(BaseModel):
    """Spectral decay data of a linear system."""
    system: str
    spectral_abscissa: float
    exponentially_stable: bool
    overshoot: float = Field(description="max over sampled t of ‖e^{At}‖ e^{-abscissa t}")


def exponential_stability(system: LinearSystem, horizon: float = 20.0, samples: int = 201) -> ExponentialStabilityReport:
    """Spectral abscissa and overshoot constant of e^{At}."""
    if not system.is_linear:
        raise InputError("exponential stability is computed for linear systems only")
    abscissa = system.spectral_abscissa()
    times = np.linspace(0.0, horizon, samples)
    norms = np.array([np.linalg.norm(expm(system.matrix * t), 2) for t in times])
    overshoot = float(np.max(norms * np.exp(-abscissa * times)))
    return ExponentialStabilityReport(
        system=system.name,
        spectral_abscissa=abscissa,
        exponentially_stable=abscissa < 0,
        overshoot=overshoot,
    )
