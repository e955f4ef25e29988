"""
Bounded target sets and the distance geometry built on them.
Every set is a point set, a Euclidean ball or an axis-aligned box.
"""

import math
from enum import Enum
from typing import ClassVar, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import InputError


class SetKind(str, Enum):
    """Kinds of bounded sets."""
    POINTS = "points"
    BALL = "ball"
    BOX = "box"


class SetDescriptor(BaseModel):
    """A bounded set of states, immutable after construction."""
    model_config = ConfigDict(frozen=True)

    kind: SetKind = Field(description="points, ball or box")
    points: Optional[List[List[float]]] = Field(default=None, description="State vectors of a point set")
    center: Optional[List[float]] = Field(default=None, description="Ball center")
    radius: Optional[float] = Field(default=None, description="Ball radius")
    lower: Optional[List[float]] = Field(default=None, description="Box lower corner")
    upper: Optional[List[float]] = Field(default=None, description="Box upper corner")

    @model_validator(mode="after")
    def _check_shape(self) -> "SetDescriptor":
        if self.kind == SetKind.POINTS:
            if not self.points:
                raise ValueError("point set must be nonempty")
            width = len(self.points[0])
            if width == 0 or any(len(p) != width for p in self.points):
                raise ValueError("points must share one positive dimension")
            if not np.all(np.isfinite(self.points)):
                raise ValueError("points must be finite")
        elif self.kind == SetKind.BALL:
            if not self.center or self.radius is None:
                raise ValueError("ball needs center and radius")
            if not (math.isfinite(self.radius) and self.radius >= 0):
                raise ValueError(f"ball radius must be finite and nonnegative, got {self.radius}")
            if not np.all(np.isfinite(self.center)):
                raise ValueError("ball center must be finite")
        else:
            if not self.lower or not self.upper or len(self.lower) != len(self.upper):
                raise ValueError("box needs lower and upper corners of equal dimension")
            lo, hi = np.asarray(self.lower), np.asarray(self.upper)
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("box corners must be finite")
            if np.any(lo > hi):
                raise ValueError("box lower corner must not exceed upper corner")
        return self

    @property
    def dimension(self) -> int:
        if self.kind == SetKind.POINTS:
            return len(self.points[0])
        if self.kind == SetKind.BALL:
            return len(self.center)
        return len(self.lower)

    def point_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def outer_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """Smallest axis-aligned box containing the set."""
        if self.kind == SetKind.POINTS:
            pts = self.point_array()
            return pts.min(axis=0), pts.max(axis=0)
        if self.kind == SetKind.BALL:
            c = np.asarray(self.center, dtype=float)
            return c - self.radius, c + self.radius
        return np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)

    def diameter(self) -> float:
        lo, hi = self.outer_box()
        return float(np.linalg.norm(hi - lo))

    def center_point(self) -> np.ndarray:
        lo, hi = self.outer_box()
        if self.kind == SetKind.BALL:
            return np.asarray(self.center, dtype=float)
        if self.kind == SetKind.POINTS:
            return self.point_array()[0]
        return 0.5 * (lo + hi)

    def project(self, states: np.ndarray) -> np.ndarray:
        """Nearest point of the set for each row of ``states``."""
        X = _as_states(states, self.dimension)
        if self.kind == SetKind.BOX:
            lo, hi = self.outer_box()
            return np.clip(X, lo, hi)
        if self.kind == SetKind.BALL:
            c = np.asarray(self.center, dtype=float)
            offset = X - c
            norms = np.linalg.norm(offset, axis=-1, keepdims=True)
            scale = np.where(norms > self.radius, self.radius / np.where(norms > 0, norms, 1.0), 1.0)
            return c + offset * scale
        pts = self.point_array()
        best = np.full(X.shape[:-1], np.inf)
        nearest = np.broadcast_to(pts[0], X.shape).copy()
        for p in pts:
            dist = np.linalg.norm(X - p, axis=-1)
            closer = dist < best
            best = np.where(closer, dist, best)
            nearest[closer] = p
        return nearest

    def sample_inside(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` states from the set itself."""
        n = self.dimension
        if self.kind == SetKind.POINTS:
            pts = self.point_array()
            return pts[rng.integers(0, len(pts), size=count)]
        if self.kind == SetKind.BALL:
            directions = _unit_directions(count, n, rng)
            radii = self.radius * rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / n)
            return np.asarray(self.center, dtype=float) + directions * radii
        lo, hi = self.outer_box()
        return rng.uniform(0.0, 1.0, size=(count, n)) * (hi - lo) + lo

    def contains(self, states: np.ndarray) -> np.ndarray:
        return distance_to_set(states, self) <= 0.0


def point_set(points: Sequence[Sequence[float]]) -> SetDescriptor:
    return _build(kind=SetKind.POINTS, points=[[float(v) for v in np.atleast_1d(p)] for p in points])


def origin(dimension: int) -> SetDescriptor:
    return point_set([[0.0] * dimension])


def ball(center: Sequence[float], radius: float) -> SetDescriptor:
    return _build(kind=SetKind.BALL, center=[float(v) for v in np.atleast_1d(center)], radius=float(radius))


def box(lower: Sequence[float], upper: Sequence[float]) -> SetDescriptor:
    return _build(
        kind=SetKind.BOX,
        lower=[float(v) for v in np.atleast_1d(lower)],
        upper=[float(v) for v in np.atleast_1d(upper)],
    )


def _build(**fields) -> SetDescriptor:
    try:
        return SetDescriptor(**fields)
    except ValidationError as e:
        raise InputError(f"Invalid set: {e.errors()[0]['msg']}") from e


def _as_states(x, dimension: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != dimension:
        raise InputError(f"State dimension {arr.shape[-1]} does not match set dimension {dimension}")
    return arr


def _unit_directions(count: int, n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.where(norms > 0, norms, 1.0)


def distance_to_set(x, A: SetDescriptor) -> Union[float, np.ndarray]:
    """
    Euclidean distance from ``x`` to ``A``.

    Args:
        x: A single state (scalar or vector) or an array of states in the last axis
        A: Target set

    Returns:
        A float for a single state, otherwise an array over the leading axes
    """
    X = _as_states(x, A.dimension)
    if A.kind == SetKind.BALL:
        c = np.asarray(A.center, dtype=float)
        dist = np.maximum(np.linalg.norm(X - c, axis=-1) - A.radius, 0.0)
    elif A.kind == SetKind.BOX:
        lo, hi = A.outer_box()
        gap = np.maximum(np.maximum(lo - X, X - hi), 0.0)
        dist = np.linalg.norm(gap, axis=-1)
    else:
        dist = np.full(X.shape[:-1], np.inf)
        for p in A.point_array():
            dist = np.minimum(dist, np.linalg.norm(X - p, axis=-1))
    if X.ndim == 1:
        return float(dist)
    return dist


def set_norm(A: SetDescriptor) -> float:
    """sup of ‖y‖ over the set."""
    if A.kind == SetKind.POINTS:
        return float(np.max(np.linalg.norm(A.point_array(), axis=1)))
    if A.kind == SetKind.BALL:
        return float(np.linalg.norm(A.center)) + float(A.radius)
    lo, hi = A.outer_box()
    return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))


class SetNeighborhood(BaseModel):
    """
    The open neighborhood {x : ‖x‖_A < radius}.

    Sampling puts at least a quarter of the states in the shell
    [0.9 radius, radius), where worst cases usually live.
    """
    model_config = ConfigDict(frozen=True)

    base: SetDescriptor
    radius: float = Field(gt=0)

    SHELL_FRACTION: ClassVar[float] = 0.25
    INSIDE_FRACTION: ClassVar[float] = 0.1

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def center_point(self) -> np.ndarray:
        return self.base.center_point()

    def extent(self) -> float:
        """Half-width of the neighborhood's outer box."""
        return 0.5 * self.base.diameter() + self.radius

    def contains(self, states: np.ndarray) -> np.ndarray:
        return distance_to_set(states, self.base) < self.radius

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count <= 0:
            return np.zeros((0, self.dimension))
        top = self.radius * (1.0 - 1e-9)
        n_shell = math.ceil(self.SHELL_FRACTION * count)
        n_inside = min(int(self.INSIDE_FRACTION * count), count - n_shell)
        n_rest = count - n_shell - n_inside
        shell = self._at_distance(rng.uniform(0.9 * self.radius, top, size=n_shell), rng, 0.9 * self.radius)
        rest = self._at_distance(rng.uniform(0.0, top, size=n_rest), rng, 0.0)
        inside = self.base.sample_inside(n_inside, rng)
        return np.vstack([shell, rest, inside])

    def project(self, states: np.ndarray) -> np.ndarray:
        """Pull states outside the neighborhood back onto its inner boundary."""
        X = _as_states(states, self.dimension)
        nearest = self.base.project(X)
        offset = X - nearest
        dist = np.linalg.norm(offset, axis=-1, keepdims=True)
        limit = self.radius * (1.0 - 1e-9)
        scale = np.where(dist > limit, limit / np.where(dist > 0, dist, 1.0), 1.0)
        return nearest + offset * scale

    def _at_distance(self, distances: np.ndarray, rng: np.random.Generator, floor: float) -> np.ndarray:
        """States whose distance to the base set equals ``distances`` (at least ``floor``)."""
        count = len(distances)
        n = self.dimension
        if count == 0:
            return np.zeros((0, n))
        anchors = self.base.sample_inside(count, rng)
        directions = _unit_directions(count, n, rng)
        if self.base.kind == SetKind.POINTS:
            states = anchors + directions * distances[:, None]
            # other points of the set may sit closer than the anchor
            for _ in range(64):
                short = distance_to_set(states, self.base) < floor
                if not np.any(short):
                    break
                k = int(short.sum())
                states[short] = self.base.sample_inside(k, rng) + _unit_directions(k, n, rng) * distances[short, None]
            return states
        far = anchors + directions * (self.base.diameter() + 1.0)
        feet = self.base.project(far)
        normals = far - feet
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return feet + normals * distances[:, None]


def ball_around_set(A: SetDescriptor, r: float) -> SetNeighborhood:
    """Sampler for B_r(A)."""
    if not r > 0:
        raise InputError(f"Neighborhood radius must be positive, got {r}")
    return SetNeighborhood(base=A, radius=float(r))
