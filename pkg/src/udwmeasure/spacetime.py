"""Minkowski events, causal predicates and interaction regions (c = 1)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError
from .profiles import Profile

DEFAULT_SUPPORT_LEVEL = 1.0 - 1e-8
#: relative slack used to decide null separation in floating point
NULL_TOL = 1e-12


@dataclass(frozen=True)
class Event:
    """A spacetime point (t, x) with x of dimension d in {1, 2, 3}."""

    t: float
    x: Tuple[float, ...]

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        if not 1 <= len(x) <= 3:
            raise ConfigurationError(f"spatial dimension must be 1, 2 or 3, got {len(x)}")
        if not (math.isfinite(self.t) and all(math.isfinite(v) for v in x)):
            raise ConfigurationError("event coordinates must be finite")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", x)

    @property
    def d(self) -> int:
        return len(self.x)

    def shifted(self, dt: float = 0.0, dx: Sequence[float] | None = None) -> "Event":
        x = self.x if dx is None else tuple(a + b for a, b in zip(self.x, dx))
        return Event(self.t + dt, x)


def event(t: float, *x: float) -> Event:
    if len(x) == 1 and np.ndim(x[0]) > 0:
        x = tuple(x[0])
    return Event(t, tuple(x))


def interval(a: Event, b: Event) -> float:
    """eta(a-b, a-b) with signature (-,+,...,+)."""
    if a.d != b.d:
        raise ConfigurationError(f"dimension mismatch: {a.d} vs {b.d}")
    dx2 = sum((p - q) ** 2 for p, q in zip(a.x, b.x))
    return -((a.t - b.t) ** 2) + dx2


class CausalRelation(enum.Enum):
    SPACELIKE = "Spacelike"
    IN_FUTURE = "InFuture"
    IN_PAST = "InPast"
    NULL_FUTURE = "Boundary-Null-Future"
    NULL_PAST = "Boundary-Null-Past"

    @property
    def is_causal_future(self) -> bool:
        """Membership in J+ with the null boundary included."""
        return self in (CausalRelation.IN_FUTURE, CausalRelation.NULL_FUTURE)

    @property
    def is_causal(self) -> bool:
        return self is not CausalRelation.SPACELIKE


@dataclass(frozen=True)
class InteractionRegion:
    """Slab [t_on, t_off] x ball(spatial_center, spatial_radius) bounding supp(chi F)."""

    t_on: float
    t_off: float
    spatial_center: Tuple[float, ...]
    spatial_radius: float
    effective_support_level: float = 1.0

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(np.asarray(self.spatial_center, dtype=float)))
        object.__setattr__(self, "spatial_center", c)
        if not self.t_on <= self.t_off:
            raise ConfigurationError("t_on must not exceed t_off")
        if not self.spatial_radius >= 0:
            raise ConfigurationError("spatial_radius must be non-negative")
        if not 0 < self.effective_support_level <= 1:
            raise ConfigurationError("effective_support_level must lie in (0, 1]")

    @property
    def d(self) -> int:
        return len(self.spatial_center)

    def sample(self, n: int, rng: np.random.Generator) -> list[Event]:
        """Uniform-ish random points of the slab x ball (boundary included)."""
        ts = rng.uniform(self.t_on, self.t_off, n)
        ts[: min(n, 2)] = [self.t_on, self.t_off][: min(n, 2)]
        dirs = rng.normal(size=(n, self.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = self.spatial_radius * rng.uniform(0, 1, n) ** (1.0 / self.d)
        radii[::3] = self.spatial_radius
        xs = np.asarray(self.spatial_center) + dirs * radii[:, None]
        return [Event(float(t), tuple(x)) for t, x in zip(ts, xs)]


def _gaps(a: Event, region: InteractionRegion) -> Tuple[float, float, float]:
    if a.d != region.d:
        raise ConfigurationError(f"dimension mismatch: event {a.d} vs region {region.d}")
    dist = math.dist(a.x, region.spatial_center)
    reach = max(0.0, dist - region.spatial_radius)
    # a lies in J+ iff some region point p has a.t - p.t >= |a.x - p.x|; the earliest p is the best witness
    g_future = reach - (a.t - region.t_on)
    g_past = reach - (region.t_off - a.t)
    scale = 1.0 + abs(a.t) + dist + abs(region.t_on) + abs(region.t_off) + region.spatial_radius
    return g_future, g_past, NULL_TOL * scale


def classify(a: Event, region: InteractionRegion) -> CausalRelation:
    """Causal relation of ``a`` to the bounding slab x ball of ``region``.

    Events inside both cones (i.e. inside the region itself) are attributed to the
    deeper cone, ties going to the future.
    """
    gf, gp, tol = _gaps(a, region)
    fut = gf <= tol
    past = gp <= tol
    if fut and (not past or gf <= gp):
        return CausalRelation.NULL_FUTURE if abs(gf) <= tol else CausalRelation.IN_FUTURE
    if past:
        return CausalRelation.NULL_PAST if abs(gp) <= tol else CausalRelation.IN_PAST
    return CausalRelation.SPACELIKE


def in_causal_future(a: Event, region: InteractionRegion) -> bool:
    return classify(a, region).is_causal_future


def spacelike_margin(a: Event, region: InteractionRegion) -> float:
    """Smallest of the two cone gaps; positive iff spacelike."""
    gf, gp, _ = _gaps(a, region)
    return min(gf, gp)


def regions_spacelike(r1: InteractionRegion, r2: InteractionRegion) -> bool:
    """True iff every point of r1 is spacelike to every point of r2 (slab x ball bound)."""
    dist = math.dist(r1.spatial_center, r2.spatial_center) - r1.spatial_radius - r2.spatial_radius
    dt = max(r1.t_off - r2.t_on, r2.t_off - r1.t_on)
    return dist > max(dt, 0.0) + NULL_TOL * (1.0 + abs(dist))


def region_in_future(inner: InteractionRegion, outer: InteractionRegion) -> bool:
    """True iff every point of ``inner`` lies in J+(outer) (null boundary included)."""
    dist = math.dist(inner.spatial_center, outer.spatial_center) + inner.spatial_radius
    reach = max(0.0, dist - outer.spatial_radius)
    return inner.t_on - outer.t_on >= reach - NULL_TOL * (1.0 + reach)


def region_of(chi: Profile, f: Profile, level: float = DEFAULT_SUPPORT_LEVEL) -> InteractionRegion:
    """Bounding interaction region of supp(chi F) at the given mass level."""
    if chi.dim != 1:
        raise ConfigurationError("switching profile must be one-dimensional")
    for p in (chi, f):
        m = p.mass()
        if not (math.isfinite(m) and m > 0):
            raise ConfigurationError(f"profile {p.kind} has undefined L1 mass")
    compact = chi.is_compact and f.is_compact
    eff = 1.0 if compact else float(level)
    t_on, t_off = chi.bounds(1.0 if chi.is_compact else level)
    center, radius = f.ball(1.0 if f.is_compact else level)
    return InteractionRegion(t_on, t_off, center, radius, eff)


def measurement_region(region: InteractionRegion, T: float | None = None) -> InteractionRegion:
    """Default projective-measurement region {T} x ball, T = t_off unless given."""
    T = region.t_off if T is None else float(T)
    if T < region.t_off:
        raise ConfigurationError("the projective measurement must happen after the interaction switches off")
    return InteractionRegion(T, T, region.spatial_center, region.spatial_radius, region.effective_support_level)


def classify_all(points: Iterable[Event], region: InteractionRegion) -> list[CausalRelation]:
    return [classify(p, region) for p in points]
