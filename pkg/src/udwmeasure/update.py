"""Updated n-point functions after a detector measurement.

Non-selective:  w^NS = sum_r lambda^r T_r^NS(Phi).
Selective (some point in the causal future P of the measurement):
    w^S = sum_r lambda^r T_r^s(Phi) / sum_r lambda^r T_r^s(1),
expanded as a power series in lambda.  When <s|psi> = 0 both series start at
lambda^2 and the ratio uses T_2, T_3, T_4 (the order-2 coefficient needs the
third Dyson term).  Outside P the selective rule falls back to the
non-selective one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .detector import DetectorVector
from .errors import ConfigurationError, UnsupportedConfiguration, ZeroProbabilityError
from .fieldstate import BoxBasis, FieldState, Probe, as_probe
from .perturbation import ZERO_PROBABILITY, Engine, MeasurementSpec, expand_ratio
from .quadrature import QuadratureSpec
from .spacetime import Event, InteractionRegion, classify


class Mode(str, enum.Enum):
    NONSELECTIVE = "NS"
    SELECTIVE = "S"

    @classmethod
    def parse(cls, v) -> "Mode":
        if isinstance(v, Mode):
            return v
        key = str(v).strip().upper()
        if key in ("NS", "NONSELECTIVE", "NON-SELECTIVE"):
            return cls.NONSELECTIVE
        if key in ("S", "SELECTIVE"):
            return cls.SELECTIVE
        raise ConfigurationError(f"unknown update mode {v!r}")


@dataclass
class UpdateQuery:
    points: Sequence
    state: FieldState
    measurement: MeasurementSpec
    mode: Mode = Mode.NONSELECTIVE
    order: int = 2
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if self.order not in (0, 1, 2):
            raise ConfigurationError("order must be 0, 1 or 2")
        self.points = list(self.points)


def _event_of(p) -> Optional[Event]:
    if isinstance(p, Event):
        return p
    if isinstance(p, Probe):
        if p.smear.is_delta and np.size(p.t) == 1:
            return Event(float(np.ravel(p.t)[0]), tuple(p.smear.center))
        return None
    raise TypeError(f"cannot interpret {p!r} as a spacetime point")


def in_P(points: Sequence, region: InteractionRegion) -> bool:
    """True if any point lies in the causal future of the measurement (null counts)."""
    for p in points:
        ev = _event_of(p)
        if ev is None:
            # smeared probe: treat as inside unless its whole support is spacelike/past
            return True
        if classify(ev, region).is_causal_future:
            return True
    return False


class Updater:
    """Caches one engine per (state, measurement) for repeated queries."""

    def __init__(self, state: FieldState, m: MeasurementSpec, quad: QuadratureSpec = QuadratureSpec()):
        self.state, self.m, self.quad = state, m, quad
        self.engine = Engine(state, m, quad)

    def ns_terms(self, points, order: int) -> List[complex]:
        s = self.engine.series(range(order + 1), points, None)
        return [s[r] for r in range(order + 1)]

    def s_terms(self, points, orders, outcome: DetectorVector | None = None) -> Dict[int, complex]:
        return self.engine.series(orders, points, outcome or self.m.s)

    def ns(self, points, order: int) -> complex:
        lam = self.m.detector.coupling
        return complex(sum(lam**r * t for r, t in enumerate(self.ns_terms(points, order))))

    def ratio_coefficients(self, points, order: int, outcome: DetectorVector | None = None) -> List[complex]:
        """Coefficients W_k of the selective ratio, k <= order."""
        s = outcome or self.m.s
        m = self.m if outcome is None else self.m.with_outcome(outcome)
        if not m.orthogonal:
            orders = range(order + 1)
            num = self.engine.series(orders, points, s)
            den = self.engine.series(orders, [], s)
            return expand_ratio([num[r] for r in orders], [den[r] for r in orders], order)
        orders = range(2, 3 + order)
        num = self.engine.series(orders, points, s)
        den = self.engine.series(orders, [], s)
        if abs(den[2]) <= ZERO_PROBABILITY:
            raise ZeroProbabilityError(f"leading outcome probability {abs(den[2]):.3g} vanishes")
        return expand_ratio([num[r] for r in orders], [den[r] for r in orders], order)

    def selective(self, points, order: int, outcome: DetectorVector | None = None, force_ratio: bool = False) -> complex:
        if not force_ratio and not in_P(points, self.m.region):
            return self.ns(points, order)
        lam = self.m.detector.coupling
        W = self.ratio_coefficients(points, order, outcome)
        return complex(sum(lam**k * w for k, w in enumerate(W)))


def ns_update(q: UpdateQuery) -> complex:
    """Non-selective updated n-point function to the requested order."""
    return Updater(q.state, q.measurement, q.quad).ns(q.points, q.order)


def sel_update(q: UpdateQuery) -> complex:
    """Selective updated n-point function with the piecewise causal-future rule."""
    up = Updater(q.state, q.measurement, q.quad)
    if q.mode is Mode.NONSELECTIVE:
        return up.ns(q.points, q.order)
    return up.selective(q.points, q.order)


def update(q: UpdateQuery) -> complex:
    return ns_update(q) if q.mode is Mode.NONSELECTIVE else sel_update(q)


# --------------------------------------------------------------------------
# extended n-point functions
# --------------------------------------------------------------------------


@dataclass
class FiniteParty:
    """A finite-dimensional system uncorrelated with the field (product state).

    ``rho`` is its density matrix, ``(l, m)`` selects |gamma_l><gamma_m| and ``where``
    locates it (an Event, a region, or None for "never inside P").
    """

    rho: np.ndarray
    l: int
    m: int
    where: Union[Event, InteractionRegion, None] = None
    entangled: bool = False
    max_dim: int = 64

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        n = self.rho.shape[0]
        if self.rho.shape != (n, n):
            raise ConfigurationError("party density matrix must be square")
        if n > self.max_dim:
            raise ConfigurationError(f"party dimension {n} exceeds the cap {self.max_dim}")
        if not (0 <= self.l < n and 0 <= self.m < n):
            raise ConfigurationError("party basis labels out of range")

    @property
    def factor(self) -> complex:
        """tr(rho_Gamma |l><m|) = <m|rho_Gamma|l>."""
        return complex(self.rho[self.m, self.l])


@dataclass
class FieldParty:
    """A second field sigma on a two-field box; ``sigma_points`` are its arguments."""

    sigma_points: Sequence


@dataclass
class ExtendedQuery:
    points: Sequence
    state: FieldState
    measurement: MeasurementSpec
    third_party: Union[FiniteParty, FieldParty]
    mode: Mode = Mode.NONSELECTIVE
    order: int = 2
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if self.order not in (0, 1, 2):
            raise ConfigurationError("order must be 0, 1 or 2")


def _party_in_P(where, region: InteractionRegion) -> bool:
    if where is None:
        return False
    if isinstance(where, Event):
        return classify(where, region).is_causal_future
    if isinstance(where, InteractionRegion):
        # some event of the party's region can be reached from the measurement region
        gap = float(np.linalg.norm(np.subtract(where.spatial_center, region.spatial_center)))
        gap = max(0.0, gap - where.spatial_radius - region.spatial_radius)
        return where.t_off - region.t_on >= gap
    raise ConfigurationError("party location must be an Event, an InteractionRegion or None")


def extended_update(q: ExtendedQuery) -> complex:
    """Updated extended n-point function for a finite or field third party."""
    party = q.third_party
    if isinstance(party, FiniteParty):
        if party.entangled:
            raise UnsupportedConfiguration("party-field correlations need the oracle backend")
        inner = UpdateQuery(q.points, q.state, q.measurement, q.mode, q.order, q.quad)
        up = Updater(q.state, q.measurement, q.quad)
        if q.mode is Mode.NONSELECTIVE:
            return party.factor * up.ns(inner.points, q.order)
        inside = in_P(inner.points, q.measurement.region) or _party_in_P(party.where, q.measurement.region)
        if not inside:
            return party.factor * up.ns(inner.points, q.order)
        return party.factor * up.selective(inner.points, q.order, force_ratio=True)
    if isinstance(party, FieldParty):
        basis = q.state.basis
        if not isinstance(basis, BoxBasis):
            raise UnsupportedConfiguration("field third parties on the continuum need the oracle backend")
        if basis.fields != 2:
            raise ConfigurationError("field third parties need a two-field box state")
        sig = []
        for y in party.sigma_points:
            if isinstance(y, Event):
                sig.append(Probe.at(y, field=1))
            elif isinstance(y, Probe):
                sig.append(Probe(y.t, y.smear, 1))
            else:
                raise TypeError(f"cannot interpret {y!r} as a sigma point")
        phi = [as_probe(x) for x in q.points]
        probes = sig + phi
        up = Updater(q.state, q.measurement, q.quad)
        if q.mode is Mode.NONSELECTIVE:
            return up.ns(probes, q.order)
        events = list(party.sigma_points) + list(q.points)
        if not in_P(events, q.measurement.region):
            return up.ns(probes, q.order)
        return up.selective(probes, q.order, force_ratio=True)
    raise ConfigurationError("third party must be a FiniteParty or FieldParty")
