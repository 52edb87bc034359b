"""Where does a measurement update show up?  Delta_n estimators and scans.

    Delta_n(Phi) = <E_s> (w_n^S - w_n) = sum_r lambda^r (T_r(Phi) - T_r(1) w_n(Phi))

with the ratio form applied everywhere, so Delta_n is a polynomial in lambda.
Order one splits into a covariance part and a commutator part; order two into
the (1,1) part R and the (2,0)+(0,2) part S.  For eigenstate (s, psi) pairs on
zero-mean Gaussian states Delta_2 also has a closed form in two-point functions,
and for the vacuum continuum a momentum-space form.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import j0

from .detector import EXCITED, GROUND, DetectorVector, chain_element
from .errors import ConfigurationError, NumericGuardError, UnsupportedConfiguration
from .fieldstate import ContinuumBasis, FieldState, Probe, Vacuum, as_probe, wick
from .perturbation import Engine, MeasurementSpec
from .profiles import Delta, Gaussian
from .quadrature import QuadratureSpec
from .spacetime import CausalRelation, Event, InteractionRegion, classify, spacelike_margin

#: weight below which the momentum integrand is dropped
K_CUTOFF_WEIGHT = 1e-16
SCAN_KINDS = ("NS1", "NS2", "S1", "S2")


@dataclass
class DeltaReport:
    points: Tuple[Event, ...]
    relation: Tuple[CausalRelation, ...]
    value: complex
    order: int
    decomposition: Dict[str, complex] = field(default_factory=dict)
    checks: Dict[str, float] = field(default_factory=dict)

    @property
    def closure(self) -> float:
        return abs(self.value - sum(self.decomposition.values()))


def _relations(points, region: InteractionRegion) -> Tuple[CausalRelation, ...]:
    return tuple(classify(p, region) for p in points)


def _check_order(order: int) -> None:
    if order not in (1, 2):
        raise ConfigurationError("Delta estimators are defined at order 1 or 2")


def _first_order_parts(state: FieldState, m: MeasurementSpec, points: Sequence, quad: QuadratureSpec):
    """Covariance and commutator parts of the lambda^1 coefficient (lambda stripped).

    With z(t) = <psi|s><s|mu(t)|psi>:
        2 int chi Im z (sym<P Phi> - <P><Phi>)   and   i int chi Re z <[P, Phi]>.
    """
    eng = Engine(state, m, quad)
    t, w = eng.rule.line()
    z = np.conj(m.c0) * chain_element(m.s, m.psi, [t], m.detector.gap)
    probes = [as_probe(x) for x in points]
    P = Probe(t, m.detector.f)
    front = wick(state, [P] + probes)
    back = wick(state, probes + [P])
    mean_p = np.broadcast_to(wick(state, [P]), t.shape)
    wn = wick(state, probes)
    cov = 0.5 * (front + back) - mean_p * wn
    comm = front - back
    return complex(np.sum(w * 2.0 * z.imag * cov)), complex(np.sum(w * 1j * z.real * comm))


def delta_n(state: FieldState, m: MeasurementSpec, points: Sequence[Event], order: int,
            quad: QuadratureSpec = QuadratureSpec(), region: InteractionRegion | None = None) -> DeltaReport:
    """Delta_n for the n points given; decomposition keys name the contributing structures."""
    _check_order(order)
    points = tuple(points)
    lam = m.detector.coupling
    parts: Dict[str, complex] = {}
    cov, comm = _first_order_parts(state, m, points, quad)
    parts["covariance-term"] = lam * cov
    parts["commutator-term"] = lam * comm
    if order == 2:
        eng = Engine(state, m, quad)
        wn = complex(wick(state, [as_probe(x) for x in points]))
        terms = eng.order_terms(2, points, m.s)
        norms = eng.order_terms(2, [], m.s)
        r = terms[(1, 1)] - norms[(1, 1)] * wn
        s = terms[(2, 0)] + terms[(0, 2)] - (norms[(2, 0)] + norms[(0, 2)]) * wn
        parts["R-term"] = lam**2 * r
        parts["S-term"] = lam**2 * s
    region = region or m.detector.region(m.support_level)
    return DeltaReport(points, _relations(points, region), sum(parts.values()), order, parts)


def delta1(state: FieldState, m: MeasurementSpec, x1: Event, order: int,
           quad: QuadratureSpec = QuadratureSpec()) -> DeltaReport:
    return delta_n(state, m, [x1], order, quad)


def _eigen_kind(m: MeasurementSpec) -> Optional[Tuple[bool, float]]:
    """(orthogonal, sign) for eigenstate pairs; sign flips Omega when psi = |e>."""
    def which(v: DetectorVector):
        if abs(abs(v.g) - 1.0) < 1e-12:
            return GROUND
        if abs(abs(v.e) - 1.0) < 1e-12:
            return EXCITED
        return None

    s, psi = which(m.s), which(m.psi)
    if s is None or psi is None:
        return None
    return (s is not psi), (1.0 if psi is GROUND else -1.0)


def delta2_closed_form(state: FieldState, m: MeasurementSpec, x1: Event, x2: Event,
                       quad: QuadratureSpec = QuadratureSpec()) -> complex:
    """lambda^2 Delta_2 from products of two-point functions (eigenstates, zero mean)."""
    kind = _eigen_kind(m)
    if kind is None:
        raise ConfigurationError("the closed form needs eigenstate (s, psi)")
    if not state.zero_mean:
        raise ConfigurationError("the closed form needs a zero-mean Gaussian state")
    orthogonal, sign = kind
    eng = Engine(state, m, quad)
    f, om = m.detector.f, sign * m.detector.gap
    X1, X2 = as_probe(x1), as_probe(x2)
    lam2 = m.detector.coupling**2
    if orthogonal:
        t, tp, w = eng.rule.square()
        P, Pp = Probe(t, f), Probe(tp, f)
        phase = np.exp(-1j * om * (t - tp))
        body = state.cov(P, X1) * state.cov(X2, Pp) + state.cov(P, X2) * state.cov(X1, Pp)
        return complex(lam2 * np.sum(w * phase * body))
    (t1, t2), w = eng.rule.simplex(2)
    P1, P2 = Probe(t1, f), Probe(t2, f)
    ket = np.exp(-1j * om * (t1 - t2)) * (state.cov(X1, P1) * state.cov(X2, P2) + state.cov(X1, P2) * state.cov(X2, P1))
    bra = np.exp(1j * om * (t1 - t2)) * (state.cov(P2, X1) * state.cov(P1, X2) + state.cov(P2, X2) * state.cov(P1, X1))
    return complex(-lam2 * np.sum(w * (ket + bra)))


def delta2(state: FieldState, m: MeasurementSpec, x1: Event, x2: Event, order: int,
           quad: QuadratureSpec = QuadratureSpec()) -> DeltaReport:
    """Delta_2; eigenstate pairs on zero-mean states also carry the closed-form cross-check."""
    rep = delta_n(state, m, [x1, x2], order, quad)
    if order == 2 and state.zero_mean and _eigen_kind(m) is not None:
        closed = delta2_closed_form(state, m, x1, x2, quad)
        rep.checks["closed-form"] = abs(closed)
        rep.checks["closed-form-residual"] = abs(closed - rep.decomposition["R-term"] - rep.decomposition["S-term"])
    return rep


# --------------------------------------------------------------------------
# momentum-space route (vacuum, continuum, g <-> e)
# --------------------------------------------------------------------------


def _smearing_width(f) -> float:
    if isinstance(f, Delta):
        return 0.0
    if isinstance(f, Gaussian):
        return f.width
    raise UnsupportedConfiguration(f"momentum route supports Gaussian or Delta smearing, not {f.kind}")


def _k_cutoff(m: MeasurementSpec, mass: float) -> float:
    cut = math.sqrt(2.0 * math.log(1.0 / K_CUTOFF_WEIGHT))
    kmax = math.inf
    sigma = _smearing_width(m.detector.f)
    if sigma > 0:
        kmax = cut / sigma
    chi = m.detector.chi
    if isinstance(chi, Gaussian):
        w_c = abs(m.detector.gap) + cut / chi.width
        kmax = min(kmax, math.sqrt(max(w_c**2 - mass**2, 0.0)))
    if not math.isfinite(kmax):
        raise UnsupportedConfiguration("momentum route needs a Gaussian switching or Gaussian smearing for decay")
    return kmax


def _angular(d: int, k: np.ndarray, R: float) -> np.ndarray:
    if d == 3:
        return 4.0 * math.pi * k**2 * np.sinc(k * R / math.pi)
    if d == 2:
        return 2.0 * math.pi * k * j0(k * R)
    return 2.0 * np.cos(k * R)


def _radial(fn, kmax: float, scale: float, tol: float = 1e-12, nodes: int = 24) -> complex:
    """Composite Gauss-Legendre on [0, kmax], panels doubled until two passes agree."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    panels = max(8, int(math.ceil(kmax * (scale + 1.0) / math.pi)))
    prev = None
    for _ in range(8):
        edges = np.linspace(0.0, kmax, panels + 1)
        h = 0.5 * (edges[1:] - edges[:-1])
        ks = (h[:, None] * (x[None, :] + 1.0) + edges[:-1, None]).ravel()
        wk = (h[:, None] * w[None, :]).ravel()
        val = complex(np.sum(wk * fn(ks)))
        if prev is not None and abs(val - prev) <= tol * max(abs(val), 1e-300):
            return val
        prev, panels = val, panels * 2
    return val


def momentum_delta2(state: FieldState, m: MeasurementSpec, x1: Event, x2: Event) -> complex:
    """lambda^2 Delta_2 for the continuum vacuum with s, psi = |e>, |g> (or swapped).

    Delta_2 = lambda^2 [a(x1) b(x2) + a(x2) b(x1)] with
        a(x) = int d^dk / ((2pi)^d 2w)  F^(-k) chi~(-(w + O)) exp(i(w t - k.x)),
        b(x) = int d^dk / ((2pi)^d 2w)  F^(+k) chi~(w + O)    exp(-i(w t - k.x)),
    where F^ is the smearing transform, chi~ the switching transform and O = +/-Omega.
    """
    if not (isinstance(state, Vacuum) and isinstance(state.basis, ContinuumBasis)):
        raise UnsupportedConfiguration("momentum route needs the continuum vacuum")
    kind = _eigen_kind(m)
    if kind is None or not kind[0]:
        raise ConfigurationError("momentum route needs orthogonal eigenstates s, psi")
    d, mass = state.basis.d, state.basis.mass
    om = kind[1] * m.detector.gap
    chi, f = m.detector.chi, m.detector.f
    sigma = _smearing_width(f)
    amp = f.mass() if isinstance(f, Gaussian) else f.amplitude
    center = np.asarray(f.center, dtype=float)
    kmax = _k_cutoff(m, mass)

    def ab(x: Event, conj: bool) -> complex:
        R = float(np.linalg.norm(np.asarray(x.x) - center))
        t = x.t

        def fn(k):
            w = np.sqrt(k**2 + mass**2)
            q = (w + om)[:, None]
            if conj:
                ct, ph = chi.transform(q), np.exp(-1j * w * t)
            else:
                ct, ph = chi.transform(-q), np.exp(1j * w * t)
            return amp * np.exp(-0.5 * sigma**2 * k**2) * ct * ph * _angular(d, k, R) / (2.0 * w)

        return _radial(fn, kmax, R + abs(t)) / (2.0 * math.pi) ** d

    lam2 = m.detector.coupling**2
    return lam2 * (ab(x1, False) * ab(x2, True) + ab(x2, False) * ab(x1, True))


# --------------------------------------------------------------------------
# scans and checks
# --------------------------------------------------------------------------


def _ns_control(state, m, points, order, quad, region) -> DeltaReport:
    eng = Engine(state, m, quad)
    lam = m.detector.coupling
    s = eng.series(range(1, order + 1), points, None)
    parts = {f"order-{r}": lam**r * s[r] for r in s}
    return DeltaReport(tuple(points), _relations(points, region), sum(parts.values()), order, parts)


def spacelike_scan(state: FieldState, m: MeasurementSpec, grid: Sequence, which: str, order: int,
                   quad: QuadratureSpec = QuadratureSpec(), threads: int = 1) -> List[DeltaReport]:
    """Evaluate one estimator on every grid entry.

    ``grid`` holds Events for the one-point kinds and (Event, Event) pairs for the
    two-point kinds.  NS kinds report w_n^NS - w_n as a causality control.
    """
    if which not in SCAN_KINDS:
        raise ConfigurationError(f"scan kind must be one of {SCAN_KINDS}")
    _check_order(order)
    region = m.detector.region(m.support_level)
    two = which.endswith("2")
    entries = []
    for g in grid:
        pts = (g,) if isinstance(g, Event) or not two else tuple(g)
        if len(pts) != (2 if two else 1) or not all(isinstance(p, Event) for p in pts):
            raise ConfigurationError(f"grid entry {g!r} does not match scan kind {which}")
        entries.append(pts)

    def one(pts):
        if which.startswith("NS"):
            return _ns_control(state, m, pts, order, quad, region)
        return delta_n(state, m, pts, order, quad, region)

    if threads > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, entries))
    return [one(p) for p in entries]


def gaussian_theorem_check(state: FieldState, m: MeasurementSpec, events: Sequence[Event],
                           quad: QuadratureSpec = QuadratureSpec()) -> float:
    """max |Delta_1| over events at orders one and two; zero for eigenstates on zero-mean states."""
    worst = 0.0
    for ev in events:
        worst = max(worst, abs(delta_n(state, m, [ev], 2, quad).value))
    return worst


def random_spacelike_events(region: InteractionRegion, count: int, rng: np.random.Generator,
                            reach: float = 3.0, margin: float = 0.1) -> List[Event]:
    """Events spacelike to ``region`` with at least ``margin`` to spare."""
    out: List[Event] = []
    d = region.d
    c = np.asarray(region.spatial_center, dtype=float)
    t_mid = 0.5 * (region.t_on + region.t_off)
    half = 0.5 * (region.t_off - region.t_on)
    # spacelike to the whole slab needs spatial reach beyond the ball above half + |t - t_mid|
    for _ in range(1000 * count):
        if len(out) == count:
            break
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        slack = rng.uniform(margin, reach)
        r = region.spatial_radius + half + slack
        t = t_mid + rng.uniform(-1.0, 1.0) * (slack - margin)
        ev = Event(float(t), tuple(c + r * direction))
        if classify(ev, region) is CausalRelation.SPACELIKE and spacelike_margin(ev, region) >= margin:
            out.append(ev)
    if len(out) < count:
        raise NumericGuardError(f"could not place {count} events spacelike to the region")
    return out
