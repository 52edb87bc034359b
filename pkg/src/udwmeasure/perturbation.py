"""Perturbative M operators, POVM expectations and the Dyson bilinear engine.

With H(t) = lambda chi(t) mu(t) phi(F, t) the Dyson terms are

    M^(p) = (-i lambda)^p  int_{t_1 > ... > t_p} A_p(t) phi(t_1) ... phi(t_p),
    A_p(t) = <s| mu(t_1) ... mu(t_p) |psi>,

so every expectation <M^(p)dag Phi M^(q)> is an integral of detector amplitudes
against a (p + n + q)-point function,

    i^p (-i)^q lambda^(p+q) int conj(A_p(t)) A_q(t') w(phi(t_p)..phi(t_1), Phi, phi(t'_1)..phi(t'_q)).

The non-selective sum over {s, s_bar} replaces conj(A_p) A_q by
<psi| mu(t_p)..mu(t_1) mu(t'_1)..mu(t'_q) |psi>.  The (1,1) term is integrated on
the mirrored ordered triangle so that it shares nodes with the (2,0)/(0,2) terms;
normalization and the mixture identity then hold to rounding.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detector import DetectorSpec, DetectorVector, chain_element
from .errors import ConfigurationError, NumericGuardError, PerturbativeValidityError, ZeroProbabilityError
from .fieldstate import FieldState, Probe, as_probe, wick
from .quadrature import QuadratureSpec, TimeRule
from .spacetime import DEFAULT_SUPPORT_LEVEL, InteractionRegion, measurement_region

log = logging.getLogger(__name__)

ORTHOGONALITY_THRESHOLD = 1e-8
ZERO_PROBABILITY = 1e-14
IMAG_RESIDUE = 1e-10
NEGATIVE_GUARD = -1e-10
VALIDITY_RATIO = 0.1


class PerturbativeWarning(UserWarning):
    """Second-order corrections are not small compared to the leading term."""


@dataclass(frozen=True)
class MeasurementSpec:
    """Detector, initial state psi, outcome s and the projective-measurement region."""

    detector: DetectorSpec
    psi: DetectorVector
    s: DetectorVector
    region: Optional[InteractionRegion] = None
    support_level: float = DEFAULT_SUPPORT_LEVEL

    def __post_init__(self):
        self.psi.require_unit("initial detector state")
        self.s.require_unit("outcome state")
        det_region = self.detector.region(self.support_level)
        if self.region is None:
            object.__setattr__(self, "region", measurement_region(det_region))
        elif self.region.t_on < det_region.t_off - 1e-12:
            raise ConfigurationError("measurement region must lie after the interaction switches off")

    @property
    def s_bar(self) -> DetectorVector:
        return self.s.complement()

    @property
    def c0(self) -> complex:
        return self.s.inner(self.psi)

    @property
    def orthogonal(self) -> bool:
        return abs(self.c0) < ORTHOGONALITY_THRESHOLD

    def with_outcome(self, s: DetectorVector) -> "MeasurementSpec":
        return MeasurementSpec(self.detector, self.psi, s, self.region, self.support_level)

    def with_coupling(self, lam: float) -> "MeasurementSpec":
        return MeasurementSpec(self.detector.with_coupling(lam), self.psi, self.s, self.region, self.support_level)


@dataclass(frozen=True)
class MKernels:
    """Order 0/1/2 kernels of M_{s,psi}; theta(0) = 1/2."""

    spec: MeasurementSpec
    c0: complex
    K1: Callable
    K2: Callable

    @property
    def s(self):
        return self.spec.s

    @property
    def psi(self):
        return self.spec.psi


def build_kernels(m: MeasurementSpec) -> MKernels:
    det, s, psi = m.detector, m.s, m.psi

    def K1(t, x):
        t = np.asarray(t, dtype=float)
        return -1j * det.chi.eval(t) * det.f.eval(x) * chain_element(s, psi, [t], det.gap)

    def K2(t, x, tp, xp):
        t, tp = np.asarray(t, dtype=float), np.asarray(tp, dtype=float)
        theta = np.where(t > tp, 1.0, np.where(t < tp, 0.0, 0.5))
        amp = chain_element(s, psi, [t, tp], det.gap)
        return -theta * det.chi.eval(t) * det.chi.eval(tp) * det.f.eval(x) * det.f.eval(xp) * amp

    return MKernels(m, m.c0, K1, K2)


def _chain_vanishes(bra: DetectorVector, ket: DetectorVector, length: int) -> bool:
    """True if <bra| mu(t_1)..mu(t_length) |ket> is identically zero."""
    if length == 0:
        return bra.inner(ket) == 0
    if length % 2:
        return np.conj(bra.g) * ket.e == 0 and np.conj(bra.e) * ket.g == 0
    return np.conj(bra.g) * ket.g == 0 and np.conj(bra.e) * ket.e == 0


class Engine:
    """Evaluates Dyson bilinears <M^(p)dag Phi M^(q)> / lambda^(p+q) on a field state."""

    def __init__(self, state: FieldState, m: MeasurementSpec, quad: QuadratureSpec = QuadratureSpec(),
                 fold: bool = True):
        self.fold = fold
        self.state = state
        self.m = m
        self.quad = quad
        self.rule = TimeRule(m.detector.chi, quad)
        omega = getattr(state.basis, "omega", None)
        field_top = float(np.max(omega)) if omega is not None and np.size(omega) else 0.0
        self.rule.check_resolution(abs(m.detector.gap) + field_top)
        if m.detector.f.dim != state.basis.d:
            raise ConfigurationError(
                f"smearing dimension {m.detector.f.dim} does not match field dimension {state.basis.d}"
            )

    # -- grids ------------------------------------------------------------
    def _grid(self, p: int, q: int):
        if p == 1 and q == 1:
            tb, tk, w = self.rule.square()
            return [tb], [tk], w
        coarse = p + q >= 4
        bra, wb = self.rule.simplex(p, coarse)
        ket, wk = self.rule.simplex(q, coarse)
        ib, ik = np.meshgrid(np.arange(wb.size), np.arange(wk.size), indexing="ij")
        ib, ik = ib.ravel(), ik.ravel()
        return [t[ib] for t in bra], [t[ik] for t in ket], wb[ib] * wk[ik]

    def term(self, p: int, q: int, points: Sequence, outcome: Optional[DetectorVector]) -> complex:
        """Bilinear (p, q) for selective outcome ``outcome``; ``None`` sums over outcomes."""
        psi, gap = self.m.psi, self.m.detector.gap
        if outcome is not None:
            if _chain_vanishes(outcome, psi, p) or _chain_vanishes(outcome, psi, q):
                return 0.0j
        elif _chain_vanishes(psi, psi, p + q):
            return 0.0j
        probes = [as_probe(x) for x in points]
        if p + q == 0:
            amp = 1.0 if outcome is None else abs(outcome.inner(psi)) ** 2
            return complex(amp * wick(self.state, probes))
        if self.fold and p + q >= 3 and min(p, q) == 1:
            return self._folded_term(p, q, probes, outcome)
        bra, ket, w = self._grid(p, q)
        f = self.m.detector.f
        total = 0.0j
        chunk = self.quad.chunk
        for lo in range(0, w.size, chunk):
            sl = slice(lo, lo + chunk)
            b = [t[sl] for t in bra]
            k = [t[sl] for t in ket]
            if outcome is None:
                amp = chain_element(psi, psi, b[::-1] + k, gap)
            else:
                amp = np.conj(chain_element(outcome, psi, b, gap)) * chain_element(outcome, psi, k, gap)
            ops = [Probe(t, f) for t in b[::-1]] + probes + [Probe(t, f) for t in k]
            vals = wick(self.state, ops)
            total += np.sum(w[sl] * amp * vals)
        return complex((1j) ** p * (-1j) ** q * total)

    def _folded_term(self, p: int, q: int, probes: List[Probe], outcome: Optional[DetectorVector]) -> complex:
        """(1, q) or (p, 1): the single-time side becomes one weighted field operator.

        The detector amplitude factorizes through the intermediate level, so the
        folded operator carries conj(A_1) (bra) or A_1 (ket) in its weights.
        """
        psi, gap, f = self.m.psi, self.m.detector.gap, self.m.detector.f
        single_bra = p == 1
        t1, w1 = self.rule.line()
        ordered, wo = self.rule.simplex(q if single_bra else p)
        ordered = list(ordered)
        factors = []
        if outcome is not None:
            if single_bra:
                factors.append((np.conj(chain_element(outcome, psi, [t1], gap)), chain_element(outcome, psi, ordered, gap)))
            else:
                factors.append((chain_element(outcome, psi, [t1], gap), np.conj(chain_element(outcome, psi, ordered, gap))))
        else:
            for x in (DetectorVector(1.0, 0.0), DetectorVector(0.0, 1.0)):
                if single_bra:
                    # <psi| mu(t_b) |x> <x| mu(t'_1)..mu(t'_q) |psi>
                    factors.append((chain_element(psi, x, [t1], gap), chain_element(x, psi, ordered, gap)))
                else:
                    # <psi| mu(t_p)..mu(t_1) |x> <x| mu(t'_1) |psi>
                    factors.append((chain_element(x, psi, [t1], gap), chain_element(psi, x, ordered[::-1], gap)))
        total = 0.0j
        chunk = self.quad.chunk
        for a_single, a_multi in factors:
            a_multi = np.broadcast_to(a_multi, wo.shape)
            if not np.any(a_single) or not np.any(a_multi):
                continue
            fold = Probe.folded(t1, f, w1 * a_single)
            for lo in range(0, wo.size, chunk):
                sl = slice(lo, lo + chunk)
                ts = [t[sl] for t in ordered]
                if single_bra:
                    ops = [fold] + probes + [Probe(t, f) for t in ts]
                else:
                    ops = [Probe(t, f) for t in ts[::-1]] + probes + [fold]
                total += np.sum(wo[sl] * a_multi[sl] * wick(self.state, ops))
        return complex((1j) ** p * (-1j) ** q * total)

    def order_terms(self, r: int, points: Sequence, outcome: Optional[DetectorVector]) -> Dict[Tuple[int, int], complex]:
        return {(p, r - p): self.term(p, r - p, points, outcome) for p in range(r + 1)}

    def series(self, orders: Sequence[int], points: Sequence, outcome: Optional[DetectorVector]) -> Dict[int, complex]:
        return {r: sum(self.order_terms(r, points, outcome).values()) for r in orders}


def expand_ratio(num: Sequence[complex], den: Sequence[complex], upto: int) -> List[complex]:
    """Coefficients W_k of (sum lam^k num_k) / (sum lam^k den_k) for k <= upto."""
    if abs(den[0]) <= ZERO_PROBABILITY:
        raise ZeroProbabilityError(f"leading outcome probability {abs(den[0]):.3g} is numerically zero")
    out: List[complex] = []
    for k in range(upto + 1):
        acc = num[k] - sum(den[j] * out[k - j] for j in range(1, k + 1))
        out.append(acc / den[0])
    return out


def _real_checked(z: complex, what: str) -> float:
    if abs(z.imag) > IMAG_RESIDUE * max(1.0, abs(z.real)):
        raise NumericGuardError(f"{what} has imaginary residue {z.imag:.3g}")
    return float(z.real)


def povm_terms(state: FieldState, m: MeasurementSpec, order: int, quad: QuadratureSpec = QuadratureSpec(),
               engine: Engine | None = None) -> List[float]:
    """Coefficients e_r with <E_{s,psi}> = sum_r lambda^r e_r, r <= order."""
    if order not in (0, 1, 2):
        raise ConfigurationError("order must be 0, 1 or 2")
    eng = engine or Engine(state, m, quad)
    series = eng.series(range(order + 1), [], m.s)
    return [_real_checked(series[r], f"order-{r} POVM term") for r in range(order + 1)]


def povm_expectation(state: FieldState, m: MeasurementSpec, order: int, quad: QuadratureSpec = QuadratureSpec(),
                     engine: Engine | None = None) -> float:
    """<E_{s,psi}> to the requested order in lambda."""
    lam = m.detector.coupling
    e = povm_terms(state, m, order, quad, engine)
    total = sum(lam**r * v for r, v in enumerate(e))
    if order == 2 and e[0] > 0 and lam**2 * abs(e[2]) > VALIDITY_RATIO * e[0]:
        warnings.warn("second-order POVM correction exceeds 10% of the leading term", PerturbativeWarning)
    if total < NEGATIVE_GUARD:
        raise PerturbativeValidityError(f"<E> = {total:.3g} < 0: coupling too large for the expansion")
    return total


def completeness_defect(state: FieldState, m: MeasurementSpec, order: int,
                        quad: QuadratureSpec = QuadratureSpec()) -> float:
    """| <E_s> + <E_sbar> - 1 | at the given order."""
    eng = Engine(state, m, quad)
    es = povm_expectation(state, m, order, quad, eng)
    eb = povm_expectation(state, m.with_outcome(m.s_bar), order, quad, eng)
    return abs(es + eb - 1.0)
