import math

import numpy as np
import pytest

from udwmeasure import oracle
from udwmeasure.causality import delta_n
from udwmeasure.detector import EXCITED, GROUND, DetectorSpec, DetectorVector, plus
from udwmeasure.errors import (
    ConfigurationError,
    NumericGuardError,
    UnsupportedConfiguration,
    ZeroProbabilityError,
)
from udwmeasure.fieldstate import BoxBasis, Coherent, ContinuumBasis, Vacuum, wn
from udwmeasure.perturbation import MeasurementSpec, povm_expectation
from udwmeasure.profiles import Gaussian, delta, gaussian
from udwmeasure.quadrature import QuadratureSpec
from udwmeasure.spacetime import Event
from udwmeasure.update import (
    ExtendedQuery,
    FieldParty,
    FiniteParty,
    Mode,
    UpdateQuery,
    Updater,
    extended_update,
    in_P,
    update,
)

BOX2 = BoxBasis(10.0, 0.5, 2)
DET = DetectorSpec(1.0, 0.05, gaussian(1.0), delta(0.0))
COH = Coherent(BOX2, [0.05, 0.02j])
LATE = [Event(7.0, (0.5,)), Event(8.0, (-1.0,))]


@pytest.mark.parametrize("mode", ["NS", "S"])
def test_normalization(mode):
    q = UpdateQuery([], COH, MeasurementSpec(DET, plus(1j), EXCITED), mode, 2)
    assert update(q) == pytest.approx(1.0, abs=1e-13)


def test_eigenstate_leaves_one_point_at_first_order():
    up = Updater(COH, MeasurementSpec(DET, GROUND, EXCITED))
    assert up.ns_terms([Event(4.0, (1.0,))], 1)[1] == 0


def test_ns_one_point_against_oracle():
    m = MeasurementSpec(DET, plus(1), EXCITED)
    pt = [Event(4.0, (1.0,))]
    val = Updater(COH, m).ns(pt, 2)
    assert val == pytest.approx(-0.026497926128635368, abs=1e-13)
    sys_ = oracle.TruncatedSystem(BOX2, [DET], n_max=5)
    exact = oracle.exact_update(sys_, oracle.prepare(sys_.fock, COH), plus(1), pt, "NS")
    assert exact.real == pytest.approx(-0.026481854048575153, abs=1e-11)
    assert abs(val - exact) <= 0.2 * DET.coupling**3


def test_ns_ignores_outcome():
    a = Updater(COH, MeasurementSpec(DET, plus(1j), EXCITED)).ns(LATE, 2)
    b = Updater(COH, MeasurementSpec(DET, plus(1j), plus(1))).ns(LATE, 2)
    assert a == b


def test_selective_outside_future_falls_back():
    m = MeasurementSpec(DET, plus(1j), EXCITED)
    up = Updater(COH, m)
    early = [Event(-20.0, (0.0,))]
    assert not in_P(early, m.region)
    assert up.selective(early, 2) == up.ns(early, 2)
    assert in_P(LATE, m.region)


def test_selective_n0_first_order_is_one():
    up = Updater(COH, MeasurementSpec(DET, plus(1j), EXCITED))
    W = up.ratio_coefficients([], 1)
    assert W[0] == pytest.approx(1.0) and abs(W[1]) < 1e-14


def test_spacelike_selective_equals_initial_on_continuum():
    vac = Vacuum(ContinuumBasis(3))
    det = DetectorSpec(1.0, 0.1, Gaussian(0.05, (0.0,)), Gaussian(0.05, (0.0, 0.0, 0.0)))
    up = Updater(vac, MeasurementSpec(det, plus(1j), EXCITED))
    pts = [Event(0.0, (1.5, 0.0, 0.0)), Event(0.2, (0.0, -2.0, 0.0))]
    assert abs(up.selective(pts, 2) - complex(wn(vac, pts))) <= 1e-6


def test_delta_consistency_between_modules():
    m = MeasurementSpec(DET.with_coupling(0.1), plus(1j), EXCITED)
    up = Updater(COH, m)
    pts = [Event(6.0, (2.0,))]
    lam = 0.1
    W = up.ratio_coefficients(pts, 2)
    e = [complex(up.engine.series([r], [], EXCITED)[r]) for r in range(3)]
    w0 = complex(wn(COH, pts))
    # (w^S - w) <E> truncated at lambda^2, from the update path
    series = [sum(e[j] * W[k - j] for j in range(k + 1)) - e[k] * w0 for k in range(3)]
    via_update = sum(lam**k * c for k, c in enumerate(series))
    via_delta = delta_n(COH, m, pts, 2).value
    assert abs(via_update - via_delta) <= 1e-9


def test_orthogonal_branch_zero_probability():
    # T Omega = 10 leaves exp(-100) of excitation amplitude
    det = DetectorSpec(20.0, 0.05, gaussian(0.5), delta(0.0))
    m = MeasurementSpec(det, GROUND, EXCITED)
    fine = QuadratureSpec(panels=10, simplex3_panels=10, pair4_panels=10)
    with pytest.raises(ZeroProbabilityError):
        Updater(Vacuum(BOX2), m, fine).selective(LATE, 2)


def test_under_resolved_gap_is_refused():
    det = DetectorSpec(20.0, 0.05, gaussian(0.5), delta(0.0))
    with pytest.raises(NumericGuardError, match="under-resolves"):
        Updater(Vacuum(BOX2), MeasurementSpec(det, GROUND, EXCITED))


def test_hermiticity_of_updated_functions():
    up = Updater(COH, MeasurementSpec(DET, plus(1j), EXCITED))
    for fn in (lambda p: up.ns(p, 2), lambda p: up.selective(p, 2)):
        assert fn(LATE) == pytest.approx(np.conj(fn(LATE[::-1])), abs=1e-10)


def test_mode_parsing():
    assert Mode.parse("non-selective") is Mode.NONSELECTIVE
    with pytest.raises(ConfigurationError):
        Mode.parse("sometimes")
    with pytest.raises(ConfigurationError):
        UpdateQuery([], COH, MeasurementSpec(DET, plus(1), EXCITED), "NS", 3)


def test_finite_party_ns_matrix_element():
    rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    m = MeasurementSpec(DET, plus(1j), EXCITED)
    party = FiniteParty(rho, 0, 1)
    q = ExtendedQuery([], COH, m, party, "NS")
    assert extended_update(q) == pytest.approx(rho[1, 0])


def test_finite_party_factorizes():
    rho = np.diag([0.25, 0.75]).astype(complex)
    m = MeasurementSpec(DET, plus(1j), EXCITED)
    party = FiniteParty(rho, 1, 1, where=Event(9.0, (0.0,)))
    val = extended_update(ExtendedQuery(LATE, COH, m, party, "S"))
    assert val == pytest.approx(0.75 * Updater(COH, m).selective(LATE, 2, force_ratio=True))


def test_field_party_on_two_field_box():
    b = BoxBasis(10.0, 0.5, 2, fields=2)
    st = Vacuum(b)
    m = MeasurementSpec(DET, plus(1j), EXCITED)
    val = extended_update(ExtendedQuery([Event(7.0, (0.0,))], st, m, FieldParty([Event(7.0, (1.0,))]), "NS"))
    # sigma never couples to the detector, and the two fields are uncorrelated
    assert abs(val) < 1e-14


def test_field_party_needs_box():
    vac = Vacuum(ContinuumBasis(3))
    det = DetectorSpec(1.0, 0.1, Gaussian(0.05, (0.0,)), Gaussian(0.05, (0.0, 0.0, 0.0)))
    q = ExtendedQuery([], vac, MeasurementSpec(det, plus(1), EXCITED), FieldParty([]), "NS")
    with pytest.raises(UnsupportedConfiguration):
        extended_update(q)
