import math

import numpy as np
import pytest

from udwmeasure import oracle
from udwmeasure.errors import ConfigurationError, UnsupportedConfiguration
from udwmeasure.fieldstate import (
    BoxBasis,
    Coherent,
    ContinuumBasis,
    GaussianGeneral,
    Thermal,
    Vacuum,
    coherent_amplitude,
    w2,
    wick_terms,
    wn,
)
from udwmeasure.spacetime import Event

BOX = BoxBasis(10.0, 0.5, 3)


def _pts(rng, n, d=1):
    return [Event(float(rng.uniform(-2, 2)), tuple(rng.uniform(-3, 3, d))) for _ in range(n)]


def test_box_mode_order():
    assert np.allclose(BoxBasis(10.0, 0.5, 4).k, [0.0, 2 * math.pi / 10, -2 * math.pi / 10, 4 * math.pi / 10])
    assert np.allclose(BoxBasis(10.0, 0.0, 2).k, [2 * math.pi / 10, -2 * math.pi / 10])


def test_single_mode_coincident_two_point():
    b = BoxBasis(10.0, 0.5, 1)
    e = Event(0.0, (0.0,))
    assert complex(w2(Vacuum(b), e, e)) == pytest.approx(1.0 / (2 * 10.0 * 0.5), rel=1e-14)


def test_single_mode_coherent_amplitude():
    b = BoxBasis(10.0, 0.5, 1)
    alpha = 0.3
    st = Coherent(b, [alpha])
    assert coherent_amplitude(st, Event(0.0, (0.0,))) == pytest.approx(2 * alpha / math.sqrt(2 * 10.0 * 0.5))
    period = 2 * math.pi / 0.5
    assert coherent_amplitude(st, Event(period + 0.7, (1.0,))) == pytest.approx(
        coherent_amplitude(st, Event(0.7, (1.0,))), abs=1e-14)


def test_vacuum_limit_of_coherent_amplitude():
    st = Coherent(BOX, [0.0, 0.0, 0.0])
    assert coherent_amplitude(st, Event(1.2, (0.4,))) == 0.0


def test_odd_functions_vanish_for_zero_mean():
    rng = np.random.default_rng(1)
    for st in (Vacuum(BOX), Thermal(BOX, 1.0)):
        assert wn(st, _pts(rng, 1)) == 0
        assert wn(st, _pts(rng, 3)) == 0
        assert wn(st, _pts(rng, 5)) == 0


def test_four_point_pairing():
    rng = np.random.default_rng(2)
    st = Thermal(BOX, 1.5)
    p = _pts(rng, 4)
    pair = lambda i, j: complex(w2(st, p[i], p[j]))  # noqa: E731
    expected = pair(0, 1) * pair(2, 3) + pair(0, 2) * pair(1, 3) + pair(0, 3) * pair(1, 2)
    assert complex(wn(st, p)) == pytest.approx(expected, rel=1e-13)


def test_coherent_structure():
    rng = np.random.default_rng(3)
    st = Coherent(BOX, [0.2, 0.1j, -0.05])
    vac = Vacuum(BOX)
    p = _pts(rng, 3)
    f = [coherent_amplitude(st, x) for x in p]
    vw = lambda i, j: complex(w2(vac, p[i], p[j]))  # noqa: E731
    assert complex(wn(st, p[:2])) == pytest.approx(f[0] * f[1] + vw(0, 1), rel=1e-13)
    expected = f[0] * f[1] * f[2] + f[0] * vw(1, 2) + f[1] * vw(0, 2) + f[2] * vw(0, 1)
    assert complex(wn(st, p)) == pytest.approx(expected, rel=1e-13)


def test_wick_term_counts():
    assert [wick_terms(n, False) for n in (2, 4, 6)] == [1, 3, 15]
    assert [wick_terms(n, True) for n in (1, 2, 3)] == [1, 2, 4]


def test_hermiticity_random_gaussian():
    rng = np.random.default_rng(4)
    st = GaussianGeneral.random(BOX, rng, squeeze=0.3, beta=1.0)
    for n in range(1, 7):
        p = _pts(rng, n)
        a, b = complex(wn(st, p)), complex(wn(st, p[::-1]))
        assert abs(a - b.conjugate()) <= 1e-10 * max(1.0, abs(a))


@pytest.mark.parametrize("state", ["vacuum", "coherent", "thermal"])
def test_box_wn_matches_oracle(state):
    b = BoxBasis(10.0, 0.5, 2)
    st = {"vacuum": Vacuum(b), "coherent": Coherent(b, [0.2, -0.1j]), "thermal": Thermal(b, 4.0)}[state]
    sys_ = oracle.TruncatedSystem(b, [], n_max=14)
    ens = oracle.prepare(sys_.fock, st)
    assert ens.leakage < 1e-10
    rng = np.random.default_rng(6)
    for n in range(0, 5):
        p = _pts(rng, n)
        assert abs(complex(wn(st, p)) - oracle.npoint(sys_, ens, p)) <= 1e-8


def test_microcausality_trend_in_box():
    a, b = Event(0.0, (0.0,)), Event(0.5, (3.0,))
    vals = [abs(complex(w2(Vacuum(BoxBasis(40.0, 0.5, n)), a, b)).imag) for n in (8, 16, 32, 64)]
    # the trend must go down overall; individual steps may ripple
    assert vals[-1] < vals[0]
    assert np.polyfit(np.log([8, 16, 32, 64]), np.log(vals), 1)[0] < 0


def test_continuum_massless_closed_form():
    st = Vacuum(ContinuumBasis(3, 0.0, eps=1e-9, richardson=False))
    a, b = Event(0.0, (0.0, 0.0, 0.0)), Event(0.3, (1.0, 0.5, 0.0))
    dt, r2 = -0.3, 1.25
    expected = 1.0 / (4 * math.pi**2 * (-(dt - 1e-9j) ** 2 + r2))
    assert complex(w2(st, a, b)) == pytest.approx(expected, rel=1e-8)


def test_continuum_equal_time_commutator_vanishes():
    st = Vacuum(ContinuumBasis(3))
    a, b = Event(0.0, (0.0, 0.0, 0.0)), Event(0.0, (1e-3, 0.0, 0.0))
    assert abs(complex(w2(st, a, b)).imag) < 1e-6 * abs(complex(w2(st, a, b)))


def test_unsupported_backends():
    with pytest.raises(UnsupportedConfiguration):
        ContinuumBasis(1, 0.0)
    with pytest.raises(UnsupportedConfiguration):
        Thermal(ContinuumBasis(3), 1.0)
    with pytest.raises(ConfigurationError):
        Coherent(BOX, [0.1])
