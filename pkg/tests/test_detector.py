import cmath
import math

import numpy as np
import pytest

from udwmeasure.detector import (
    EXCITED,
    GROUND,
    DetectorSpec,
    DetectorVector,
    matrix_element,
    mu_product,
    plus,
)
from udwmeasure.errors import ConfigurationError
from udwmeasure.profiles import gaussian

OMEGA = 1.7


def test_single_mu_entries():
    t = 0.4
    mu = mu_product([t], OMEGA)
    assert mu[0, 1] == pytest.approx(cmath.exp(-1j * OMEGA * t))
    assert mu[1, 0] == pytest.approx(cmath.exp(1j * OMEGA * t))
    assert mu[0, 0] == 0 and mu[1, 1] == 0


def test_mu_squares_to_identity():
    assert np.allclose(mu_product([0.3, 0.3], OMEGA), np.eye(2))


def test_three_factor_alternating_time():
    ts = (0.2, 1.1, -0.5)
    T = ts[0] - ts[1] + ts[2]
    expected = np.array([[0, cmath.exp(-1j * OMEGA * T)], [cmath.exp(1j * OMEGA * T), 0]])
    assert np.allclose(mu_product(ts, OMEGA), expected)


def test_composition_and_unitarity():
    a, b = [0.1, 0.7], [-0.2, 0.4, 1.5]
    assert np.allclose(mu_product(a + b, OMEGA), mu_product(a, OMEGA) @ mu_product(b, OMEGA))
    m = mu_product([0.9], OMEGA)
    assert np.allclose(m @ m.conj().T, np.eye(2), atol=1e-15)


def test_empty_product_rejected():
    with pytest.raises(ConfigurationError):
        mu_product([], OMEGA)


def test_matrix_elements():
    assert matrix_element(GROUND, [0.3], GROUND, OMEGA) == 0
    assert matrix_element(EXCITED, [0.3], GROUND, OMEGA) == pytest.approx(cmath.exp(1j * OMEGA * 0.3))
    psi = DetectorVector(1j / math.sqrt(2), 1 / math.sqrt(2))
    assert matrix_element(EXCITED, [], psi, OMEGA) == pytest.approx(1 / math.sqrt(2))


@pytest.mark.parametrize("n", range(1, 5))
def test_selection_rule(n):
    ts = list(np.linspace(0.1, 0.9, n))
    for s in (GROUND, EXCITED):
        for psi in (GROUND, EXCITED):
            nonzero = abs(matrix_element(s, ts, psi, OMEGA)) > 0
            assert nonzero == ((s == psi) == (n % 2 == 0))


def test_complement_is_orthogonal():
    v = DetectorVector(0.6, 0.8j)
    assert abs(v.complement().inner(v)) < 1e-15
    assert plus(1).complement().inner(plus(1)) == pytest.approx(0)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        DetectorSpec(1.0, -0.1, gaussian(1.0), gaussian(1.0))
    with pytest.raises(ConfigurationError):
        DetectorSpec(1.0, 0.1, gaussian(1.0, (0.0, 0.0)), gaussian(1.0))
