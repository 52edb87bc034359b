"""Property-based checks of the structural invariants."""

import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from udwmeasure.detector import DetectorSpec, DetectorVector, chain_element, mu_product
from udwmeasure.fieldstate import BoxBasis, Coherent, Thermal, Vacuum, wn
from udwmeasure.perturbation import MeasurementSpec, completeness_defect, povm_terms
from udwmeasure.profiles import bump, fourier, gaussian, indicator
from udwmeasure.spacetime import CausalRelation, Event, InteractionRegion, classify, interval
from udwmeasure.update import Updater

BOX2 = BoxBasis(10.0, 0.5, 2)
coord = st.floats(-5.0, 5.0, allow_nan=False)
times = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=1, max_size=5)


def events(d):
    return st.builds(lambda t, x: Event(t, tuple(x)), coord, st.lists(coord, min_size=d, max_size=d))


@st.composite
def unit_vectors(draw):
    parts = draw(st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=4, max_size=4))
    v = np.array([parts[0] + 1j * parts[1], parts[2] + 1j * parts[3]])
    if np.linalg.norm(v) < 1e-3:
        v = np.array([1.0, 0.0])
    v = v / np.linalg.norm(v)
    return DetectorVector(complex(v[0]), complex(v[1]))


@given(events(3), events(3))
def test_interval_is_symmetric(a, b):
    assert interval(a, b) == interval(b, a)


@given(events(1))
def test_spacelike_verdict_survives_sampling(e):
    region = InteractionRegion(-0.5, 0.5, (0.0,), 0.3)
    rel = classify(e, region)
    pts = region.sample(200, np.random.default_rng(0))
    if rel is CausalRelation.SPACELIKE:
        assert min(interval(e, p) for p in pts) > 0.0
    elif rel.is_causal_future:
        assert e.t > region.t_on


@given(times, times, st.floats(0.1, 5.0))
def test_mu_products_compose_unitarily(first, second, gap):
    joined = mu_product(first + second, gap)
    assert np.allclose(joined, mu_product(first, gap) @ mu_product(second, gap), atol=1e-12)
    assert np.allclose(joined.conj().T @ joined, np.eye(2), atol=1e-12)


@given(unit_vectors(), unit_vectors(), times, st.floats(0.1, 5.0))
def test_chain_element_matches_matrix(bra, ket, ts, gap):
    direct = bra.array.conj() @ mu_product(ts, gap) @ ket.array
    assert abs(complex(chain_element(bra, ket, ts, gap)) - direct) <= 1e-12


@given(st.lists(events(1), min_size=1, max_size=5),
       st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)))
def test_wick_functions_are_hermitian(pts, alpha):
    state = Coherent(BOX2, [complex(*alpha), 0.1j])
    a, b = complex(wn(state, pts)), complex(wn(state, pts[::-1]))
    assert abs(a - b.conjugate()) <= 1e-10 * max(1.0, abs(a))


@given(unit_vectors(), unit_vectors(), st.floats(0.5, 2.0), st.sampled_from(["vacuum", "thermal", "coherent"]))
def test_completeness_at_random_configs(psi, s, gap, which):
    state = {"vacuum": Vacuum(BOX2), "thermal": Thermal(BOX2, 2.0), "coherent": Coherent(BOX2, [0.1, -0.05])}[which]
    m = MeasurementSpec(DetectorSpec(gap, 0.1, gaussian(1.0), gaussian(0.5)), psi, s)
    assert completeness_defect(state, m, 2) <= 1e-8


@given(st.floats(-10.0, 10.0), st.floats(0.2, 2.0), st.floats(-1.0, 1.0),
       st.sampled_from(["gaussian", "indicator", "bump"]))
def test_transforms_have_reality_symmetry(w, width, center, kind):
    p = {"gaussian": gaussian(width, center), "indicator": indicator(center - width, center + width),
         "bump": bump(width, center)}[kind]
    ft = fourier(p)
    assert abs(complex(ft(-w)) - np.conj(complex(ft(w)))) <= 1e-11 * max(1.0, abs(complex(ft(w))))


@given(unit_vectors(), unit_vectors(), st.floats(6.0, 9.0), st.floats(-3.0, 3.0))
def test_selective_branches_average_to_nonselective(psi, s, t, x):
    state = Coherent(BOX2, [0.05, 0.02j])
    m = MeasurementSpec(DetectorSpec(1.0, 0.1, gaussian(1.0), gaussian(0.5)), psi, s)
    pts = [Event(t, (x,))]
    up = Updater(state, m)
    mixed = np.zeros(3, dtype=complex)
    for out in (m.s, m.s_bar):
        e = povm_terms(state, m.with_outcome(out), 2)
        if all(abs(v) < 1e-14 for v in e):
            continue
        w = up.ratio_coefficients(pts, 2, out)
        for k in range(3):
            mixed[k] += sum(e[j] * w[k - j] for j in range(k + 1))
    assert np.max(np.abs(mixed - np.asarray(up.ns_terms(pts, 2)))) <= 1e-9
