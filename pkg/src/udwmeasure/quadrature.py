"""Time quadrature over switching supports.

Rules integrate against the switching function: returned weights already contain
chi(t) (products of chi for ordered tuples).  Ordered tuples t_1 > t_2 > ... > t_p
use composite Gauss-Legendre panels; runs of equal panels are mapped to the unit
simplex with collapsed (Duffy) coordinates, so smooth integrands converge spectrally.
A Delta switching collapses the p-fold ordered integral to one node of weight
amplitude^p / p!  (theta(0) = 1/2 for p = 2).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from .errors import NumericGuardError
from .profiles import Delta, Profile


@dataclass(frozen=True)
class QuadratureSpec:
    """Panels x Gauss-Legendre nodes per panel, with a coarser rule for 3-fold tuples."""

    panels: int = 6
    nodes: int = 16
    simplex3_panels: int = 5
    simplex3_nodes: int = 14
    pair4_panels: int = 4
    pair4_nodes: int = 12
    chunk: int = 1 << 16


@lru_cache(maxsize=64)
def _unit_gl(n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _collapsed_simplex(a: float, h: float, r: int, n: int) -> Tuple[List[np.ndarray], np.ndarray]:
    """Nodes of {a + h > t_1 > ... > t_r > a} (plain dt measure)."""
    x, w = _unit_gl(n)
    grids = np.meshgrid(*([x] * r), indexing="ij")
    wgrids = np.meshgrid(*([w] * r), indexing="ij")
    ts, weight = [], np.ones(grids[0].shape)
    prev = None
    for i in range(r):
        if i == 0:
            t = a + h * grids[0]
            weight = weight * h * wgrids[0]
        else:
            span = prev - a
            t = a + span * grids[i]
            weight = weight * span * wgrids[i]
        ts.append(t.ravel())
        prev = t
    return ts, weight.ravel()


class TimeRule:
    """Quadrature rules for one switching profile."""

    def __init__(self, chi: Profile, spec: QuadratureSpec = QuadratureSpec()):
        self.chi = chi
        self.spec = spec
        self.is_delta = isinstance(chi, Delta)
        if not self.is_delta:
            lo, hi = chi.quad_domain()
            self.lo, self.hi = float(lo), float(hi)

    def check_resolution(self, frequency: float) -> None:
        """Refuse oscillations the panel rules cannot resolve (aliasing gives silent garbage).

        A rule with n nodes per panel of width h is trusted while frequency * h <= pi * n / 2.
        """
        if self.is_delta or frequency <= 0.0:
            return
        s = self.spec
        for count, n in ((s.panels, s.nodes), (s.simplex3_panels, s.simplex3_nodes), (s.pair4_panels, s.pair4_nodes)):
            h = (self.hi - self.lo) / count
            if frequency * h > 0.5 * math.pi * n:
                raise NumericGuardError(
                    f"time quadrature under-resolves frequency {frequency:.3g}: "
                    f"{count} panels x {n} nodes over [{self.lo:.3g}, {self.hi:.3g}]"
                )

    def _panels(self, count: int) -> List[Tuple[float, float]]:
        edges = np.linspace(self.lo, self.hi, count + 1)
        return [(float(edges[i]), float(edges[i + 1] - edges[i])) for i in range(count)]

    @lru_cache(maxsize=8)
    def simplex(self, p: int, coarse: bool = False) -> Tuple[Tuple[np.ndarray, ...], np.ndarray]:
        """Ordered p-tuples (t_1 > ... > t_p) and weights including prod chi(t_i).

        ``coarse`` selects the lighter pair rule used inside fourth-order products.
        """
        if p == 0:
            return (), np.ones(1)
        if self.is_delta:
            c = float(self.chi.center[0])
            ts = tuple(np.array([c]) for _ in range(p))
            return ts, np.array([self.chi.amplitude**p / math.factorial(p)])
        if p >= 3:
            panels, n = self._panels(self.spec.simplex3_panels), self.spec.simplex3_nodes
        elif coarse and p == 2:
            panels, n = self._panels(self.spec.pair4_panels), self.spec.pair4_nodes
        else:
            panels, n = self._panels(self.spec.panels), self.spec.nodes
        cols: List[List[np.ndarray]] = [[] for _ in range(p)]
        wts: List[np.ndarray] = []
        idx = range(len(panels) - 1, -1, -1)
        for combo in itertools.combinations_with_replacement(idx, p):
            # combo is non-increasing: runs of equal panels use the collapsed simplex
            blocks = []
            for panel, run in itertools.groupby(combo):
                r = len(list(run))
                a, h = panels[panel]
                blocks.append(_collapsed_simplex(a, h, r, n))
            sizes = [b[1].size for b in blocks]
            mesh = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
            mesh = [m.ravel() for m in mesh]
            weight = np.ones(mesh[0].size)
            col = 0
            for b, m in zip(blocks, mesh):
                for t in b[0]:
                    cols[col].append(t[m])
                    col += 1
                weight = weight * b[1][m]
            wts.append(weight)
        ts = tuple(np.concatenate(c) for c in cols)
        w = np.concatenate(wts)
        for t in ts:
            w = w * self.chi.eval(t)
        return ts, w

    def line(self) -> Tuple[np.ndarray, np.ndarray]:
        ts, w = self.simplex(1)
        return ts[0], w

    def square(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full plane (t, t') from the ordered triangle and its mirror image."""
        (t1, t2), w = self.simplex(2)
        return np.concatenate([t1, t2]), np.concatenate([t2, t1]), np.concatenate([w, w])
