"""Two-level detector algebra in the interaction picture.

Basis ordering is (|g>, |e>).  The monopole is
mu(t) = |g><e| exp(-i Omega t) + |e><g| exp(+i Omega t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .profiles import Profile
from .spacetime import DEFAULT_SUPPORT_LEVEL, InteractionRegion, region_of


@dataclass(frozen=True)
class DetectorVector:
    """A (usually normalized) detector ket g|g> + e|e>."""

    g: complex
    e: complex

    def __post_init__(self):
        object.__setattr__(self, "g", complex(self.g))
        object.__setattr__(self, "e", complex(self.e))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.g, self.e], dtype=complex)

    @property
    def norm(self) -> float:
        return math.sqrt(abs(self.g) ** 2 + abs(self.e) ** 2)

    def normalized(self) -> "DetectorVector":
        n = self.norm
        if n == 0:
            raise ConfigurationError("zero detector vector")
        return DetectorVector(self.g / n, self.e / n)

    def complement(self) -> "DetectorVector":
        """A unit vector spanning the orthogonal complement."""
        v = self.normalized()
        return DetectorVector(-np.conj(v.e), np.conj(v.g))

    def inner(self, other: "DetectorVector") -> complex:
        """<self|other>."""
        return np.conj(self.g) * other.g + np.conj(self.e) * other.e

    def require_unit(self, what: str = "detector vector", tol: float = 1e-10) -> None:
        if abs(self.norm - 1.0) > tol:
            raise ConfigurationError(f"{what} must be normalized (norm {self.norm:.3g})")


GROUND = DetectorVector(1.0, 0.0)
EXCITED = DetectorVector(0.0, 1.0)


def plus(phase: complex = 1.0) -> DetectorVector:
    """(phase |g> + |e>)/sqrt(2)."""
    return DetectorVector(phase / math.sqrt(2.0), 1.0 / math.sqrt(2.0))


def as_vector(v) -> DetectorVector:
    if isinstance(v, DetectorVector):
        return v
    if isinstance(v, str):
        key = v.strip().lower()
        if key in ("g", "ground"):
            return GROUND
        if key in ("e", "excited"):
            return EXCITED
        raise ConfigurationError(f"unknown detector state {v!r}")
    arr = np.asarray(v, dtype=complex).ravel()
    if arr.shape != (2,):
        raise ConfigurationError("detector vector needs two components")
    return DetectorVector(arr[0], arr[1])


@dataclass(frozen=True)
class DetectorSpec:
    """Gap, coupling, switching chi(t), smearing F(x) and a label."""

    gap: float
    coupling: float
    chi: Profile
    f: Profile
    label: str = "detector"

    def __post_init__(self):
        if not (self.coupling >= 0 and math.isfinite(self.coupling)):
            raise ConfigurationError("coupling must be non-negative and finite")
        if not math.isfinite(self.gap):
            raise ConfigurationError("gap must be finite")
        if self.chi.dim != 1:
            raise ConfigurationError("switching profile must be one-dimensional")

    @property
    def d(self) -> int:
        return self.f.dim

    def region(self, level: float = DEFAULT_SUPPORT_LEVEL) -> InteractionRegion:
        return region_of(self.chi, self.f, level)

    def with_coupling(self, coupling: float) -> "DetectorSpec":
        return DetectorSpec(self.gap, coupling, self.chi, self.f, self.label)


def alternating_time(times: Sequence) -> np.ndarray:
    """T = sum_n (-1)^(n-1) t_n, broadcasting over array-valued entries."""
    total = 0.0
    for n, t in enumerate(times):
        total = total + (t if n % 2 == 0 else -np.asarray(t))
    return np.asarray(total)


def mu_product(times: Sequence[float], gap: float) -> np.ndarray:
    """mu(t_1) mu(t_2) ... mu(t_N) as a 2x2 matrix."""
    if len(times) == 0:
        raise ConfigurationError("mu_product needs at least one time")
    T = float(alternating_time([float(t) for t in times]))
    lo, hi = np.exp(-1j * gap * T), np.exp(1j * gap * T)
    if len(times) % 2:
        return np.array([[0.0, lo], [hi, 0.0]], dtype=complex)
    return np.array([[lo, 0.0], [0.0, hi]], dtype=complex)


def chain_element(bra: DetectorVector, ket: DetectorVector, times: Sequence, gap: float):
    """<bra| mu(t_1)...mu(t_N) |ket> vectorized over array times (N may be 0)."""
    if len(times) == 0:
        return bra.inner(ket)
    T = alternating_time(times)
    lo, hi = np.exp(-1j * gap * T), np.exp(1j * gap * T)
    bg, be = np.conj(bra.g), np.conj(bra.e)
    if len(times) % 2:
        return bg * ket.e * lo + be * ket.g * hi
    return bg * ket.g * lo + be * ket.e * hi


def matrix_element(s: DetectorVector, times: Sequence[float], psi: DetectorVector, gap: float) -> complex:
    """<s| mu(t_1)...mu(t_N) |psi>; N = 0 gives <s|psi>."""
    s.require_unit("outcome state")
    psi.require_unit("initial state")
    return complex(chain_element(s, psi, [float(t) for t in times], gap))
