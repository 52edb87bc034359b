"""Switching and smearing profiles with their Fourier transforms.

Conventions (fixed here, used everywhere):

* switching:  chi~(w) = int dt chi(t) exp(+i w t)
* smearing:   F~(k)   = int d^d x F(x) exp(-i k.x)

Both are obtained from the single transform ``transform(q) = int p(x) exp(+i q.x)``;
the smearing convention is ``transform(-k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy import integrate, special, stats

from .errors import ConfigurationError

ArrayLike = Union[float, np.ndarray]

#: chi(t) < 1e-16 * peak outside this many widths; used to cut quadrature domains
GAUSS_CUT_WIDTHS = math.sqrt(2.0 * math.log(1e16))


def _as_center(center, dim: int | None = None) -> Tuple[float, ...]:
    c = tuple(float(v) for v in np.atleast_1d(np.asarray(center, dtype=float)))
    if dim is not None and len(c) != dim:
        raise ConfigurationError(f"center has dimension {len(c)}, expected {dim}")
    if not all(math.isfinite(v) for v in c):
        raise ConfigurationError("profile center must be finite")
    return c


def _points(p: "Profile", x) -> np.ndarray:
    """Coerce evaluation points to shape (..., dim)."""
    x = np.asarray(x, dtype=float)
    if p.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x[..., None]
    if x.shape[-1] != p.dim:
        raise ConfigurationError(f"point dimension {x.shape[-1]} does not match profile dimension {p.dim}")
    return x


def _wavevectors(p: "Profile", q) -> np.ndarray:
    return _points(p, q)


class Profile:
    """Base class; concrete kinds are Gaussian, CompactBump, Indicator, Delta."""

    kind: str = ""
    dim: int = 1

    # -- interface ---------------------------------------------------------
    def eval(self, x) -> np.ndarray:
        raise NotImplementedError

    def transform(self, q) -> np.ndarray:
        """int p(x) exp(+i q.x) d^dim x, vectorized over leading axes of q."""
        raise NotImplementedError

    def mass(self) -> float:
        """L1 norm (all kinds are non-negative)."""
        raise NotImplementedError

    def bounds(self, level: float = 1.0) -> Tuple[float, float]:
        """Interval containing ``level`` of the L1 mass (dim 1 only)."""
        raise NotImplementedError

    def ball(self, level: float = 1.0) -> Tuple[Tuple[float, ...], float]:
        """(center, radius) of a ball containing ``level`` of the L1 mass."""
        raise NotImplementedError

    @property
    def center(self) -> Tuple[float, ...]:
        raise NotImplementedError

    @property
    def is_delta(self) -> bool:
        return False

    @property
    def is_compact(self) -> bool:
        return True

    def quad_domain(self) -> Tuple[float, float]:
        """Integration domain used by the time quadrature (dim 1)."""
        return self.bounds(1.0)


def _check_level(level: float) -> float:
    level = float(level)
    if not (0.0 < level <= 1.0):
        raise ConfigurationError(f"effective support level must lie in (0, 1], got {level}")
    return level


@dataclass(frozen=True)
class Gaussian(Profile):
    """amplitude * exp(-|x - center|^2 / (2 width^2))."""

    width: float
    center_: Tuple[float, ...] = (0.0,)
    amplitude: float = 1.0
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ConfigurationError("Gaussian width must be positive and finite")
        if not (self.amplitude > 0 and math.isfinite(self.amplitude)):
            raise ConfigurationError("profile amplitude must be positive and finite")
        object.__setattr__(self, "center_", _as_center(self.center_))

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.center_)

    @property
    def center(self):
        return self.center_

    @property
    def is_compact(self) -> bool:
        return False

    def eval(self, x):
        x = _points(self, x)
        r2 = np.sum((x - np.asarray(self.center_)) ** 2, axis=-1)
        return self.amplitude * np.exp(-r2 / (2.0 * self.width**2))

    def transform(self, q):
        q = _wavevectors(self, q)
        q2 = np.sum(q**2, axis=-1)
        phase = np.exp(1j * (q @ np.asarray(self.center_)))
        norm = self.amplitude * (2.0 * math.pi) ** (self.dim / 2) * self.width**self.dim
        return norm * np.exp(-0.5 * self.width**2 * q2) * phase

    def mass(self):
        return self.amplitude * (2.0 * math.pi) ** (self.dim / 2) * self.width**self.dim

    def bounds(self, level=1.0 - 1e-8):
        level = _check_level(level)
        if self.dim != 1:
            raise ConfigurationError("bounds() needs a one-dimensional profile")
        if level == 1.0:
            raise ConfigurationError("a Gaussian has no compact support; use level < 1")
        half = math.sqrt(2.0) * self.width * float(special.erfcinv(1.0 - level))
        return self.center_[0] - half, self.center_[0] + half

    def ball(self, level=1.0 - 1e-8):
        level = _check_level(level)
        if level == 1.0:
            raise ConfigurationError("a Gaussian has no compact support; use level < 1")
        radius = self.width * math.sqrt(float(stats.chi2.isf(1.0 - level, self.dim)))
        return self.center_, radius

    def quad_domain(self):
        c = self.center_[0]
        return c - GAUSS_CUT_WIDTHS * self.width, c + GAUSS_CUT_WIDTHS * self.width


def _bump(rho2):
    out = np.zeros_like(rho2, dtype=float)
    inside = rho2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


@lru_cache(maxsize=4096)
def _bump_radial_transform(qr: float, dim: int) -> float:
    """Transform of the unit-radius, unit-peak bump at |q| = qr (radius scaled out)."""

    def f(rho):
        b = math.exp(1.0 - 1.0 / (1.0 - rho * rho)) if rho < 1.0 else 0.0
        if dim == 1:
            return 2.0 * b * math.cos(qr * rho)
        if dim == 2:
            return 2.0 * math.pi * b * rho * float(special.j0(qr * rho))
        return 4.0 * math.pi * b * rho * rho * float(np.sinc(qr * rho / math.pi))

    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=400)
    return val


@dataclass(frozen=True)
class CompactBump(Profile):
    """amplitude * e * exp(-1 / (1 - |x-center|^2/radius^2)) inside the ball, peak = amplitude."""

    radius: float
    center_: Tuple[float, ...] = (0.0,)
    amplitude: float = 1.0
    kind: str = field(default="bump", init=False)

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ConfigurationError("bump radius must be positive and finite")
        if not (self.amplitude > 0 and math.isfinite(self.amplitude)):
            raise ConfigurationError("profile amplitude must be positive and finite")
        object.__setattr__(self, "center_", _as_center(self.center_))

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.center_)

    @property
    def center(self):
        return self.center_

    def eval(self, x):
        x = _points(self, x)
        rho2 = np.sum((x - np.asarray(self.center_)) ** 2, axis=-1) / self.radius**2
        return self.amplitude * _bump(np.asarray(rho2, dtype=float))

    def transform(self, q):
        q = _wavevectors(self, q)
        qn = np.sqrt(np.sum(q**2, axis=-1)) * self.radius
        flat = np.ravel(qn)
        vals = np.array([_bump_radial_transform(round(float(v), 14), self.dim) for v in flat])
        phase = np.exp(1j * (q @ np.asarray(self.center_)))
        return self.amplitude * self.radius**self.dim * vals.reshape(qn.shape) * phase

    def mass(self):
        return float(self.transform(np.zeros(self.dim)).real)

    def bounds(self, level=1.0):
        _check_level(level)
        if self.dim != 1:
            raise ConfigurationError("bounds() needs a one-dimensional profile")
        return self.center_[0] - self.radius, self.center_[0] + self.radius

    def ball(self, level=1.0):
        _check_level(level)
        return self.center_, self.radius


@dataclass(frozen=True)
class Indicator(Profile):
    """amplitude on the axis-aligned box prod_i [lo_i, hi_i]."""

    bounds_: Tuple[Tuple[float, float], ...] = ((0.0, 1.0),)
    amplitude: float = 1.0
    kind: str = field(default="indicator", init=False)

    def __post_init__(self):
        b = np.asarray(self.bounds_, dtype=float)
        if b.ndim == 1:
            b = b[None, :]
        if b.shape[-1] != 2 or not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
            raise ConfigurationError("indicator bounds must be finite pairs with lo < hi")
        if not (self.amplitude > 0 and math.isfinite(self.amplitude)):
            raise ConfigurationError("profile amplitude must be positive and finite")
        object.__setattr__(self, "bounds_", tuple((float(lo), float(hi)) for lo, hi in b))

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.bounds_)

    @property
    def center(self):
        return tuple(0.5 * (lo + hi) for lo, hi in self.bounds_)

    def eval(self, x):
        x = _points(self, x)
        inside = np.ones(x.shape[:-1], dtype=bool)
        for i, (lo, hi) in enumerate(self.bounds_):
            inside &= (x[..., i] >= lo) & (x[..., i] <= hi)
        return self.amplitude * inside.astype(float)

    def transform(self, q):
        q = _wavevectors(self, q)
        out = np.full(q.shape[:-1], self.amplitude, dtype=complex)
        for i, (lo, hi) in enumerate(self.bounds_):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            qi = q[..., i]
            out = out * (2.0 * half) * np.sinc(qi * half / math.pi) * np.exp(1j * qi * mid)
        return out

    def mass(self):
        return self.amplitude * float(np.prod([hi - lo for lo, hi in self.bounds_]))

    def bounds(self, level=1.0):
        _check_level(level)
        if self.dim != 1:
            raise ConfigurationError("bounds() needs a one-dimensional profile")
        return self.bounds_[0]

    def ball(self, level=1.0):
        _check_level(level)
        half = [0.5 * (hi - lo) for lo, hi in self.bounds_]
        return self.center, math.sqrt(sum(h * h for h in half))


@dataclass(frozen=True)
class Delta(Profile):
    """amplitude * delta(x - center); integration-only."""

    center_: Tuple[float, ...] = (0.0,)
    amplitude: float = 1.0
    kind: str = field(default="delta", init=False)

    def __post_init__(self):
        if not (self.amplitude > 0 and math.isfinite(self.amplitude)):
            raise ConfigurationError("profile amplitude must be positive and finite")
        object.__setattr__(self, "center_", _as_center(self.center_))

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.center_)

    @property
    def center(self):
        return self.center_

    @property
    def is_delta(self) -> bool:
        return True

    def eval(self, x):
        raise ConfigurationError("a Delta profile cannot be evaluated pointwise; it only acts under integrals")

    def transform(self, q):
        q = _wavevectors(self, q)
        if not any(self.center_):
            return np.full(q.shape[:-1], self.amplitude, dtype=complex)
        return self.amplitude * np.exp(1j * (q @ np.asarray(self.center_)))

    def mass(self):
        return self.amplitude

    def bounds(self, level=1.0):
        _check_level(level)
        return self.center_[0], self.center_[0]

    def ball(self, level=1.0):
        _check_level(level)
        return self.center_, 0.0


@dataclass(frozen=True)
class FourierProfile:
    """Transform of a profile in the switching (+) or smearing (-) convention."""

    profile: Profile
    convention: str = "switching"

    def __post_init__(self):
        if self.convention not in ("switching", "smearing"):
            raise ConfigurationError("convention must be 'switching' or 'smearing'")

    @property
    def closed_form(self) -> bool:
        return not isinstance(self.profile, CompactBump)

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.profile.transform(q if self.convention == "switching" else -q)


def fourier(p: Profile, convention: str | None = None) -> FourierProfile:
    """Fourier transform with the library conventions; default by dimensionality."""
    if convention is None:
        convention = "switching" if p.dim == 1 else "smearing"
    return FourierProfile(p, convention)


def eval_profile(p: Profile, point) -> np.ndarray:
    return p.eval(point)


def gaussian(width: float, center=0.0, amplitude: float = 1.0) -> Gaussian:
    return Gaussian(width, _as_center(center), amplitude)


def bump(radius: float, center=0.0, amplitude: float = 1.0) -> CompactBump:
    return CompactBump(radius, _as_center(center), amplitude)


def indicator(*bounds, amplitude: float = 1.0) -> Indicator:
    """indicator(lo, hi) for one dimension or indicator((lo, hi), (lo, hi), ...)."""
    if len(bounds) == 2 and np.ndim(bounds[0]) == 0:
        bounds = ((bounds[0], bounds[1]),)
    return Indicator(tuple(tuple(b) for b in bounds), amplitude)


def delta(center=0.0, amplitude: float = 1.0) -> Delta:
    return Delta(_as_center(center), amplitude)
