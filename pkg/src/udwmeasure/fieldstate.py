"""Gaussian field states and their Wightman functions.

Two backends:

* ``BoxBasis``: 1+1 periodic box of length L with a finite list of modes,
  phi(t, x) = sum_j (u_j a_j + h.c.),  u_j = exp(-i w_j t + i k_j x) / sqrt(2 L w_j).
  Smeared operators int F(x) phi(t, x) dx use the periodized smearing, whose
  Fourier coefficients at the box momenta equal the infinite-line transform.
* ``ContinuumBasis``: free-space Wightman functions in d = 1, 2, 3 via closed
  forms (points, Gaussian smearings in 3+1 massless) or radial k-quadrature.

Every n-point function is built from the mean <phi> and the centered
two-point function by Wick pairing; pair (i, j) with i < j keeps operator order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, special

from .errors import ConfigurationError, NumericGuardError, UnsupportedConfiguration
from .profiles import Delta, Gaussian, Profile, delta
from .spacetime import Event

# --------------------------------------------------------------------------
# probes: linear field functionals  int F(x) phi(t, x) d^d x  at array-valued t
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Probe:
    """Smeared (or pointlike, via Delta) field operator at time(s) ``t``.

    ``field`` selects phi (0) or the second field sigma (1) on two-field boxes.
    """

    t: np.ndarray
    smear: Profile
    field: int = 0
    weights: Optional[np.ndarray] = None

    @staticmethod
    def at(ev: Event, field: int = 0) -> "Probe":
        return Probe(np.asarray(ev.t, dtype=float), delta(ev.x), field)

    @staticmethod
    def folded(t, smear: Profile, weights, field: int = 0) -> "Probe":
        """The single operator sum_i weights[i] phi(F, t[i])."""
        t = np.asarray(t, dtype=float).ravel()
        w = np.asarray(weights, dtype=complex).ravel()
        if t.shape != w.shape:
            raise ConfigurationError("folded probe needs one weight per time")
        return Probe(t, smear, field, w)

    @property
    def is_folded(self) -> bool:
        return self.weights is not None

    def node(self, i: int) -> "Probe":
        return Probe(self.t[i], self.smear, self.field)

    @property
    def is_point(self) -> bool:
        return isinstance(self.smear, Delta)


def as_probe(p) -> Probe:
    if isinstance(p, Probe):
        return p
    if isinstance(p, Event):
        return Probe.at(p)
    raise TypeError(f"cannot interpret {p!r} as a field probe")


# --------------------------------------------------------------------------
# mode bases
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxBasis:
    """Periodic 1+1 box. Mode order: k = 0 (massive only), +2pi/L, -2pi/L, +4pi/L, ...

    With ``fields=2`` a second field sigma with an identical mode list is appended;
    global mode index = field * n_modes + j.
    """

    L: float
    mass: float
    n_modes: int
    fields: int = 1

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ConfigurationError("box length must be positive")
        if not (self.mass >= 0 and math.isfinite(self.mass)):
            raise ConfigurationError("mass must be non-negative")
        if self.n_modes < 1:
            raise ConfigurationError("need at least one mode")
        if self.fields not in (1, 2):
            raise ConfigurationError("fields must be 1 or 2")

    @property
    def d(self) -> int:
        return 1

    @property
    def k(self) -> np.ndarray:
        out = []
        n = 0 if self.mass > 0 else 1
        while len(out) < self.n_modes:
            if n == 0:
                out.append(0.0)
            else:
                out.append(2 * math.pi * n / self.L)
                if len(out) < self.n_modes:
                    out.append(-2 * math.pi * n / self.L)
            n += 1
        return np.array(out)

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.k**2 + self.mass**2)

    @property
    def total_modes(self) -> int:
        return self.n_modes * self.fields

    def ladder(self, probe: Probe) -> Tuple[np.ndarray, np.ndarray]:
        """(u, v) with the probe operator = sum_j (u_j a_j + v_j a_j^dagger).

        Folded probes with complex weights are not Hermitian, so v != conj(u).
        """
        if probe.is_folded:
            c = self.mode_functions(Probe(probe.t, probe.smear, probe.field))
            return probe.weights @ c, probe.weights @ np.conj(c)
        c = self.mode_functions(probe)
        return c, np.conj(c)

    def mode_functions(self, probe: Probe) -> np.ndarray:
        """c_j with int F phi = sum_j (c_j a_j + conj(c_j) a_j^dagger); shape t.shape + (M,)."""
        if probe.is_folded:
            raise ConfigurationError("folded probes have no Hermitian mode function; use ladder()")
        if probe.smear.dim != 1:
            raise ConfigurationError("box backend needs one-dimensional smearing")
        if not 0 <= probe.field < self.fields:
            raise ConfigurationError(f"field index {probe.field} not available")
        k, w = self.k, self.omega
        ft = probe.smear.transform(k)  # int F(x) exp(+i k x) dx
        t = np.asarray(probe.t, dtype=float)[..., None]
        c = ft * np.exp(-1j * w * t) / np.sqrt(2.0 * self.L * w)
        if self.fields == 1:
            return c
        out = np.zeros(c.shape[:-1] + (self.total_modes,), dtype=complex)
        sl = slice(probe.field * self.n_modes, (probe.field + 1) * self.n_modes)
        out[..., sl] = c
        return out


@dataclass(frozen=True)
class ContinuumBasis:
    """Free space R^d. ``eps`` fixes the i-epsilon; None picks 1e-3 of the local separation scale."""

    d: int
    mass: float = 0.0
    eps: Optional[float] = None
    richardson: bool = True
    k_nodes: int = 48

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError("continuum dimension must be 1, 2 or 3")
        if not (self.mass >= 0 and math.isfinite(self.mass)):
            raise ConfigurationError("mass must be non-negative")
        if self.d == 1 and self.mass == 0:
            raise UnsupportedConfiguration("massless 1+1 continuum field is infrared divergent")
        if self.eps is not None and not self.eps > 0:
            raise ConfigurationError("eps must be positive")

    @property
    def fields(self) -> int:
        return 1


# --------------------------------------------------------------------------
# continuum two-point kernels
# --------------------------------------------------------------------------


def _smear_params(p: Profile, d: int) -> Tuple[float, np.ndarray, float]:
    """(norm, center, variance) with F~*(k) = norm exp(-var k^2/2) exp(+i k.c)."""
    if p.dim != d:
        raise ConfigurationError(f"smearing dimension {p.dim} does not match d={d}")
    if isinstance(p, Delta):
        return p.amplitude, np.asarray(p.center), 0.0
    if isinstance(p, Gaussian):
        return p.mass(), np.asarray(p.center), p.width**2
    raise UnsupportedConfiguration(f"continuum backend supports Delta and Gaussian smearings, not {p.kind}")


def _faddeeva_half_line(a: float, b: np.ndarray) -> np.ndarray:
    """int_0^inf exp(-a k^2 + i b k) dk for a > 0 and real b."""
    sa = math.sqrt(a)
    return (math.sqrt(math.pi) / (2.0 * sa)) * special.wofz(b / (2.0 * sa))


def _point_kernel(d: int, m: float, sigma2: np.ndarray) -> np.ndarray:
    """Vacuum Wightman function as a function of sigma^2 = r^2 - (dt - i eps)^2."""
    root = np.sqrt(sigma2)  # principal branch
    if m == 0.0:
        if d == 3:
            return 1.0 / (4.0 * math.pi**2 * sigma2)
        return 1.0 / (4.0 * math.pi * root)
    z = m * root
    if d == 3:
        return m * special.kv(1, z) / (4.0 * math.pi**2 * root)
    if d == 2:
        return np.exp(-z) / (4.0 * math.pi * root)
    return special.kv(0, z) / (2.0 * math.pi)


def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _radial_quadrature(d: int, m: float, s: float, R: np.ndarray, dt: np.ndarray, nodes: int) -> np.ndarray:
    """int d^dk /((2pi)^d 2 w) exp(-s k^2/2) exp(-i w dt + i k.r) by composite Gauss-Legendre in |k|."""
    kmax = math.sqrt(2.0 * 40.0 / s)
    span = float(np.max(R) + np.max(np.abs(dt))) if np.size(R) else 0.0
    panels = max(4, int(math.ceil(kmax * (span + 1.0) / (2.0 * math.pi))) + 2)
    x, w = _gauss_legendre(nodes)
    edges = np.linspace(0.0, kmax, panels + 1)
    ks = (0.5 * (edges[1:] - edges[:-1])[:, None] * (x[None, :] + 1.0) + edges[:-1, None]).ravel()
    wk = (0.5 * (edges[1:] - edges[:-1])[:, None] * w[None, :]).ravel()
    om = np.sqrt(ks**2 + m**2)
    damp = wk * np.exp(-0.5 * s * ks**2) / (2.0 * om)
    Rb = np.asarray(R)[..., None]
    phase = np.exp(-1j * om * np.asarray(dt)[..., None])
    if d == 3:
        ang = 4.0 * math.pi * ks**2 * np.sinc(ks * Rb / math.pi)
    elif d == 2:
        ang = 2.0 * math.pi * ks * special.j0(ks * Rb)
    else:
        ang = 2.0 * np.cos(ks * Rb)
    return np.sum(damp * ang * phase, axis=-1) / (2.0 * math.pi) ** d


def continuum_vacuum_w2(basis: ContinuumBasis, p: Probe, q: Probe) -> np.ndarray:
    """Vacuum <phi(p) phi(q)> in free space (operator order p then q)."""
    d, m = basis.d, basis.mass
    np_, cp, vp = _smear_params(p.smear, d)
    nq, cq, vq = _smear_params(q.smear, d)
    dt = np.asarray(p.t, dtype=float) - np.asarray(q.t, dtype=float)
    R = float(np.linalg.norm(cp - cq))
    s = vp + vq
    norm = np_ * nq
    if s == 0.0:
        dt_b = np.broadcast_to(dt, np.shape(dt))
        sep2 = R * R - dt_b**2
        if np.any((R == 0.0) & (dt_b == 0.0)):
            raise NumericGuardError("coincident pointlike probes: the two-point function diverges")
        if basis.eps is not None:
            eps = np.full(np.shape(dt_b), basis.eps)
        else:
            scale = np.sqrt(np.abs(sep2))
            eps = 1e-3 * np.maximum(scale, np.maximum(1e-3 * (R + np.abs(dt_b)), 1e-300))

        def kern(e):
            return _point_kernel(d, m, R * R - (dt_b - 1j * e) ** 2)

        if basis.richardson:
            val = 2.0 * kern(0.5 * eps) - kern(eps)
        else:
            val = kern(eps)
        return norm * val
    if d == 3 and m == 0.0:
        a = 0.5 * s
        if R * R < 1e-12 * a:
            # limit R -> 0: int k exp(-a k^2 - i k dt) dk / (4 pi^2)
            J = _faddeeva_half_line(a, -dt)
            val = (1.0 / (2.0 * a) + (-1j * dt / (2.0 * a)) * J) / (4.0 * math.pi**2)
        else:
            Jp = _faddeeva_half_line(a, R - dt)
            Jm = _faddeeva_half_line(a, -R - dt)
            val = (Jp - Jm) / (2j * 4.0 * math.pi**2 * R)
        return norm * val
    shape = np.shape(dt)
    val = _radial_quadrature(d, m, s, np.full(shape, R), dt, basis.k_nodes)
    return norm * val


# --------------------------------------------------------------------------
# states
# --------------------------------------------------------------------------


class FieldState:
    """Gaussian field state: provides mean and centered two-point function on probes."""

    kind = "state"
    zero_mean = True

    def __init__(self, basis):
        self.basis = basis

    # operator-ordered centered correlation <(P - <P>)(Q - <Q>)>
    def cov(self, p: Probe, q: Probe) -> np.ndarray:
        raise NotImplementedError

    def mean(self, p: Probe) -> np.ndarray:
        return np.zeros(() if p.is_folded else np.shape(p.t))

    # convenience wrappers on events or probes
    def w1(self, a) -> complex:
        return self.mean(as_probe(a))

    def w2(self, a, b):
        p, q = as_probe(a), as_probe(b)
        val = self.cov(p, q)
        if not self.zero_mean:
            val = val + self.mean(p) * self.mean(q)
        return val

    def wn(self, points: Sequence) -> complex:
        probes = [as_probe(p) for p in points]
        return wick(self, probes)


class _BoxState(FieldState):
    def mean_ladder(self, lp):
        return np.zeros(np.shape(lp[0])[:-1])

    def __init__(self, basis: BoxBasis):
        if not isinstance(basis, BoxBasis):
            raise UnsupportedConfiguration(f"{type(self).__name__} requires the box backend")
        super().__init__(basis)

    def ladder(self, p: Probe) -> Tuple[np.ndarray, np.ndarray]:
        return self.basis.ladder(p)


class Vacuum(FieldState):
    kind = "vacuum"

    def cov(self, p, q):
        if isinstance(self.basis, BoxBasis):
            return self.cov_ladder(self.basis.ladder(p), self.basis.ladder(q))
        return continuum_vacuum_w2(self.basis, p, q)

    def cov_ladder(self, lp, lq):
        return np.sum(lp[0] * lq[1], axis=-1)


class Thermal(_BoxState):
    """Box thermal state with Bose-Einstein occupations n_j = 1/(exp(beta w_j) - 1)."""

    kind = "thermal"

    def __init__(self, basis: BoxBasis, beta: float):
        super().__init__(basis)
        if not (beta > 0 and math.isfinite(beta)):
            raise ConfigurationError("inverse temperature must be positive")
        self.beta = float(beta)
        w = np.tile(basis.omega, basis.fields)
        self.occupation = 1.0 / np.expm1(self.beta * w)

    def cov(self, p, q):
        return self.cov_ladder(self.ladder(p), self.ladder(q))

    def cov_ladder(self, lp, lq):
        (up, vp), (uq, vq) = lp, lq
        n = self.occupation
        return np.sum(up * vq * (1.0 + n) + vp * uq * n, axis=-1)


class Coherent(FieldState):
    """Displaced vacuum. Box: complex amplitudes alpha_j; continuum: a classical wave."""

    kind = "coherent"
    zero_mean = False

    def __init__(self, basis, alpha=None, wave: "SphericalWave | None" = None):
        super().__init__(basis)
        self._vac = Vacuum(basis)
        if isinstance(basis, BoxBasis):
            a = np.asarray(alpha, dtype=complex).ravel()
            if a.shape != (basis.total_modes,):
                raise ConfigurationError(f"need {basis.total_modes} coherent amplitudes, got {a.size}")
            self.alpha = a
            self.wave = None
        else:
            if wave is None:
                raise ConfigurationError("continuum coherent state needs a classical wave")
            self.alpha = None
            self.wave = wave

    def cov(self, p, q):
        return self._vac.cov(p, q)

    def cov_ladder(self, lp, lq):
        return self._vac.cov_ladder(lp, lq)

    def mean_ladder(self, lp):
        return lp[0] @ self.alpha + lp[1] @ np.conj(self.alpha)

    def mean(self, p):
        if self.alpha is not None:
            return self.mean_ladder(self.basis.ladder(p))
        if not isinstance(p.smear, Delta):
            raise UnsupportedConfiguration("continuum coherent amplitude is available for pointlike probes only")
        return p.smear.amplitude * self.wave(np.asarray(p.t, dtype=float), np.asarray(p.smear.center))


@dataclass(frozen=True)
class SphericalWave:
    """Regular spherical solution of the 3+1 massless wave equation,
    phi(t, r) = A [G(t - t0 - r) - G(t - t0 + r)] / r,  G(u) = exp(-u^2 / (2 w^2)).
    """

    amplitude: float
    width: float
    t0: float = 0.0
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __call__(self, t, x) -> np.ndarray:
        r = float(np.linalg.norm(np.asarray(x) - np.asarray(self.center)))
        u = np.asarray(t) - self.t0
        w2 = self.width**2
        if r < 1e-8 * self.width:
            return self.amplitude * 2.0 * u / w2 * np.exp(-u * u / (2 * w2))
        g = lambda v: np.exp(-v * v / (2 * w2))  # noqa: E731
        return self.amplitude * (g(u - r) - g(u + r)) / r


class GaussianGeneral(_BoxState):
    """General Gaussian box state from mean alpha_j = <a_j>,
    N_ij = <da_i^dag da_j> and S_ij = <da_i da_j> (da = a - alpha)."""

    kind = "gaussian"

    def __init__(self, basis: BoxBasis, N, S, alpha=None):
        super().__init__(basis)
        M = basis.total_modes
        self.N = np.asarray(N, dtype=complex).reshape(M, M)
        self.S = np.asarray(S, dtype=complex).reshape(M, M)
        self.alpha = np.zeros(M, dtype=complex) if alpha is None else np.asarray(alpha, dtype=complex).ravel()
        self.zero_mean = not np.any(self.alpha)
        if not np.allclose(self.N, self.N.conj().T, atol=1e-12):
            raise ConfigurationError("N must be Hermitian")
        if not np.allclose(self.S, self.S.T, atol=1e-12):
            raise ConfigurationError("S must be symmetric")

    def cov(self, p, q):
        return self.cov_ladder(self.ladder(p), self.ladder(q))

    def cov_ladder(self, lp, lq):
        (cp, dp), (cq, dq) = lp, lq
        N, S = self.N, self.S
        out = np.sum((cp @ S) * cq, axis=-1)
        out = out + np.sum(cp * dq, axis=-1) + np.sum((cp @ N.T) * dq, axis=-1)
        out = out + np.sum((dp @ N) * cq, axis=-1)
        out = out + np.sum((dp @ S.conj()) * dq, axis=-1)
        return out

    def mean(self, p):
        if self.zero_mean:
            return np.zeros(() if p.is_folded else np.shape(p.t))
        return self.mean_ladder(self.ladder(p))

    def mean_ladder(self, lp):
        if self.zero_mean:
            return np.zeros(np.shape(lp[0])[:-1])
        return lp[0] @ self.alpha + lp[1] @ np.conj(self.alpha)

    @staticmethod
    def bogoliubov(h, g, s: float = 1.0):
        """(A, B) with exp(iHs) a exp(-iHs) = A a + B a^dag for
        H = a^dag h a + (a^dag g a^dag + h.c.)/2."""
        h = np.asarray(h, dtype=complex)
        g = np.asarray(g, dtype=complex)
        K = np.block([[h, g], [-g.conj(), -h.conj()]])
        E = linalg.expm(-1j * s * K)
        M = h.shape[0]
        return E[:M, :M], E[:M, M:]

    @classmethod
    def from_quadratic(cls, basis: BoxBasis, h, g, occupation=None, alpha=None) -> "GaussianGeneral":
        """exp(-iH) rho_diag exp(iH) with rho_diag diagonal Gaussian of given occupations."""
        M = basis.total_modes
        n = np.zeros(M) if occupation is None else np.asarray(occupation, dtype=float)
        A, B = cls.bogoliubov(h, g)
        nd = np.diag(n)
        one = np.eye(M)
        N = A.conj() @ nd @ A.T + B.conj() @ (one + nd) @ B.T
        S = A @ (one + nd) @ B.T + B @ nd @ A.T
        return cls(basis, 0.5 * (N + N.conj().T), 0.5 * (S + S.T), alpha)

    @classmethod
    def random(cls, basis: BoxBasis, rng: np.random.Generator, squeeze: float = 0.2, beta: float | None = 2.0):
        """Random zero-mean Gaussian state; returns the state and its generator (h, g, occupations)."""
        M = basis.total_modes
        h = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
        h = 0.5 * squeeze * (h + h.conj().T) / math.sqrt(M)
        g = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
        g = 0.5 * squeeze * (g + g.T) / math.sqrt(M)
        w = np.tile(basis.omega, basis.fields)
        occ = np.zeros(M) if beta is None else 1.0 / np.expm1(beta * w)
        state = cls.from_quadratic(basis, h, g, occ)
        state.generator = (h, g, occ)
        return state


# --------------------------------------------------------------------------
# Wick engine
# --------------------------------------------------------------------------


def wick_expand(n: int, pair: Callable[[int, int], object], mean: Optional[Callable[[int], object]]):
    """Sum over all partial pairings of positions 0..n-1.

    Each position is either paired with a later one (factor ``pair(i, j)``) or left
    single (factor ``mean(i)``; omitted for zero-mean states).
    """
    cache: Dict[Tuple[int, ...], object] = {}

    def rec(rem: Tuple[int, ...]):
        if not rem:
            return 1.0
        if mean is None and len(rem) % 2:
            return 0.0
        hit = cache.get(rem)
        if hit is not None:
            return hit
        i, rest = rem[0], rem[1:]
        total = mean(i) * rec(rest) if mean is not None else 0.0
        for idx, j in enumerate(rest):
            total = total + pair(i, j) * rec(rest[:idx] + rest[idx + 1 :])
        cache[rem] = total
        return total

    return rec(tuple(range(n)))


def wick_terms(n: int, with_means: bool) -> int:
    """Number of monomials produced by ``wick_expand``."""
    if n == 0:
        return 1
    if not with_means:
        return 0 if n % 2 else int(np.prod(np.arange(n - 1, 0, -2)))
    # t(n) = t(n-1) + (n-1) t(n-2)
    a, b = 1, 1
    for k in range(2, n + 1):
        a, b = b, b + (k - 1) * a
    return b


def _folded_cov(state: FieldState, p: Probe, q: Probe):
    if isinstance(state.basis, BoxBasis) or not (p.is_folded or q.is_folded):
        return state.cov(p, q)
    if p.is_folded:
        return sum(w * _folded_cov(state, p.node(i), q) for i, w in enumerate(p.weights))
    return sum(w * _folded_cov(state, p, q.node(i)) for i, w in enumerate(q.weights))


def _folded_mean(state: FieldState, p: Probe):
    if isinstance(state.basis, BoxBasis) or not p.is_folded:
        return state.mean(p)
    return sum(w * state.mean(p.node(i)) for i, w in enumerate(p.weights))


def wick(state: FieldState, probes: Sequence[Probe], pair_cache: dict | None = None):
    """n-point function <P_1 ... P_n> of Gaussian ``state`` on broadcastable probes."""
    n = len(probes)
    if n == 0:
        return 1.0
    covs: Dict[Tuple[int, int], object] = {} if pair_cache is None else pair_cache
    means: Dict[int, object] = {}

    if isinstance(state.basis, BoxBasis):
        lad = [state.basis.ladder(p) for p in probes]

        def pair(i, j):
            key = (i, j)
            if key not in covs:
                covs[key] = state.cov_ladder(lad[i], lad[j])
            return covs[key]

        def mean(i):
            if i not in means:
                means[i] = state.mean_ladder(lad[i])
            return means[i]
    else:

        def pair(i, j):
            key = (i, j)
            if key not in covs:
                covs[key] = _folded_cov(state, probes[i], probes[j])
            return covs[key]

        def mean(i):
            if i not in means:
                means[i] = _folded_mean(state, probes[i])
            return means[i]

    return wick_expand(n, pair, None if state.zero_mean else mean)


def w2(state: FieldState, a, b):
    return state.w2(a, b)


def wn(state: FieldState, points: Sequence):
    return state.wn(points)


def coherent_amplitude(state: FieldState, a) -> float:
    if not isinstance(state, Coherent):
        raise ConfigurationError("coherent_amplitude needs a coherent state")
    return float(np.real(state.mean(as_probe(a))))
