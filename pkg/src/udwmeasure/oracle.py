"""Exact reference model: detectors coupled to a truncated bosonic Fock space.

The field lives on the modes of a ``BoxBasis``.  Fock states keep per-mode
occupations n_j <= n_max and, optionally, a total-excitation cutoff
sum_j n_j <= total, which keeps many-mode systems tractable.  Full-space
vectors are arrays of shape (2,)*n_detectors + (D_field, columns).

The interaction-picture equation i dX/dt = H_I(t) X is integrated with an
explicit 8th-order Runge-Kutta scheme; Delta switchings act as instantaneous
kicks exp(-i lambda amp mu(t0) phi(F, t0)).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .detector import DetectorSpec, DetectorVector, as_vector
from .errors import ConfigurationError, NumericGuardError, StiffnessError, UnsupportedConfiguration, ZeroProbabilityError
from .fieldstate import BoxBasis, Coherent, FieldState, GaussianGeneral, Probe, Thermal, Vacuum, as_probe
from .profiles import Delta
from .spacetime import regions_spacelike

log = logging.getLogger(__name__)

DEFAULT_CAP = 4096
RTOL = 1e-12
ATOL = 1e-14
SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |g><e|


# --------------------------------------------------------------------------
# Fock space
# --------------------------------------------------------------------------


class FockBasis:
    """Occupation-number basis with per-mode and optional total cutoffs."""

    def __init__(self, n_modes: int, n_max: int, total: int | None = None):
        if n_modes < 1 or n_max < 0:
            raise ConfigurationError("need n_modes >= 1 and n_max >= 0")
        self.n_modes, self.n_max, self.total = n_modes, n_max, total
        cap = n_max if total is None else min(n_max, total)
        states = np.zeros((1, 0), dtype=np.int64)
        for _ in range(n_modes):
            used = states.sum(axis=1)
            rows = []
            for n in range(cap + 1):
                keep = states if total is None else states[used + n <= total]
                rows.append(np.hstack([keep, np.full((keep.shape[0], 1), n, dtype=np.int64)]))
            states = np.vstack(rows)
        self.radix = cap + 1
        # lexicographic order with mode 0 least significant; rows are looked up by their bytes
        order = np.lexsort(states.T)
        self.states = np.ascontiguousarray(states[order])
        self._row = {r.tobytes(): i for i, r in enumerate(self.states)}
        self._ann = None

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def index(self, occupations: Sequence[int]) -> int:
        key = np.asarray(occupations, dtype=np.int64)
        i = self._row.get(key.tobytes()) if key.shape == (self.n_modes,) else None
        if i is None:
            raise KeyError(tuple(occupations))
        return i

    @property
    def annihilators(self) -> List[sparse.csr_matrix]:
        if self._ann is None:
            ops = []
            D = self.dim
            for j in range(self.n_modes):
                n = self.states[:, j]
                src = np.nonzero(n > 0)[0]
                lowered = self.states[src].copy()
                lowered[:, j] -= 1
                tgt = np.fromiter((self._row[r.tobytes()] for r in lowered), dtype=np.int64, count=src.size)
                ops.append(sparse.csr_matrix((np.sqrt(n[src]).astype(complex), (tgt, src)), shape=(D, D)))
            self._ann = ops
        return self._ann

    def top_weight(self, vec: np.ndarray) -> float:
        """Probability on states touching a cutoff (a truncation diagnostic)."""
        occ = self.states
        edge = np.any(occ >= self.n_max, axis=1)
        if self.total is not None:
            edge |= occ.sum(axis=1) >= self.total
        v = np.asarray(vec).reshape(self.dim, -1)
        return float(np.sum(np.abs(v[edge]) ** 2))


# --------------------------------------------------------------------------
# field states on the truncated space
# --------------------------------------------------------------------------


@dataclass
class Ensemble:
    """rho = sum_r weights[r] |vectors[:, r]><vectors[:, r]|."""

    weights: np.ndarray
    vectors: np.ndarray
    leakage: float = 0.0

    @property
    def density(self) -> np.ndarray:
        v = self.vectors
        return (v * self.weights) @ v.conj().T


def _coherent_factor(alpha: complex, cap: int) -> np.ndarray:
    n = np.arange(cap + 1)
    logs = -0.5 * abs(alpha) ** 2 - 0.5 * np.array([math.lgamma(k + 1) for k in n])
    with np.errstate(divide="ignore"):
        return np.exp(logs) * np.power(complex(alpha), n)


def prepare(fock: FockBasis, state: FieldState) -> Ensemble:
    """Truncated representation of a Gaussian box state, renormalized; leakage reported."""
    if not isinstance(state.basis, BoxBasis):
        raise UnsupportedConfiguration("the oracle needs a box field state")
    if state.basis.total_modes != fock.n_modes:
        raise ConfigurationError("Fock basis and field basis disagree on the mode count")
    occ = fock.states
    if isinstance(state, Vacuum):
        v = np.zeros((fock.dim, 1), dtype=complex)
        v[fock.index([0] * fock.n_modes), 0] = 1.0
        return Ensemble(np.ones(1), v, 0.0)
    if isinstance(state, Coherent):
        cap = fock.radix - 1
        amp = np.ones(fock.dim, dtype=complex)
        for j, a in enumerate(state.alpha):
            amp = amp * _coherent_factor(a, cap)[occ[:, j]]
        norm2 = float(np.vdot(amp, amp).real)
        return Ensemble(np.ones(1), (amp / math.sqrt(norm2))[:, None], 1.0 - norm2)
    if isinstance(state, Thermal):
        x = np.exp(-state.beta * np.tile(state.basis.omega, state.basis.fields))
        logp = np.sum(np.log1p(-x)[None, :] + occ * np.log(x)[None, :], axis=1)
        p = np.exp(logp)
        total = float(p.sum())
        keep = p > 1e-18 * total
        vecs = np.zeros((fock.dim, int(keep.sum())), dtype=complex)
        vecs[np.nonzero(keep)[0], np.arange(vecs.shape[1])] = 1.0
        return Ensemble(p[keep] / total, vecs, 1.0 - total)
    if isinstance(state, GaussianGeneral):
        gen = getattr(state, "generator", None)
        if gen is None:
            raise UnsupportedConfiguration("general Gaussian state needs its quadratic generator for the oracle")
        h, g, n = gen
        a = fock.annihilators
        ad = [op.conj().T for op in a]
        H = sparse.csr_matrix((fock.dim, fock.dim), dtype=complex)
        M = fock.n_modes
        for i in range(M):
            for j in range(M):
                if h[i, j] != 0:
                    H = H + h[i, j] * (ad[i] @ a[j])
                if g[i, j] != 0:
                    H = H + 0.5 * g[i, j] * (ad[i] @ ad[j]) + 0.5 * np.conj(g[i, j]) * (a[j] @ a[i])
        x = np.where(np.asarray(n) > 0, np.asarray(n) / (1.0 + np.asarray(n)), 0.0)
        with np.errstate(divide="ignore"):
            logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
        logp = np.sum(np.log1p(-x)[None, :] + np.where(occ > 0, occ * logx[None, :], 0.0), axis=1)
        p = np.exp(logp)
        total = float(p.sum())
        keep = p > 1e-18 * total
        basis_vecs = np.zeros((fock.dim, int(keep.sum())), dtype=complex)
        basis_vecs[np.nonzero(keep)[0], np.arange(basis_vecs.shape[1])] = 1.0
        vecs = expm_multiply(-1j * H.tocsc(), basis_vecs)
        return Ensemble(p[keep] / total, vecs, 1.0 - total + fock.top_weight(vecs * np.sqrt(p[keep] / total)))
    raise UnsupportedConfiguration(f"cannot prepare {type(state).__name__} on the oracle")


# --------------------------------------------------------------------------
# system and evolution
# --------------------------------------------------------------------------


class TruncatedSystem:
    """Detectors (in order) tensored with a truncated Fock space of box modes."""

    def __init__(self, basis: BoxBasis, detectors: Sequence[DetectorSpec], n_max: int = 4,
                 total: int | None = None, cap: int = DEFAULT_CAP, fock: FockBasis | None = None):
        if not isinstance(basis, BoxBasis):
            raise UnsupportedConfiguration("the oracle needs a box mode basis")
        self.basis = basis
        self.detectors = tuple(detectors)
        for d in self.detectors:
            if d.f.dim != 1:
                raise ConfigurationError("box detectors need one-dimensional smearing")
        self.fock = fock if fock is not None else FockBasis(basis.total_modes, n_max, total)
        self.n_max, self.total, self.cap = self.fock.n_max, self.fock.total, cap
        self.nd = len(self.detectors)
        a = self.fock.annihilators
        self._A = sparse.vstack(a).tocsr()
        self._Ad = sparse.vstack([op.conj().T for op in a]).tocsr()
        k = basis.k
        w = basis.omega
        self._w = np.tile(w, basis.fields)
        self._norm = 1.0 / np.sqrt(2.0 * basis.L * self._w)
        self._ft = []
        for d in self.detectors:
            ft = np.zeros(basis.total_modes, dtype=complex)
            ft[: basis.n_modes] = d.f.transform(k)
            self._ft.append(ft)

    @property
    def field_dim(self) -> int:
        return self.fock.dim

    @property
    def dim(self) -> int:
        return 2**self.nd * self.fock.dim

    @property
    def dense_ok(self) -> bool:
        return self.dim <= self.cap

    def with_detectors(self, detectors: Sequence[DetectorSpec]) -> "TruncatedSystem":
        return TruncatedSystem(self.basis, detectors, cap=self.cap, fock=self.fock)

    # -- field operators ---------------------------------------------------
    def coefficients(self, probe: Probe) -> np.ndarray:
        return np.atleast_2d(self.basis.mode_functions(probe))[0]

    def field_operator(self, point) -> sparse.csr_matrix:
        probe = as_probe(point)
        if np.size(probe.t) != 1:
            raise ConfigurationError("field operators need a scalar time")
        c = self.coefficients(probe)
        a = self.fock.annihilators
        op = sparse.csr_matrix((self.fock.dim, self.fock.dim), dtype=complex)
        for j, cj in enumerate(c):
            if cj != 0:
                op = op + cj * a[j] + np.conj(cj) * a[j].conj().T
        return op.tocsr()

    def _detector_field_coeffs(self, i: int, t: float) -> np.ndarray:
        return self._ft[i] * np.exp(-1j * self._w * t) * self._norm

    # -- generator ---------------------------------------------------------
    def _apply_H(self, t: float, X: np.ndarray, active: Sequence[int]) -> np.ndarray:
        """H_I(t) X for X of shape (2,)*nd + (D, cols), smooth detectors in ``active``."""
        D = self.fock.dim
        nd = self.nd
        out = np.zeros_like(X)
        Xf = np.moveaxis(X, nd, 0).reshape(D, -1)
        Y = (self._A @ Xf).reshape(-1, D, Xf.shape[1])
        Yd = (self._Ad @ Xf).reshape(-1, D, Xf.shape[1])
        for i in active:
            d = self.detectors[i]
            lam_chi = d.coupling * float(np.ravel(d.chi.eval(np.array([t])))[0])
            if lam_chi == 0.0:
                continue
            c = self._detector_field_coeffs(i, t)
            phiX = np.tensordot(c, Y, axes=(0, 0)) + np.tensordot(np.conj(c), Yd, axes=(0, 0))
            phiX = np.moveaxis(phiX.reshape((D,) + X.shape[:nd] + X.shape[nd + 1:]), 0, nd)
            mu = lam_chi * np.array([[0.0, np.exp(-1j * d.gap * t)], [np.exp(1j * d.gap * t), 0.0]])
            out = out + np.moveaxis(np.tensordot(mu, phiX, axes=(1, i)), 0, i)
        return out

    def _kick(self, i: int, X: np.ndarray, sign: float) -> np.ndarray:
        d = self.detectors[i]
        t0 = float(d.chi.center[0])
        amp = d.coupling * d.chi.amplitude
        c = self._detector_field_coeffs(i, t0)
        a = self.fock.annihilators
        phi = sparse.csr_matrix((self.fock.dim, self.fock.dim), dtype=complex)
        for j, cj in enumerate(c):
            if cj != 0:
                phi = phi + cj * a[j] + np.conj(cj) * a[j].conj().T
        mu = np.array([[0.0, np.exp(-1j * d.gap * t0)], [np.exp(1j * d.gap * t0), 0.0]])
        left = sparse.identity(2**i, format="csr")
        right = sparse.identity(2 ** (self.nd - i - 1), format="csr")
        op = sparse.kron(sparse.kron(sparse.kron(left, sparse.csr_matrix(mu)), right), phi).tocsc()
        flat = X.reshape(self.dim, -1)
        return expm_multiply(-1j * sign * amp * op, flat).reshape(X.shape)

    def schedule(self) -> Tuple[List[Tuple[float, float]], List[Tuple[float, int]], float, float]:
        """Smooth supports and kick times."""
        smooth, kicks = [], []
        for i, d in enumerate(self.detectors):
            if d.coupling == 0.0:
                continue
            if isinstance(d.chi, Delta):
                kicks.append((float(d.chi.center[0]), i))
            else:
                lo, hi = d.chi.quad_domain()
                smooth.append((float(lo), float(hi), i))
        times = [s[0] for s in smooth] + [s[1] for s in smooth] + [k[0] for k in kicks]
        if not times:
            return smooth, kicks, 0.0, 0.0
        return smooth, sorted(kicks), min(times), max(times)

    def propagate(self, X: np.ndarray, adjoint: bool = False, t_span: Tuple[float, float] | None = None):
        """U X (or U^dagger X) for X of shape (2,)*nd + (D, cols); returns (result, nfev)."""
        X = np.asarray(X, dtype=complex)
        smooth, kicks, t0, t1 = self.schedule()
        if t_span is not None:
            lo, hi = t_span
            if lo > t0 + 1e-12 or hi < t1 - 1e-12:
                raise ConfigurationError("t_span must cover every switching support")
        cuts = sorted({t0, t1, *[k[0] for k in kicks]})
        kick_at: dict = {}
        for t, i in kicks:
            kick_at.setdefault(t, []).append(i)
        merged: List[Tuple[str, object]] = []
        for n, t in enumerate(cuts):
            if t in kick_at:
                merged.append(("kick", kick_at[t]))
            if n + 1 < len(cuts):
                merged.append(("flow", (t, cuts[n + 1])))
        if adjoint:
            merged = merged[::-1]
        nfev = 0
        shape = X.shape
        for kind, payload in merged:
            if kind == "kick":
                # simultaneous kicks are applied in detector order
                for i in (payload if not adjoint else payload[::-1]):
                    X = self._kick(i, X, -1.0 if adjoint else 1.0)
                continue
            a, b = payload
            active = [i for lo, hi, i in smooth if lo < b and hi > a]
            if not active or b <= a:
                continue
            span = (b, a) if adjoint else (a, b)

            def rhs(t, y):
                return (-1j * self._apply_H(t, y.reshape(shape), active)).ravel()

            sol = solve_ivp(rhs, span, X.ravel(), method="DOP853", rtol=RTOL, atol=ATOL)
            if not sol.success:
                raise StiffnessError(f"time integration failed on [{a:.4g}, {b:.4g}]: {sol.message}")
            nfev += sol.nfev
            X = sol.y[:, -1].reshape(shape)
        return X, nfev


@dataclass
class EvolutionResult:
    U: np.ndarray
    nfev: int
    unitarity_defect: float
    rtol: float = RTOL
    atol: float = ATOL


def evolve(sys: TruncatedSystem, t_span: Tuple[float, float] | None = None) -> EvolutionResult:
    """Dense U on the full truncated space (dimension capped)."""
    if not sys.dense_ok:
        raise ConfigurationError(f"dimension {sys.dim} exceeds the dense cap {sys.cap}; use vector propagation")
    X = np.eye(sys.dim, dtype=complex).reshape((2,) * sys.nd + (sys.fock.dim, sys.dim))
    Y, nfev = sys.propagate(X, t_span=t_span)
    U = Y.reshape(sys.dim, sys.dim)
    defect = float(np.linalg.norm(U.conj().T @ U - np.eye(sys.dim), 2))
    if defect > 1e-9:
        raise NumericGuardError(f"evolution not unitary to tolerance (defect {defect:.3g})")
    return EvolutionResult(U, nfev, defect)


# --------------------------------------------------------------------------
# measurement operators
# --------------------------------------------------------------------------


def _embed(sys: TruncatedSystem, vec: DetectorVector, which: int, X: np.ndarray) -> np.ndarray:
    """|vec>_which tensor X, with X of shape (2,)*(nd-1) + (D, cols)."""
    out = np.tensordot(vec.array, X, axes=0)
    return np.moveaxis(out, 0, which)


def _project(vec: DetectorVector, which: int, X: np.ndarray) -> np.ndarray:
    """<vec|_which X."""
    return np.tensordot(vec.array.conj(), X, axes=(0, which))


def m_matrix(sys: TruncatedSystem, U: EvolutionResult | np.ndarray, s, psi, which: int = 0) -> np.ndarray:
    """M_{s,psi} = <s|U|psi> on the remaining factors (other detectors, then field)."""
    s, psi = as_vector(s), as_vector(psi)
    s.require_unit("outcome state")
    psi.require_unit("initial state")
    U = U.U if isinstance(U, EvolutionResult) else U
    nd, D = sys.nd, sys.fock.dim
    T = U.reshape((2,) * nd + (D,) + (2,) * nd + (D,))
    T = np.tensordot(psi.array, T, axes=(0, nd + 1 + which))
    T = np.tensordot(s.array.conj(), T, axes=(0, which))
    rest = 2 ** (nd - 1) * D
    return T.reshape(rest, rest)


def apply_m(sys: TruncatedSystem, s, psi, X: np.ndarray, which: int = 0, adjoint: bool = False) -> np.ndarray:
    """M X (or M^dagger X) by vector propagation; X has shape (2,)*(nd-1) + (D, cols)."""
    s, psi = as_vector(s), as_vector(psi)
    if adjoint:
        Y, _ = sys.propagate(_embed(sys, s, which, X), adjoint=True)
        return _project(psi, which, Y)
    Y, _ = sys.propagate(_embed(sys, psi, which, X))
    return _project(s, which, Y)


def apply_field_string(sys: TruncatedSystem, points: Sequence, X: np.ndarray) -> np.ndarray:
    """phi(x_1) ... phi(x_n) X acting on the field (first) axis of X (D, cols)."""
    out = X
    for p in reversed(list(points)):
        out = sys.field_operator(p) @ out
    return out


def npoint(sys: TruncatedSystem, ens: Ensemble, points: Sequence) -> complex:
    """tr(rho phi(x_1) ... phi(x_n)) for a field ensemble."""
    V = ens.vectors
    Y = apply_field_string(sys, points, V)
    return complex(np.sum(ens.weights * np.einsum("ir,ir->r", V.conj(), Y)))


def _single(sys: TruncatedSystem) -> None:
    if sys.nd != 1:
        raise ConfigurationError("this operation needs a single-detector system")


def updated_ensemble(sys: TruncatedSystem, ens: Ensemble, psi, mode: str = "NS", s=None,
                     U: EvolutionResult | None = None) -> Tuple[Ensemble, float]:
    """Updated field ensemble and outcome probability (1 for NS)."""
    _single(sys)
    psi = as_vector(psi)
    V = ens.vectors
    X = _embed(sys, psi, 0, V)
    if U is not None:
        Y = (U.U @ X.reshape(sys.dim, -1)).reshape(X.shape)
    else:
        Y, _ = sys.propagate(X)
    if mode.upper() in ("NS", "NONSELECTIVE"):
        vecs = np.concatenate([Y[0], Y[1]], axis=1)
        return Ensemble(np.concatenate([ens.weights, ens.weights]), vecs, ens.leakage), 1.0
    s = as_vector(s)
    MV = _project(s, 0, Y)
    p = float(np.sum(ens.weights * np.sum(np.abs(MV) ** 2, axis=0)))
    if p < 1e-14:
        raise ZeroProbabilityError(f"outcome probability {p:.3g} below 1e-14")
    return Ensemble(ens.weights / p, MV, ens.leakage), p


def exact_probability(sys: TruncatedSystem, ens: Ensemble, psi, s, U: EvolutionResult | None = None) -> float:
    """tr(rho E_{s,psi})."""
    _single(sys)
    psi, s = as_vector(psi), as_vector(s)
    X = _embed(sys, psi, 0, ens.vectors)
    if U is not None:
        Y = (U.U @ X.reshape(sys.dim, -1)).reshape(X.shape)
    else:
        Y, _ = sys.propagate(X)
    MV = _project(s, 0, Y)
    return float(np.sum(ens.weights * np.sum(np.abs(MV) ** 2, axis=0)))


def exact_update(sys: TruncatedSystem, ens: Ensemble, psi, points: Sequence, mode: str = "NS", s=None,
                 U: EvolutionResult | None = None) -> complex:
    """Exact updated n-point function tr(rho^u phi(x_1)...phi(x_n))."""
    new, _ = updated_ensemble(sys, ens, psi, mode, s, U)
    return npoint(sys, new, points)


def exact_delta(sys: TruncatedSystem, ens: Ensemble, psi, s, points: Sequence,
                U: EvolutionResult | None = None) -> complex:
    """tr(M rho M^dag Phi) - tr(rho E) tr(rho Phi)."""
    new, p = updated_ensemble(sys, ens, psi, "S", s, U)
    return p * npoint(sys, new, points) - p * npoint(sys, ens, points)


# --------------------------------------------------------------------------
# sequential measurements
# --------------------------------------------------------------------------


@dataclass
class SequentialReport:
    p_a: float
    p_b: float
    p_ab: float
    p_ba: float
    trace_distance: float
    conditional: float
    conditional_from_joint: complex
    eq35_residual: float
    eq35_bound: float
    comm_ab: float
    comm_abdag: float
    states: dict = field(default_factory=dict)


def _trace_distance(wx, X, wy, Y) -> float:
    if X.shape[1] == 1 and Y.shape[1] == 1:
        x = X[:, 0] / np.linalg.norm(X[:, 0])
        y = Y[:, 0] / np.linalg.norm(Y[:, 0])
        ov = np.vdot(y, x)
        # sqrt(1 - |<x|y>|^2) from the aligned difference keeps precision for nearby states
        dist = np.linalg.norm(x - y * (ov / abs(ov) if abs(ov) > 0 else 1.0))
        return float(dist * math.sqrt(max(0.0, 1.0 - 0.25 * dist**2)))
    rx = (X * wx) @ X.conj().T
    ry = (Y * wy) @ Y.conj().T
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(rx - ry))))


def trace_distance(a: Ensemble, b: Ensemble) -> float:
    return _trace_distance(a.weights, a.vectors, b.weights, b.vectors)


def sequential(sys_a: TruncatedSystem, sys_b: TruncatedSystem, xi, a, zeta, b, ens: Ensemble,
               check_geometry: bool = True, keep_states: bool = False) -> SequentialReport:
    """Two selective measurements in either order on a shared truncated field."""
    _single(sys_a)
    _single(sys_b)
    if sys_a.fock is not sys_b.fock and sys_a.fock.dim != sys_b.fock.dim:
        raise ConfigurationError("both systems must share the Fock basis")
    if check_geometry:
        ra, rb = sys_a.detectors[0].region(), sys_b.detectors[0].region()
        if not regions_spacelike(ra, rb):
            from .errors import GeometryError

            raise GeometryError("interaction regions of A and B are not spacelike separated")
    V, w = ens.vectors, ens.weights
    Ma = lambda X: apply_m(sys_a, a, xi, X)  # noqa: E731
    Mb = lambda X: apply_m(sys_b, b, zeta, X)  # noqa: E731
    Mbd = lambda X: apply_m(sys_b, b, zeta, X, adjoint=True)  # noqa: E731
    MaV, MbV = Ma(V), Mb(V)
    MbMaV, MaMbV = Mb(MaV), Ma(MbV)
    norms = lambda X: np.sum(np.abs(X) ** 2, axis=0)  # noqa: E731
    p_a = float(np.sum(w * norms(MaV)))
    p_b = float(np.sum(w * norms(MbV)))
    p_ab = float(np.sum(w * norms(MbMaV)))
    p_ba = float(np.sum(w * norms(MaMbV)))
    if min(p_a, p_b, p_ab, p_ba) < 1e-14:
        raise ZeroProbabilityError("an outcome has vanishing probability")
    td = _trace_distance(w / p_ab, MbMaV, w / p_ba, MaMbV)
    # tr(rho E_a E_b) = sum_r w <M_a v|M_a M_b^dag M_b v>
    EbV = Mbd(MbV)
    joint = complex(np.sum(w * np.einsum("ir,ir->r", MaV.conj(), Ma(EbV))))
    conditional = p_ab / p_a
    residual = abs(conditional - joint / p_a)
    comm = MaMbV - MbMaV
    comm2 = Ma(Mbd(MbV)) - Mbd(MaMbV)  # [M_a, M_b^dag] M_b v
    n_comm = float(np.sqrt(np.sum(w * norms(comm))))
    n_comm2 = float(np.sqrt(np.sum(w * norms(comm2))))
    bound = float(np.sum(w * np.sqrt(norms(MaV)) * (np.sqrt(norms(comm)) + np.sqrt(norms(comm2))))) / p_a
    states = {}
    if keep_states:
        states = {
            "A": Ensemble(w / p_a, MaV),
            "B": Ensemble(w / p_b, MbV),
            "AB": Ensemble(w / p_ab, MbMaV),
            "BA": Ensemble(w / p_ba, MaMbV),
        }
    return SequentialReport(p_a, p_b, p_ab, p_ba, td, conditional, joint / p_a, residual, bound,
                            n_comm, n_comm2, states)


def commutator_norms(sys_a: TruncatedSystem, sys_b: TruncatedSystem, xi, a, zeta, b) -> Tuple[float, float]:
    """Operator norms ||[M_a, M_b]|| and ||[M_a, M_b^dag]|| (dense; small spaces only)."""
    Ua, Ub = evolve(sys_a), evolve(sys_b)
    A = m_matrix(sys_a, Ua, a, xi)
    B = m_matrix(sys_b, Ub, b, zeta)
    return float(np.linalg.norm(A @ B - B @ A, 2)), float(np.linalg.norm(A @ B.conj().T - B.conj().T @ A, 2))


# --------------------------------------------------------------------------
# convergence guard
# --------------------------------------------------------------------------


def convergence_guard(quantity, n_max: int, tol: float = 1e-8, max_n: int = 12) -> Tuple[float, int]:
    """Raise n_max until doubling it changes ``quantity(n_max)`` by at most ``tol``."""
    n = n_max
    value = quantity(n)
    while True:
        m = 2 * n
        if m > max_n:
            raise NumericGuardError(f"truncation did not converge below n_max={max_n}")
        nxt = quantity(m)
        if np.max(np.abs(np.asarray(nxt) - np.asarray(value))) <= tol:
            return value, n
        n, value = m, nxt
