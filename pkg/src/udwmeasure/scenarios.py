"""Three detectors A, B, C on one truncated box field.

C interacts and is measured projectively; B interacts inside the causal future
of that measurement; A interacts spacelike to both.  The partial states of A and
B are computed two ways:

* density operators on the (A, B, field) space, with C entering only through
  its measurement operators M_{c,psi};
* extended 0-point functions  w~(k, l) = tr(rho |k><l|) = <l|rho|k>  read off the
  full (A, B, C, field) state.

All evolutions are exact (oracle) vector propagations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .detector import DetectorSpec, DetectorVector, as_vector
from .errors import GeometryError, ZeroProbabilityError
from .fieldstate import BoxBasis, FieldState, Vacuum
from .oracle import Ensemble, TruncatedSystem, apply_m, prepare
from .profiles import Delta, Gaussian
from .spacetime import InteractionRegion, NULL_TOL, measurement_region
from .update import Mode

PSD_TOL = 1e-12


# --------------------------------------------------------------------------
# configuration and geometry
# --------------------------------------------------------------------------


def _periodic_dist(a: Sequence[float], b: Sequence[float], L: float) -> float:
    dx = abs(float(a[0]) - float(b[0])) % L
    return min(dx, L - dx)


def _spacelike_periodic(r1: InteractionRegion, r2: InteractionRegion, L: float) -> bool:
    # the nearest periodic image is the binding one
    dist = _periodic_dist(r1.spatial_center, r2.spatial_center, L) - r1.spatial_radius - r2.spatial_radius
    dt = max(r1.t_off - r2.t_on, r2.t_off - r1.t_on)
    return dist > max(dt, 0.0) + NULL_TOL * (1.0 + abs(dist))


def _inside_future_periodic(inner: InteractionRegion, outer: InteractionRegion, L: float) -> bool:
    dist = _periodic_dist(inner.spatial_center, outer.spatial_center, L) + inner.spatial_radius
    reach = max(0.0, dist - outer.spatial_radius)
    return inner.t_on - outer.t_off >= reach - NULL_TOL * (1.0 + reach)


def _density(rho) -> np.ndarray:
    if isinstance(rho, (DetectorVector, str)):
        v = as_vector(rho).array
        return np.outer(v, v.conj())
    rho = np.asarray(rho, dtype=complex)
    if rho.shape == (2,):
        return np.outer(rho, rho.conj())
    return rho


@dataclass
class AbcConfig:
    """Detectors A, B, C, their initial states, Clara's psi and outcome c, the field and the mode."""

    basis: BoxBasis
    a: DetectorSpec
    b: DetectorSpec
    c: DetectorSpec
    psi: DetectorVector
    outcome: DetectorVector
    state: FieldState | None = None
    rho_a: np.ndarray = field(default_factory=lambda: _density("g"))
    rho_b: np.ndarray = field(default_factory=lambda: _density("g"))
    mode: Mode = Mode.SELECTIVE
    n_max: int = 3
    total: int | None = None

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.psi, self.outcome = as_vector(self.psi), as_vector(self.outcome)
        self.psi.require_unit("Clara's initial state")
        self.outcome.require_unit("Clara's outcome")
        self.rho_a, self.rho_b = _density(self.rho_a), _density(self.rho_b)
        if self.state is None:
            self.state = Vacuum(self.basis)
        for name, rho in (("rho_a", self.rho_a), ("rho_b", self.rho_b)):
            if rho.shape != (2, 2) or abs(np.trace(rho) - 1) > 1e-10 or np.linalg.eigvalsh(rho).min() < -1e-12:
                from .errors import ConfigurationError

                raise ConfigurationError(f"{name} must be a 2x2 density matrix")
        self.validate()

    def regions(self) -> Dict[str, InteractionRegion]:
        return {"A": self.a.region(), "B": self.b.region(), "C": self.c.region()}

    def validate(self) -> None:
        L = self.basis.L
        r = self.regions()
        P = measurement_region(r["C"])
        if not _inside_future_periodic(r["B"], P, L):
            raise GeometryError("B's interaction region is not inside the causal future of C's measurement")
        if not _spacelike_periodic(r["A"], r["B"], L):
            raise GeometryError("A's interaction region is not spacelike to B's")
        if not _spacelike_periodic(r["A"], r["C"], L):
            raise GeometryError("A's interaction region is not spacelike to C's")
        if not _spacelike_periodic(r["A"], P, L):
            raise GeometryError("A's interaction region is not spacelike to C's measurement")

    @classmethod
    def default(cls, mode="S", n_modes: int = 4, coupling: float = 1.0, n_max: int = 3,
                total: int | None = None) -> "AbcConfig":
        """C at (t=0, x=0), B at (t=2.5, x=0), A at (t=0, x=5) in a box of length 10."""
        basis = BoxBasis(10.0, 0.5, n_modes)
        sw = 0.2

        def det(label, t0, x0):
            return DetectorSpec(1.0, coupling, Gaussian(sw, (t0,)), Delta((x0,)), label)

        psi = DetectorVector(1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))
        return cls(basis, det("A", 0.0, 5.0), det("B", 2.5, 0.0), det("C", 0.0, 0.0), psi, psi.complement(),
                   mode=mode, n_max=n_max, total=total)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _eig_ensemble(rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(rho)
    keep = w > 1e-15
    return w[keep], v[:, keep]


def _trace_norm_distance(x: np.ndarray, y: np.ndarray) -> float:
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * ((x - y) + (x - y).conj().T)))))


def _ptrace_ab(rho_ab: np.ndarray, keep: str) -> np.ndarray:
    r = rho_ab.reshape(2, 2, 2, 2)
    return np.einsum("ijkj->ik", r) if keep == "A" else np.einsum("ijil->jl", r)


def _psd_defect(rho: np.ndarray) -> Tuple[float, float]:
    herm = 0.5 * (rho + rho.conj().T)
    return float(np.linalg.eigvalsh(herm).min()), float(abs(np.trace(rho) - 1.0))


class _Systems:
    """Single-active-detector systems sharing one Fock basis."""

    def __init__(self, cfg: AbcConfig):
        self.cfg = cfg
        dets = [cfg.a, cfg.b, cfg.c]
        off = [d.with_coupling(0.0) for d in dets]
        base = TruncatedSystem(cfg.basis, dets, n_max=cfg.n_max, total=cfg.total)
        self.fock = base.fock
        self.full = base

        def only(i):
            return base.with_detectors([d if j == i else off[j] for j, d in enumerate(dets)])

        # three-detector space (A, B, C)
        self.A3, self.B3, self.C3 = only(0), only(1), only(2)
        # two-detector space (A, B) and the single-detector spaces
        self.A2 = base.with_detectors([cfg.a, off[1]])
        self.B2 = base.with_detectors([off[0], cfg.b])
        self.A1 = base.with_detectors([cfg.a])
        self.C1 = base.with_detectors([cfg.c])

    def run(self, sys: TruncatedSystem, X: np.ndarray) -> np.ndarray:
        return sys.propagate(X)[0]


def _field_trace(X: np.ndarray, weights: np.ndarray, n_det: int) -> np.ndarray:
    """tr_field sum_r w_r |X_r><X_r| for X of shape (2,)*n_det + (D, R)."""
    flat = X.reshape(2**n_det, X.shape[-2], X.shape[-1])
    return np.einsum("adr,bdr,r->ab", flat, flat.conj(), weights)


# --------------------------------------------------------------------------
# route 1: density operators on (A, B, field)
# --------------------------------------------------------------------------


def _route1(cfg: AbcConfig, sy: _Systems, ens: Ensemble) -> Dict[str, object]:
    wa, va = _eig_ensemble(cfg.rho_a)
    wb, vb = _eig_ensemble(cfg.rho_b)
    V, wv = ens.vectors, ens.weights
    c, cbar, psi = cfg.outcome, cfg.outcome.complement(), cfg.psi

    def ab_state(field_vecs: np.ndarray, fw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # |a_i> |b_j> |v_r>, weights wa_i wb_j fw_r
        X = np.einsum("ai,bj,dr->abdijr", va, vb, field_vecs)
        X = X.reshape(2, 2, field_vecs.shape[0], -1)
        w = np.einsum("i,j,r->ijr", wa, wb, fw).ravel()
        return X, w

    def evolve_ab(X):
        # U_A U_B: B first, A outermost
        return sy.run(sy.A2, sy.run(sy.B2, X))

    out: Dict[str, object] = {}
    MV = apply_m(sy.C1, c, psi, V)
    p = float(np.sum(wv * np.sum(np.abs(MV) ** 2, axis=0)))
    out["p"] = p
    if cfg.mode is Mode.NONSELECTIVE:
        rho = np.zeros((4, 4), dtype=complex)
        for s in (c, cbar):
            X, w = ab_state(apply_m(sy.C1, s, psi, V), wv)
            rho += _field_trace(evolve_ab(X), w, 2)
        out["rho_AB"] = rho
        out["rho_A"] = _ptrace_ab(rho, "A")
        out["rho_B"] = _ptrace_ab(rho, "B")
        # reduced form tr_phi[U_A (rho_A x rho_phi) U_A^dag]; equal up to truncated commutators
        XA = np.einsum("ai,dr->aidr", va, V).reshape(2, V.shape[0], -1)
        out["rho_A_reduced"] = _field_trace(sy.run(sy.A1, XA), np.einsum("i,r->ir", wa, wv).ravel(), 1)
        return out
    if p < 1e-14:
        raise ZeroProbabilityError(f"Clara's outcome has probability {p:.3g}")
    X, w = ab_state(MV, wv)
    rho = _field_trace(evolve_ab(X), w, 2) / p
    out["rho_AB"] = rho
    out["rho_B"] = _ptrace_ab(rho, "B")
    XA = np.einsum("ai,dr->aidr", va, V).reshape(2, V.shape[0], -1)
    wA = np.einsum("i,r->ir", wa, wv).ravel()
    out["rho_A"] = _field_trace(sy.run(sy.A1, XA), wA, 1)
    out["rho_A2"] = _ptrace_ab(rho, "A")
    XA2 = np.einsum("ai,dr->aidr", va, MV).reshape(2, V.shape[0], -1)
    out["rho_A2_reduced"] = _field_trace(sy.run(sy.A1, XA2), wA, 1) / p
    return out


# --------------------------------------------------------------------------
# route 2: extended 0-point functions on (A, B, C, field)
# --------------------------------------------------------------------------


def _extended(Y: np.ndarray, weights: np.ndarray, keep: Sequence[int], scale: float = 1.0) -> np.ndarray:
    """Matrix <l|rho_Gamma|k> assembled element by element from w~(k, l) = tr(rho |k><l|)."""
    nd = 3
    dim = 2 ** len(keep)
    out = np.zeros((dim, dim), dtype=complex)
    labels = [tuple(int(b) for b in np.binary_repr(i, len(keep))) for i in range(dim)]
    for ki, k in enumerate(labels):
        for li, l in enumerate(labels):
            idx_k: List[object] = [slice(None)] * nd
            idx_l: List[object] = [slice(None)] * nd
            for pos, ax in enumerate(keep):
                idx_k[ax], idx_l[ax] = k[pos], l[pos]
            # tr(|Y><Y| |k><l|) = <l|Y> . conj(<k|Y>) summed over everything else
            yk = Y[tuple(idx_k)]
            yl = Y[tuple(idx_l)]
            wt = np.sum(yl * yk.conj() * weights)
            out[li, ki] = wt / scale
    return out


def _route2(cfg: AbcConfig, sy: _Systems, ens: Ensemble, p: float) -> Dict[str, object]:
    wa, va = _eig_ensemble(cfg.rho_a)
    wb, vb = _eig_ensemble(cfg.rho_b)
    V, wv = ens.vectors, ens.weights
    X = np.einsum("ai,bj,c,dr->abcdijr", va, vb, cfg.psi.array, V).reshape(2, 2, 2, V.shape[0], -1)
    w = np.einsum("i,j,r->ijr", wa, wb, wv).ravel()
    YC = sy.run(sy.C3, X)
    literal = sy.run(sy.A3, sy.run(sy.B3, YC))  # U_A U_B U_C
    out: Dict[str, object] = {}
    if cfg.mode is Mode.NONSELECTIVE:
        out["rho_AB"] = _extended(literal, w, (0, 1))
        out["rho_A"] = _extended(literal, w, (0,))
        out["rho_B"] = _extended(literal, w, (1,))
        return out
    # selective: project C onto the outcome right after its interaction
    proj = np.tensordot(cfg.outcome.array.conj(), YC, axes=(0, 2))
    MY = np.moveaxis(np.tensordot(cfg.outcome.array, proj, axes=0), 0, 2)
    sel = sy.run(sy.A3, sy.run(sy.B3, MY))
    out["rho_AB"] = _extended(sel, w, (0, 1), p)
    out["rho_B"] = _extended(sel, w, (1,), p)
    out["rho_A2"] = _extended(sel, w, (0,), p)
    # A outside P: the outcome-blind state, A's evolution innermost
    inner = sy.run(sy.B3, sy.run(sy.C3, sy.run(sy.A3, X)))
    out["rho_A"] = _extended(inner, w, (0,))
    out["ordering_residual_A"] = float(np.max(np.abs(out["rho_A"] - _extended(literal, w, (0,)))))
    return out


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class AbcReport:
    mode: str
    route1: Dict[str, np.ndarray]
    route2: Dict[str, np.ndarray]
    p: float
    discrepancy: float
    checks: Dict[str, float]

    def to_json(self) -> dict:
        def enc(m):
            m = np.asarray(m)
            return {"re": np.round(m.real, 15).tolist(), "im": np.round(m.imag, 15).tolist()}

        return {
            "mode": self.mode,
            "probability": self.p,
            "discrepancy": self.discrepancy,
            "checks": self.checks,
            "route1": {k: enc(v) for k, v in self.route1.items()},
            "route2": {k: enc(v) for k, v in self.route2.items()},
        }


def run_abc(cfg: AbcConfig) -> AbcReport:
    """Both routes on the oracle backend, their discrepancy and the marginal checks."""
    cfg.validate()
    sy = _Systems(cfg)
    ens = prepare(sy.fock, cfg.state)
    r1 = _route1(cfg, sy, ens)
    p = float(r1.pop("p"))
    r2 = _route2(cfg, sy, ens, p)
    shared = [k for k in ("rho_AB", "rho_A", "rho_B", "rho_A2") if k in r1 and k in r2]
    disc = max(float(np.max(np.abs(r1[k] - r2[k]))) for k in shared)
    checks: Dict[str, float] = {}
    mats = {k: v for k, v in r1.items() if k.startswith("rho")}
    checks["min_eigenvalue"] = min(_psd_defect(v)[0] for v in mats.values())
    checks["trace_defect"] = max(_psd_defect(v)[1] for v in mats.values())
    rho_ab = r1["rho_AB"]
    if cfg.mode is Mode.NONSELECTIVE:
        checks["marginal_A"] = float(np.max(np.abs(r1["rho_A"] - _ptrace_ab(rho_ab, "A"))))
        checks["marginal_B"] = float(np.max(np.abs(r1["rho_B"] - _ptrace_ab(rho_ab, "B"))))
        checks["reduced_A_leakage"] = float(np.max(np.abs(r1["rho_A"] - r1["rho_A_reduced"])))
        checks["joint_evolution_residual"] = _joint_residual(cfg, sy, ens, rho_ab)
    else:
        checks["marginal_B"] = float(np.max(np.abs(r1["rho_B"] - _ptrace_ab(rho_ab, "B"))))
        checks["A_vs_trB_trace_distance"] = _trace_norm_distance(r1["rho_A"], _ptrace_ab(rho_ab, "A"))
        checks["A2_vs_trB"] = float(np.max(np.abs(r1["rho_A2"] - _ptrace_ab(rho_ab, "A"))))
        checks["reduced_A2_leakage"] = float(np.max(np.abs(r1["rho_A2"] - r1["rho_A2_reduced"])))
        checks["ordering_residual_A"] = float(r2.pop("ordering_residual_A"))
    return AbcReport(cfg.mode.value, r1, r2, p, disc, checks)


def _joint_residual(cfg: AbcConfig, sy: _Systems, ens: Ensemble, rho_ab: np.ndarray) -> float:
    """rho_AB' against tr_{C, field} of the simultaneous three-detector evolution."""
    wa, va = _eig_ensemble(cfg.rho_a)
    wb, vb = _eig_ensemble(cfg.rho_b)
    V, wv = ens.vectors, ens.weights
    X = np.einsum("ai,bj,c,dr->abcdijr", va, vb, cfg.psi.array, V).reshape(2, 2, 2, V.shape[0], -1)
    w = np.einsum("i,j,r->ijr", wa, wb, wv).ravel()
    Y = sy.run(sy.full, X)
    flat = Y.reshape(4, 2, V.shape[0], -1)
    joint = np.einsum("acdr,bcdr,r->ab", flat, flat.conj(), w)
    return float(np.max(np.abs(joint - rho_ab)))


@dataclass
class FactorizationReport:
    mode_counts: List[int]
    product_residual: List[float]
    comm_a_m: List[float]
    comm_a_mdag: List[float]
    order_bc: List[float]


def factorization_check(cfg: AbcConfig, mode_counts: Sequence[int] = (4, 8, 16)) -> FactorizationReport:
    """||(U - U_A U_B U_C) v||, ||[U_A, M_c] v||, ||[U_A, M_c^dag] v|| and ||(U_B U_C - U_C U_B) v||.

    Norms are taken on the initial state vector v, so large mode counts stay tractable.
    """
    res = FactorizationReport(list(mode_counts), [], [], [], [])
    for n in mode_counts:
        basis = BoxBasis(cfg.basis.L, cfg.basis.mass, n, cfg.basis.fields)
        sub = AbcConfig(basis, cfg.a, cfg.b, cfg.c, cfg.psi, cfg.outcome, Vacuum(basis) if isinstance(cfg.state, Vacuum) else None,
                        cfg.rho_a, cfg.rho_b, cfg.mode, cfg.n_max, cfg.total)
        sy = _Systems(sub)
        ens = prepare(sy.fock, sub.state)
        v = ens.vectors[:, :1]
        a0 = np.linalg.eigh(sub.rho_a)[1][:, -1]
        b0 = np.linalg.eigh(sub.rho_b)[1][:, -1]
        X = np.einsum("a,b,c,dr->abcdr", a0, b0, sub.psi.array, v)
        prod = sy.run(sy.A3, sy.run(sy.B3, sy.run(sy.C3, X)))
        res.product_residual.append(float(np.linalg.norm(sy.run(sy.full, X) - prod)))
        swapped = sy.run(sy.C3, sy.run(sy.B3, X))
        res.order_bc.append(float(np.linalg.norm(sy.run(sy.B3, sy.run(sy.C3, X)) - swapped)))
        # [U_A, M_c] and [U_A, M_c^dag] on (A, field) with A in its initial state
        XA = np.einsum("a,dr->adr", a0, v)
        c, psi = sub.outcome, sub.psi

        def M(Z, adj=False):
            flat = np.moveaxis(Z, 0, -2).reshape(Z.shape[1], -1)
            out = apply_m(sy.C1, c, psi, flat, adjoint=adj)
            return np.moveaxis(out.reshape(Z.shape[1], 2, -1), 1, 0)

        UA = lambda Z: sy.run(sy.A1, Z)  # noqa: E731
        res.comm_a_m.append(float(np.linalg.norm(UA(M(XA)) - M(UA(XA)))))
        res.comm_a_mdag.append(float(np.linalg.norm(UA(M(XA, True)) - M(UA(XA), True))))
    return res
