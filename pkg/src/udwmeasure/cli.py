"""Command-line front end.

    udwmeasure povm    --config run.json [--out table.csv] [--order 2] [--backend box]
    udwmeasure update  --config run.json
    udwmeasure scan    --config run.json [--threads 4]
    udwmeasure abc     --config run.json
    udwmeasure compare --config run.json

Configs are JSON documents validated against ``RunConfig`` (``schema_version`` 1).
All physical quantities are in natural units (hbar = c = 1).  Exit codes: 0 on
success, 2 for an invalid configuration (the offending field path is printed),
3 when a numeric guard trips.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import click
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__, causality, oracle, perturbation, profiles, scenarios
from .detector import DetectorSpec, DetectorVector, as_vector
from .errors import ConfigurationError, NumericGuardError
from .fieldstate import BoxBasis, Coherent, ContinuumBasis, GaussianGeneral, Thermal, Vacuum
from .perturbation import MeasurementSpec
from .quadrature import QuadratureSpec
from .spacetime import Event
from .update import Mode, Updater

SCHEMA_VERSION = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# --------------------------------------------------------------------------
# schema
# --------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProfileModel(_Strict):
    kind: Literal["gaussian", "bump", "indicator", "delta"]
    width: Optional[float] = Field(None, gt=0)
    radius: Optional[float] = Field(None, gt=0)
    center: Union[float, List[float]] = 0.0
    bounds: Optional[List[Tuple[float, float]]] = None
    amplitude: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _needs(self):
        need = {"gaussian": "width", "bump": "radius", "indicator": "bounds"}.get(self.kind)
        if need and getattr(self, need) is None:
            raise ValueError(f"{self.kind} profile needs '{need}'")
        return self

    def build(self) -> profiles.Profile:
        if self.kind == "gaussian":
            return profiles.gaussian(self.width, self.center, self.amplitude)
        if self.kind == "bump":
            return profiles.bump(self.radius, self.center, self.amplitude)
        if self.kind == "indicator":
            return profiles.indicator(*[tuple(b) for b in self.bounds], amplitude=self.amplitude)
        return profiles.delta(self.center, self.amplitude)


class DetectorModel(_Strict):
    gap: float
    coupling: float = Field(ge=0)
    switching: ProfileModel
    smearing: ProfileModel
    label: str = "detector"

    def build(self) -> DetectorSpec:
        return DetectorSpec(self.gap, self.coupling, self.switching.build(), self.smearing.build(), self.label)


DetectorState = Union[Literal["g", "e", "ground", "excited", "plus", "minus", "plus_i", "minus_i"],
                      List[Tuple[float, float]]]


def _vector(v: DetectorState) -> DetectorVector:
    named = {"plus": (1, 1), "minus": (-1, 1), "plus_i": (1j, 1), "minus_i": (-1j, 1)}
    if isinstance(v, str):
        if v in named:
            g, e = named[v]
            return DetectorVector(g / math.sqrt(2.0), e / math.sqrt(2.0))
        return as_vector(v)
    if len(v) != 2:
        raise ConfigurationError("detector state needs two (re, im) components")
    return DetectorVector(complex(*v[0]), complex(*v[1]))


class StateModel(_Strict):
    kind: Literal["vacuum", "thermal", "coherent", "gaussian_random"] = "vacuum"
    beta: Optional[float] = Field(None, gt=0)
    alpha: Optional[List[Tuple[float, float]]] = None
    squeeze: float = Field(0.2, ge=0)
    seed: int = 0


class FieldModel(_Strict):
    kind: Literal["box", "continuum"]
    L: Optional[float] = Field(None, gt=0)
    mass: float = Field(0.0, ge=0)
    n_modes: Optional[int] = Field(None, ge=1)
    d: int = Field(3, ge=1, le=3)
    state: StateModel = StateModel()

    @model_validator(mode="after")
    def _box(self):
        if self.kind == "box" and (self.L is None or self.n_modes is None):
            raise ValueError("box field needs 'L' and 'n_modes'")
        if self.kind == "continuum" and self.state.kind != "vacuum":
            raise ValueError("continuum field supports the vacuum state only from configs")
        return self


class MeasurementModel(_Strict):
    psi: DetectorState
    outcome: DetectorState


Point = List[float]


class QueryModel(_Strict):
    points: List[List[Point]] = []
    mode: Literal["NS", "S"] = "NS"
    order: int = Field(2, ge=0, le=2)


class GridModel(_Strict):
    t: List[float]
    x: List[Point]


class ScanModel(_Strict):
    kind: Literal["NS1", "NS2", "S1", "S2"] = "NS1"
    events: List[Point] = []
    pairs: List[Tuple[Point, Point]] = []
    grid: Optional[GridModel] = None
    tolerance: float = Field(1e-5, gt=0)


class CompareModel(_Strict):
    couplings: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    points: List[Point] = []
    mode: Literal["NS", "S"] = "NS"


class AbcModel(_Strict):
    mode: Literal["NS", "S"] = "S"
    n_modes: int = Field(4, ge=1)
    coupling: float = Field(1.0, ge=0)
    n_max: int = Field(3, ge=1)


class OracleModel(_Strict):
    n_max: int = Field(4, ge=1)
    total: Optional[int] = Field(None, ge=1)


class QuadratureModel(_Strict):
    panels: int = Field(6, ge=1)
    nodes: int = Field(16, ge=2)
    simplex3_panels: int = Field(5, ge=1)
    simplex3_nodes: int = Field(14, ge=2)
    pair4_panels: int = Field(4, ge=1)
    pair4_nodes: int = Field(12, ge=2)

    def build(self) -> QuadratureSpec:
        return QuadratureSpec(**self.model_dump())


class RunConfig(_Strict):
    """Top-level run description; every quantity in natural units."""

    schema_version: Literal[1]
    units: Literal["natural"] = "natural"
    backend: Literal["continuum", "box", "oracle"] = "box"
    field: FieldModel
    detector: Optional[DetectorModel] = None
    measurement: Optional[MeasurementModel] = None
    query: QueryModel = QueryModel()
    scan: ScanModel = ScanModel()
    compare: CompareModel = CompareModel()
    abc: AbcModel = AbcModel()
    oracle: OracleModel = OracleModel()
    quadrature: QuadratureModel = QuadratureModel()
    output: Optional[str] = None


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


class _ConfigFailure(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path, self.message = path, message


def load_config(path: str) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _ConfigFailure("<file>", str(exc)) from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise _ConfigFailure(loc, err["msg"]) from exc


def _require(cfg: RunConfig, *names: str) -> None:
    for n in names:
        if getattr(cfg, n) is None:
            raise _ConfigFailure(n, "field required for this command")


def build_state(cfg: RunConfig):
    f = cfg.field
    if f.kind == "continuum":
        return Vacuum(ContinuumBasis(f.d, f.mass))
    basis = BoxBasis(f.L, f.mass, f.n_modes)
    s = f.state
    if s.kind == "vacuum":
        return Vacuum(basis)
    if s.kind == "thermal":
        if s.beta is None:
            raise _ConfigFailure("field.state.beta", "thermal state needs beta")
        return Thermal(basis, s.beta)
    if s.kind == "coherent":
        if s.alpha is None:
            raise _ConfigFailure("field.state.alpha", "coherent state needs alpha")
        return Coherent(basis, [complex(*a) for a in s.alpha])
    return GaussianGeneral.random(basis, np.random.default_rng(s.seed), s.squeeze, s.beta)


def build_measurement(cfg: RunConfig, coupling: float | None = None) -> MeasurementSpec:
    _require(cfg, "detector", "measurement")
    det = cfg.detector.build()
    if coupling is not None:
        det = det.with_coupling(coupling)
    return MeasurementSpec(det, _vector(cfg.measurement.psi), _vector(cfg.measurement.outcome))


def _event(p: Point) -> Event:
    if len(p) < 2:
        raise ConfigurationError("a point needs t and at least one spatial coordinate")
    return Event(float(p[0]), tuple(float(v) for v in p[1:]))


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return format(float(x), ".17g")


def _write(rows: List[List], header: List[str], out: Optional[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    _emit(text, out)
    return text


def _emit(text: str, out: Optional[str]) -> None:
    if not out:
        click.echo(text, nl=False)
        return
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".udw-", suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, target)


def _oracle_system(cfg: RunConfig, m: MeasurementSpec, state):
    if not isinstance(state.basis, BoxBasis):
        raise _ConfigFailure("backend", "the oracle needs a box field")
    sys_ = oracle.TruncatedSystem(state.basis, [m.detector], n_max=cfg.oracle.n_max, total=cfg.oracle.total)
    return sys_, oracle.prepare(sys_.fock, state)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_povm(cfg: RunConfig, order: int, out: Optional[str]) -> str:
    """Outcome probabilities per order, a lambda^3 error estimate and an optional oracle column."""
    state = build_state(cfg)
    m = build_measurement(cfg)
    quad = cfg.quadrature.build()
    lam = m.detector.coupling
    eng = perturbation.Engine(state, m, quad)
    rows = []
    for name, s in (("s", m.s), ("s_bar", m.s_bar)):
        mm = m.with_outcome(s)
        e = [complex(eng.series([r], [], s)[r]).real for r in range(5)]
        prob = perturbation.povm_expectation(state, mm, order, quad, eng)
        bound = 2.0 * (lam**3 * abs(e[3]) + lam**4 * abs(e[4]))
        exact = None
        if cfg.backend == "oracle":
            sys_, ens = _oracle_system(cfg, mm, state)
            exact = oracle.exact_probability(sys_, ens, mm.psi, s)
        rows.append([name, lam, e[0], e[1], e[2], prob, bound, exact])
    header = ["outcome", "lambda", "order0", "order1", "order2", "probability", "lambda3_bound", "oracle"]
    return _write(rows, header, out)


def cmd_update(cfg: RunConfig, order: int, out: Optional[str]) -> str:
    """Updated n-point functions for each configured point set."""
    state = build_state(cfg)
    m = build_measurement(cfg)
    up = Updater(state, m, cfg.quadrature.build())
    mode = Mode.parse(cfg.query.mode)
    sys_ens = _oracle_system(cfg, m, state) if cfg.backend == "oracle" else None
    rows = []
    for i, pts in enumerate(cfg.query.points):
        events = [_event(p) for p in pts]
        val = up.ns(events, order) if mode is Mode.NONSELECTIVE else up.selective(events, order)
        exact = None
        if sys_ens is not None:
            exact = oracle.exact_update(sys_ens[0], sys_ens[1], m.psi, events, mode.value, m.s)
        label = ";".join(" ".join(_fmt(c) for c in (e.t, *e.x)) for e in events)
        rows.append([str(i), str(len(events)), label, mode.value, val.real, val.imag, abs(val),
                     None if exact is None else complex(exact).real, None if exact is None else complex(exact).imag])
    header = ["index", "n", "points", "mode", "re", "im", "abs", "oracle_re", "oracle_im"]
    return _write(rows, header, out)


def _scan_terms(kind: str, order: int) -> List[str]:
    if kind.startswith("NS"):
        return [f"order-{r}" for r in range(1, order + 1)]
    base = ["covariance-term", "commutator-term"]
    return base + (["R-term", "S-term"] if order == 2 else [])


def cmd_scan(cfg: RunConfig, order: int, threads: int, out: Optional[str]) -> str:
    """One row per grid entry: coordinates, relation, value and its named parts."""
    sc = cfg.scan
    order = max(order, 1)
    two = sc.kind.endswith("2")
    state = build_state(cfg)
    m = build_measurement(cfg)
    if two:
        grid = [(_event(a), _event(b)) for a, b in sc.pairs]
    else:
        grid = [_event(p) for p in sc.events]
        if sc.grid is not None:
            grid += [_event([t, *x]) for t in sc.grid.t for x in sc.grid.x]
    d = state.basis.d
    coords = (["t1"] + [f"x1_{i}" for i in range(d)] + ["t2"] + [f"x2_{i}" for i in range(d)]) if two \
        else (["t"] + [f"x_{i}" for i in range(d)])
    terms = _scan_terms(sc.kind, order)
    header = coords + ["relation", "re", "im", "abs", "tolerance"]
    for t in terms:
        header += [f"{t}_re", f"{t}_im"]
    reports = causality.spacelike_scan(state, m, grid, sc.kind, order, cfg.quadrature.build(), threads) if grid else []
    rows = []
    for rep in reports:
        row: List = []
        for e in rep.points:
            row += [e.t, *e.x]
        row += ["/".join(r.value for r in rep.relation), rep.value.real, rep.value.imag, abs(rep.value), sc.tolerance]
        for t in terms:
            v = complex(rep.decomposition.get(t, 0.0))
            row += [v.real, v.imag]
        rows.append(row)
    return _write(rows, header, out)


def cmd_abc(cfg: RunConfig, out: Optional[str]) -> str:
    a = cfg.abc
    rep = scenarios.run_abc(scenarios.AbcConfig.default(a.mode, a.n_modes, a.coupling, a.n_max))
    text = json.dumps(rep.to_json(), indent=2, sort_keys=True) + "\n"
    _emit(text, out)
    return text


def cmd_compare(cfg: RunConfig, order: int, out: Optional[str]) -> str:
    """Exact (oracle) against order-``order`` updates over a ladder of couplings, with the log-log slope."""
    state = build_state(cfg)
    mode = Mode.parse(cfg.compare.mode)
    events = [_event(p) for p in cfg.compare.points]
    rows, lams, res = [], [], []
    for lam in cfg.compare.couplings:
        m = build_measurement(cfg, lam)
        up = Updater(state, m, cfg.quadrature.build())
        approx = up.ns(events, order) if mode is Mode.NONSELECTIVE else up.selective(events, order, force_ratio=True)
        sys_, ens = _oracle_system(cfg, m, state)
        exact = complex(oracle.exact_update(sys_, ens, m.psi, events, mode.value, m.s))
        r = abs(exact - approx)
        rows.append(["point", lam, exact.real, exact.imag, approx.real, approx.imag, r])
        lams.append(lam)
        res.append(r)
    slope = float("nan")
    if len(lams) >= 2 and all(v > 0 for v in res):
        slope = float(np.polyfit(np.log(lams), np.log(res), 1)[0])
    rows.append(["fit", None, None, None, None, None, slope])
    header = ["kind", "lambda", "exact_re", "exact_im", "approx_re", "approx_im", "residual_or_slope"]
    return _write(rows, header, out)


# --------------------------------------------------------------------------
# click wiring
# --------------------------------------------------------------------------


def _threads(value: Optional[int]) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("UDW_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise _ConfigFailure("UDW_THREADS", f"not an integer: {env!r}")


def _run(fn, config: str, backend: Optional[str], **kw) -> None:
    try:
        cfg = load_config(config)
        if backend:
            cfg = cfg.model_copy(update={"backend": backend})
        out = kw.pop("out", None) or cfg.output
        fn(cfg, out=out, **kw)
    except _ConfigFailure as exc:
        click.echo(f"config error at {exc.path}: {exc.message}", err=True)
        sys.exit(EXIT_CONFIG)
    except ConfigurationError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except NumericGuardError as exc:
        click.echo(f"numeric guard: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)


_config_opt = click.option("--config", "config", required=True, type=click.Path(exists=True, dir_okay=False))
_out_opt = click.option("--out", "out", type=click.Path(dir_okay=False), default=None)
_order_opt = click.option("--order", type=click.IntRange(0, 2), default=2, show_default=True)
_backend_opt = click.option("--backend", type=click.Choice(["continuum", "box", "oracle"]), default=None)
_threads_opt = click.option("--threads", type=int, default=None, help="worker threads (fallback: UDW_THREADS)")


@click.group()
@click.version_option(__version__, prog_name="udwmeasure")
def main() -> None:
    """Measurement updates of quantum fields probed by two-level detectors."""


@main.command()
@_config_opt
@_out_opt
@_order_opt
@_backend_opt
@_threads_opt
def povm(config, out, order, backend, threads):
    """Outcome probabilities <E_s>, <E_sbar>."""
    _run(lambda cfg, out: cmd_povm(cfg, order, out), config, backend, out=out)


@main.command()
@_config_opt
@_out_opt
@_order_opt
@_backend_opt
@_threads_opt
def update(config, out, order, backend, threads):
    """Updated n-point functions."""
    _run(lambda cfg, out: cmd_update(cfg, order, out), config, backend, out=out)


@main.command()
@_config_opt
@_out_opt
@_order_opt
@_backend_opt
@_threads_opt
def scan(config, out, order, backend, threads):
    """Delta estimators (or the non-selective control) on a grid."""
    _run(lambda cfg, out: cmd_scan(cfg, order, _threads(threads), out), config, backend, out=out)


@main.command()
@_config_opt
@_out_opt
@_order_opt
@_backend_opt
@_threads_opt
def abc(config, out, order, backend, threads):
    """The three-detector scenario, both routes."""
    _run(lambda cfg, out: cmd_abc(cfg, out), config, backend, out=out)


@main.command()
@_config_opt
@_out_opt
@_order_opt
@_backend_opt
@_threads_opt
def compare(config, out, order, backend, threads):
    """Oracle against perturbation over a coupling ladder."""
    _run(lambda cfg, out: cmd_compare(cfg, order, out), config, backend, out=out)


if __name__ == "__main__":  # pragma: no cover
    main()
