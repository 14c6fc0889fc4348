"""Modified nodal analysis: dense LU, damped Newton with gmin / source
stepping, DC sweeps and fixed-step transient.

The unknown vector holds every node voltage (ground included at index 0 and
pinned to zero) followed by one branch current per voltage source and per
buffer.  Newton works on the residual form ``F(x) = 0`` where node rows are
the sum of currents leaving the node, so the KCL residual is read directly
off ``F``.
"""
from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .devices import RramState, mos_eval, rram_resistance, rram_step, waveform_value
from .netlist import Buffer, Capacitor, Circuit, ISource, Mosfet, Resistor, Rram, VSource

log = logging.getLogger(__name__)

BACKWARD_EULER = "backward_euler"
TRAPEZOIDAL = "trapezoidal"

_observers: list = []


@contextmanager
def observe(callback):
    """Call ``callback(circuit, result)`` for every operating point or trace
    produced inside the ``with`` block, e.g. to audit KCL after the fact."""
    _observers.append(callback)
    try:
        yield
    finally:
        _observers.remove(callback)


def _notify(circuit, result):
    for fn in list(_observers):
        fn(circuit, result)


class SimulationError(RuntimeError):
    pass


class SingularMatrixError(SimulationError):
    def __init__(self, pivot: int, unknown: str | None = None):
        self.pivot = pivot
        self.unknown = unknown
        where = f" ({unknown})" if unknown else ""
        super().__init__(f"matrix is singular to working precision at pivot {pivot}{where}")


class ConvergenceError(SimulationError):
    def __init__(self, message: str, worst: str | None = None, time: float | None = None):
        self.worst = worst
        self.time = time
        super().__init__(message)


@dataclass(frozen=True)
class NewtonConfig:
    abstol: float = 1e-9
    reltol: float = 1e-6
    vntol: float = 1e-6
    max_iter: int = 100
    gmin_ladder: tuple = tuple(10.0 ** -k for k in range(3, 13))
    source_steps: tuple = tuple(k / 10 for k in range(1, 11))
    gmin: float = 1e-12
    max_vstep: float = 0.5
    max_steps: int = 5_000_000

    def __post_init__(self):
        if min(self.abstol, self.reltol, self.vntol, self.gmin, self.max_vstep) <= 0:
            raise ValueError("tolerances must be positive")
        ladder = list(self.gmin_ladder)
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("gmin ladder must be strictly decreasing")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


# ---------------------------------------------------------------- linear algebra

def lu_factor(matrix: np.ndarray):
    """Doolittle LU with partial pivoting.  Returns ``(lu, perm)``."""
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    perm = np.arange(n)
    tiny = n * np.finfo(float).eps * (np.abs(a).max() if a.size else 0.0)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if not abs(a[p, k]) > tiny:
            raise SingularMatrixError(k)
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return a, perm


def lu_solve(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = lu.shape[0]
    y = np.asarray(rhs, dtype=float)[perm].copy()
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - lu[i, i + 1:] @ y[i + 1:]) / lu[i, i]
    return y


def linear_solve(matrix, rhs) -> np.ndarray:
    lu, perm = lu_factor(matrix)
    return lu_solve(lu, perm, rhs)


# ---------------------------------------------------------------- results

@dataclass
class OperatingPoint:
    voltages: dict
    currents: dict
    regions: dict
    homotopy: str = "newton"
    iterations: int = 0
    max_kcl_ratio: float = 0.0
    x: np.ndarray = field(default=None, repr=False)
    layout: tuple = field(default=(), repr=False)

    def v(self, node: str) -> float:
        return self.voltages[node.lower()]

    def i(self, name: str) -> float:
        return self.currents[name.upper()]

    def signal(self, name: str) -> float:
        """Look up ``v(node)`` or ``i(ELEMENT)`` by signal name."""
        kind, arg = _split_signal(name)
        return self.v(arg) if kind == "v" else self.i(arg)


@dataclass
class TraceSet:
    time: np.ndarray
    signals: dict
    method: str = TRAPEZOIDAL
    dt: float = 0.0
    max_kcl_ratio: float = 0.0

    def __getitem__(self, name: str) -> np.ndarray:
        kind, arg = _split_signal(name)
        key = f"{kind}({arg.lower() if kind == 'v' else arg.upper()})"
        return self.signals[key]

    @property
    def names(self) -> list[str]:
        return list(self.signals)

    def to_csv(self, path, signals: Sequence[str] | None = None) -> None:
        names = list(signals) if signals is not None else self.names
        cols = [self.time] + [self[n] for n in names]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(["time"] + names) + "\n")
            for row in zip(*cols):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _split_signal(name: str):
    name = name.strip()
    if len(name) < 4 or name[1] != "(" or not name.endswith(")"):
        raise KeyError(f"bad signal name {name!r}; use v(node), i(element) or x(element)")
    kind = name[0].lower()
    if kind not in "vix":
        raise KeyError(f"bad signal kind in {name!r}")
    return kind, name[2:-1]


# ---------------------------------------------------------------- MNA assembly

@dataclass
class MnaSystem:
    """A linearised system ``matrix @ x = rhs`` (ground row/column removed)."""

    n: int
    matrix: np.ndarray
    rhs: np.ndarray
    unknowns: tuple


class _Mna:
    """Circuit compiled to index arrays.  One instance per circuit and mode."""

    def __init__(self, circuit: Circuit, ic_mode: bool = False):
        self.circuit = circuit
        self.node = {n: k for k, n in enumerate(circuit.nodes)}
        nn = len(circuit.nodes)
        names = [f"v({n})" for n in circuit.nodes]
        self.res, self.caps, self.vsrc, self.isrc = [], [], [], []
        self.mos, self.rram, self.bufs, self.ic_caps = [], [], [], []
        self.isrc_sat = []
        k = nn
        for e in circuit.elements:
            if isinstance(e, Resistor):
                self.res.append((e.name, self.node[e.n1], self.node[e.n2], 1.0 / e.r))
            elif isinstance(e, Capacitor):
                a, b = self.node[e.n1], self.node[e.n2]
                if ic_mode and e.ic is not None:
                    self.ic_caps.append((e.name, a, b, k, e.ic))
                    names.append(f"i({e.name})")
                    k += 1
                self.caps.append((e.name, a, b, e.c))
            elif isinstance(e, VSource):
                self.vsrc.append((e, self.node[e.npos], self.node[e.nneg], k))
                names.append(f"i({e.name})")
                k += 1
            elif isinstance(e, ISource):
                target = self.isrc_sat if e.vsat else self.isrc
                target.append((e, self.node[e.npos], self.node[e.nneg]))
            elif isinstance(e, Mosfet):
                model = circuit.models[e.model]
                self.mos.append((e, model, self.node[e.d], self.node[e.g], self.node[e.s]))
            elif isinstance(e, Rram):
                self.rram.append((e, circuit.models[e.model], self.node[e.n1], self.node[e.n2]))
            elif isinstance(e, Buffer):
                a, b = self.node[e.inp], self.node[e.out]
                self.bufs.append((e, a, b, k))
                names.append(f"i({e.name})")
                k += 1
                if e.cin > 0:
                    self.caps.append((f"{e.name}.CIN", a, 0, e.cin))
        self.nn = nn
        self.size = k
        self.names = tuple(names)
        r = self.res
        self.res_a = np.array([x[1] for x in r], dtype=int)
        self.res_b = np.array([x[2] for x in r], dtype=int)
        self.res_g = np.array([x[3] for x in r], dtype=float)

    # linear part ------------------------------------------------------
    def linear(self, gmin, t, scale, geq=None, ieq=None, rram_g=None):
        size = self.size
        A = np.zeros((size, size))
        b = np.zeros(size)
        for _, a, c, g in self.res:
            _stamp_g(A, a, c, g)
        idx = np.arange(1, self.nn)
        A[idx, idx] += gmin
        for e, p, n, k in self.vsrc:
            A[p, k] += 1.0
            A[n, k] -= 1.0
            A[k, p] += 1.0
            A[k, n] -= 1.0
            b[k] -= scale * waveform_value(e.wave, t)
        for name, p, n, k, ic in self.ic_caps:
            A[p, k] += 1.0
            A[n, k] -= 1.0
            A[k, p] += 1.0
            A[k, n] -= 1.0
            b[k] -= ic
        for e, p, n in self.isrc:
            cur = scale * waveform_value(e.wave, t)
            b[p] += cur
            b[n] -= cur
        for e, inp, out, k in self.bufs:
            A[out, k] += 1.0
            A[k, out] += 1.0
            A[k, inp] -= 1.0
        if geq is not None:
            for (name, a, c, _), g, i0 in zip(self.caps, geq, ieq):
                _stamp_g(A, a, c, g)
                b[a] += i0
                b[c] -= i0
        if rram_g is not None:
            for (e, _, a, c), g in zip(self.rram, rram_g):
                _stamp_g(A, a, c, g)
        A[0, :] = 0.0
        A[:, 0] = 0.0
        b[0] = 0.0
        return A, b

    # nonlinear part ---------------------------------------------------
    def evaluate(self, x, A, b, t=0.0, src_scale=1.0):
        J = A.copy()
        F = A @ x + b
        for e, p, n in self.isrc_sat:
            i, g = compliant_current(src_scale * waveform_value(e.wave, t), e.vsat, x[p] - x[n])
            F[p] += i
            F[n] -= i
            J[p, p] += g
            J[p, n] -= g
            J[n, p] -= g
            J[n, n] += g
        for e, model, d, g, s in self.mos:
            vs = x[s]
            ev = mos_eval(model, e.inst, x[g] - vs, x[d] - vs)
            i, gm, gds = ev.id, ev.gm, ev.gds
            F[d] += i
            F[s] -= i
            J[d, g] += gm
            J[d, d] += gds
            J[d, s] -= gm + gds
            J[s, g] -= gm
            J[s, d] -= gds
            J[s, s] += gm + gds
        F[0] = 0.0
        return J, F

    def node_scale(self, x, gmin, t, src_scale, geq=None, ieq=None, rram_g=None):
        """Sum of |current| incident on each node: the KCL tolerance scale."""
        scale = np.zeros(self.nn)
        if len(self.res_g):
            cur = np.abs(self.res_g * (x[self.res_a] - x[self.res_b]))
            np.add.at(scale, self.res_a, cur)
            np.add.at(scale, self.res_b, cur)
        scale += np.abs(gmin * x[: self.nn])
        for _, p, n, k in self.vsrc:
            scale[p] += abs(x[k])
            scale[n] += abs(x[k])
        for _, p, n, k, _ in self.ic_caps:
            scale[p] += abs(x[k])
            scale[n] += abs(x[k])
        for _, _, out, k in self.bufs:
            scale[out] += abs(x[k])
        for e, p, n in self.isrc:
            cur = abs(src_scale * waveform_value(e.wave, t))
            scale[p] += cur
            scale[n] += cur
        for e, p, n in self.isrc_sat:
            cur = abs(compliant_current(src_scale * waveform_value(e.wave, t), e.vsat,
                                        x[p] - x[n])[0])
            scale[p] += cur
            scale[n] += cur
        for e, model, d, g, s in self.mos:
            vs = x[s]
            cur = abs(mos_eval(model, e.inst, x[g] - vs, x[d] - vs).id)
            scale[d] += cur
            scale[s] += cur
        if geq is not None:
            for (_, a, c, _), g, i0 in zip(self.caps, geq, ieq):
                cur = abs(g * (x[a] - x[c]) + i0)
                scale[a] += cur
                scale[c] += cur
        if rram_g is not None:
            for (_, _, a, c), g in zip(self.rram, rram_g):
                cur = abs(g * (x[a] - x[c]))
                scale[a] += cur
                scale[c] += cur
        return scale


def compliant_current(value: float, vsat: float, v: float) -> tuple[float, float]:
    """Current source with finite headroom: full ``value`` once the voltage
    across it (in the direction of flow) reaches ``vsat``, falling smoothly
    to zero at 0 V along a cubic with zero slope at both ends, so the
    current stays C1.  Returns the current and its derivative in ``v``."""
    sign = 1.0 if value >= 0 else -1.0
    u = sign * v / vsat
    if u >= 1.0:
        return value, 0.0
    if u <= 0.0:
        return 0.0, 0.0
    return value * u * u * (3.0 - 2.0 * u), abs(value) * 6.0 * u * (1.0 - u) / vsat


def _stamp_g(A, a, b, g):
    A[a, a] += g
    A[b, b] += g
    A[a, b] -= g
    A[b, a] -= g


def build_mna(circuit: Circuit, x=None, t: float = 0.0, gmin: float = 1e-12) -> MnaSystem:
    """Linearise the circuit at ``x`` (default all-zero) and return ``matrix @ x' = rhs``.

    For a purely linear circuit ``x'`` is the exact solution.
    """
    mna = _Mna(circuit)
    if x is None:
        x = np.zeros(mna.size)
    A, b = mna.linear(gmin, t, 1.0, rram_g=[1.0 / rram_resistance(m, e.x0) for e, m, *_ in mna.rram])
    J, F = mna.evaluate(np.asarray(x, dtype=float), A, b, t)
    rhs = J @ x - F
    return MnaSystem(mna.size - 1, J[1:, 1:], rhs[1:], mna.names[1:])


# ---------------------------------------------------------------- Newton

class _NewtonFailure(Exception):
    def __init__(self, worst: str):
        self.worst = worst


def _newton(mna: _Mna, x0, A, b, cfg: NewtonConfig, gmin, cap_state=None, rram_g=None,
            t=0.0, src_scale=1.0):
    x = np.array(x0, dtype=float)
    x[0] = 0.0
    nn = mna.nn
    geq, ieq = cap_state if cap_state is not None else (None, None)
    branch_ref = np.abs(b[nn:])
    step_ok = False
    worst = "?"
    for it in range(cfg.max_iter):
        J, F = mna.evaluate(x, A, b, t, src_scale)
        scale = mna.node_scale(x, gmin, t, src_scale, geq, ieq, rram_g)
        node_tol = cfg.abstol + cfg.reltol * scale
        node_ratio = np.abs(F[1:nn]) / node_tol[1:]
        branch_ratio = np.abs(F[nn:]) / (cfg.vntol + cfg.reltol * branch_ref)
        res_ok = (not node_ratio.size or node_ratio.max() <= 1.0) and \
                 (not branch_ratio.size or branch_ratio.max() <= 1.0)
        if it > 0 and res_ok and step_ok:
            ratio = float(node_ratio.max()) if node_ratio.size else 0.0
            return x, it, ratio
        if node_ratio.size:
            worst = mna.names[1 + int(np.argmax(node_ratio))]
        try:
            lu, perm = lu_factor(J[1:, 1:])
        except SingularMatrixError as exc:
            raise SingularMatrixError(exc.pivot, mna.names[1 + exc.pivot]) from None
        dx = lu_solve(lu, perm, -F[1:])
        if not np.all(np.isfinite(dx)):
            raise _NewtonFailure(worst)
        dv = dx[: nn - 1]
        clipped = np.clip(dv, -cfg.max_vstep, cfg.max_vstep)
        limited = bool(np.any(clipped != dv))
        dx[: nn - 1] = clipped
        xv = x[1:nn]
        xi = x[nn:]
        step_ok = (not limited
                   and np.all(np.abs(clipped) <= cfg.vntol + cfg.reltol * np.abs(xv))
                   and np.all(np.abs(dx[nn - 1:]) <= cfg.abstol + cfg.reltol * np.abs(xi)))
        x[1:] += dx
    raise _NewtonFailure(worst)


def _make_op(mna: _Mna, x, homotopy, iterations, ratio, t=0.0) -> OperatingPoint:
    c = mna.circuit
    volt = {n: float(x[k]) for n, k in mna.node.items()}
    cur, regions = {}, {}
    for name, a, b, g in mna.res:
        cur[name] = float(g * (x[a] - x[b]))
    for name, a, b, _ in mna.caps:
        if not name.endswith(".CIN"):
            cur[name] = 0.0
    for name, a, b, k, _ in mna.ic_caps:
        cur[name] = float(x[k])
    for e, p, n, k in mna.vsrc:
        cur[e.name] = float(x[k])
    for e, p, n in mna.isrc:
        cur[e.name] = waveform_value(e.wave, t)
    for e, p, n in mna.isrc_sat:
        cur[e.name] = compliant_current(waveform_value(e.wave, t), e.vsat, x[p] - x[n])[0]
    for e, model, d, g, s in mna.mos:
        ev = mos_eval(model, e.inst, x[g] - x[s], x[d] - x[s])
        cur[e.name] = ev.id
        regions[e.name] = ev.region
    for e, model, a, b in mna.rram:
        cur[e.name] = float((x[a] - x[b]) / rram_resistance(model, e.x0))
    for e, inp, out, k in mna.bufs:
        cur[e.name] = -float(x[k])
    ordered = {e.name: cur[e.name] for e in c.elements}
    return OperatingPoint(volt, ordered, regions, homotopy, iterations, ratio, x.copy(), mna.names)


def _initial_vector(mna: _Mna, warm_start: OperatingPoint | None):
    x = np.zeros(mna.size)
    if warm_start is not None and warm_start.x is not None:
        lookup = dict(zip(warm_start.layout, warm_start.x))
        for k, name in enumerate(mna.names):
            if name in lookup:
                x[k] = lookup[name]
    return x


def _solve(mna: _Mna, cfg: NewtonConfig, x0, t=0.0, rram_g=None):
    """Plain Newton, then the gmin ladder, then source stepping."""
    A, b = mna.linear(cfg.gmin, t, 1.0, rram_g=rram_g)
    try:
        x, it, ratio = _newton(mna, x0, A, b, cfg, cfg.gmin, rram_g=rram_g, t=t)
        return x, "newton", it, ratio
    except (_NewtonFailure, SingularMatrixError) as exc:
        worst, last = _culprit(exc), exc
        log.debug("plain Newton failed (%s); trying gmin stepping", exc)
    if cfg.gmin_ladder:
        total = 0
        try:
            x = x0
            for g in cfg.gmin_ladder:
                g = max(g, cfg.gmin)
                Ag, bg = mna.linear(g, t, 1.0, rram_g=rram_g)
                x, it, _ = _newton(mna, x, Ag, bg, cfg, g, rram_g=rram_g, t=t)
                total += it
            x, it, ratio = _newton(mna, x, A, b, cfg, cfg.gmin, rram_g=rram_g, t=t)
            return x, "gmin", total + it, ratio
        except (_NewtonFailure, SingularMatrixError) as exc:
            worst, last = _culprit(exc), exc
            log.debug("gmin stepping failed (%s); trying source stepping", exc)
    if cfg.source_steps:
        total = 0
        try:
            x = np.zeros(mna.size)
            for frac in cfg.source_steps:
                As, bs = mna.linear(cfg.gmin, t, frac, rram_g=rram_g)
                x, it, ratio = _newton(mna, x, As, bs, cfg, cfg.gmin, rram_g=rram_g, t=t,
                                       src_scale=frac)
                total += it
            if cfg.source_steps[-1] != 1.0:
                x, it, ratio = _newton(mna, x, A, b, cfg, cfg.gmin, rram_g=rram_g, t=t)
                total += it
            return x, "source", total, ratio
        except (_NewtonFailure, SingularMatrixError) as exc:
            worst, last = _culprit(exc), exc
    if isinstance(last, SingularMatrixError):
        raise last
    raise ConvergenceError(f"no convergence after all homotopies (worst residual at {worst})",
                           worst=worst, time=t)


def _culprit(exc) -> str:
    return getattr(exc, "worst", None) or getattr(exc, "unknown", None) or "?"


def solve_op(circuit: Circuit, config: NewtonConfig | None = None,
             warm_start: OperatingPoint | None = None) -> OperatingPoint:
    """DC operating point with every source at its t=0 value."""
    cfg = config or NewtonConfig()
    mna = _Mna(circuit)
    rram_g = [1.0 / rram_resistance(m, e.x0) for e, m, *_ in mna.rram]
    x, how, it, ratio = _solve(mna, cfg, _initial_vector(mna, warm_start), rram_g=rram_g)
    op = _make_op(mna, x, how, it, ratio)
    _notify(circuit, op)
    return op


def sweep_values(grid) -> np.ndarray:
    """``(start, stop, step)`` with inclusive stop, or an explicit sequence."""
    if isinstance(grid, tuple) and len(grid) == 3:
        start, stop, step = map(float, grid)
        if step == 0 or (stop - start) / step < 0:
            raise ValueError("empty grid")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        # round off the representation error of start + k*step (0.1*3 etc.)
        return np.array([float(f"{v:.12g}") for v in start + step * np.arange(n)])
    values = np.asarray(list(grid), dtype=float)
    if values.size == 0:
        raise ValueError("empty grid")
    return values


def dc_sweep(circuit: Circuit, target: str, grid, config: NewtonConfig | None = None
             ) -> list[OperatingPoint | None]:
    """One operating point per grid value of source ``target``.

    Each point is warm-started from the last converged one.  Points that do
    not converge are returned as ``None`` and the sweep carries on.
    """
    values = sweep_values(grid)
    src = circuit.element(target)
    if not isinstance(src, (VSource, ISource)):
        raise KeyError(f"{target} is not an independent source")
    out: list[OperatingPoint | None] = []
    warm = None
    for v in values:
        try:
            op = solve_op(circuit.with_source(target, float(v)), config, warm)
        except SimulationError as exc:
            log.warning("sweep %s=%g failed: %s", target, v, exc)
            out.append(None)
            continue
        out.append(op)
        warm = op
    return out


def kcl_residuals(circuit: Circuit, op: OperatingPoint, gmin: float = 1e-12) -> dict:
    """Per-node ``(|sum of leaving currents|, sum of |incident currents|)``.

    Rebuilt from the reported element currents, independently of the
    Newton residual.
    """
    net = {n: 0.0 for n in circuit.nodes}
    mag = {n: 0.0 for n in circuit.nodes}

    def flow(a, b, i):
        net[a] += i
        net[b] -= i
        mag[a] += abs(i)
        mag[b] += abs(i)

    for e in circuit.elements:
        i = op.currents[e.name]
        if isinstance(e, (Resistor, Capacitor, Rram)):
            flow(e.n1, e.n2, i)
        elif isinstance(e, (VSource, ISource)):
            flow(e.npos, e.nneg, i)
        elif isinstance(e, Mosfet):
            flow(e.d, e.s, i)
        elif isinstance(e, Buffer):
            net[e.out] -= i
            mag[e.out] += abs(i)
            flow(e.inp, "0", op.currents.get(f"{e.name}.CIN", 0.0))
    for n in circuit.nodes[1:]:
        g = gmin * op.voltages[n]
        net[n] += g
        mag[n] += abs(g)
    return {n: (abs(net[n]), mag[n]) for n in circuit.nodes[1:]}


def check_kcl(circuit: Circuit, op: OperatingPoint, config: NewtonConfig | None = None,
              gmin: float | None = None) -> bool:
    cfg = config or NewtonConfig()
    g = cfg.gmin if gmin is None else gmin
    return all(res <= cfg.abstol + cfg.reltol * scale
               for res, scale in kcl_residuals(circuit, op, g).values())


# ---------------------------------------------------------------- transient

def default_timestep(circuit: Circuit, tstop: float) -> float:
    edges = [min(e.wave.rise, e.wave.fall) for e in circuit.elements
             if isinstance(e, (VSource, ISource)) and e.wave.kind == "pulse"]
    return min(edges) / 50 if edges else tstop / 500


def transient(circuit: Circuit, tstop: float, dt: float | None = None,
              method: str = TRAPEZOIDAL, config: NewtonConfig | None = None) -> TraceSet:
    """Fixed-step transient from the t=0 operating point.

    Capacitors carrying ``IC=`` are held at that voltage while the initial
    operating point is found.  RRAM states advance explicitly after each
    accepted step using the solved device voltage.
    """
    cfg = config or NewtonConfig()
    if method not in (BACKWARD_EULER, TRAPEZOIDAL):
        raise ValueError(f"unknown integration method {method!r}")
    if dt is None:
        dt = default_timestep(circuit, tstop)
    if not dt > 0 or not tstop > dt:
        raise ValueError("require dt > 0 and tstop > dt")
    nsteps = int(round(tstop / dt))
    if nsteps > cfg.max_steps:
        raise SimulationError(f"{nsteps} steps exceeds the limit of {cfg.max_steps}")

    # initial condition
    ic = _Mna(circuit, ic_mode=True)
    states = [RramState(e.x0) for e, *_ in ic.rram]
    rram_g = [1.0 / rram_resistance(m, s.x) for (e, m, *_), s in zip(ic.rram, states)]
    x_ic, _, _, _ = _solve(ic, cfg, np.zeros(ic.size), rram_g=rram_g)
    mna = _Mna(circuit)
    keep = {name: k for k, name in enumerate(ic.names)}
    x = np.array([x_ic[keep[name]] for name in mna.names])
    ic_current = {name: x_ic[k] for name, a, b, k, v in ic.ic_caps}

    caps = mna.caps
    cval = np.array([c for *_, c in caps], dtype=float)
    ca = np.array([a for _, a, _, _ in caps], dtype=int)
    cb = np.array([b for _, _, b, _ in caps], dtype=int)
    v_prev = x[ca] - x[cb] if caps else np.zeros(0)
    i_prev = np.array([ic_current.get(name, 0.0) for name, *_ in caps])
    geq = (2.0 if method == TRAPEZOIDAL else 1.0) * cval / dt

    signals = _signal_layout(mna)
    rows = np.empty((nsteps + 1, len(signals)))
    times = dt * np.arange(nsteps + 1)
    worst_ratio = 0.0
    rows[0] = _record(mna, x, 0.0, i_prev, states)

    for n in range(1, nsteps + 1):
        t = times[n]
        if method == TRAPEZOIDAL:
            ieq = -geq * v_prev - i_prev
        else:
            ieq = -geq * v_prev
        rram_g = [1.0 / rram_resistance(m, s.x) for (e, m, *_), s in zip(mna.rram, states)]
        A, b = mna.linear(cfg.gmin, t, 1.0, geq, ieq, rram_g)
        try:
            x, _, ratio = _newton(mna, x, A, b, cfg, cfg.gmin, (geq, ieq), rram_g, t=t)
        except (_NewtonFailure, SingularMatrixError) as exc:
            worst = getattr(exc, "worst", None) or getattr(exc, "unknown", None)
            raise ConvergenceError(f"Newton failed at t={t:.6g} s (worst residual at {worst})",
                                   worst=worst, time=t) from None
        worst_ratio = max(worst_ratio, ratio)
        v_now = x[ca] - x[cb] if caps else v_prev
        i_prev = geq * v_now + ieq if caps else i_prev
        v_prev = v_now
        # record with the state this step was solved with, then advance it
        rows[n] = _record(mna, x, t, i_prev, states)
        for k, (e, m, a, c) in enumerate(mna.rram):
            states[k] = rram_step(m, states[k], x[a] - x[c], dt)

    data = {name: rows[:, k].copy() for k, name in enumerate(signals)}
    trace = TraceSet(times, data, method, dt, worst_ratio)
    _notify(circuit, trace)
    return trace


def _signal_layout(mna: _Mna) -> list[str]:
    names = [f"v({n})" for n in mna.circuit.nodes[1:]]
    names += [f"i({e.name})" for e in mna.circuit.elements]
    names += [f"i({name})" for name, *_ in mna.caps if name.endswith(".CIN")]
    names += [f"x({e.name})" for e, *_ in mna.rram]
    return names


def _record(mna: _Mna, x, t, cap_current, states) -> np.ndarray:
    cur = {}
    for name, a, b, g in mna.res:
        cur[name] = g * (x[a] - x[b])
    for (name, *_), i in zip(mna.caps, cap_current):
        cur[name] = i
    for e, p, n, k in mna.vsrc:
        cur[e.name] = x[k]
    for e, p, n in mna.isrc:
        cur[e.name] = waveform_value(e.wave, t)
    for e, p, n in mna.isrc_sat:
        cur[e.name] = compliant_current(waveform_value(e.wave, t), e.vsat, x[p] - x[n])[0]
    for e, model, d, g, s in mna.mos:
        cur[e.name] = mos_eval(model, e.inst, x[g] - x[s], x[d] - x[s]).id
    for (e, model, a, b), st in zip(mna.rram, states):
        cur[e.name] = (x[a] - x[b]) / rram_resistance(model, st.x)
    for e, inp, out, k in mna.bufs:
        cur[e.name] = -x[k]
    values = list(x[1:mna.nn])
    values += [cur[e.name] for e in mna.circuit.elements]
    values += [cur[name] for name, *_ in mna.caps if name.endswith(".CIN")]
    values += [s.x for s in states]
    return np.array(values, dtype=float)


def trace_kcl_ok(circuit: Circuit, trace: TraceSet, config: NewtonConfig | None = None,
                 stride: int = 1) -> bool:
    """KCL bound at every ``stride``-th accepted time point of a trace."""
    cfg = config or NewtonConfig()
    for k in range(0, len(trace.time), stride):
        volt = {n: float(trace.signals[f"v({n})"][k]) for n in circuit.nodes[1:]}
        volt["0"] = 0.0
        cur = {name[2:-1]: float(col[k]) for name, col in trace.signals.items()
               if name.startswith("i(")}
        op = OperatingPoint(volt, cur, {})
        if not check_kcl(circuit, op, cfg):
            return False
    return True
