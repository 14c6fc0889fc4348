"""Characterisation experiments on the bundled SET / RESET branch netlists:
DC mirror factor, supply range, pulse metrics, rise-time family and the
two-branch buffer read-out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .devices import Waveform
from .engine import (NewtonConfig, SimulationError, TraceSet, dc_sweep, solve_op,
                     sweep_values, transient)
from .netlist import Circuit, load

DC_IREF_GRID = tuple(round(k * 50e-6, 12) for k in range(1, 10))
TRAN_IREF_GRID = tuple(round(k * 50e-6, 12) for k in range(1, 9))
WAFER_IREF_GRID = (100e-6, 200e-6, 300e-6, 400e-6)
CHOP_RISES = (100e-9, 300e-9, 1e-6)


@dataclass(frozen=True)
class Branch:
    """How an experiment drives one bundled branch netlist."""

    name: str
    netlist: str
    sense: str
    chop_on_low: bool
    supply: str = "VDD"
    chop: str = "VCHOP"
    iref: str = "IREF"
    parasitic: str | None = None

    def chop_on(self, vdd: float) -> float:
        return 0.0 if self.chop_on_low else vdd

    def chop_off(self, vdd: float) -> float:
        return vdd if self.chop_on_low else 0.0


BRANCHES = {
    "set": Branch("set", "set_branch.cir", "i(RSENSE)", chop_on_low=True),
    "reset": Branch("reset", "reset_branch.cir", "i(VAMM)", chop_on_low=False,
                    parasitic="CPAR"),
}


def bundled_netlist(filename: str) -> str:
    return resources.files("mirrorsim").joinpath("netlists").joinpath(filename).read_text("utf-8")


def get_branch(branch) -> Branch:
    if isinstance(branch, Branch):
        return branch
    try:
        return BRANCHES[branch]
    except KeyError:
        raise ValueError(f"unknown branch {branch!r}; expected 'set' or 'reset'") from None


def load_branch(branch) -> Circuit:
    return load(bundled_netlist(get_branch(branch).netlist))


def dc_setup(circuit: Circuit, branch, vdd: float, iref: float, chop: float | None = None
             ) -> Circuit:
    """Supply at ``vdd``, chop switch held on, reference at ``iref``."""
    b = get_branch(branch)
    chop = b.chop_on(vdd) if chop is None else chop
    return (circuit.with_source(b.supply, vdd)
            .with_source(b.chop, chop)
            .with_source(b.iref, iref))


# ---------------------------------------------------------------- DC mirror

@dataclass(frozen=True)
class MirrorRow:
    iref: float
    imirr: float
    factor: float
    valid: bool = True

    @property
    def deviation_pct(self) -> float:
        return abs(self.factor - 1.0) * 100.0

    @property
    def signed_deviation_pct(self) -> float:
        return (self.factor - 1.0) * 100.0


@dataclass
class MirrorReport:
    rows: list[MirrorRow]
    branch: str = ""
    vdd: float = float("nan")

    @property
    def valid_rows(self) -> list[MirrorRow]:
        return [r for r in self.rows if r.valid]

    def factors(self) -> np.ndarray:
        return np.array([r.factor for r in self.valid_rows])

    def mean_deviation_pct(self) -> float:
        rows = self.valid_rows
        return float(np.mean([r.deviation_pct for r in rows])) if rows else float("nan")

    def csv_lines(self) -> list[str]:
        lines = ["iref,imirr,factor,deviation_pct"]
        for r in self.rows:
            lines.append(",".join(repr(float(v)) for v in
                                  (r.iref, r.imirr, r.factor, r.signed_deviation_pct)))
        return lines


def origin_fit(x, y) -> tuple[float, float]:
    """Least-squares line through the origin: ``(slope, R^2)``.

    R^2 uses the total sum of squares about the mean of ``y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return slope, 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")


def mirror_factor_dc(branch, iref_grid=DC_IREF_GRID, vdd: float = 5.0,
                     circuit: Circuit | None = None, config: NewtonConfig | None = None
                     ) -> MirrorReport:
    """Mirror factor ``imirr/iref`` at each reference current."""
    b = get_branch(branch)
    grid = sorted(float(i) for i in iref_grid)
    if not grid or grid[0] <= 0:
        raise ValueError("iref grid must be non-empty and positive")
    base = circuit if circuit is not None else load_branch(b)
    rows, warm = [], None
    for iref in grid:
        try:
            op = solve_op(dc_setup(base, b, vdd, iref), config, warm)
        except SimulationError:
            rows.append(MirrorRow(iref, float("nan"), float("nan"), valid=False))
            continue
        warm = op
        imirr = op.signal(b.sense)
        rows.append(MirrorRow(iref, imirr, imirr / iref))
    return MirrorReport(rows, b.name, vdd)


# ---------------------------------------------------------------- supply range

@dataclass
class SupplyTable:
    vdd: np.ndarray
    imirr: np.ndarray
    iref: float
    vmin: float | None

    def csv_lines(self) -> list[str]:
        return ["vdd,imirr"] + [f"{float(v)!r},{float(i)!r}" for v, i in zip(self.vdd, self.imirr)]


def supply_range(branch, iref: float = 400e-6, vdd_grid=(0.0, 5.0, 0.05),
                 circuit: Circuit | None = None, config: NewtonConfig | None = None,
                 threshold: float = 0.98) -> SupplyTable:
    """Output current versus supply voltage with the chop switch on.

    The SET chop gate sits at 0 V and the RESET chop gate at a fixed 5 V
    while only the branch supply is swept.  ``vmin`` is the lowest grid
    supply from which the output stays at or above ``threshold * iref``.
    """
    b = get_branch(branch)
    if iref < 0:
        raise ValueError("iref must be non-negative")
    values = sweep_values(vdd_grid)
    base = circuit if circuit is not None else load_branch(b)
    base = dc_setup(base, b, float(values.max()), iref, chop=b.chop_on(5.0))
    ops = dc_sweep(base, b.supply, values, config)
    imirr = np.array([op.signal(b.sense) if op is not None else np.nan for op in ops])
    ok = imirr >= threshold * iref - 1e-15
    vmin = None
    for k in range(len(values)):
        if np.all(ok[k:]):
            vmin = float(values[k])
            break
    return SupplyTable(values, imirr, iref, vmin)


# ---------------------------------------------------------------- pulses

@dataclass(frozen=True)
class PulseMetrics:
    amplitude: float
    rise_10_90: float
    overshoot_pct: float
    settle_time: float


def _crossing(t, u, level, start=0):
    """First time at or after index ``start`` where ``u`` rises through ``level``."""
    idx = np.nonzero(u[start:] >= level)[0]
    if not idx.size:
        return None
    k = start + int(idx[0])
    if k == 0:
        return float(t[0])
    u0, u1 = u[k - 1], u[k]
    return float(t[k - 1] + (level - u0) * (t[k] - t[k - 1]) / (u1 - u0))


def pulse_metrics(trace: TraceSet, signal: str, window: tuple | None = None,
                  settle_band: float = 0.02) -> PulseMetrics:
    """Metrics of the first pulse of ``signal`` inside ``window``.

    The flat top is the middle half of the interval between the first
    rising and last falling 90 % crossings; the amplitude is its mean
    measured from the first sample.
    """
    t = trace.time
    y = trace[signal]
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if len(t) < 3:
        raise ValueError("not enough samples in window")
    d = y - y[0]
    k = int(np.argmax(np.abs(d)))
    polarity = 1.0 if d[k] >= 0 else -1.0
    u = polarity * d
    peak = float(u.max())
    if not peak > 1e-12 * max(1.0, float(np.abs(y).max())) or peak < 1e-18:
        raise ValueError("no pulse detected (flat signal)")
    top = u[u >= 0.5 * peak]
    a0 = float(np.median(top))
    above = np.nonzero(u >= 0.9 * a0)[0]
    r90, f90 = int(above[0]), int(above[-1])
    t_r, t_f = t[r90], t[f90]
    span = t_f - t_r
    flat = (t >= t_r + 0.25 * span) & (t <= t_f - 0.25 * span)
    if not np.any(flat):
        flat = np.zeros_like(u, dtype=bool)
        flat[r90:f90 + 1] = True
    amp = float(np.mean(u[flat]))
    t10 = _crossing(t, u, 0.1 * amp)
    start = int(np.searchsorted(t, t10)) if t10 is not None else 0
    t90 = _crossing(t, u, 0.9 * amp, max(start - 1, 0))
    rise = t90 - t10 if (t10 is not None and t90 is not None) else float("nan")
    body = u[: f90 + 1]
    overshoot = max(0.0, (float(body.max()) - amp) / amp * 100.0)
    outside = np.nonzero(np.abs(u[r90:f90 + 1] - amp) > settle_band * amp)[0]
    flat_end = int(np.nonzero(flat)[0][-1])
    outside = outside[r90 + outside <= flat_end]
    settle = float(t[r90 + outside[-1] + 1] - t_r) if outside.size else 0.0
    return PulseMetrics(polarity * amp, rise, overshoot, settle)


def pulse_setup(circuit: Circuit, branch, vdd: float, iref: float, rise: float = 1e-6,
                width: float = 10e-6, period: float = 20e-6, delay: float = 1e-6,
                fall: float | None = None) -> Circuit:
    b = get_branch(branch)
    fall = rise if fall is None else fall
    chop = Waveform.pulse(b.chop_off(vdd), b.chop_on(vdd), delay, rise, width, fall, period)
    return (circuit.with_source(b.supply, vdd)
            .with_source(b.chop, chop)
            .with_source(b.iref, iref))


def transient_pulse(branch, iref: float, vdd: float = 5.0, rise: float = 1e-6,
                    width: float = 10e-6, period: float = 20e-6, delay: float = 1e-6,
                    dt: float | None = None, tstop: float | None = None,
                    parasitic: float | None = None, circuit: Circuit | None = None,
                    method: str = "trapezoidal", config: NewtonConfig | None = None
                    ) -> TraceSet:
    """One chopped pulse on a branch; ``dt`` defaults to ``rise/50``."""
    b = get_branch(branch)
    base = circuit if circuit is not None else load_branch(b)
    if parasitic is not None:
        if b.parasitic is None:
            raise ValueError(f"branch {b.name} has no parasitic capacitor")
        base = base.with_value(b.parasitic, parasitic)
    c = pulse_setup(base, b, vdd, iref, rise, width, period, delay)
    dt = rise / 50 if dt is None else dt
    if tstop is None:
        tstop = delay + 2 * rise + width + 2e-6
    return transient(c, tstop, dt, method, config)


def transient_mirror(branch, iref_grid=TRAN_IREF_GRID, vdd: float = 5.0, rise: float = 1e-6,
                     circuit: Circuit | None = None, config: NewtonConfig | None = None,
                     keep_traces: bool = False):
    """Pulse amplitude over ``iref`` for a branch: ``(MirrorReport, [(iref, trace)])``."""
    b = get_branch(branch)
    rows, traces = [], []
    for iref in sorted(float(i) for i in iref_grid):
        try:
            tr = transient_pulse(b, iref, vdd, rise, circuit=circuit, config=config)
            amp = pulse_metrics(tr, b.sense).amplitude
            rows.append(MirrorRow(iref, amp, amp / iref))
        except (SimulationError, ValueError):
            rows.append(MirrorRow(iref, float("nan"), float("nan"), valid=False))
            tr = None
        if keep_traces:
            traces.append((iref, tr))
    return MirrorReport(rows, b.name, vdd), traces


def rise_time_family(branch="set", iref: float = 400e-6, rise_grid=CHOP_RISES,
                     vdd: float = 5.0, circuit: Circuit | None = None,
                     config: NewtonConfig | None = None) -> list[PulseMetrics]:
    grid = [float(r) for r in rise_grid]
    if not grid:
        raise ValueError("empty grid")
    if min(grid) <= 0 or max(grid) > 10e-6:
        raise ValueError("chop rise times must lie in (0, pulse width]")
    b = get_branch(branch)
    out = []
    for rise in grid:
        tr = transient_pulse(b, iref, vdd, rise, circuit=circuit, config=config)
        out.append(pulse_metrics(tr, b.sense))
    return out


# ---------------------------------------------------------------- buffer read-out

@dataclass
class BufferResult:
    trace: TraceSet
    plateau_mean: float
    flat_fraction: float
    final_value: float
    decay_time: float
    overlap: tuple
    params: dict = field(default_factory=dict)


def buffer_experiment(iref_set: float = 100e-6, iref_res: float = 100e-6, vdd: float = 5.0,
                      vtail: float = 1.0, chop_delay: float = 1e-6, rise: float = 1e-6,
                      width: float = 10e-6, pad_cap: float | None = None,
                      chops_active: bool = True, circuit: Circuit | None = None,
                      dt: float | None = None, config: NewtonConfig | None = None
                      ) -> BufferResult:
    """Both branches pulsed into the RRAM branch; buffer output recorded.

    The RESET chop starts at 1 us and the SET chop ``chop_delay`` later.
    The buffer is ideal, so ``vtail`` is kept only as a recorded setting.
    """
    base = circuit if circuit is not None else load(bundled_netlist("full_2m1r1b.cir"))
    if pad_cap is not None:
        base = base.with_value("CPAD", pad_cap)
    t0 = 1e-6
    period = 2 * (t0 + chop_delay + 2 * rise + width)
    if chops_active:
        chop_set = Waveform.pulse(vdd, 0.0, t0 + chop_delay, rise, width, rise, period)
        chop_res = Waveform.pulse(0.0, vdd, t0, rise, width, rise, period)
    else:
        chop_set, chop_res = vdd, 0.0
    c = (base.with_source("VDDS", vdd).with_source("VDDR", vdd).with_source("VGR", vdd)
         .with_source("VCHOPS", chop_set).with_source("VCHOPR", chop_res)
         .with_source("IREFS", iref_set).with_source("IREFR", iref_res))
    tstop = t0 + chop_delay + 2 * rise + width + 6e-6
    tr = transient(c, tstop, rise / 50 if dt is None else dt, config=config)
    out = tr["v(bufout)"]
    t = tr.time
    lo = t0 + chop_delay + rise
    hi = t0 + rise + width
    sel = (t >= lo) & (t <= hi)
    plateau = float(np.median(out[sel])) if np.any(sel) else float("nan")
    if np.any(sel) and plateau != 0:
        flat = float(np.mean(np.abs(out[sel] - plateau) <= 0.05 * abs(plateau)))
    else:
        flat = float("nan")
    final = float(out[-1])
    decay = _decay_time(t, out, hi, plateau, final)
    params = dict(iref_set=iref_set, iref_res=iref_res, vdd=vdd, vtail=vtail,
                  chop_delay=chop_delay, rise=rise, width=width, pad_cap=pad_cap)
    return BufferResult(tr, plateau, flat, final, decay, (lo, hi), params)


def _decay_time(t, y, t_start, v_from, v_to) -> float:
    """Time after ``t_start`` for ``y`` to cover 1 - 1/e of the step ``v_from -> v_to``."""
    drop = v_from - v_to
    if not math.isfinite(drop) or abs(drop) < 1e-9:
        return 0.0
    level = v_from - (1 - math.exp(-1)) * drop
    after = np.nonzero(t >= t_start)[0]
    u = np.sign(drop) * (level - y)
    hit = np.nonzero(u[after] >= 0)[0]
    if not hit.size:
        return float("nan")
    k = after[hit[0]]
    if k == after[0]:
        return float(t[k] - t_start)
    u0, u1 = u[k - 1], u[k]
    tc = t[k - 1] + (0 - u0) * (t[k] - t[k - 1]) / (u1 - u0)
    return float(tc - t_start)
