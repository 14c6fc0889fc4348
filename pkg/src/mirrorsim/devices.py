"""Device equations: Level-1 MOSFET, current-mirror ratios, pulse waveforms
and a threshold/rate RRAM model.

All functions here are pure.  The engine calls :func:`mos_eval` on every
Newton iteration, so it works on plain floats rather than arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

CUTOFF = "cutoff"
TRIODE = "triode"
SATURATION = "saturation"


@dataclass(frozen=True)
class MosModelParams:
    """Square-law model card.

    ``vth`` carries its sign: negative for PMOS.  ``kp`` is the process
    transconductance (mobility times oxide capacitance), in A/V^2.
    """

    polarity: str
    vth: float
    kp: float
    lam: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.polarity not in ("N", "P"):
            raise ValueError(f"polarity must be 'N' or 'P', got {self.polarity!r}")
        if not self.kp > 0:
            raise ValueError("kp must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not math.isfinite(self.vth):
            raise ValueError("vth must be finite")


@dataclass(frozen=True)
class MosInstance:
    w: float
    l: float
    dvth: float = 0.0
    dbeta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError("W and L must be positive")

    @property
    def aspect(self) -> float:
        return self.w / self.l


@dataclass(frozen=True)
class MosEval:
    id: float
    region: str
    gm: float
    gds: float


def _square_law(beta, vth, lam, vgs, vds):
    """Forward-mode (vds >= 0) NMOS current and partials."""
    vov = vgs - vth
    if vov <= 0.0:
        return 0.0, CUTOFF, 0.0, 0.0
    clm = 1.0 + lam * vds
    if vds < vov:
        core = vov * vds - 0.5 * vds * vds
        i = beta * core * clm
        gm = beta * vds * clm
        gds = beta * ((vov - vds) * clm + lam * core)
        return i, TRIODE, gm, gds
    i = 0.5 * beta * vov * vov * clm
    gm = beta * vov * clm
    gds = 0.5 * beta * vov * vov * lam
    return i, SATURATION, gm, gds


def _nmos(beta, vth, lam, vgs, vds):
    if vds >= 0.0:
        return _square_law(beta, vth, lam, vgs, vds)
    # source and drain swap roles; the gate now sees vgd
    i, region, fg, fd = _square_law(beta, vth, lam, vgs - vds, -vds)
    return -i, region, -fg, fg + fd


def mos_eval(model: MosModelParams, inst: MosInstance, vgs: float, vds: float) -> MosEval:
    """Drain current (positive into the drain) and its partial derivatives.

    PMOS devices are evaluated as an NMOS on negated terminal voltages with
    the current negated, so gm and gds keep the same sign convention as the
    NMOS: ``gm = d(id)/d(vgs)``, ``gds = d(id)/d(vds)``.
    """
    if math.isnan(vgs) or math.isnan(vds):
        raise ValueError("NaN terminal voltage")
    beta = model.kp * (1.0 + inst.dbeta) * inst.aspect
    vth = model.vth + inst.dvth
    if model.polarity == "N":
        i, region, gm, gds = _nmos(beta, vth, model.lam, vgs, vds)
        return MosEval(i, region, gm, gds)
    i, region, gm, gds = _nmos(beta, -vth, model.lam, -vgs, -vds)
    # id_p(vgs, vds) = -id_n(-vgs, -vds): the two sign flips cancel in the partials
    return MosEval(-i, region, gm, gds)


def mirror_ratio_ideal(w0: float, l0: float, w1: float, l1: float) -> float:
    """Output/reference current of a saturated mirror without channel-length modulation."""
    if min(w0, l0, w1, l1) <= 0:
        raise ValueError("geometry must be positive")
    return (w1 / l1) / (w0 / l0)


def mirror_ratio_clm(w0, l0, w1, l1, lam, vds0, vds1) -> float:
    """Mirror ratio including the (1 + lambda*vds) factor of each device."""
    geometric = mirror_ratio_ideal(w0, l0, w1, l1)
    den = 1.0 + lam * vds0
    if den == 0.0:
        raise ZeroDivisionError("1 + lambda*vds0 is zero")
    return geometric * (1.0 + lam * vds1) / den


@dataclass(frozen=True)
class Waveform:
    """DC level or trapezoidal pulse train.

    Pulse timing follows the usual SPICE order: the source sits at ``v1``
    until ``delay``, ramps to ``v2`` over ``rise``, holds for ``width``,
    ramps back over ``fall``.  ``period`` of 0 means a single pulse.
    """

    kind: str = "dc"
    dc: float = 0.0
    v1: float = 0.0
    v2: float = 0.0
    delay: float = 0.0
    rise: float = 0.0
    width: float = 0.0
    fall: float = 0.0
    period: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dc", "pulse"):
            raise ValueError(f"unknown waveform kind {self.kind!r}")
        if self.kind == "pulse":
            if not (self.rise > 0 and self.fall > 0):
                raise ValueError("pulse rise and fall must be positive")
            if self.width < 0 or self.delay < 0:
                raise ValueError("pulse width and delay must be non-negative")
            span = self.delay + self.rise + self.width + self.fall
            if self.period and self.period < span * (1 - 1e-12):
                raise ValueError("pulse period shorter than delay+rise+width+fall")

    @classmethod
    def constant(cls, value: float) -> "Waveform":
        return cls(kind="dc", dc=float(value))

    @classmethod
    def pulse(cls, v1, v2, delay, rise, width, fall, period=0.0) -> "Waveform":
        return cls(kind="pulse", v1=v1, v2=v2, delay=delay, rise=rise,
                   width=width, fall=fall, period=period)

    def scaled(self, factor: float) -> "Waveform":
        if self.kind == "dc":
            return replace(self, dc=self.dc * factor)
        return replace(self, v1=self.v1 * factor, v2=self.v2 * factor)


def waveform_value(w: Waveform, t: float) -> float:
    if w.kind == "dc":
        return w.dc
    if t < w.delay:
        return w.v1
    tau = t - w.delay
    if w.period > 0:
        tau = math.fmod(tau, w.period)
    if tau < w.rise:
        return w.v1 + (w.v2 - w.v1) * tau / w.rise
    tau -= w.rise
    if tau <= w.width:
        return w.v2
    tau -= w.width
    if tau < w.fall:
        return w.v2 + (w.v1 - w.v2) * tau / w.fall
    return w.v1


@dataclass(frozen=True)
class RramModelParams:
    r_on: float = 1e3
    r_off: float = 1e5
    v_set: float = 1.0
    v_reset: float = -1.0
    tau_set: float = 1e-6
    tau_reset: float = 1e-6
    name: str = ""

    def __post_init__(self):
        if not (0 < self.r_on < self.r_off):
            raise ValueError("require 0 < r_on < r_off")
        if not (self.tau_set > 0 and self.tau_reset > 0):
            raise ValueError("switching time constants must be positive")


@dataclass
class RramState:
    x: float = 0.0

    def __post_init__(self):
        self.x = min(1.0, max(0.0, float(self.x)))


def rram_resistance(params: RramModelParams, x: float) -> float:
    """Parallel-conductance interpolation between HRS (x=0) and LRS (x=1)."""
    x = min(1.0, max(0.0, x))
    return params.r_on * params.r_off / (x * params.r_off + (1.0 - x) * params.r_on)


def rram_step(params: RramModelParams, state: RramState, v_applied: float, dt: float) -> RramState:
    """One explicit-Euler step of the filament state."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = state.x
    if v_applied > params.v_set:
        x += dt / params.tau_set * max(v_applied - params.v_set, 0.0)
    elif v_applied < params.v_reset:
        x -= dt / params.tau_reset * max(params.v_reset - v_applied, 0.0)
    return RramState(x)
