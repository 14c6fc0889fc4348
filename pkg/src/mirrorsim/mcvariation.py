"""Monte-Carlo mismatch and the wafer-level mirror-deviation map.

Every random draw is a pure function of ``(seed, die, circuit, element)``:
the identity is hashed into a Philox key and a fresh counter-based stream
is opened for it.  Nothing depends on evaluation order, so dies can be
farmed out to worker processes and still reproduce bit for bit.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analyses import WAFER_IREF_GRID, get_branch, load_branch, mirror_factor_dc
from .devices import MosModelParams
from .engine import NewtonConfig, SimulationError
from .netlist import Circuit, Mosfet

log = logging.getLogger(__name__)

WAFER_GRID = (16, 16)
WAFER_DIES = 180


@dataclass(frozen=True)
class MismatchSpec:
    """Pelgrom coefficients plus a per-die threshold offset.

    ``avt`` is in V*m and ``abeta`` in m (relative), so a device of area
    W*L gets sigma(dVth) = avt / sqrt(W*L) and sigma(dbeta) = abeta / sqrt(W*L).
    """

    avt: float = 0.0
    abeta: float = 0.0
    die_sigma_vth: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("avt", "abeta", "die_sigma_vth"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite non-negative number")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def scaled(self, factor: float) -> "MismatchSpec":
        return MismatchSpec(self.avt * factor, self.abeta * factor,
                            self.die_sigma_vth * factor, self.seed)


# 10 mV*um threshold and 4 %*um current-factor matching with a 20 mV
# die-to-die spread.  Chosen so the set-branch map spreads over roughly
# 0.6-2 % (10th-90th percentile) on the bundled geometries.
CALIBRATED = MismatchSpec(avt=10e-9, abeta=4e-8, die_sigma_vth=20e-3, seed=1)


def _stream(seed: int, *identity) -> np.random.Generator:
    text = "\x1f".join(str(part) for part in (seed, *identity)).encode()
    digest = hashlib.blake2b(text, digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_normal(seed: int, *identity, size: int = 1) -> np.ndarray:
    """Standard normal draws addressed by identity rather than by position."""
    return _stream(seed, *identity).standard_normal(size)


def die_offset(spec: MismatchSpec, die: int, polarity: str) -> float:
    """Shared threshold-magnitude shift for every device of one polarity on a die."""
    if spec.die_sigma_vth == 0:
        return 0.0
    return spec.die_sigma_vth * float(draw_normal(spec.seed, "die", die, polarity)[0])


def sample_instance_deltas(spec: MismatchSpec, circuit: Circuit, die: int,
                           circuit_index: int) -> dict[str, tuple[float, float]]:
    """``{mosfet name: (dvth, dbeta)}`` for one circuit instance on one die.

    The local part is signed like the threshold itself, so a positive draw
    always means a weaker device, for either polarity.
    """
    out = {}
    for m in circuit.of_type(Mosfet):
        model: MosModelParams = circuit.models[m.model]
        area = m.inst.w * m.inst.l
        sign = 1.0 if model.polarity == "N" else -1.0
        if spec.avt == 0 and spec.abeta == 0:
            z_vt = z_b = 0.0
        else:
            z_vt, z_b = draw_normal(spec.seed, die, circuit_index, m.name, size=2)
        dvth = sign * (spec.avt / math.sqrt(area) * z_vt + die_offset(spec, die, model.polarity))
        dbeta = spec.abeta / math.sqrt(area) * z_b
        out[m.name] = (float(dvth), float(dbeta))
    return out


def wafer_sites(n_dies: int = WAFER_DIES, grid: tuple[int, int] = WAFER_GRID) -> list[tuple[int, int]]:
    """The ``n_dies`` raster cells nearest the wafer centre, in raster order."""
    nx, ny = grid
    if not 0 < n_dies <= nx * ny:
        raise ValueError(f"cannot place {n_dies} dies on a {nx}x{ny} raster")
    cx, cy = nx / 2, ny / 2
    cells = [(x, y) for y in range(ny) for x in range(nx)]
    cells.sort(key=lambda c: ((c[0] + 0.5 - cx) ** 2 + (c[1] + 0.5 - cy) ** 2, c[1], c[0]))
    return sorted(cells[:n_dies], key=lambda c: (c[1], c[0]))


@dataclass(frozen=True)
class WaferCell:
    die_x: int
    die_y: int
    circuit: int
    mean_deviation_pct: float     # nan marks a failed instance


@dataclass
class WaferMap:
    cells: list[WaferCell]
    grid: tuple[int, int] = WAFER_GRID
    branch: str = "set"
    spec: MismatchSpec = field(default_factory=MismatchSpec)

    def deviations(self) -> np.ndarray:
        return np.array([c.mean_deviation_pct for c in self.cells])

    def median(self) -> float:
        d = self.deviations()
        d = d[np.isfinite(d)]
        return float(np.median(d)) if d.size else float("nan")

    def missing(self) -> int:
        return int(np.sum(~np.isfinite(self.deviations())))

    def as_grid(self, circuit: int = 0) -> np.ndarray:
        """Raster array (rows = y) with nan outside the wafer or on failures."""
        nx, ny = self.grid
        img = np.full((ny, nx), np.nan)
        for c in self.cells:
            if c.circuit == circuit:
                img[c.die_y, c.die_x] = c.mean_deviation_pct
        return img

    def csv_lines(self) -> list[str]:
        lines = ["die_x,die_y,circuit,mean_deviation_pct"]
        for c in self.cells:
            value = repr(c.mean_deviation_pct) if math.isfinite(c.mean_deviation_pct) else ""
            lines.append(f"{c.die_x},{c.die_y},{c.circuit},{value}")
        return lines


def instance_deviation(branch: str, circuit: Circuit, spec: MismatchSpec, die: int,
                       circuit_index: int, iref_grid, vdd: float,
                       config: NewtonConfig | None = None) -> float:
    """Mean |factor - 1| in percent for one sampled instance; nan if any point fails."""
    varied = circuit.with_deltas(sample_instance_deltas(spec, circuit, die, circuit_index))
    try:
        report = mirror_factor_dc(branch, iref_grid, vdd, circuit=varied, config=config)
    except SimulationError as exc:
        log.warning("die %d circuit %d: %s", die, circuit_index, exc)
        return float("nan")
    if len(report.valid_rows) != len(report.rows):
        return float("nan")
    return report.mean_deviation_pct()


def _run_chunk(args):
    branch, circuit, spec, jobs, iref_grid, vdd, config = args
    return [instance_deviation(branch, circuit, spec, die, ci, iref_grid, vdd, config)
            for die, ci in jobs]


def wafer_run(branch: str = "set", spec: MismatchSpec = CALIBRATED, dies: int = WAFER_DIES,
              circuits_per_die: int = 2, iref_grid=WAFER_IREF_GRID, vdd: float = 5.0,
              circuit: Circuit | None = None, jobs: int = 1,
              config: NewtonConfig | None = None) -> WaferMap:
    """Sample every (die, circuit) instance and record its mean mirror deviation."""
    b = get_branch(branch)
    base = circuit if circuit is not None else load_branch(b)
    sites = wafer_sites(dies)
    work = [(d, ci) for d in range(dies) for ci in range(circuits_per_die)]
    if jobs <= 1:
        values = _run_chunk((b.name, base, spec, work, tuple(iref_grid), vdd, config))
    else:
        size = math.ceil(len(work) / (4 * jobs))
        chunks = [work[i:i + size] for i in range(0, len(work), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_run_chunk, [(b.name, base, spec, ch, tuple(iref_grid), vdd, config)
                                          for ch in chunks])
            values = [v for part in parts for v in part]
    cells = [WaferCell(sites[d][0], sites[d][1], ci, v) for (d, ci), v in zip(work, values)]
    return WaferMap(cells, WAFER_GRID, b.name, spec)
