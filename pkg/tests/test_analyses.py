import numpy as np
import pytest
from hypothesis import given, strategies as st

from mirrorsim import analyses as an
from mirrorsim.engine import TraceSet


def trapezoid(rise=1e-6, width=5e-6, amp=1.0, base=0.0, n=4001):
    t = np.linspace(0.0, 2 * rise + width + 4e-6, n)
    y = np.interp(t, [0, 1e-6, 1e-6 + rise, 1e-6 + rise + width, 1e-6 + 2 * rise + width, t[-1]],
                  [0, 0, 1, 1, 0, 0])
    return TraceSet(t, {"v(x)": base + amp * y})


# ---------------------------------------------------------------- helpers

def test_origin_fit_exact_line():
    slope, r2 = an.origin_fit([1, 2, 3], [2, 4, 6])
    assert slope == pytest.approx(2.0) and r2 == pytest.approx(1.0)


@given(st.floats(0.1, 10), st.integers(0, 2**32 - 1))
def test_origin_fit_recovers_slope(k, seed):
    x = np.linspace(1, 9, 9)
    noise = 1e-6 * np.random.default_rng(seed).standard_normal(9)
    slope, r2 = an.origin_fit(x, k * x + noise)
    assert slope == pytest.approx(k, rel=1e-5)
    assert r2 > 0.999


def test_unknown_branch():
    with pytest.raises(ValueError, match="unknown branch"):
        an.get_branch("middle")


@pytest.mark.parametrize("rise", [100e-9, 1e-6])
def test_pulse_metrics_ideal_trapezoid(rise):
    m = an.pulse_metrics(trapezoid(rise), "v(x)")
    assert m.amplitude == pytest.approx(1.0, rel=1e-9)
    assert m.rise_10_90 == pytest.approx(0.8 * rise, rel=1e-6)
    assert m.overshoot_pct == 0.0
    assert m.settle_time <= rise


def test_pulse_metrics_negative_pulse_and_offset():
    m = an.pulse_metrics(trapezoid(amp=-2e-4, base=1.0), "v(x)")
    assert m.amplitude == pytest.approx(-2e-4, rel=1e-9)


def test_pulse_metrics_overshoot():
    tr = trapezoid()
    y = tr["v(x)"].copy()
    k = int(np.argmax(y >= 1.0))
    y[k:k + 5] = 1.2
    m = an.pulse_metrics(TraceSet(tr.time, {"v(x)": y}), "v(x)")
    assert m.overshoot_pct == pytest.approx(20.0, rel=0.01)


def test_pulse_metrics_flat_signal():
    t = np.linspace(0, 1e-5, 100)
    with pytest.raises(ValueError, match="no pulse detected"):
        an.pulse_metrics(TraceSet(t, {"v(x)": np.full(100, 0.3)}), "v(x)")


# ---------------------------------------------------------------- DC mirror factor

def test_set_factor_range():
    rep = an.mirror_factor_dc("set")
    f = rep.factors()
    assert len(f) == 9
    assert np.all((f >= 0.95) & (f <= 1.05))


def test_reset_factor_range_and_worst_point():
    rep = an.mirror_factor_dc("reset")
    f = rep.factors()
    assert np.all((f >= 0.90) & (f <= 1.05))
    worst = max(rep.rows, key=lambda r: r.deviation_pct)
    assert worst.iref == pytest.approx(50e-6)


def test_empty_iref_grid():
    with pytest.raises(ValueError):
        an.mirror_factor_dc("set", ())


def test_mirror_report_csv():
    rows = [an.MirrorRow(1e-4, 1.02e-4, 1.02), an.MirrorRow(2e-4, float("nan"), float("nan"),
                                                            valid=False)]
    rep = an.MirrorReport(rows, "set", 5.0)
    lines = rep.csv_lines()
    assert lines[0] == "iref,imirr,factor,deviation_pct"
    assert lines[1].split(",")[0] == "0.0001"
    assert float(lines[1].split(",")[3]) == pytest.approx(2.0)
    assert lines[2].endswith("nan")
    assert rep.mean_deviation_pct() == pytest.approx(2.0)


@pytest.mark.parametrize("branch", ["set", "reset"])
def test_lower_supply_never_raises_output(branch):
    hi = an.mirror_factor_dc(branch, an.DC_IREF_GRID, 5.0)
    lo = an.mirror_factor_dc(branch, an.DC_IREF_GRID, 4.0)
    for a, b in zip(hi.rows, lo.rows):
        assert abs(b.imirr) <= abs(a.imirr) * (1 + 1e-9)


# ---------------------------------------------------------------- supply range

def test_supply_range_zero_reference():
    table = an.supply_range("set", 0.0, (0, 5, 0.5))
    assert np.all(np.abs(table.imirr) < 1e-9)
    assert table.csv_lines()[0] == "vdd,imirr"
    assert len(table.csv_lines()) == 12


def test_supply_range_rejects_negative_reference():
    with pytest.raises(ValueError):
        an.supply_range("set", -1e-6)


# ---------------------------------------------------------------- transient

def test_reset_overshoot_with_parasitic():
    tr = an.transient_pulse("reset", 400e-6, parasitic=20e-12)
    assert an.pulse_metrics(tr, "i(VAMM)").overshoot_pct > 0


def test_parasitic_needs_capacitor():
    with pytest.raises(ValueError, match="no parasitic"):
        an.transient_pulse("set", 400e-6, parasitic=1e-12)


@pytest.mark.parametrize("rise,lo,hi", [(1e-6, 0.4e-6, 1.6e-6), (100e-9, 40e-9, 320e-9)])
def test_rise_time_family(rise, lo, hi):
    (m,) = an.rise_time_family("set", 400e-6, (rise,))
    assert lo <= m.rise_10_90 <= hi


def test_rise_time_family_guards():
    with pytest.raises(ValueError, match="empty grid"):
        an.rise_time_family("set", 400e-6, ())
    with pytest.raises(ValueError):
        an.rise_time_family("set", 400e-6, (0.0,))


# ---------------------------------------------------------------- buffer read-out

def test_buffer_plateau_is_flat():
    res = an.buffer_experiment()
    assert res.flat_fraction >= 0.5
    assert res.plateau_mean > 0
    assert res.params["vtail"] == 1.0


def test_buffer_idle_chops_give_constant_output():
    res = an.buffer_experiment(chops_active=False)
    out = res.trace["v(bufout)"]
    assert np.ptp(out) <= 1e-6 * max(1.0, np.max(np.abs(out)))


def test_buffer_decay_grows_with_pad_capacitance():
    decay = [an.buffer_experiment(pad_cap=c).decay_time for c in (0.0, 1e-12, 10e-12)]
    assert decay[0] < decay[1] < decay[2]
