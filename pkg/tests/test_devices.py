import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from mirrorsim.devices import (CUTOFF, SATURATION, TRIODE, MosInstance, MosModelParams,
                               RramModelParams, RramState, Waveform, mirror_ratio_clm,
                               mirror_ratio_ideal, mos_eval, rram_resistance, rram_step,
                               waveform_value)

pos = st.floats(1e-7, 1e-4)


def nmos(lam=0.0, vth=0.5, kp=1e-4):
    return MosModelParams("N", vth, kp, lam)


def test_cutoff_below_threshold():
    e = mos_eval(nmos(), MosInstance(10e-6, 1e-6), 0.0, 1.0)
    assert e.id == 0.0 and e.region == CUTOFF and e.gm == 0.0 and e.gds == 0.0


def test_saturation_hand_value():
    e = mos_eval(nmos(), MosInstance(10e-6, 1e-6), 1.0, 2.0)
    assert e.region == SATURATION
    assert e.id == pytest.approx(1.25e-4, rel=1e-12)


def test_saturation_with_clm():
    e = mos_eval(nmos(lam=0.1), MosInstance(10e-6, 1e-6), 1.0, 2.0)
    assert e.id == pytest.approx(1.5e-4, rel=1e-12)


def test_triode_hand_value():
    # beta = 1e-3, vov = 1, vds = 0.5: id = 1e-3 * (0.5 - 0.125)
    e = mos_eval(nmos(), MosInstance(10e-6, 1e-6), 1.5, 0.5)
    assert e.region == TRIODE
    assert e.id == pytest.approx(3.75e-4, rel=1e-12)


def test_instance_deltas_shift_threshold_and_gain():
    base = mos_eval(nmos(), MosInstance(10e-6, 1e-6), 1.0, 2.0).id
    weaker = mos_eval(nmos(), MosInstance(10e-6, 1e-6, dvth=0.1), 1.0, 2.0).id
    stronger = mos_eval(nmos(), MosInstance(10e-6, 1e-6, dbeta=0.1), 1.0, 2.0).id
    assert weaker == pytest.approx(base * 0.16 / 0.25)
    assert stronger == pytest.approx(base * 1.1)


def test_nan_rejected():
    with pytest.raises(ValueError):
        mos_eval(nmos(), MosInstance(1e-6, 1e-6), math.nan, 1.0)


@pytest.mark.parametrize("kwargs", [dict(polarity="X", vth=0.5, kp=1e-4),
                                    dict(polarity="N", vth=0.5, kp=0.0),
                                    dict(polarity="N", vth=0.5, kp=1e-4, lam=-0.1)])
def test_model_validation(kwargs):
    with pytest.raises(ValueError):
        MosModelParams(**kwargs)


def test_instance_validation():
    with pytest.raises(ValueError):
        MosInstance(0.0, 1e-6)


def test_reverse_mode_is_antisymmetric_for_symmetric_bias():
    m, inst = nmos(lam=0.05), MosInstance(5e-6, 1e-6)
    # swapping drain and source: vgs' = vgs - vds, vds' = -vds
    fwd = mos_eval(m, inst, 2.0, 0.7)
    rev = mos_eval(m, inst, 2.0 - 0.7, -0.7)
    assert rev.id == pytest.approx(-fwd.id, rel=1e-12)


@given(vov=st.floats(0.01, 5.0))
def test_continuity_unit_parameters(vov):
    m = MosModelParams("N", 0.0, 1.0, 0.0)
    inst = MosInstance(1.0, 1.0)
    lo = mos_eval(m, inst, vov, vov - 1e-9).id
    hi = mos_eval(m, inst, vov, vov + 1e-9).id
    assert abs(hi - lo) <= 1e-12


@given(vov=st.floats(0.01, 5.0), lam=st.floats(0.0, 0.2))
def test_continuity_with_clm(vov, lam):
    # with lambda > 0 the current keeps a finite slope across the boundary
    m = MosModelParams("N", 0.0, 1.0, lam)
    inst = MosInstance(1.0, 1.0)
    eps = 1e-9
    lo = mos_eval(m, inst, vov, vov - eps)
    hi = mos_eval(m, inst, vov, vov + eps)
    assert abs(hi.id - lo.id) <= 2 * eps * max(lo.gds, hi.gds) + 1e-12
    assert hi.gds == pytest.approx(lo.gds, rel=1e-6, abs=1e-8)


@given(vgs=st.floats(-5, 5), vds=st.floats(-5, 5), lam=st.floats(0, 0.2))
def test_pmos_mirrors_nmos(vgs, vds, lam):
    inst = MosInstance(4e-6, 1e-6)
    n = mos_eval(MosModelParams("N", 0.6, 1e-4, lam), inst, vgs, vds)
    p = mos_eval(MosModelParams("P", -0.6, 1e-4, lam), inst, -vgs, -vds)
    assert p.id == -n.id
    assert (p.gm, p.gds) == (n.gm, n.gds)


@given(vgs=st.floats(0, 5), vds=st.floats(0, 5))
def test_current_is_nonnegative_in_forward_mode(vgs, vds):
    assert mos_eval(nmos(0.05), MosInstance(1e-6, 1e-6), vgs, vds).id >= 0


@given(vgs=st.floats(0, 5), vds=st.floats(0, 5))
def test_gds_nonnegative(vgs, vds):
    assert mos_eval(nmos(0.05), MosInstance(1e-6, 1e-6), vgs, vds).gds >= 0


def test_fd_derivatives_grid():
    m, inst, h = nmos(0.05, vth=0.7, kp=170e-6), MosInstance(10e-6, 2e-6), 1e-6
    grid = np.linspace(0.0, 5.0, 50)
    for vgs in grid:
        for vds in grid:
            e = mos_eval(m, inst, vgs, vds)
            gm = (mos_eval(m, inst, vgs + h, vds).id - mos_eval(m, inst, vgs - h, vds).id) / (2 * h)
            gds = (mos_eval(m, inst, vgs, vds + h).id - mos_eval(m, inst, vgs, vds - h).id) / (2 * h)
            assert e.gm == pytest.approx(gm, rel=1e-6, abs=1e-15)
            assert e.gds == pytest.approx(gds, rel=1e-6, abs=1e-15)


# ---------------------------------------------------------------- mirror ratios

def test_mirror_ratio_ideal_examples():
    assert mirror_ratio_ideal(1, 1, 1, 1) == 1.0
    assert mirror_ratio_ideal(1, 1, 2, 1) == 2.0
    assert mirror_ratio_ideal(2, 1, 5, 1) == 2.5


def test_mirror_ratio_clm_example():
    assert mirror_ratio_clm(1, 1, 1, 1, 0.1, 1.0, 2.0) == pytest.approx(1.2 / 1.1)


def test_mirror_ratio_clm_matched_drains():
    assert mirror_ratio_clm(2, 1, 6, 1, 0.1, 1.7, 1.7) == pytest.approx(3.0)


def test_mirror_ratio_errors():
    with pytest.raises(ValueError):
        mirror_ratio_ideal(0, 1, 1, 1)
    with pytest.raises(ZeroDivisionError):
        mirror_ratio_clm(1, 1, 1, 1, 0.5, -2.0, 1.0)


@given(pos, pos, pos, pos, st.floats(-5, 5), st.floats(-5, 5))
def test_clm_without_lambda_is_geometric(w0, l0, w1, l1, vds0, vds1):
    assert mirror_ratio_clm(w0, l0, w1, l1, 0.0, vds0, vds1) == mirror_ratio_ideal(w0, l0, w1, l1)


# ---------------------------------------------------------------- waveforms

CHOP = Waveform.pulse(5.0, 0.0, 0.0, 1e-6, 10e-6, 1e-6, 20e-6)


@pytest.mark.parametrize("t,v", [(0.0, 5.0), (5e-6, 0.0), (0.5e-6, 2.5), (11.5e-6, 2.5),
                                 (15e-6, 5.0), (25e-6, 0.0)])
def test_pulse_values(t, v):
    assert waveform_value(CHOP, t) == pytest.approx(v)


def test_pulse_delay_and_single_shot():
    w = Waveform.pulse(0.0, 1.0, 2e-6, 1e-6, 1e-6, 1e-6)
    assert waveform_value(w, 1e-6) == 0.0
    assert waveform_value(w, 3.5e-6) == 1.0
    assert waveform_value(w, 50e-6) == 0.0


def test_constant_and_scaled():
    assert waveform_value(Waveform.constant(3.0), 1.0) == 3.0
    assert waveform_value(CHOP.scaled(0.5), 0.0) == 2.5


@pytest.mark.parametrize("kwargs", [dict(rise=0.0), dict(period=2e-6), dict(width=-1.0)])
def test_pulse_validation(kwargs):
    base = dict(v1=0.0, v2=1.0, delay=0.0, rise=1e-6, width=1e-6, fall=1e-6, period=0.0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        Waveform.pulse(**base)


@given(st.floats(0, 100e-6))
def test_pulse_stays_between_levels(t):
    assert 0.0 <= waveform_value(CHOP, t) <= 5.0


# ---------------------------------------------------------------- RRAM

RR = RramModelParams()


def test_rram_dead_zone():
    assert rram_step(RR, RramState(0.3), 0.5, 1e-6).x == 0.3


def test_rram_clamps():
    assert rram_step(RR, RramState(1.0), 5.0, 1e-6).x == 1.0
    assert rram_step(RR, RramState(0.0), -5.0, 1e-6).x == 0.0


def test_rram_euler_step():
    assert rram_step(RR, RramState(0.0), RR.v_set + 1.0, RR.tau_set).x == 1.0
    assert rram_step(RR, RramState(0.0), RR.v_set + 0.5, RR.tau_set / 2).x == pytest.approx(0.25)


def test_rram_resistance_endpoints():
    assert rram_resistance(RR, 0.0) == pytest.approx(RR.r_off)
    assert rram_resistance(RR, 1.0) == pytest.approx(RR.r_on)


@given(st.floats(0, 1), st.floats(0, 1))
def test_rram_resistance_monotone(a, b):
    assume(a < b)
    assert rram_resistance(RR, a) >= rram_resistance(RR, b)


@given(st.floats(0, 1), st.floats(-10, 10), st.floats(1e-12, 1e-3))
def test_rram_state_bounded(x, v, dt):
    assert 0.0 <= rram_step(RR, RramState(x), v, dt).x <= 1.0


def test_rram_params_validation():
    with pytest.raises(ValueError):
        RramModelParams(r_on=1e5, r_off=1e3)
