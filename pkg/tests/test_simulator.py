import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import K, N_CRIT, RHO, gompertz_time
from tumorcontain import (MTD, ConstantDose, Containment, GrowthLaw, IdealContainment, IdealMTD,
                          Intermittent, IntegratorConfig, MonroGaffney, NoTreat, Thresholds,
                          TumorState, first_crossing, locate_threshold_crossing,
                          reference_policies, simulate)
from tumorcontain.models import ContractViolation
from tumorcontain.policies import ResetAction
from tumorcontain.simulator import apply_ideal_reset, notreat_survival_time


def _mg():
    return MonroGaffney(L_max=2.0, N_crit=N_CRIT, law=GrowthLaw("gompertz", RHO, K))


def test_notreat_metrics_match_gompertz(mg, th, init, cfg):
    _, m = simulate(mg, NoTreat(), init, cfg, th)
    assert m.t_progression == 0.0
    assert m.t_failure == pytest.approx(gompertz_time(1e10, 6e10), abs=1e-5)
    assert m.t_survival == pytest.approx(gompertz_time(1e10, N_CRIT), abs=1e-5)
    assert notreat_survival_time(mg, init) == pytest.approx(gompertz_time(1e10, N_CRIT), abs=1e-5)


def test_fully_resistant_tumor_ignores_treatment(mg, th, cfg):
    init = TumorState(0.0, 1e10)
    base = simulate(mg, NoTreat(), init, cfg, th)[1]
    for name, p in reference_policies(th).items():
        m = simulate(mg, p, init, cfg, th)[1]
        for a, b in zip(m, base):
            assert a == pytest.approx(b, abs=1e-5), name


def test_zero_constant_dose_is_no_treatment(mg, th, init, cfg):
    a, ma = simulate(mg, ConstantDose(0.0), init, cfg, th)
    b, mb = simulate(mg, NoTreat(), init, cfg, th)
    assert ma == mb
    assert np.array_equal(a.N, b.N)


def test_ideal_mtd_resets_at_start(mg, th, init, cfg):
    tr, m = simulate(mg, IdealMTD(), init, cfg, th)
    assert tr.events[0].kind == "eliminate_sensitive" and tr.events[0].t == 0.0
    assert tr.events[0].after == TumorState(0.0, 1e9, 0.0)
    assert np.all(tr.S == 0.0)
    # pure resistant growth from 1e9
    assert m.t_failure == pytest.approx(gompertz_time(1e9, 6e10), abs=1e-5)


def test_apply_ideal_reset_examples():
    s = TumorState(5e10, 1e10, 3.0)
    assert apply_ideal_reset(s, ResetAction("eliminate_sensitive")) == TumorState(0.0, 1e10, 3.0)
    assert apply_ideal_reset(s, ResetAction("drop_to", 3e10)) == TumorState(2e10, 1e10, 3.0)
    # dropping below the resistant population clears the sensitive cells only
    assert apply_ideal_reset(s, ResetAction("drop_to", 5e9)) == TumorState(0.0, 1e10, 3.0)
    with pytest.raises(ContractViolation):
        apply_ideal_reset(s, ResetAction("grow"))


def test_locate_threshold_crossing():
    t = locate_threshold_crossing(lambda x: x * x, 0.0, 2.0, 2.0, 1e-12)
    assert t == pytest.approx(math.sqrt(2.0), abs=1e-11) and t * t > 2.0
    with pytest.raises(ContractViolation):
        locate_threshold_crossing(lambda x: x, 0.0, 1.0, 5.0)


def test_ideal_containment_fails_when_resistant_reaches_threshold(mg, th, init, cfg):
    tr, m = simulate(mg, IdealContainment(), init, cfg, th)
    assert m.t_failure == pytest.approx(first_crossing(tr, th.N_tol, "R"), abs=1e-6)
    # untreated, R/N stays at 1/10 until N_tol; then the hold at N_tol makes
    # resistant growth exponential at rate rho ln(K / N_tol)
    t_hold = math.log(10.0) / (RHO * math.log(K / 6e10))
    assert m.t_failure == pytest.approx(gompertz_time(1e10, 6e10) + t_hold, abs=1e-5)


def test_containment_plateau(mg, th, init, cfg):
    tr, _ = simulate(mg, Containment(), init, cfg, th)
    hold = np.array(tr.phase) == "stabilize"
    assert hold.sum() > 5
    assert np.allclose(tr.N[hold], th.N_tol, rtol=1e-8)


def test_mtd_beats_no_treatment(mg, th, init, cfg):
    a = simulate(mg, MTD(), init, cfg, th)[1]
    b = simulate(mg, NoTreat(), init, cfg, th)[1]
    assert a.t_survival > b.t_survival


def test_simulation_stops_past_critical_size(mg, th, init, cfg):
    tr, _ = simulate(mg, NoTreat(), init, cfg, th)
    assert tr.N[-1] == pytest.approx(N_CRIT * 1.01, rel=1e-6)


def test_state_at_one_sided_limits(mg, th, init, cfg):
    tr, _ = simulate(mg, IdealMTD(), init, cfg, th)
    S, R = tr.state_at([1.0])
    assert S[0] == 0.0 and R[0] > 1e9


@given(S0=st.floats(1e8, 2e10), R0=st.floats(1e6, 5e9),
       name=st.sampled_from(["MTD", "Cont", "Int", "idCont", "idInt"]))
@settings(max_examples=15)
def test_resistant_population_nondecreasing(S0, R0, name):
    th = Thresholds(1e10, 6e10, 3e10, N_CRIT)
    tr, _ = simulate(_mg(), reference_policies(th)[name], TumorState(S0, R0),
                     IntegratorConfig(horizon=3000.0), th)
    assert np.all(np.diff(tr.R) >= -1e-9 * tr.R[1:])
    assert np.all(tr.S >= 0)


@given(R0=st.floats(1e7, 5e9))
@settings(max_examples=10)
def test_tighter_event_tolerance_moves_metrics_little(R0):
    th = Thresholds(1e10, 6e10, 3e10, N_CRIT)
    init = TumorState(1e10 - R0, R0)
    a = simulate(_mg(), Intermittent(), init, IntegratorConfig(horizon=3000.0), th)[1]
    b = simulate(_mg(), Intermittent(), init,
                 IntegratorConfig(horizon=3000.0, event_time_tol=1e-8), th)[1]
    for x, y in zip(a, b):
        assert x == pytest.approx(y, abs=1e-4)


def test_rk4_and_dopri_agree(mg, th, init):
    a = simulate(mg, Containment(), init, IntegratorConfig(horizon=3000.0), th)[1]
    b = simulate(mg, Containment(), init,
                 IntegratorConfig(method="rk4", max_step=0.05, horizon=3000.0), th)[1]
    for x, y in zip(a, b):
        assert x == pytest.approx(y, rel=1e-5)
