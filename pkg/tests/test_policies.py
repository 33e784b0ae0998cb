import numpy as np
import pytest
from hypothesis import given, strategies as st

from tumorcontain import (MTD, Alternative, ConstantDose, Containment, DelayedIdealMTD,
                          GrowthLaw, IdealContainment, IdealIntermittent, IdealMTD, Intermittent,
                          MonroGaffney, Mutation,
                          NoTreat, Thresholds, reference_policies, simulate, stabilizing_dose, TumorState)
from tumorcontain.models import ConfigurationError, ContractViolation
from tumorcontain.policies import Context, Phase


@pytest.fixture
def ctx(mg, th):
    return Context(mg, th)


def test_thresholds_validation():
    with pytest.raises(ConfigurationError):
        Thresholds(N0=2e10, N_tol=1e10)
    with pytest.raises(ConfigurationError):
        Thresholds(N0=1e10, N_tol=6e10, N_min=7e10)
    with pytest.raises(ConfigurationError):
        Thresholds(N0=1e10, N_tol=6e10, N_crit=5e10)


def test_stabilizing_dose_examples(mg):
    s = stabilizing_dose(mg, 6e10, 2e10)
    assert not s.saturated and s.dose == pytest.approx(1.5, rel=1e-9)
    assert abs(mg.fN(6e10, 2e10, s.dose)) <= 1e-9 * mg.fR(6e10, 2e10)
    assert stabilizing_dose(mg, 6e10, 5.9e10).saturated
    with pytest.raises(ContractViolation):
        stabilizing_dose(mg, 6e10, 6e10)


@given(N=st.floats(2e9, 4e11), frac=st.floats(0.01, 0.99))
def test_stabilizing_dose_agrees_across_equivalent_models(N, frac):
    mg = MonroGaffney(L_max=2.0, N_crit=5e11, law=GrowthLaw("gompertz", 0.007, 2e12))
    plain = Mutation(L_max=mg.L_max, N_crit=mg.N_crit, law=mg.law)
    R = frac * N
    a, b = stabilizing_dose(mg, N, R), stabilizing_dose(plain, N, R)
    assert a.saturated == b.saturated
    assert a.dose == pytest.approx(b.dose, rel=1e-9)
    # monro-gaffney closed form: L = N / S
    if not a.saturated:
        assert a.dose == pytest.approx(N / (N - R), rel=1e-8)


def test_simple_doses(ctx):
    N, R = 3e10, 1e10
    assert NoTreat().dose(Phase("untreated"), ctx, N, R, 0.0) == 0.0
    assert NoTreat().dose(Phase("untreated"), ctx, 9e10, R, 0.0) == 0.0
    assert MTD().dose(Phase("treat"), ctx, N, R, 0.0) == ctx.L_max


def test_containment_dose_at_threshold(ctx):
    c = Containment()
    assert c.dose(Phase("stabilize"), ctx, 6e10, 2e10, 0.0) == pytest.approx(1.5, rel=1e-9)


def test_override_above_tolerable_size(ctx):
    for p in (Containment(), Intermittent(), Alternative(((0.0, 0.3),))):
        phase, _ = p.start(ctx, 7e10, 1e10, 0.0)
        assert p.dose(phase, ctx, 7e10, 1e10, 0.0) == ctx.L_max
    c = ConstantDose(0.3)
    assert c.dose(c.start(ctx, 7e10, 1e10, 0.0)[0], ctx, 7e10, 1e10, 0.0) == 0.3


def test_containment_transitions(ctx):
    c = Containment()
    assert c.transition(Phase("growth"), "reached_threshold", ctx, 6e10, 1e10, 5.0) == \
        (Phase("stabilize"), None)
    assert c.transition(Phase("stabilize"), "dose_saturated", ctx, 6e10, 3e10, 9.0)[0].name == \
        "post_failure"
    assert c.transition(Phase("post_failure"), "returned_threshold", ctx, 6e10, 1e10, 9.0)[0] == \
        Phase("stabilize")
    with pytest.raises(ContractViolation):
        c.transition(Phase("growth"), "bogus", ctx, 6e10, 1e10, 0.0)


def test_ideal_transitions(ctx):
    phase, reset = IdealMTD().start(ctx, 1e10, 1e9, 0.0)
    assert reset.kind == "eliminate_sensitive"
    p = DelayedIdealMTD()
    assert p.start(ctx, 1e10, 1e9, 0.0) == (Phase("growth"), None)
    assert p.transition(Phase("growth"), "reached_Ntol", ctx, 6e10, 1e10, 3.0)[1].kind == \
        "eliminate_sensitive"
    ic = IdealContainment()
    phase, reset = ic.transition(Phase("hold"), "sensitive_extinct", ctx, 6e10, 6e10, 9.0)
    assert phase.name == "extinct" and reset.kind == "eliminate_sensitive"
    ii = IdealIntermittent()
    phase, reset = ii.transition(Phase("vacation"), "reached_Ntol", ctx, 6e10, 1e10, 9.0)
    assert phase.name == "vacation" and reset.kind == "drop_to" and reset.level == 3e10


def test_intermittent_transitions(ctx):
    p = Intermittent()
    assert p.transition(Phase("treat"), "reached_Nmin", ctx, 3e10, 1e10, 1.0)[0] == Phase("vacation")
    assert p.dose(Phase("vacation"), ctx, 3e10, 1e10, 1.0) == 0.0
    assert p.dose(Phase("treat"), ctx, 3e10, 1e10, 1.0) == ctx.L_max
    with pytest.raises(ConfigurationError):
        Intermittent().bounds(Context(ctx.model, Thresholds(1e10, 6e10)))


def test_alternative_schedule_validation(ctx):
    with pytest.raises(ConfigurationError):
        Alternative(((0.0, 1.0), (5.0, 0.5), (5.0, 0.2)))
    with pytest.raises(ContractViolation):
        Alternative(((0.0, 3.0),)).start(ctx, 1e10, 1e9, 0.0)
    # a schedule that starts late is padded with no treatment
    assert Alternative(((2.0, 1.0),)).schedule[0] == (0.0, 0.0)


POLICY_NAMES = ["noTreat", "MTD", "delMTD", "Cont", "idMTD", "del-idMTD", "idCont", "Int",
                "ContNmin", "idInt", "idContNmin"]


@pytest.mark.parametrize("name", POLICY_NAMES)
def test_dose_box_and_override_on_trajectories(mg, th, init, cfg, name):
    p = reference_policies(th)[name]
    tr, _ = simulate(mg, p, init, cfg, th)
    assert np.all(tr.L >= 0) and np.all(tr.L <= mg.L_max)
    if name != "noTreat":
        above = tr.N > th.N_tol * (1 + 1e-6)
        assert np.all(tr.L[above] == mg.L_max)


def test_stabilization_fixed_point(mg, th, init, cfg):
    tr, _ = simulate(mg, Containment(), init, cfg.with_(hold_mode="feedback"), th)
    idx = [i for i, ph in enumerate(tr.phase) if ph == "stabilize"]
    assert len(idx) > 10
    for i in idx:
        S, R = tr.S[i], tr.R[i]
        dN = sum(mg.rates(S, R, tr.L[i]))
        assert abs(dN) <= 1e-6 * mg.fR(S + R, R)


def test_intermittent_hysteresis(mg, th, cfg):
    # a small resistant seed so that several treat/vacation cycles happen
    tr, _ = simulate(mg, Intermittent(), TumorState(1e10 - 1e7, 1e7), cfg, th)
    ph = np.array(tr.phase)
    assert np.all(tr.L[ph == "treat"] == mg.L_max)
    assert np.all(tr.L[ph == "vacation"] == 0.0)
    cycling = np.isin(ph, ["treat", "vacation"])
    # while R < N_min the tumor stays between the two thresholds
    regime = cycling & (tr.R < th.N_min)
    d = 1e-6 * th.N_tol
    assert regime.sum() > 10
    assert np.all(tr.N[regime] >= th.N_min - d) and np.all(tr.N[regime] <= th.N_tol + d)
    assert sum(e.kind == "reached_Nmin" for e in tr.events) >= 2


@pytest.mark.parametrize("name", ["Cont", "Int", "idInt"])
def test_phase_sequence_deterministic(mg, th, init, cfg, name):
    p = reference_policies(th)[name]
    a, _ = simulate(mg, p, init, cfg, th)
    b, _ = simulate(mg, p, init, cfg, th)
    assert a.phase == b.phase
    assert np.array_equal(a.t, b.t) and np.array_equal(a.R, b.R)
