import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import K, N_CRIT, RHO
from tumorcontain import (MTD, ConstantDose, Containment, GrowthLaw, IdealContainment, IdealMTD,
                          IntegratorConfig, MonroGaffney, NoTreat, Thresholds, TumorState,
                          compare_curves, consistency_check, reference_policies, rn_trajectory,
                          simulate)
from tumorcontain.models import ContractViolation


def _mg():
    return MonroGaffney(L_max=2.0, N_crit=N_CRIT, law=GrowthLaw("gompertz", RHO, K))


def test_ideal_mtd_curve_is_diagonal(mg, th, init, cfg):
    c = rn_trajectory(mg, IdealMTD(), init, 4e11, cfg, th)
    assert np.allclose(c.N_tilde, c.r_grid, rtol=1e-12)
    r = np.linspace(1e9, 4e11, 50)
    assert np.allclose(c.N_at(r), r, rtol=1e-9)
    # the only jump is the elimination at R0
    assert c.jumps[0][0] == 1e9 and c.jumps[0][1] == pytest.approx(1e10)


def test_untreated_fraction_is_constant(mg, th, init, cfg):
    # with a common per-capita rate, N/R keeps its initial value
    c = rn_trajectory(mg, NoTreat(), init, 4e10, cfg, th)
    r = np.linspace(1e9, 4e10, 40)
    assert np.allclose(c.N_at(r), 10 * r, rtol=1e-8)


def test_ideal_containment_plateau(mg, th, init, cfg):
    c = rn_trajectory(mg, IdealContainment(), init, 2e11, cfg, th)
    assert c.N_at(5e9)[0] == pytest.approx(5e10, rel=1e-8)
    assert np.allclose(c.N_at(np.linspace(6.1e9, 5.9e10, 20)), 6e10, rtol=1e-9)
    assert c.N_at(1e11)[0] == pytest.approx(1e11, rel=1e-9)


@pytest.mark.parametrize("name", ["noTreat", "MTD", "Cont", "Int", "idCont", "idInt"])
def test_curve_consistent_with_time_trajectory(mg, th, init, cfg, name):
    p = reference_policies(th)[name]
    tr, _ = simulate(mg, p, init, cfg, th)
    c = rn_trajectory(mg, p, init, config=cfg, thresholds=th)
    rep = consistency_check(tr, c)
    assert rep.max_relative_deviation <= 1e-6
    assert rep.coverage > 0.9


def test_mismatched_pair_is_flagged(mg, th, init, cfg):
    tr, _ = simulate(mg, MTD(), init, cfg, th)
    c = rn_trajectory(mg, NoTreat(), init, config=cfg, thresholds=th)
    assert consistency_check(tr, c).max_relative_deviation > 0.1


def test_curve_shape(mg, th, init, cfg):
    c = rn_trajectory(mg, Containment(), init, config=cfg, thresholds=th)
    assert np.all(np.diff(c.t_of_r) >= 0)
    assert np.all(np.diff(c.r_grid) >= 0)
    assert np.allclose(c.S_tilde, c.N_tilde - c.r_grid)
    assert np.all(c.N_tilde >= c.r_grid * (1 - 1e-12))


def test_compare_with_itself(mg, th, init, cfg):
    c = rn_trajectory(mg, Containment(), init, 3e11, cfg, th)
    rep = compare_curves(c, c)
    assert rep.relation == "<=" and rep.max_violation == 0.0 and rep.margin == 0.0


def test_mtd_below_no_treatment(mg, th, init, cfg):
    a = rn_trajectory(mg, MTD(), init, 3e11, cfg, th)
    b = rn_trajectory(mg, NoTreat(), init, 3e11, cfg, th)
    rep = compare_curves(a, b)
    assert rep.relation == "<=" and rep.margin >= 0
    assert compare_curves(b, a).relation == ">="


def test_disjoint_ranges_and_bad_end(mg, th, init, cfg):
    a = rn_trajectory(mg, NoTreat(), init, 2e9, cfg, th)
    b = rn_trajectory(mg, NoTreat(), TumorState(9e9, 3e9), 5e9, cfg, th)
    with pytest.raises(ContractViolation):
        compare_curves(a, b)
    with pytest.raises(ContractViolation):
        rn_trajectory(mg, NoTreat(), init, 1e9, cfg, th)


@given(S1=st.floats(1e9, 3e10), dS=st.floats(1e8, 2e10), L=st.floats(0.0, 2.0))
@settings(max_examples=15)
def test_larger_start_stays_above_under_same_dose(S1, dS, L):
    # same constant dose, same R0: ordering of starting sizes carries along r
    mg, cfg = _mg(), IntegratorConfig(horizon=3000.0)
    th = Thresholds(1e10, 6e10)
    a = rn_trajectory(mg, ConstantDose(L), TumorState(S1, 1e9), 1e11, cfg, th)
    b = rn_trajectory(mg, ConstantDose(L), TumorState(S1 + dS, 1e9), 1e11, cfg, th)
    assert compare_curves(a, b).relation == "<="


@given(L1=st.floats(0.0, 2.0), L2=st.floats(0.0, 2.0))
@settings(max_examples=15)
def test_higher_dose_lower_curve(L1, L2):
    lo, hi = sorted((L1, L2))
    mg, cfg = _mg(), IntegratorConfig(horizon=3000.0)
    th = Thresholds(1e10, 6e10)
    init = TumorState(9e9, 1e9)
    a = rn_trajectory(mg, ConstantDose(hi), init, 1e11, cfg, th)
    b = rn_trajectory(mg, ConstantDose(lo), init, 1e11, cfg, th)
    assert compare_curves(a, b).margin >= -1e-9
