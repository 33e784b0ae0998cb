import math

import pytest
from hypothesis import given, strategies as st

from tumorcontain.models import (
    ASSUMPTIONS, BirthDeath, ConfigurationError, ContractViolation, CostMutation, DomainError,
    GeneralModel, GrowthLaw, Grid, MonroGaffney, Mutation, NortonSimon, check_model_assumptions,
    cost_ratio_threshold, eval_fN_fR, eval_rates, growth_rate, model_from_config, model_to_config,
    mutation_compatibility, resistant_fraction_at_detection)

LAWS = [GrowthLaw("gompertz", 0.007, 2e12), GrowthLaw("logistic", 0.01, 5e11),
        GrowthLaw("powerlaw", 1.0, gamma=1 / 3)]


def all_models():
    g = GrowthLaw("gompertz", 0.007, 2e12)
    return [
        MonroGaffney(L_max=2.0, N_crit=5e11, law=g),
        NortonSimon(L_max=2.0, N_crit=5e11, law=GrowthLaw("powerlaw", 2.0, gamma=0.3)),
        BirthDeath.from_law(g, 0.01, 2.0, 5e11),
        Mutation(L_max=2.0, N_crit=5e11, law=g, tau1=1e-6, tau2=1e-7),
        CostMutation(L_max=2.0, N_crit=5e11, law=g, rho_s=0.007, rho_r=0.006, tau1=1e-6),
    ]


# growth laws

def test_growth_rate_examples():
    assert growth_rate(GrowthLaw("gompertz", 1.0, 2e12), 2e12) == 0.0
    # 0.007 * ln(200), ln(200) = 5.298317366548036
    assert growth_rate(GrowthLaw("gompertz", 0.007, 2e12), 1e10) == pytest.approx(0.0370882215658, rel=1e-12)
    assert growth_rate(GrowthLaw("powerlaw", 1.0, gamma=1 / 3), 8) == pytest.approx(0.5, rel=1e-14)


def test_growth_rate_past_capacity_is_not_an_error():
    assert growth_rate(GrowthLaw("gompertz", 1.0, 1e10), 2e10) < 0
    assert growth_rate(GrowthLaw("logistic", 1.0, 1e10), 2e10) == pytest.approx(-1.0)


def test_growth_rate_rejects_non_finite():
    with pytest.raises(DomainError):
        growth_rate(LAWS[0], math.nan)
    with pytest.raises(DomainError):
        growth_rate(LAWS[0], math.inf)


@pytest.mark.parametrize("kw", [dict(kind="gompertz", rho=0.0, K=1.0),
                                dict(kind="powerlaw", rho=1.0, gamma=1.0),
                                dict(kind="logistic", rho=1.0, K=-1.0)])
def test_growth_law_validation(kw):
    with pytest.raises(DomainError):
        GrowthLaw(**kw)


def test_logistic_uses_decreasing_form():
    # rho(1 - N/K), not rho(1 - K/N): its elasticity must be K/N - 1
    law = GrowthLaw("logistic", 0.01, 5e11)
    N = 1e10
    assert law(N) == pytest.approx(0.01 * (1 - N / 5e11))
    assert -law(N) / (N * law.derivative(N)) == pytest.approx(49.0)


@pytest.mark.parametrize("law", LAWS)
@given(x=st.floats(0.01, 0.98))
def test_growth_rate_strictly_decreasing(law, x):
    top = law.K if math.isfinite(law.K) else 1e13
    N = x * top
    h = 1e-6 * N
    assert growth_rate(law, N + h) < growth_rate(law, N - h)
    assert law.derivative(N) < 0


# rates

def test_mutation_without_mutation_terms():
    m = Mutation(L_max=2.0, N_crit=5e11, law=LAWS[0])
    s, r = 3e10, 1e10
    g = LAWS[0](s + r)
    assert eval_rates(m, s, r, 0.0) == pytest.approx((g * s, g * r), rel=1e-15)


def test_monro_gaffney_rates_example():
    m = MonroGaffney(L_max=2.0, N_crit=5e11, law=LAWS[0])
    phi_S, phi_R = eval_rates(m, 4e10, 2e10, 1.5)
    g = 0.007 * math.log(2e12 / 6e10)
    assert phi_S == pytest.approx(g * (1 - 1.5) * 4e10, rel=1e-14) and phi_S < 0
    assert phi_R == pytest.approx(g * 2e10, rel=1e-14) and phi_R > 0


def test_stabilizing_ratio_zeroes_fN():
    m = MonroGaffney(L_max=2.0, N_crit=5e11, law=LAWS[0])
    fN, fR = eval_fN_fR(m, 6e10, 2e10, 6e10 / 4e10)
    assert abs(fN) <= 1e-12 * fR


@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.variant)
def test_no_sensitive_cells_means_fN_equals_fR(model):
    phi_S = eval_rates(model, 0.0, 1e10, 1.3)[0]
    fN, fR = eval_fN_fR(model, 1e10, 1e10, 1.3)
    if getattr(model, "tau2", 0.0) > 0:
        # back-mutation feeds S even when it is empty
        assert phi_S > 0 and fN == pytest.approx(fR + phi_S, rel=1e-15)
    else:
        assert phi_S == 0.0
        assert fN == fR == model.rates(0.0, 1e10, 0.0)[1]


def test_mutation_terms_cancel_in_total():
    g = LAWS[0]
    for tau1, tau2 in [(1e-6, 0.0), (1e-3, 5e-4)]:
        m = Mutation(L_max=2.0, N_crit=5e11, law=g, tau1=tau1, tau2=tau2)
        assert eval_fN_fR(m, 5e10, 1e10, 0.0)[0] == pytest.approx(g(5e10) * 5e10, rel=1e-12)


def test_rate_contracts():
    m = all_models()[0]
    with pytest.raises(ContractViolation):
        eval_rates(m, 1e10, 1e9, 2.5)
    with pytest.raises(ContractViolation):
        eval_rates(m, 1e10, 1e9, -0.1)
    with pytest.raises(ContractViolation):
        eval_fN_fR(m, 1e9, 2e9, 0.0)


def test_tau_bound_enforced():
    with pytest.raises(DomainError):
        Mutation(L_max=1.0, N_crit=1e11, law=LAWS[0], tau1=0.02)
    with pytest.raises(DomainError):
        CostMutation(L_max=1.0, N_crit=1e11, law=LAWS[0], rho_s=1.0, rho_r=0.0)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.variant)
@given(s=st.floats(0.0, 1e11), r=st.floats(1e8, 1e11), L=st.floats(0.0, 2.0))
def test_model4_consistency(model, s, r, L):
    phi_S, phi_R = eval_rates(model, s, r, L)
    fN, fR = eval_fN_fR(model, s + r, r, L)
    assert fN == pytest.approx(phi_S + phi_R, rel=1e-12, abs=1e-300)
    assert fR == pytest.approx(phi_R, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.variant)
@given(s=st.floats(1e6, 1e11), r=st.floats(1e8, 1e11), a=st.floats(0, 2), b=st.floats(0, 2))
def test_dose_response_monotone(model, s, r, a, b):
    L1, L2 = min(a, b), max(a, b)
    N = s + r
    assert model.fN(N, r, L1) >= model.fN(N, r, L2)


@given(tau1=st.floats(0, 0.009), tau2=st.floats(0, 0.009), s=st.floats(1e8, 1e11),
       r=st.floats(1e8, 1e11), L=st.floats(0, 2))
def test_equal_rates_make_total_independent_of_mutation(tau1, tau2, s, r, L):
    base = CostMutation(L_max=2.0, N_crit=5e11, law=LAWS[0], rho_s=0.007, rho_r=0.007)
    mut = CostMutation(L_max=2.0, N_crit=5e11, law=LAWS[0], rho_s=0.007, rho_r=0.007,
                       tau1=tau1, tau2=tau2)
    f0 = base.fN(s + r, r, L)
    assert abs(mut.fN(s + r, r, L) - f0) <= 1e-12 * max(abs(f0), abs(base.fR(s + r, r)))


# assumption checks

def test_monro_gaffney_passes_assumptions():
    m = MonroGaffney(L_max=2.0, N_crit=5e11, law=LAWS[0])
    rep = check_model_assumptions(m, 1e9)
    assert rep.ok and rep.grid_size >= 1000
    assert all(v >= 0 for v in rep.margins.values())
    assert set(rep.margins) == set(ASSUMPTIONS)


def test_mutation_logistic_violates_iii():
    m = Mutation(L_max=2.0, N_crit=4e11, law=GrowthLaw("logistic", 0.01, 5e11), tau1=1e-6)
    R0 = 1e10 * resistant_fraction_at_detection(1e-6, 0.0, 1e10)
    rep = check_model_assumptions(m, R0)
    assert "iii" in rep.failing()
    assert rep.margins["iii"] < 0


def test_resistant_growth_independent_of_sensitive_has_zero_slack():
    m = GeneralModel(L_max=1.0, N_crit=1e11,
                     phi_S=lambda S, R, L: 0.01 * S * (1 - L), phi_R=lambda S, R: 0.01 * R)
    rep = check_model_assumptions(m, 1e8, Grid(12, 12, 4))
    assert rep.margins["iii"] == 0.0


def test_report_ok_iff_nonnegative_margins():
    for m in all_models():
        rep = check_model_assumptions(m, 1e9, Grid(10, 10, 4))
        assert rep.ok == all(v >= 0 for v in rep.margins.values())


def test_degenerate_grid_rejected():
    with pytest.raises(ConfigurationError):
        check_model_assumptions(all_models()[0], 1e9, Grid(1, 10, 4))


# mutation compatibility

def test_resistant_fraction_examples():
    x = resistant_fraction_at_detection(1e-6, 0.0, 1e10)
    assert x == pytest.approx(-math.expm1(-1e-6 * math.log(1e10)), rel=1e-12)
    assert x == pytest.approx(1e-6 * math.log(1e10), rel=1e-4)
    assert resistant_fraction_at_detection(1e-6, 1e-6, 1.0) == 0.0
    assert resistant_fraction_at_detection(1e-6, 0.0, 1e10, cost_ratio=0.5) == pytest.approx(2e-6)
    with pytest.raises(DomainError):
        resistant_fraction_at_detection(1e-6, 0.0, 1e10, cost_ratio=1.0)


def test_compatibility_gompertz_and_logistic():
    rep = mutation_compatibility(Mutation(L_max=2, N_crit=5e11, law=LAWS[0], tau1=1e-6), 1e10)
    assert rep.lhs == pytest.approx(math.log(1e10) + 1) and rep.lhs == pytest.approx(24.03, abs=0.01)
    assert rep.rhs == pytest.approx(math.log(200))
    assert rep.satisfied and rep.variant == "no-cost"
    assert 0 <= rep.resistant_fraction_x_r <= 1
    rep = mutation_compatibility(
        Mutation(L_max=2, N_crit=4e11, law=GrowthLaw("logistic", 0.01, 5e11), tau1=1e-6), 1e10)
    assert rep.rhs == pytest.approx(49.0) and not rep.satisfied


def test_compatibility_cost_powerlaw_boundary():
    law = GrowthLaw("powerlaw", 1.0, gamma=1 / 3)
    m = CostMutation(L_max=2, N_crit=5e11, law=law, rho_s=3.0, rho_r=2.0, tau1=1e-6)
    rep = mutation_compatibility(m, 1e10)
    assert rep.lhs == pytest.approx(3.0) and rep.rhs == pytest.approx(3.0)
    assert rep.variant == "cost"


def test_compatibility_needs_mutation_model():
    with pytest.raises(ContractViolation):
        mutation_compatibility(all_models()[0], 1e10)


@pytest.mark.parametrize("law,N0,expected", [
    (GrowthLaw("powerlaw", 1.0, gamma=1 / 3), 1e10, 2 / 3),
    (GrowthLaw("gompertz", 1.0, 2e12), 1e10, 1 - 1 / math.log(200)),
    (GrowthLaw("logistic", 1.0, 5e11), 1e10, (5e11 - 2e10) / (5e11 - 1e10)),
])
def test_cost_threshold_flips_compatibility(law, N0, expected):
    thr = cost_ratio_threshold(law, N0)
    assert thr == pytest.approx(expected, rel=1e-12)
    for ratio, sat in ((thr + 1e-6, True), (thr - 1e-6, False)):
        m = CostMutation(L_max=2, N_crit=4e11, law=law, rho_s=1.0, rho_r=ratio, tau1=1e-6)
        assert mutation_compatibility(m, N0).satisfied is sat


# config round trip

@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.variant)
def test_model_config_round_trip(model):
    back = model_from_config(model_to_config(model))
    assert type(back) is type(model)
    for S, R, L in [(1e10, 1e9, 0.0), (3e10, 2e10, 1.7)]:
        assert back.rates(S, R, L) == model.rates(S, R, L)


def test_model_config_rejects_unknown_key():
    cfg = model_to_config(all_models()[0])
    cfg["dose_rate"] = 1.0
    with pytest.raises(ConfigurationError, match="dose_rate"):
        model_from_config(cfg)
