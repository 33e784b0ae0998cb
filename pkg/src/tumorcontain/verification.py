"""Numerical certification of the treatment orderings on random scenarios.

Each suite simulates the policies it needs on a certified scenario and
reports the worst signed relative slack of every claimed inequality
(negative means violated). Claims about all times are checked on the union
of both trajectories' step grids plus interior dense-output points.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .models import (ConfigurationError, ContractViolation, GeneralModel, GrowthLaw,
                     BirthDeath, MonroGaffney, Mutation, NortonSimon, TumorModel, Grid,
                     check_model_assumptions, resistant_fraction_at_detection)
from .ode import DenseTrack, Event, IntegratorConfig, integrate
from .policies import (Alternative, ConstantDose, DelayedDose, Policy, Thresholds,
                       reference_policies)
from .rnplane import compare_curves, rn_trajectory
from .simulator import Trajectory, TumorState, first_crossing, simulate

DEFAULT_TOL = 1e-6

SUITES = ("P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8", "L4", "A1A2")

SUITE_NOTES = {
    "P5": "a) is checked against idealized and non-idealized alternatives; "
          "b) against idealized alternatives only (S_alt = 0 at failure)",
    "P2": "b) compares a delayed constant dose with the same dose from t = 0; "
          "the delayed one must have the smaller resistant population",
    "P8": "run only on scenarios where A1A2 holds",
    "L4": "a) run only on scenarios where A2 holds",
}


class FamilyInfeasible(ConfigurationError):
    """No assumption-satisfying scenario found within the retry budget."""


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    model: TumorModel
    init: TumorState
    thresholds: Thresholds
    rng_seed: int
    family: str
    policies: tuple = ()

    @property
    def R0(self) -> float:
        return self.init.R


def _logu(rng, lo, hi):
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _common(rng, N0_range=(1e9, 1e11)):
    N0 = _logu(rng, *N0_range)
    R0 = N0 * _logu(rng, 1e-3, 1e-1)
    N_tol = N0 * rng.uniform(1.0, 3.0)
    N_min = N_tol * rng.uniform(0.5, 0.9)
    L_max = rng.uniform(1.5, 3.0)
    return N0, R0, N_tol, N_min, L_max


def _gompertz_parts(rng):
    rho = rng.uniform(0.003, 0.02)
    K = _logu(rng, 1e12, 5e12)
    N0, R0, N_tol, N_min, L_max = _common(rng)
    N_crit = min(N_tol * rng.uniform(2.0, 20.0), 0.5 * K)
    return GrowthLaw("gompertz", rho, K), N0, R0, N_tol, N_min, N_crit, L_max


def _family_monro_gaffney(rng):
    law, N0, R0, N_tol, N_min, N_crit, L_max = _gompertz_parts(rng)
    return MonroGaffney(L_max=L_max, N_crit=N_crit, law=law), N0, R0, N_tol, N_min


def _family_mutation_gompertz(rng):
    law, N0, R0, N_tol, N_min, N_crit, L_max = _gompertz_parts(rng)
    tau1 = _logu(rng, 1e-7, 1e-4)
    # tau2 = 0 keeps the sensitive population decreasing at L_max
    return Mutation(L_max=L_max, N_crit=N_crit, law=law, tau1=tau1, tau2=0.0), \
        N0, R0, N_tol, N_min


def _family_mutation_logistic(rng):
    N0, _, N_tol, N_min, L_max = _common(rng)
    K = N0 * _logu(rng, 50.0, 500.0)
    N_crit = min(N_tol * rng.uniform(2.0, 20.0), 0.5 * K)
    law = GrowthLaw("logistic", rng.uniform(0.003, 0.02), K)
    tau1 = _logu(rng, 1e-7, 1e-4)
    # resistant cells accumulated by mutation during growth to N0
    R0 = N0 * resistant_fraction_at_detection(tau1, 0.0, N0)
    return Mutation(L_max=L_max, N_crit=N_crit, law=law, tau1=tau1, tau2=0.0), \
        N0, R0, N_tol, N_min


def _family_powerlaw(rng):
    N0, R0, N_tol, N_min, L_max = _common(rng)
    gamma = rng.uniform(0.2, 0.5)
    g0 = rng.uniform(0.003, 0.02)  # growth rate at N0
    law = GrowthLaw("powerlaw", g0 * N0 ** gamma, gamma=gamma)
    N_crit = N_tol * rng.uniform(2.0, 20.0)
    return NortonSimon(L_max=L_max, N_crit=N_crit, law=law), N0, R0, N_tol, N_min


def _family_birth_death(rng):
    law, N0, R0, N_tol, N_min, N_crit, L_max = _gompertz_parts(rng)
    death = rng.uniform(0.0, 0.02)
    return BirthDeath.from_law(law, death, L_max, N_crit), N0, R0, N_tol, N_min


def _broken_phi_S(S, R, L, rho, K):
    return rho * math.log(K / (S + R)) * (1.0 - L) * S


def _broken_phi_R(S, R, rho):
    # resistant growth speeds up with the sensitive fraction: f_R increases in N
    return rho * R * (1.0 + 5.0 * S / (S + R))


def _family_broken(rng):
    law, N0, R0, N_tol, N_min, N_crit, L_max = _gompertz_parts(rng)
    model = GeneralModel(L_max=L_max, N_crit=N_crit,
                         phi_S=partial(_broken_phi_S, rho=law.rho, K=law.K),
                         phi_R=partial(_broken_phi_R, rho=law.rho))
    return model, N0, R0, N_tol, N_min


FAMILIES: dict[str, Callable] = {
    "monro_gaffney": _family_monro_gaffney,
    "mutation_gompertz": _family_mutation_gompertz,
    "powerlaw_norton_simon": _family_powerlaw,
    "birth_death": _family_birth_death,
    "mutation_logistic": _family_mutation_logistic,
    "broken": _family_broken,
}
DEFAULT_MIX = (("monro_gaffney", 0.6), ("mutation_gompertz", 0.2),
               ("powerlaw_norton_simon", 0.1), ("birth_death", 0.1))
UNCERTIFIED = ("broken",)  # negative control: skips the assumption check


def sample_scenario(seed: int, family: Optional[str] = None, max_retries: int = 50,
                    grid: Grid = Grid(16, 16, 4)) -> Scenario:
    """Draw a scenario whose model passes the assumption check on its domain."""
    rng = np.random.default_rng(seed)
    if family is None:
        names = [n for n, _ in DEFAULT_MIX]
        w = np.array([p for _, p in DEFAULT_MIX])
        family = names[int(rng.choice(len(names), p=w / w.sum()))]
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown scenario family {family!r}")
    failing: dict = {}
    for _ in range(max_retries):
        model, N0, R0, N_tol, N_min = FAMILIES[family](rng)
        th = Thresholds(N0=N0, N_tol=N_tol, N_min=N_min, N_crit=model.N_crit)
        init = TumorState(N0 - R0, R0)
        if family in UNCERTIFIED:
            return Scenario(model, init, th, seed, family)
        report = check_model_assumptions(model, R0, grid)
        if report.ok:
            return Scenario(model, init, th, seed, family)
        for key in report.failing():
            failing[key] = failing.get(key, 0) + 1
    worst = ", ".join(f"({k}) x{n}" for k, n in sorted(failing.items()))
    raise FamilyInfeasible(f"family {family!r}: no feasible draw in {max_retries} tries; "
                           f"failing assumptions {worst}")


def scenario_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# --------------------------------------------------------------------------
# alternative treatments


@dataclass(frozen=True)
class AltConstraints:
    horizon: float
    L_max: float
    n_breaks: tuple = (0, 6)
    level_range: Optional[tuple] = None
    feedback_override: bool = True


def generate_alternative_policy(seed: int, idealized: bool,
                                constraints: AltConstraints) -> Alternative:
    """Random piecewise-constant schedule in [0, L_max].

    Idealized schedules also eliminate the sensitive cells at a random time
    (or when N first reaches N_tol, if earlier).
    """
    rng = np.random.default_rng(seed)
    lo, hi = constraints.level_range or (0.0, constraints.L_max)
    n = int(rng.integers(constraints.n_breaks[0], constraints.n_breaks[1] + 1))
    times = np.sort(rng.uniform(0.0, constraints.horizon, n))
    times = [0.0] + [float(t) for t in times if t > 0]
    levels = []
    for _ in times:
        u = rng.uniform()
        # endpoints are the interesting cases, draw them often
        levels.append(lo if u < 0.15 else hi if u < 0.3 else float(rng.uniform(lo, hi)))
    sched = tuple(zip(times, levels))
    eliminate = float(rng.uniform(0.0, constraints.horizon)) if idealized else None
    return Alternative(schedule=sched, feedback_override=constraints.feedback_override,
                       eliminate_at=eliminate,
                       name=f"{'ialt' if idealized else 'alt'}{seed % 100000}")


# --------------------------------------------------------------------------
# comparing trajectories


class Claim(NamedTuple):
    label: str
    margin: float
    locus: Optional[float]


def comparison_grid(trajs: Sequence[Trajectory], t_lo: float = 0.0,
                    t_hi: float = math.inf, per_segment: int = 3) -> np.ndarray:
    frac = np.linspace(0.0, 1.0, per_segment + 2)[1:-1]
    pts = [np.array([t_lo])]
    for tr in trajs:
        pts.append(tr.t)
        d = tr.dense
        if len(d):
            pts.append((d.t0[:, None] + (d.t1 - d.t0)[:, None] * frac).ravel())
    end = min([t_hi] + [tr.t_end for tr in trajs])
    g = np.unique(np.concatenate(pts))
    return g[(g >= t_lo) & (g <= end)]


def order_margin(a: Trajectory, b: Trajectory, which: str = "R",
                 t_lo: float = 0.0, t_hi: float = math.inf) -> tuple[float, Optional[float]]:
    """Worst relative slack of ``a <= b`` for R, S or N over the common window.

    Both one-sided limits are compared, except the left limit at ``t_lo``.
    S is scaled by tumor size, since it may vanish.
    """
    g = comparison_grid((a, b), t_lo, t_hi)
    if len(g) == 0:
        return math.inf, None
    worst, locus = math.inf, None
    for left in (False, True):
        ts = g[g > t_lo] if left else g
        if len(ts) == 0:
            continue
        Sa, Ra = a.state_at(ts, left)
        Sb, Rb = b.state_at(ts, left)
        if which == "R":
            va, vb, scale = Ra, Rb, np.maximum(Ra, Rb)
        elif which == "N":
            va, vb = Sa + Ra, Sb + Rb
            scale = np.maximum(va, vb)
        elif which == "S":
            va, vb, scale = Sa, Sb, np.maximum(Sa + Ra, Sb + Rb)
        else:
            raise ConfigurationError(f"unknown quantity {which!r}")
        rel = (vb - va) / scale
        i = int(np.argmin(rel))
        if rel[i] < worst:
            worst, locus = float(rel[i]), float(ts[i])
    return worst, locus


def chain(named: Sequence[tuple[str, Trajectory]], which: str, prefix: str,
          t_lo: float = 0.0) -> list[Claim]:
    """Claims ``x_1 <= x_2 <= ...`` between consecutive trajectories."""
    out = []
    for (na, a), (nb, b) in zip(named, named[1:]):
        m, loc = order_margin(a, b, which, t_lo)
        out.append(Claim(f"{prefix} {which}_{na}<={which}_{nb}", m, loc))
    return out


def time_claim(label: str, ta: Optional[float], tb: Optional[float]) -> Claim:
    """``ta <= tb`` with None meaning never reached (infinite)."""
    a = math.inf if ta is None else ta
    b = math.inf if tb is None else tb
    if a == b:
        return Claim(label, 0.0, ta)
    if math.isinf(a):
        return Claim(label, -1.0, tb)
    if math.isinf(b):
        return Claim(label, 1.0, None)
    return Claim(label, (b - a) / max(abs(a), abs(b)), ta)


def time_chain(named: Sequence[tuple[str, Optional[float]]], prefix: str) -> list[Claim]:
    return [time_claim(f"{prefix} t_{na}<=t_{nb}", a, b)
            for (na, a), (nb, b) in zip(named, named[1:])]


# --------------------------------------------------------------------------
# per-scenario evaluation


@dataclass(frozen=True)
class SuiteConfig:
    n_alternatives: int = 10
    n_pairs: int = 5
    tol: float = DEFAULT_TOL
    integrator: IntegratorConfig = IntegratorConfig()
    rn_checks: bool = True


class ScenarioRun:
    """Lazily simulated policies of one scenario, shared by all suites."""

    def __init__(self, scenario: Scenario, cfg: SuiteConfig = SuiteConfig()):
        self.sc = scenario
        self.cfg = cfg
        self.refs = reference_policies(scenario.thresholds)
        base = cfg.integrator
        if base.horizon is None:
            tr, m = simulate(scenario.model, self.refs["noTreat"], scenario.init,
                             base.with_(horizon=1e7), scenario.thresholds)
            if m.t_survival is None:
                raise ConfigurationError("untreated tumor never reaches N_crit")
            self.t_noTreat = m.t_survival
            base = base.with_(horizon=10.0 * m.t_survival)
        else:
            self.t_noTreat = None
        self.config = base
        self._traj: dict = {}
        self._curve: dict = {}
        self._alts: dict = {}

    # simulations ---------------------------------------------------------
    def traj(self, name: str, policy: Optional[Policy] = None) -> Trajectory:
        if name not in self._traj:
            p = policy if policy is not None else self.refs[name]
            self._traj[name] = simulate(self.sc.model, p, self.sc.init, self.config,
                                        self.sc.thresholds)[0]
        return self._traj[name]

    def curve(self, name: str, policy: Optional[Policy] = None):
        if name not in self._curve:
            p = policy if policy is not None else self.refs[name]
            self._curve[name] = rn_trajectory(self.sc.model, p, self.sc.init,
                                              config=self.config,
                                              thresholds=self.sc.thresholds)
        return self._curve[name]

    def alt_horizon(self) -> float:
        t = self.t_noTreat
        if t is None:
            t = first_crossing(self.traj("noTreat"), self.sc.model.N_crit) or self.config.horizon
        return 2.0 * t

    def alternatives(self, idealized: bool) -> list[tuple[str, Alternative]]:
        if idealized not in self._alts:
            cons = AltConstraints(self.alt_horizon(), self.sc.model.L_max)
            out = []
            for k in range(self.cfg.n_alternatives):
                s = scenario_seed(self.sc.rng_seed, 1000 * (2 if idealized else 1) + k)
                p = generate_alternative_policy(s, idealized, cons)
                out.append((f"{'ialt' if idealized else 'alt'}{k}", p))
            self._alts[idealized] = out
        return self._alts[idealized]

    def failure_time(self, name: str, idealized: bool) -> Optional[float]:
        tr = self.traj(name)
        return first_crossing(tr, self.sc.thresholds.N_tol, "R" if idealized else "N")

    # suites --------------------------------------------------------------
    def suite(self, name: str) -> list[Claim]:
        return getattr(self, f"_suite_{name}")()

    def _suite_P1(self):
        rng = np.random.default_rng(scenario_seed(self.sc.rng_seed, 1))
        L_max = self.sc.model.L_max
        out = []
        for k in range(self.cfg.n_pairs):
            L_bar = float(rng.uniform(0.0, L_max))
            base = dict(horizon=self.alt_horizon(), L_max=L_max, feedback_override=False)
            p1 = generate_alternative_policy(scenario_seed(self.sc.rng_seed, 100 + k), False,
                                             AltConstraints(level_range=(0.0, L_bar), **base))
            p2 = generate_alternative_policy(scenario_seed(self.sc.rng_seed, 200 + k), False,
                                             AltConstraints(level_range=(L_bar, L_max), **base))
            a, b = self.traj(f"P1lo{k}", p1), self.traj(f"P1hi{k}", p2)
            m, loc = order_margin(a, b, "R")
            out.append(Claim(f"P1 pair{k} R_lo<=R_hi (Lbar={L_bar:.4g})", m, loc))
        return out

    def _suite_P2(self):
        rng = np.random.default_rng(scenario_seed(self.sc.rng_seed, 2))
        th, L_max = self.sc.thresholds, self.sc.model.L_max
        L1, L2 = sorted(float(x) for x in rng.uniform(0.0, L_max, 2))
        a = self.traj(f"const{L1:.17g}", ConstantDose(L1))
        b = self.traj(f"const{L2:.17g}", ConstantDose(L2))
        m, loc = order_margin(a, b, "R")
        out = [Claim(f"P2a R_const{L1:.4g}<=R_const{L2:.4g}", m, loc)]
        L = float(rng.uniform(0.0, L_max))
        N_start = th.N0 * float(rng.uniform(1.0, 3.0))
        d = self.traj(f"delayed{L:.17g}", DelayedDose(L, N_start))
        c = self.traj(f"const{L:.17g}", ConstantDose(L))
        m, loc = order_margin(d, c, "R")
        out.append(Claim(f"P2b R_delayed<=R_const (L={L:.4g})", m, loc))
        return out

    def _suite_P3(self):
        out = []
        for name, p in self.alternatives(False):
            out += chain([("noTreat", self.traj("noTreat")), (name, self.traj(name, p)),
                          ("MTD", self.traj("MTD"))], "R", "P3")
        return out

    def _suite_P4(self):
        out = []
        cont = self.traj("Cont")
        for name, p in self.alternatives(False):
            alt = self.traj(name, p)
            m, loc = order_margin(cont, alt, "R")
            out.append(Claim(f"P4 R_Cont<=R_{name}", m, loc))
            out.append(self._corollary(cont, alt, name))
        out += chain([(n, self.traj(n)) for n in ("noTreat", "Cont")], "R", "P4 bonus")
        out += chain([(n, self.traj(n)) for n in ("MTD", "idMTD")], "R", "P4 bonus")
        if self.cfg.rn_checks:
            out += self._tildeN_chain()
        return out

    def _corollary(self, cont, alt, name):
        # N_Cont <= N_alt + (S_Cont - S_alt)
        g = comparison_grid((cont, alt))
        Sc, Rc = cont.state_at(g)
        Sa, Ra = alt.state_at(g)
        lhs, rhs = Sc + Rc, Sa + Ra + (Sc - Sa)
        rel = (rhs - lhs) / np.maximum(np.abs(lhs), np.abs(rhs))
        i = int(np.argmin(rel))
        return Claim(f"P4 corollary N_Cont<=N_{name}+S_Cont-S_{name}", float(rel[i]), float(g[i]))

    def _tildeN_chain(self):
        out = []
        curves = [("idMTD", self.curve("idMTD")), ("MTD", self.curve("MTD"))]
        tail = [("Cont", self.curve("Cont")), ("noTreat", self.curve("noTreat"))]
        for name, p in self.alternatives(False)[:max(1, self.cfg.n_alternatives // 2)]:
            seq = curves + [(name, self.curve(name, p))] + tail
            for (na, a), (nb, b) in zip(seq, seq[1:]):
                rep = compare_curves(a, b, self.cfg.tol)
                out.append(Claim(f"P4 tildeN_{na}<=tildeN_{nb}", rep.margin, rep.violation_locus))
        return out

    def _suite_P5(self):
        out = []
        t_idCont = self.failure_time("idCont", True)
        t_idMTD = self.failure_time("idMTD", True)
        for idealized in (False, True):
            for name, p in self.alternatives(idealized):
                self.traj(name, p)
                t_alt = self.failure_time(name, idealized)
                out.append(time_claim(f"P5a t_{name}<=t_idCont", t_alt, t_idCont))
                if not idealized:
                    continue
                out.append(time_claim(f"P5b1 t_idMTD<=t_{name}", t_idMTD, t_alt))
                named = [("idCont", self.traj("idCont")), (name, self.traj(name)),
                         ("idMTD", self.traj("idMTD"))]
                out += chain(named, "R", "P5b2")
                if t_alt is not None:
                    out += chain(named, "N", "P5b3", t_lo=t_alt)
        return out

    def _needs_Nmin(self):
        if self.sc.thresholds.N_min is None:
            raise ConfigurationError("this suite needs N_min in the scenario thresholds")

    def _suite_P6(self):
        self._needs_Nmin()
        T = self.traj
        out = chain([(n, T(n)) for n in ("Cont", "Int", "ContNmin")], "R", "P6a")
        out += chain([(n, T(n)) for n in ("idCont", "idInt", "idContNmin")], "R", "P6a")
        ts = {n: self.failure_time(n, True) for n in ("idContNmin", "idInt", "idCont")}
        out += time_chain(list(ts.items()), "P6b")
        if ts["idInt"] is not None:
            out += chain([(n, T(n)) for n in ("idCont", "idInt", "idContNmin")], "N", "P6c",
                         t_lo=ts["idInt"])
        return out

    def _suite_P7(self):
        self._needs_Nmin()
        T = self.traj
        out = chain([(n, T(n)) for n in ("noTreat", "Cont", "Int", "delMTD", "MTD", "idMTD")],
                    "R", "P7a1")
        out += chain([(n, T(n)) for n in ("noTreat", "idCont", "idInt", "del-idMTD", "idMTD")],
                     "R", "P7a2")
        ts = [(n, self.failure_time(n, True)) for n in ("idMTD", "del-idMTD", "idInt", "idCont")]
        out += time_chain(ts, "P7b")
        t_idCont = ts[-1][1]
        if t_idCont is not None:
            out += chain([(n, T(n)) for n in ("idCont", "idInt", "del-idMTD", "idMTD")], "N",
                         "P7c", t_lo=t_idCont)
        return out

    def _suite_P8(self):
        self._needs_Nmin()
        if not self.a1a2_ok():
            return None
        T = self.traj
        out = []
        for name, p in self.alternatives(False):
            out += chain([("idMTD", T("idMTD")), ("MTD", T("MTD")), (name, T(name, p)),
                          ("Cont", T("Cont")), ("noTreat", T("noTreat"))], "S", "P8a")
        out += chain([(n, T(n)) for n in ("ContNmin", "Int", "Cont")], "S", "P8b")
        out += chain([(n, T(n)) for n in ("delMTD", "Int")], "S", "P8b")
        out += chain([(n, T(n)) for n in ("idContNmin", "idInt", "idCont")], "S", "P8c")
        out += chain([(n, T(n)) for n in ("idMTD", "del-idMTD", "idInt", "idCont", "noTreat")],
                     "S", "P8d")
        return out

    def _suite_L4(self):
        out = []
        th = self.sc.thresholds
        if self.a2_margin() >= -self.cfg.tol:
            names = ["MTD", "delMTD", "Cont"] + (["Int", "ContNmin"] if th.N_min else [])
            named = [(n, self.traj(n)) for n in names]
            named += [(n, self.traj(n, p)) for n, p in self.alternatives(False)]
            for n, tr in named:
                out.append(_lemma_a(tr, th.N_tol, n))
        levels = [("Cont", th.N_tol)] + ([("ContNmin", th.N_min)] if th.N_min else [])
        for n, level in levels:
            out.append(_lemma_b(self.traj(n), level, n))
        return out

    def a2_margin(self) -> float:
        if not hasattr(self, "_a2"):
            self._a2 = a2_margin(self.sc.model, self.sc.R0)
        return self._a2

    def a1_claims(self) -> list[Claim]:
        names = list(self.refs) + [n for n, _ in self.alternatives(False)]
        pol = dict(self.alternatives(False))
        nt = self.traj("noTreat")
        out = []
        for n in names:
            if n == "noTreat":
                continue
            m, loc = order_margin(self.traj(n, pol.get(n)), nt, "S")
            out.append(Claim(f"A1 S_{n}<=S_noTreat", m, loc))
        return out

    def a1a2_ok(self) -> bool:
        claims = self._suite_A1A2()
        return min(c.margin for c in claims) >= -self.cfg.tol

    def _suite_A1A2(self):
        if not hasattr(self, "_a1a2"):
            self._a1a2 = self.a1_claims() + [Claim("A2 phi_S(S,R,L_max)<0", self.a2_margin(), None)]
        return self._a1a2


def a2_margin(model: TumorModel, R0: float, n: int = 24) -> float:
    """Worst slack of ``phi_S(S, R, L_max) < 0`` for S > 0 on a grid.

    Scaled by ``|phi_S| + |phi_R|``; a zero or positive rate gives a
    non-positive margin.
    """
    worst = math.inf
    for N in np.geomspace(R0 * (1 + 1e-6), model.N_crit, n):
        for R in np.geomspace(R0, N, n + 1)[:-1]:
            pS, pR = model.rates(float(N - R), float(R), model.L_max)
            worst = min(worst, -pS / (abs(pS) + abs(pR)))
    # the inequality is strict: an exact zero counts as a (tiny) failure
    return worst if worst != 0 else -1e-300


def _lemma_a(tr: Trajectory, N_tol: float, name: str) -> Claim:
    """After any time with N >= N_tol, S never exceeds its value there."""
    g = comparison_grid((tr,))
    S, R = tr.state_at(g)
    N = S + R
    suffix = np.maximum.accumulate(S[::-1])[::-1]
    mask = N >= N_tol * (1 - 1e-9)
    if not mask.any():
        return Claim(f"L4a {name}", math.inf, None)
    rel = (S[mask] - suffix[mask]) / N[mask]
    i = int(np.argmin(rel))
    return Claim(f"L4a S_{name}(t)<=S_{name}(tbar)", float(rel[i]), float(g[mask][i]))


def _lemma_b(tr: Trajectory, level: float, name: str) -> Claim:
    """Containment: S non-increasing once N has reached the threshold."""
    g = comparison_grid((tr,))
    S, R = tr.state_at(g)
    N = S + R
    hit = np.nonzero(np.abs(N - level) <= 1e-9 * level)[0]
    if len(hit) == 0:
        return Claim(f"L4b {name}", math.inf, None)
    k = hit[0]
    dS = (S[k:-1] - S[k + 1:]) / N[k:-1]
    if len(dS) == 0:
        return Claim(f"L4b {name}", math.inf, None)
    i = int(np.argmin(dS))
    return Claim(f"L4b S_{name} non-increasing", float(dS[i]), float(g[k + i]))


# --------------------------------------------------------------------------
# reports


@dataclass
class ScenarioResult:
    suite: str
    index: int
    seed: int
    family: str
    margin: float
    locus: Optional[str]
    claims: int
    skipped: bool = False
    error: Optional[str] = None

    def record(self) -> str:
        return json.dumps({"suite": self.suite, "index": self.index, "seed": self.seed,
                           "family": self.family, "margin": _num(self.margin),
                           "locus": self.locus, "claims": self.claims,
                           "skipped": self.skipped, "error": self.error}, sort_keys=True)


def _num(x):
    return x if math.isfinite(x) else str(x)


@dataclass
class VerificationReport:
    prop_id: str
    scenarios_checked: int = 0
    failures: list = field(default_factory=list)  # (seed, margin, locus)
    min_margin: float = math.inf
    skipped: int = 0
    tol: float = DEFAULT_TOL
    note: str = ""
    results: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def add(self, r: ScenarioResult):
        self.results.append(r)
        if r.skipped:
            self.skipped += 1
            return
        self.scenarios_checked += 1
        self.min_margin = min(self.min_margin, r.margin)
        if r.error is not None or r.margin < -self.tol:
            self.failures.append((r.seed, r.margin, r.error or r.locus))

    def summary_line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"{self.prop_id:6s} {status}  checked={self.scenarios_checked:4d} "
                f"skipped={self.skipped:3d} failures={len(self.failures):3d} "
                f"min_margin={self.min_margin:+.3e}")


def evaluate_scenario(index: int, seed: int, suites: Sequence[str], family: Optional[str],
                      cfg: SuiteConfig) -> list[ScenarioResult]:
    s = scenario_seed(seed, index)
    sc = sample_scenario(s, family)
    run = ScenarioRun(sc, cfg)
    out = []
    for name in suites:
        try:
            claims = run.suite(name)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            out.append(ScenarioResult(name, index, s, sc.family, -math.inf, None, 0,
                                      error=f"{type(exc).__name__}: {exc}"))
            continue
        if claims is None:
            out.append(ScenarioResult(name, index, s, sc.family, math.inf, None, 0, skipped=True))
            continue
        worst = min(claims, key=lambda c: c.margin) if claims else None
        margin = worst.margin if worst else math.inf
        locus = None
        if worst is not None:
            locus = worst.label + (f" @ {worst.locus:.10g}" if worst.locus is not None else "")
        out.append(ScenarioResult(name, index, s, sc.family, margin, locus, len(claims)))
    return out


def run_suites(suites: Sequence[str], n: int, seed: int, family: Optional[str] = None,
               cfg: SuiteConfig = SuiteConfig(), workers: int = 1) -> dict[str, VerificationReport]:
    """Evaluate ``n`` seeded scenarios; results merge in scenario order."""
    for s in suites:
        if s not in SUITES:
            raise ConfigurationError(f"unknown suite {s!r}")
    job = partial(evaluate_scenario, seed=seed, suites=tuple(suites), family=family, cfg=cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, range(n)))
    else:
        results = [job(i) for i in range(n)]
    reports = {s: VerificationReport(s, tol=cfg.tol, note=SUITE_NOTES.get(s, ""))
               for s in suites}
    for rs in results:
        for r in rs:
            reports[r.suite].add(r)
    return reports


def check_proposition(prop_id: str, scenarios: Sequence[Scenario],
                      tol: float = DEFAULT_TOL, cfg: Optional[SuiteConfig] = None
                      ) -> VerificationReport:
    """Run one suite on given scenarios."""
    if prop_id not in SUITES:
        raise ConfigurationError(f"unknown suite {prop_id!r}")
    cfg = cfg or SuiteConfig(tol=tol)
    rep = VerificationReport(prop_id, tol=tol, note=SUITE_NOTES.get(prop_id, ""))
    for i, sc in enumerate(scenarios):
        claims = ScenarioRun(sc, cfg).suite(prop_id)
        if claims is None:
            rep.add(ScenarioResult(prop_id, i, sc.rng_seed, sc.family, math.inf, None, 0,
                                   skipped=True))
            continue
        worst = min(claims, key=lambda c: c.margin)
        rep.add(ScenarioResult(prop_id, i, sc.rng_seed, sc.family, worst.margin,
                               worst.label, len(claims)))
    return rep


# --------------------------------------------------------------------------
# comparison principles


@dataclass(frozen=True)
class CPInstance:
    """``u' = f(t, u)``, ``v' = f(t, v) - slack(t, v)``, ``v(t0) <= u(t0)``.

    ``knots`` are times (variant a: f changes piece there) or state values
    (variant b: f depends on x only and changes piece where x crosses a
    knot). ``f`` takes ``(t, x, piece)``.
    """

    case: str
    f: Callable
    slack: Callable
    u0: float
    v0: float
    T: float
    knots: tuple = ()
    seed: int = 0


def _std_f(t, x, piece, a, b, c, w, ph):
    return a * math.sin(w * t + ph) + b * math.cos(x) + c * x


def _std_slack(t, x, piece, s0, w):
    return s0 * (1.0 + math.sin(w * t + x)) ** 2


def _var_a_f(t, x, piece, amp, b, c):
    # the modulation phi(t) is a different smooth function on each piece
    p = amp[piece]
    return p[0] + p[1] * t + b * math.cos(x) * (1.0 + p[2] * math.sin(t)) + c * x


def _var_b_f(t, x, piece, base, amp):
    return base[piece] + amp[piece] * math.sin(x)


def _var_b_slack(t, x, piece, frac, base, amp):
    return frac * (base[piece] - abs(amp[piece]))


def sample_cp_instance(case: str, seed: int) -> CPInstance:
    rng = np.random.default_rng(seed)
    u0 = float(rng.uniform(-1.0, 1.0))
    gap = 0.0 if rng.uniform() < 0.2 else float(rng.uniform(0.0, 0.5))
    s0 = 0.0 if rng.uniform() < 0.2 else float(rng.uniform(0.0, 1.0))
    if case == "standard":
        f = partial(_std_f, a=float(rng.uniform(-2, 2)), b=float(rng.uniform(-2, 2)),
                    c=float(rng.uniform(-1, 1)), w=float(rng.uniform(0.5, 3)),
                    ph=float(rng.uniform(0, 6.3)))
        return CPInstance(case, f, partial(_std_slack, s0=s0, w=float(rng.uniform(0.5, 3))),
                          u0, u0 - gap, 5.0, (), seed)
    if case == "variant-a":
        n = int(rng.integers(1, 6))
        knots = tuple(sorted(float(x) for x in rng.uniform(0.2, 4.8, n)))
        amp = tuple(tuple(float(v) for v in rng.uniform(-2, 2, 3)) for _ in range(n + 1))
        f = partial(_var_a_f, amp=amp, b=float(rng.uniform(-2, 2)), c=float(rng.uniform(-1, 1)))
        return CPInstance(case, f, partial(_std_slack, s0=s0, w=float(rng.uniform(0.5, 3))),
                          u0, u0 - gap, 5.0, knots, seed)
    if case == "variant-b":
        n = int(rng.integers(1, 6))
        knots = tuple(sorted(float(x) for x in rng.uniform(u0 + 0.1, u0 + 6.0, n)))
        base = tuple(float(x) for x in rng.uniform(0.5, 3.0, n + 1))
        amp = tuple(float(b * rng.uniform(-0.9, 0.9)) for b in base)
        frac = 0.0 if s0 == 0.0 else float(rng.uniform(0.0, 0.9))
        return CPInstance(case, partial(_var_b_f, base=base, amp=amp),
                          partial(_var_b_slack, frac=frac, base=base, amp=amp),
                          u0, u0 - gap, 3.0, knots, seed)
    raise ConfigurationError(f"unknown comparison-principle case {case!r}")


_CP_CFG = IntegratorConfig(abs_tol=1e-12, rel_tol=1e-11, event_time_tol=1e-12)


def _piece_in_x(knots, x):
    return int(np.searchsorted(knots, x, side="right"))


def solve_cp(inst: CPInstance, sub: bool, cfg: IntegratorConfig = _CP_CFG) -> DenseTrack:
    """Integrate u (``sub=False``) or the subsolution v, piece by piece."""
    track = DenseTrack(1)
    t, x = 0.0, inst.v0 if sub else inst.u0
    f, slack = inst.f, inst.slack

    def rhs(piece):
        if sub:
            return lambda tt, y: (f(tt, y[0], piece) - slack(tt, y[0], piece),)
        return lambda tt, y: (f(tt, y[0], piece),)

    def rec(t0, h, t1, coef):
        track.add(t0, h, t1, coef)

    if inst.case == "variant-b":
        knots = np.asarray(inst.knots)
        while t < inst.T:
            piece = _piece_in_x(knots, x)
            fun = rhs(piece)
            if not fun(t, (x,))[0] > 0:
                raise ContractViolation("variant b needs strictly increasing solutions")
            evs = [Event(lambda tt, y, k=float(knots[piece]): y[0] - k, +1)] \
                if piece < len(knots) else []
            stop = integrate(fun, t, (x,), inst.T, cfg, evs, record=rec)
            t, x = stop.t, stop.y[0]
            if stop.event is not None:
                x = max(x, float(knots[piece]))
        _check_increasing(track)
        return track
    bounds = [0.0] + [k for k in inst.knots if 0 < k < inst.T] + [inst.T]
    for piece, (a, b) in enumerate(zip(bounds, bounds[1:])):
        stop = integrate(rhs(piece), a, (x,), b, cfg, record=rec)
        x = stop.y[0]
    return track


def _check_increasing(track: DenseTrack):
    a = track.array
    ends = a[:, 3] + a[:, 3 + 1]  # c1 + c2 at s = 1
    starts = a[:, 3]
    if np.any(ends <= starts):
        raise ContractViolation("variant b needs strictly increasing solutions")


def compare_instance(inst: CPInstance) -> Claim:
    """Worst slack of ``v <= u`` on ``[0, T]`` (scaled by ``max(1, |u|, |v|)``)."""
    if inst.v0 > inst.u0:
        raise ContractViolation("comparison needs v(t0) <= u(t0)")
    u = solve_cp(inst, sub=False)
    v = solve_cp(inst, sub=True)
    frac = np.linspace(0, 1, 6)
    pts = [np.array([0.0, inst.T])]
    for tr in (u, v):
        pts.append((tr.t0[:, None] + (tr.t1 - tr.t0)[:, None] * frac).ravel())
    g = np.unique(np.concatenate(pts))
    uu, vv = u(g)[:, 0], v(g)[:, 0]
    rel = (uu - vv) / np.maximum(1.0, np.maximum(np.abs(uu), np.abs(vv)))
    i = int(np.argmin(rel))
    return Claim(f"{inst.case} seed={inst.seed} v<=u", float(rel[i]), float(g[i]))


def check_comparison_principle(case: str, instances, tol: float = 1e-9) -> VerificationReport:
    """Check ``v <= u + tol`` on one instance or a list of them."""
    if isinstance(instances, CPInstance):
        instances = [instances]
    rep = VerificationReport(f"cp-{case}", tol=tol)
    for i, inst in enumerate(instances):
        if inst.case != case:
            raise ConfigurationError("instance was built for another case")
        c = compare_instance(inst)
        rep.add(ScenarioResult(rep.prop_id, i, inst.seed, case, c.margin,
                               c.label + (f" @ {c.locus:.10g}" if c.locus is not None else ""), 1))
    return rep


def run_cp_suite(n: int, seed: int, tol: float = 1e-9) -> dict[str, VerificationReport]:
    out = {}
    for k, case in enumerate(("standard", "variant-a", "variant-b")):
        insts = [sample_cp_instance(case, scenario_seed(seed, 10_000 * (k + 1) + i))
                 for i in range(n)]
        out[case] = check_comparison_principle(case, insts, tol)
    return out
