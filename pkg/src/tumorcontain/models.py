"""Growth laws and two-compartment tumor models.

All models are written in terms of absolute growth rates
``phi_S(S, R, L)`` and ``phi_R(S, R)``; the equivalent
``(f_N, f_R)`` form used by the R-N plane analysis is obtained by summing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class DomainError(ValueError):
    """Argument outside the mathematical domain of a formula."""


class ContractViolation(ValueError):
    """Caller broke a documented precondition."""


class ConfigurationError(ValueError):
    """Invalid sampling / grid / scenario configuration."""


GROWTH_KINDS = ("gompertz", "powerlaw", "logistic")


@dataclass(frozen=True)
class GrowthLaw:
    """Per-cell growth rate ``g(N)`` of a tumor of total size ``N``.

    ``kind`` is one of ``gompertz`` (rho*ln(K/N)), ``powerlaw``
    (rho*N**-gamma) or ``logistic`` (rho*(1 - N/K)).
    """

    kind: str
    rho: float
    K: float = math.inf
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in GROWTH_KINDS:
            raise ConfigurationError(f"unknown growth law {self.kind!r}")
        if not self.rho > 0:
            raise DomainError("rho must be positive")
        if self.kind == "powerlaw":
            if not 0 < self.gamma < 1:
                raise DomainError("gamma must lie in (0, 1)")
        elif not (self.K > 0 and math.isfinite(self.K)):
            raise DomainError("K must be positive and finite")

    def shape(self, N: float) -> float:
        """Rate without the ``rho`` prefactor."""
        if self.kind == "gompertz":
            return math.log(self.K / N)
        if self.kind == "powerlaw":
            return N ** -self.gamma
        return 1.0 - N / self.K

    def __call__(self, N: float) -> float:
        return self.rho * self.shape(N)

    def derivative(self, N: float) -> float:
        if self.kind == "gompertz":
            return -self.rho / N
        if self.kind == "powerlaw":
            return -self.gamma * self.rho * N ** (-self.gamma - 1.0)
        return -self.rho / self.K

    def neg_elasticity(self, N: float) -> float:
        """``-g(N) / (N g'(N))`` in closed form."""
        if self.kind == "gompertz":
            return math.log(self.K / N)
        if self.kind == "powerlaw":
            return 1.0 / self.gamma
        return self.K / N - 1.0


def growth_rate(law: GrowthLaw, N: float) -> float:
    N = float(N)
    if not math.isfinite(N):
        raise DomainError(f"non-finite tumor size {N!r}")
    if N <= 0:
        raise DomainError("tumor size must be positive")
    return law(N)


# --------------------------------------------------------------------------
# tumor models


@dataclass(frozen=True)
class TumorModel:
    L_max: float
    N_crit: float

    variant = "abstract"

    def rates(self, S: float, R: float, L: float) -> tuple[float, float]:
        raise NotImplementedError

    def fN(self, N: float, R: float, L: float) -> float:
        phi_S, phi_R = self.rates(N - R, R, L)
        return phi_S + phi_R

    def fR(self, N: float, R: float) -> float:
        return self.rates(N - R, R, 0.0)[1]

    def _check_common(self):
        if not self.L_max >= 0:
            raise DomainError("L_max must be non-negative")
        if not self.N_crit > 0:
            raise DomainError("N_crit must be positive")


@dataclass(frozen=True)
class GeneralModel(TumorModel):
    """Arbitrary user-supplied absolute growth rates."""

    phi_S: Callable[[float, float, float], float] = field(default=None, compare=False)
    phi_R: Callable[[float, float], float] = field(default=None, compare=False)

    variant = "general"

    def __post_init__(self):
        self._check_common()
        if self.phi_S is None or self.phi_R is None:
            raise ConfigurationError("general model needs phi_S and phi_R")

    def rates(self, S, R, L):
        return self.phi_S(S, R, L), self.phi_R(S, R)


@dataclass(frozen=True)
class NortonSimon(TumorModel):
    """``dS/dt = g(N)(1-L)S``, ``dR/dt = g(N)R``."""

    law: GrowthLaw = None

    variant = "norton_simon"

    def __post_init__(self):
        self._check_common()
        if self.law is None:
            raise ConfigurationError("norton-simon model needs a growth law")

    def rates(self, S, R, L):
        g = self.law(S + R)
        return g * (1.0 - L) * S, g * R

    def fR(self, N, R):
        return self.law(N) * R


@dataclass(frozen=True)
class MonroGaffney(NortonSimon):
    """Gompertzian Norton-Simon model without mutations."""

    variant = "monro_gaffney"

    def __post_init__(self):
        super().__post_init__()
        if self.law.kind != "gompertz":
            raise ConfigurationError("Monro-Gaffney model requires a Gompertz law")


@dataclass(frozen=True)
class BirthDeath(TumorModel):
    """Birth-death model with a Norton-Simon kill on the birth term.

    ``dS/dt = S[b(N)(1-L) - d(N)]``, ``dR/dt = R[b(N) - d(N)]``.
    ``from_law`` builds the serializable form ``b = g + death``, ``d = death``.
    """

    birth: Callable[[float], float] = field(default=None, compare=False)
    death: Callable[[float], float] = field(default=None, compare=False)
    law: Optional[GrowthLaw] = None
    death_rate: Optional[float] = None

    variant = "birth_death"

    def __post_init__(self):
        self._check_common()
        if self.birth is None or self.death is None:
            raise ConfigurationError("birth-death model needs birth and death rates")

    @classmethod
    def from_law(cls, law: GrowthLaw, death_rate: float, L_max: float, N_crit: float):
        if death_rate < 0:
            raise DomainError("death rate must be non-negative")
        d = float(death_rate)
        return cls(L_max=L_max, N_crit=N_crit,
                   birth=lambda N: law(N) + d, death=lambda N: d,
                   law=law, death_rate=d)

    def rates(self, S, R, L):
        N = S + R
        b, d = self.birth(N), self.death(N)
        return S * (b * (1.0 - L) - d), R * (b - d)


@dataclass(frozen=True)
class Mutation(TumorModel):
    """Norton-Simon model with mutation (tau1) and back-mutation (tau2)."""

    law: GrowthLaw = None
    tau1: float = 0.0
    tau2: float = 0.0

    variant = "mutation"

    def __post_init__(self):
        self._check_common()
        if self.law is None:
            raise ConfigurationError("mutation model needs a growth law")
        _check_tau(self.tau1, self.tau2)

    def rates(self, S, R, L):
        g = self.law(S + R)
        phi_S = g * (1.0 - L) * S - self.tau1 * g * S + self.tau2 * g * R
        phi_R = g * R + self.tau1 * g * S - self.tau2 * g * R
        return phi_S, phi_R


@dataclass(frozen=True)
class CostMutation(TumorModel):
    """Mutation model with distinct baseline rates for each cell type.

    Rates are ``rho_s * shape(N)`` and ``rho_r * shape(N)`` where ``shape``
    is the law without its own ``rho``. Mutation flux S -> R is
    ``tau1 * rho_s * shape * S`` in both equations, so it is conserved.
    """

    law: GrowthLaw = None
    rho_s: float = 1.0
    rho_r: float = 1.0
    tau1: float = 0.0
    tau2: float = 0.0

    variant = "cost_mutation"

    def __post_init__(self):
        self._check_common()
        if self.law is None:
            raise ConfigurationError("cost-mutation model needs a growth law")
        if not (self.rho_s > 0 and self.rho_r > 0):
            raise DomainError("rho_s and rho_r must be positive")
        _check_tau(self.tau1, self.tau2)

    def rates(self, S, R, L):
        h = self.law.shape(S + R)
        gs, gr = self.rho_s * h, self.rho_r * h
        phi_S = gs * (1.0 - L) * S - self.tau1 * gs * S + self.tau2 * gr * R
        phi_R = gr * R + self.tau1 * gs * S - self.tau2 * gr * R
        return phi_S, phi_R


TAU_BOUND = 0.01


def _check_tau(tau1, tau2):
    for name, tau in (("tau1", tau1), ("tau2", tau2)):
        if not 0 <= tau < TAU_BOUND:
            raise DomainError(f"{name} must lie in [0, {TAU_BOUND})")


def eval_rates(model: TumorModel, S: float, R: float, L: float) -> tuple[float, float]:
    if S < 0 or R < 0:
        raise ContractViolation("populations must be non-negative")
    if L < 0 or L > model.L_max:
        raise ContractViolation(f"dose {L} outside [0, {model.L_max}]")
    return model.rates(S, R, L)


def eval_fN_fR(model: TumorModel, N: float, R: float, L: float) -> tuple[float, float]:
    if R > N:
        raise ContractViolation("resistant count exceeds tumor size")
    if R < 0:
        raise ContractViolation("populations must be non-negative")
    phi_S, phi_R = model.rates(N - R, R, L)
    return phi_S + phi_R, phi_R


# --------------------------------------------------------------------------
# assumption checks

ASSUMPTIONS = {
    "i": "f_N(N, R, 0) > 0",
    "ii": "f_R(N, R) > 0",
    "iii": "f_R non-increasing in N",
    "iv": "f_N non-increasing in L",
}


@dataclass
class AssumptionReport:
    grid_size: int
    violations: list = field(default_factory=list)
    margins: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def failing(self) -> list[str]:
        return sorted({v[0] for v in self.violations})


@dataclass(frozen=True)
class Grid:
    """Sampling of ``R0 <= R <= N <= N_max`` and ``0 <= L <= L_max``."""

    n_N: int = 24
    n_R: int = 24
    n_L: int = 6
    N_max: Optional[float] = None


FD_NOISE = 1e-9


def _fd_step(x: float) -> float:
    return 1e-6 * max(abs(x), 1.0)


def check_model_assumptions(model: TumorModel, R0: float, grid: Grid = Grid(),
                            max_violations: int = 50) -> AssumptionReport:
    """Sample the domain and record where the structural assumptions fail.

    Margins are normalised slacks: rates are divided by
    ``max(|f_N(N, R, 0)|, |f_R(N, R)|)`` at the sample (the N-derivative in
    (iii) is first multiplied by N), so that cell counts spanning many
    decades compare on one scale.
    """
    if min(grid.n_N, grid.n_R, grid.n_L) < 2:
        raise ConfigurationError("grid needs at least 2 distinct values per axis")
    N_max = grid.N_max if grid.N_max is not None else model.N_crit
    if not R0 > 0 or N_max <= R0:
        raise ConfigurationError("need 0 < R0 < N_max")
    Ns = np.geomspace(R0, N_max, grid.n_N)
    Ls = np.linspace(0.0, model.L_max, grid.n_L)
    report = AssumptionReport(grid_size=0)
    margins = {k: math.inf for k in ASSUMPTIONS}
    count = 0

    def record(key, N, R, L, slack, value):
        # finite differences of exactly flat directions leave rounding noise
        if key in ("iii", "iv") and -FD_NOISE <= slack < 0:
            slack = 0.0
        if slack < margins[key]:
            margins[key] = slack
        if slack < 0 and len(report.violations) < max_violations:
            report.violations.append((key, (N, R, L), value))

    for N in Ns:
        N = float(N)
        for R in np.geomspace(R0, N, grid.n_R):
            R = float(min(R, N))
            fN0 = model.fN(N, R, 0.0)
            fR = model.fR(N, R)
            scale = max(abs(fN0), abs(fR), 1e-300)
            record("i", N, R, 0.0, fN0 / scale, fN0)
            record("ii", N, R, 0.0, fR / scale, fR)
            hN = _fd_step(N)
            lo, hi = max(N - hN, R), N + hN
            dfR = (model.fR(hi, R) - model.fR(lo, R)) / (hi - lo)
            record("iii", N, R, 0.0, -dfR * N / scale, dfR)
            for L in Ls:
                L = float(L)
                count += 1
                hL = _fd_step(L)
                a, b = max(L - hL, 0.0), min(L + hL, model.L_max)
                if b > a:
                    dfN = (model.fN(N, R, b) - model.fN(N, R, a)) / (b - a)
                    record("iv", N, R, L, -dfN / scale, dfN)
    report.grid_size = count
    report.margins = margins
    return report


# --------------------------------------------------------------------------
# mutation compatibility


def resistant_fraction_at_detection(tau1: float, tau2: float, N0: float,
                                    cost_ratio: Optional[float] = None) -> float:
    if cost_ratio is not None:
        if not 0 < cost_ratio < 1:
            raise DomainError("cost ratio rho_r/rho_s must lie in (0, 1)")
        return tau1 / (1.0 - cost_ratio)
    if not tau1 > 0 or tau2 < 0:
        raise DomainError("need tau1 > 0 and tau2 >= 0")
    if N0 < 1:
        raise DomainError("N0 must be at least one cell")
    s = tau1 + tau2
    # -expm1(-s ln N0) = 1 - N0**-s without cancellation
    return tau1 / s * -math.expm1(-s * math.log(N0))


@dataclass
class MutationCompatibilityReport:
    lhs: float
    rhs: float
    satisfied: bool
    resistant_fraction_x_r: float
    variant: str
    approximate_rhs: bool = False

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


def _neg_elasticity(law: GrowthLaw, N0: float) -> tuple[float, bool]:
    if law.kind in GROWTH_KINDS:
        return law.neg_elasticity(N0), False
    h = _fd_step(N0)
    dg = (law(N0 + h) - law(N0 - h)) / (2 * h)
    return -law(N0) / (N0 * dg), True


def mutation_compatibility(model: TumorModel, N0: float) -> MutationCompatibilityReport:
    """Whether sensitive cells inhibit resistant growth more than they feed it."""
    if N0 <= 1:
        raise DomainError("N0 must exceed one cell")
    if isinstance(model, CostMutation):
        ratio = model.rho_r / model.rho_s
        if ratio >= 1:
            raise DomainError("cost variant requires rho_r < rho_s")
        lhs = 1.0 / (1.0 - ratio)
        x_r = resistant_fraction_at_detection(model.tau1, model.tau2, N0, ratio) \
            if model.tau1 > 0 else 0.0
        variant = "cost"
    elif isinstance(model, Mutation):
        lhs = math.log(N0) + 1.0
        x_r = resistant_fraction_at_detection(model.tau1, model.tau2, N0) \
            if model.tau1 > 0 else 0.0
        variant = "no-cost"
    else:
        raise ContractViolation("mutation compatibility needs a mutation model")
    rhs, approx = _neg_elasticity(model.law, N0)
    return MutationCompatibilityReport(lhs=lhs, rhs=rhs, satisfied=lhs >= rhs,
                                       resistant_fraction_x_r=min(max(x_r, 0.0), 1.0),
                                       variant=variant, approximate_rhs=approx)


def cost_ratio_threshold(law: GrowthLaw, N0: float) -> float:
    """Smallest ``rho_r/rho_s`` for which the cost-variant condition holds."""
    return 1.0 - 1.0 / law.neg_elasticity(N0)


# --------------------------------------------------------------------------
# configuration round trip

MODEL_KEYS = ("variant", "law", "rho", "K", "gamma", "tau1", "tau2",
              "rho_s", "rho_r", "death", "L_max", "N_crit")


def model_to_config(model: TumorModel) -> dict:
    if isinstance(model, GeneralModel):
        raise ConfigurationError("general models hold arbitrary callables and cannot be serialized")
    if isinstance(model, BirthDeath) and model.law is None:
        raise ConfigurationError("only birth-death models built with from_law serialize")
    out = {"variant": model.variant, "L_max": model.L_max, "N_crit": model.N_crit}
    law = model.law
    out["law"] = law.kind
    out["rho"] = law.rho
    if law.kind == "powerlaw":
        out["gamma"] = law.gamma
    else:
        out["K"] = law.K
    if isinstance(model, (Mutation, CostMutation)):
        out["tau1"], out["tau2"] = model.tau1, model.tau2
    if isinstance(model, CostMutation):
        out["rho_s"], out["rho_r"] = model.rho_s, model.rho_r
    if isinstance(model, BirthDeath):
        out["death"] = model.death_rate
    return out


def model_from_config(cfg: dict) -> TumorModel:
    unknown = set(cfg) - set(MODEL_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown model key(s): {', '.join(sorted(unknown))}")
    try:
        variant = cfg["variant"]
        L_max, N_crit = float(cfg["L_max"]), float(cfg["N_crit"])
    except KeyError as exc:
        raise ConfigurationError(f"missing model key {exc.args[0]!r}") from None
    kind = cfg.get("law", "gompertz")
    law = GrowthLaw(kind=kind, rho=float(cfg.get("rho", 1.0)),
                    K=float(cfg.get("K", math.inf)) if kind != "powerlaw" else math.inf,
                    gamma=float(cfg.get("gamma", 0.0)))
    common = dict(L_max=L_max, N_crit=N_crit)
    if variant == "monro_gaffney":
        return MonroGaffney(law=law, **common)
    if variant == "norton_simon":
        return NortonSimon(law=law, **common)
    if variant == "mutation":
        return Mutation(law=law, tau1=float(cfg.get("tau1", 0.0)),
                        tau2=float(cfg.get("tau2", 0.0)), **common)
    if variant == "cost_mutation":
        return CostMutation(law=law, rho_s=float(cfg["rho_s"]), rho_r=float(cfg["rho_r"]),
                            tau1=float(cfg.get("tau1", 0.0)),
                            tau2=float(cfg.get("tau2", 0.0)), **common)
    if variant == "birth_death":
        return BirthDeath.from_law(law, float(cfg.get("death", 0.0)), L_max, N_crit)
    raise ConfigurationError(f"unknown model variant {variant!r}")
