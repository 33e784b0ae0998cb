"""Treatment policies as explicit phase machines.

A policy never integrates anything itself. For each phase it declares

* a :class:`Mode` -- free dynamics at a constant dose, tumor size held at
  a level (stabilization), or sensitive cells extinct;
* a list of :class:`Watch` conditions on ``(N, R, t)`` whose first
  crossing ends the phase;
* a transition for each watch, possibly with an idealized
  :class:`ResetAction`.

The time-domain simulator and the R-N plane integrator both drive the same
machine, which is what makes their outputs comparable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .models import ContractViolation, ConfigurationError, TumorModel


class Phase(NamedTuple):
    name: str
    piece: int = 0


class Mode(NamedTuple):
    kind: str  # "free" | "hold" | "extinct"
    dose: float = 0.0
    level: float = math.nan


class Watch(NamedTuple):
    """Condition ``g(N, R, t)`` crossing zero in ``direction``.

    kinds: ``N`` (N - level), ``R`` (R - level), ``t`` (t - level),
    ``fN`` (f_N(N, R, dose)).
    """

    event: str
    kind: str
    level: float
    direction: int
    dose: float = 0.0


class ResetAction(NamedTuple):
    kind: str  # "eliminate_sensitive" | "drop_to"
    level: float = math.nan


ELIMINATE = ResetAction("eliminate_sensitive")


@dataclass(frozen=True)
class Thresholds:
    N0: float
    N_tol: float
    N_min: Optional[float] = None
    N_crit: Optional[float] = None

    def __post_init__(self):
        if not self.N_tol >= self.N0:
            raise ConfigurationError("need N_tol >= N0")
        if self.N_min is not None and not 0 < self.N_min < self.N_tol:
            raise ConfigurationError("need 0 < N_min < N_tol")
        if self.N_crit is not None and not self.N_crit >= self.N_tol:
            raise ConfigurationError("need N_crit >= N_tol")


@dataclass(frozen=True)
class Context:
    model: TumorModel
    thresholds: Thresholds

    @property
    def L_max(self) -> float:
        return self.model.L_max

    @property
    def N_tol(self) -> float:
        return self.thresholds.N_tol


class Stabilization(NamedTuple):
    dose: float
    saturated: bool


def stabilizing_dose(model: TumorModel, N: float, R: float,
                     rel_tol: float = 1e-9) -> Stabilization:
    """Dose zeroing ``dN/dt`` at ``(N, R)``, by bisection on ``[0, L_max]``.

    Relies on ``f_N`` being non-increasing in the dose. When even ``L_max``
    leaves ``f_N > 0`` the result is flagged as saturated (dose ``L_max``).
    """
    if R >= N:
        raise ContractViolation("no sensitive cells left: tumor size cannot be held")
    L_max = model.L_max
    target = rel_tol * abs(model.fR(N, R))
    if model.fN(N, R, L_max) > target:
        return Stabilization(L_max, True)
    lo, hi = 0.0, L_max
    if model.fN(N, R, lo) <= 0:
        return Stabilization(0.0, False)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = model.fN(N, R, mid)
        if abs(v) <= target:
            return Stabilization(mid, False)
        if v > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return Stabilization(0.5 * (lo + hi), False)


def _at(level: float, x: float) -> bool:
    return abs(x - level) <= 1e-12 * abs(level)


class Policy:
    """Base class; subclasses are frozen dataclasses."""

    override = True  # L_max whenever N > N_tol
    idealized = False
    label = "policy"

    def start(self, ctx: Context, N: float, R: float, t: float):
        raise NotImplementedError

    def mode(self, phase: Phase, ctx: Context) -> Mode:
        raise NotImplementedError

    def watches(self, phase: Phase, ctx: Context) -> list[Watch]:
        return []

    def transition(self, phase: Phase, event: str, ctx: Context, N, R, t):
        raise ContractViolation(f"{type(self).__name__} in phase {phase.name!r} "
                                f"does not handle event {event!r}")

    def dose(self, phase: Phase, ctx: Context, N: float, R: float, t: float) -> float:
        mode = self.mode(phase, ctx)
        if mode.kind == "hold":
            L = stabilizing_dose(ctx.model, mode.level, R).dose if R < mode.level else ctx.L_max
        elif mode.kind == "extinct":
            L = ctx.L_max
        else:
            L = mode.dose
        if self.override and N > ctx.N_tol * (1 + 1e-9):
            L = ctx.L_max
        return min(max(L, 0.0), ctx.L_max)


def _single(name="treat"):
    return Phase(name), None


@dataclass(frozen=True)
class NoTreat(Policy):
    override = False
    label = "noTreat"

    def start(self, ctx, N, R, t):
        return _single("untreated")

    def mode(self, phase, ctx):
        return Mode("free", 0.0)


@dataclass(frozen=True)
class ConstantDose(Policy):
    """Fixed dose; never escalated to L_max."""

    level: float = 0.0
    override = False

    @property
    def label(self):
        return f"const{self.level:g}"

    def start(self, ctx, N, R, t):
        if not 0 <= self.level <= ctx.L_max:
            raise ContractViolation(f"dose {self.level} outside [0, L_max]")
        return _single("constant")

    def mode(self, phase, ctx):
        return Mode("free", self.level)


@dataclass(frozen=True)
class MTD(Policy):
    label = "MTD"

    def start(self, ctx, N, R, t):
        return _single("treat")

    def mode(self, phase, ctx):
        return Mode("free", ctx.L_max)


@dataclass(frozen=True)
class DelayedDose(Policy):
    """No treatment until ``N`` reaches ``start_size``, then ``level`` forever."""

    level: float = 0.0
    start_size: float = 0.0
    override = False

    @property
    def label(self):
        return f"delayed{self.level:g}"

    def start(self, ctx, N, R, t):
        return Phase("growth" if N < self.start_size and not _at(self.start_size, N)
                     else "treat"), None

    def mode(self, phase, ctx):
        return Mode("free", 0.0 if phase.name == "growth" else self.level)

    def watches(self, phase, ctx):
        if phase.name == "growth":
            return [Watch("reached_start", "N", self.start_size, +1)]
        return []

    def transition(self, phase, event, ctx, N, R, t):
        if phase.name == "growth" and event == "reached_start":
            return Phase("treat"), None
        return super().transition(phase, event, ctx, N, R, t)


@dataclass(frozen=True)
class DelayedMTD(Policy):
    label = "delMTD"

    def _inner(self, ctx):
        return DelayedDose(ctx.L_max, ctx.N_tol)

    def start(self, ctx, N, R, t):
        return self._inner(ctx).start(ctx, N, R, t)

    def mode(self, phase, ctx):
        return self._inner(ctx).mode(phase, ctx)

    def watches(self, phase, ctx):
        return self._inner(ctx).watches(phase, ctx)

    def transition(self, phase, event, ctx, N, R, t):
        return self._inner(ctx).transition(phase, event, ctx, N, R, t)


@dataclass(frozen=True)
class Containment(Policy):
    """Grow to ``threshold``, hold tumor size there while a tolerated dose can."""

    threshold: Optional[float] = None

    @property
    def label(self):
        return "Cont" if self.threshold is None else f"Cont@{self.threshold:.6g}"

    def level(self, ctx):
        return ctx.N_tol if self.threshold is None else self.threshold

    def _enter_hold(self, ctx, R):
        thr = self.level(ctx)
        if R >= thr or ctx.model.fN(thr, R, ctx.L_max) > 0:
            return Phase("post_failure"), None
        return Phase("stabilize"), None

    def start(self, ctx, N, R, t):
        thr = self.level(ctx)
        if _at(thr, N):
            return self._enter_hold(ctx, R)
        return Phase("growth" if N < thr else "post_failure"), None

    def mode(self, phase, ctx):
        if phase.name == "stabilize":
            return Mode("hold", level=self.level(ctx))
        return Mode("free", 0.0 if phase.name == "growth" else ctx.L_max)

    def watches(self, phase, ctx):
        thr = self.level(ctx)
        if phase.name == "growth":
            return [Watch("reached_threshold", "N", thr, +1)]
        if phase.name == "stabilize":
            return [Watch("dose_saturated", "fN", thr, +1, dose=ctx.L_max),
                    Watch("sensitive_extinct", "R", thr, +1)]
        return [Watch("returned_threshold", "N", thr, -1)]

    def transition(self, phase, event, ctx, N, R, t):
        if phase.name == "growth" and event == "reached_threshold":
            return self._enter_hold(ctx, R)
        if phase.name == "stabilize" and event in ("dose_saturated", "sensitive_extinct"):
            return Phase("post_failure"), None
        if phase.name == "post_failure" and event == "returned_threshold":
            return self._enter_hold(ctx, R)
        return super().transition(phase, event, ctx, N, R, t)


@dataclass(frozen=True)
class Intermittent(Policy):
    """L_max from N_tol down to N_min, no treatment from N_min up to N_tol."""

    N_min: Optional[float] = None
    N_tol: Optional[float] = None
    label = "Int"

    def bounds(self, ctx):
        lo = self.N_min if self.N_min is not None else ctx.thresholds.N_min
        hi = self.N_tol if self.N_tol is not None else ctx.N_tol
        if lo is None or not 0 < lo < hi:
            raise ConfigurationError("intermittent policy needs 0 < N_min < N_tol")
        return lo, hi

    def start(self, ctx, N, R, t):
        lo, hi = self.bounds(ctx)
        return Phase("growth" if N < hi and not _at(hi, N) else "treat"), None

    def mode(self, phase, ctx):
        return Mode("free", ctx.L_max if phase.name == "treat" else 0.0)

    def watches(self, phase, ctx):
        lo, hi = self.bounds(ctx)
        if phase.name == "treat":
            return [Watch("reached_Nmin", "N", lo, -1)]
        return [Watch("reached_Ntol", "N", hi, +1)]

    def transition(self, phase, event, ctx, N, R, t):
        if phase.name in ("growth", "vacation") and event == "reached_Ntol":
            return Phase("treat"), None
        if phase.name == "treat" and event == "reached_Nmin":
            return Phase("vacation"), None
        return super().transition(phase, event, ctx, N, R, t)


@dataclass(frozen=True)
class IdealMTD(Policy):
    idealized = True
    label = "idMTD"

    def start(self, ctx, N, R, t):
        return Phase("extinct"), ELIMINATE

    def mode(self, phase, ctx):
        return Mode("extinct")


@dataclass(frozen=True)
class DelayedIdealMTD(Policy):
    idealized = True
    label = "del-idMTD"

    def start(self, ctx, N, R, t):
        if N < ctx.N_tol and not _at(ctx.N_tol, N):
            return Phase("growth"), None
        return Phase("extinct"), ELIMINATE

    def mode(self, phase, ctx):
        return Mode("free", 0.0) if phase.name == "growth" else Mode("extinct")

    def watches(self, phase, ctx):
        if phase.name == "growth":
            return [Watch("reached_Ntol", "N", ctx.N_tol, +1)]
        return []

    def transition(self, phase, event, ctx, N, R, t):
        if phase.name == "growth" and event == "reached_Ntol":
            return Phase("extinct"), ELIMINATE
        return super().transition(phase, event, ctx, N, R, t)


@dataclass(frozen=True)
class IdealContainment(Policy):
    """Hold tumor size at ``threshold`` for as long as sensitive cells remain."""

    threshold: Optional[float] = None
    idealized = True

    @property
    def label(self):
        return "idCont" if self.threshold is None else f"idCont@{self.threshold:.6g}"

    def level(self, ctx):
        return ctx.N_tol if self.threshold is None else self.threshold

    def _enter(self, ctx, R):
        thr = self.level(ctx)
        if R >= thr:
            return Phase("extinct"), ELIMINATE
        return Phase("hold"), None

    def start(self, ctx, N, R, t):
        thr = self.level(ctx)
        if N < thr and not _at(thr, N):
            return Phase("growth"), None
        if R >= thr:
            return Phase("extinct"), ELIMINATE
        if _at(thr, N):
            return Phase("hold"), None
        return Phase("hold"), ResetAction("drop_to", thr)

    def mode(self, phase, ctx):
        if phase.name == "growth":
            return Mode("free", 0.0)
        if phase.name == "hold":
            return Mode("hold", level=self.level(ctx))
        return Mode("extinct")

    def watches(self, phase, ctx):
        thr = self.level(ctx)
        if phase.name == "growth":
            return [Watch("reached_threshold", "N", thr, +1)]
        if phase.name == "hold":
            return [Watch("sensitive_extinct", "R", thr, +1)]
        return []

    def transition(self, phase, event, ctx, N, R, t):
        if phase.name == "growth" and event == "reached_threshold":
            return self._enter(ctx, R)
        if phase.name == "hold" and event == "sensitive_extinct":
            return Phase("extinct"), ELIMINATE
        return super().transition(phase, event, ctx, N, R, t)


@dataclass(frozen=True)
class IdealIntermittent(Policy):
    """Each time N reaches N_tol it drops instantly to max(N_min, R)."""

    N_min: Optional[float] = None
    N_tol: Optional[float] = None
    idealized = True
    label = "idInt"

    bounds = Intermittent.bounds

    def _drop(self, ctx, R):
        lo, _ = self.bounds(ctx)
        if R >= lo:
            return Phase("extinct"), ResetAction("drop_to", lo)
        return Phase("vacation"), ResetAction("drop_to", lo)

    def start(self, ctx, N, R, t):
        lo, hi = self.bounds(ctx)
        if N < hi and not _at(hi, N):
            return Phase("growth"), None
        return self._drop(ctx, R)

    def mode(self, phase, ctx):
        return Mode("extinct") if phase.name == "extinct" else Mode("free", 0.0)

    def watches(self, phase, ctx):
        if phase.name == "extinct":
            return []
        return [Watch("reached_Ntol", "N", self.bounds(ctx)[1], +1)]

    def transition(self, phase, event, ctx, N, R, t):
        if phase.name in ("growth", "vacation") and event == "reached_Ntol":
            return self._drop(ctx, R)
        return super().transition(phase, event, ctx, N, R, t)


@dataclass(frozen=True)
class Alternative(Policy):
    """Piecewise-constant dose schedule ``((t_start, L), ...)``.

    With ``feedback_override`` the dose is L_max whenever N > N_tol; when
    neither the scheduled dose nor L_max leaves N at N_tol, the trajectory
    slides along N = N_tol at the dose that holds it there.
    ``eliminate_at`` makes the schedule idealized: sensitive cells are
    removed at that time or when N first reaches N_tol, whichever comes
    first, so the treatment always eliminates them before failing.
    """

    schedule: tuple = ((0.0, 0.0),)
    feedback_override: bool = True
    eliminate_at: Optional[float] = None
    name: str = "alt"

    def __post_init__(self):
        sched = tuple((float(a), float(b)) for a, b in self.schedule)
        if not sched or sched[0][0] > 0:
            sched = ((0.0, 0.0),) + sched
        times = [a for a, _ in sched]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("schedule breakpoints must be strictly increasing")
        object.__setattr__(self, "schedule", sched)

    @property
    def override(self):
        return self.feedback_override

    @property
    def idealized(self):
        return self.eliminate_at is not None

    @property
    def label(self):
        return self.name

    def level_at(self, piece: int) -> float:
        return self.schedule[piece][1]

    def start(self, ctx, N, R, t):
        for _, L in self.schedule:
            if not 0 <= L <= ctx.L_max:
                raise ContractViolation(f"scheduled dose {L} outside [0, L_max]")
        piece = 0
        while piece + 1 < len(self.schedule) and self.schedule[piece + 1][0] <= t:
            piece += 1
        if self.idealized and (self.eliminate_at <= t or N >= ctx.N_tol):
            return Phase("extinct", piece), ELIMINATE
        if self.feedback_override and N > ctx.N_tol:
            return Phase("override", piece), None
        return Phase("scheduled", piece), None

    def mode(self, phase, ctx):
        if phase.name == "extinct":
            return Mode("extinct")
        if phase.name == "sliding":
            return Mode("hold", level=ctx.N_tol)
        if phase.name == "override":
            return Mode("free", ctx.L_max)
        return Mode("free", self.level_at(phase.piece))

    def watches(self, phase, ctx):
        if phase.name == "extinct":
            return []
        out = []
        if phase.piece + 1 < len(self.schedule):
            out.append(Watch("breakpoint", "t", self.schedule[phase.piece + 1][0], +1))
        if self.idealized:
            out.append(Watch("eliminate_time", "t", self.eliminate_at, +1))
        if phase.name == "scheduled" and (self.feedback_override or self.idealized):
            out.append(Watch("reached_Ntol", "N", ctx.N_tol, +1))
        elif phase.name == "override":
            out.append(Watch("returned_Ntol", "N", ctx.N_tol, -1))
        elif phase.name == "sliding":
            out.append(Watch("dose_saturated", "fN", ctx.N_tol, +1, dose=ctx.L_max))
            out.append(Watch("schedule_suffices", "fN", ctx.N_tol, -1,
                             dose=self.level_at(phase.piece)))
        return out

    def _at_threshold(self, piece, ctx, R):
        """Phase for a state sitting exactly at N = N_tol."""
        fN = ctx.model.fN
        # a grazing dose (N would barely dip) is treated as holding N at N_tol
        graze = 1e-6 * abs(fN(ctx.N_tol, R, 0.0))
        if fN(ctx.N_tol, R, self.level_at(piece)) < -graze:
            return Phase("scheduled", piece), None
        if R >= ctx.N_tol or fN(ctx.N_tol, R, ctx.L_max) > 0:
            return Phase("override", piece), None
        return Phase("sliding", piece), None

    def transition(self, phase, event, ctx, N, R, t):
        name, piece = phase
        if event == "eliminate_time":
            return Phase("extinct", piece), ELIMINATE
        if event == "breakpoint":
            piece += 1
            if name == "sliding":
                return self._at_threshold(piece, ctx, R)
            return Phase(name, piece), None
        if name == "scheduled" and event == "reached_Ntol":
            if self.idealized:
                return Phase("extinct", piece), ELIMINATE
            return self._at_threshold(piece, ctx, R)
        if name == "override" and event == "returned_Ntol":
            nxt = self._at_threshold(piece, ctx, R)
            if nxt[0].name == "override":
                # N was decreasing under L_max, so it can be held
                return Phase("sliding", piece), None
            return nxt
        if name == "sliding" and event == "dose_saturated":
            return Phase("override", piece), None
        if name == "sliding" and event == "schedule_suffices":
            return Phase("scheduled", piece), None
        return super().transition(phase, event, ctx, N, R, t)


def reference_policies(thresholds: Thresholds) -> dict[str, Policy]:
    """The named treatments compared throughout the orderings."""
    out = {
        "noTreat": NoTreat(),
        "MTD": MTD(),
        "delMTD": DelayedMTD(),
        "Cont": Containment(),
        "idMTD": IdealMTD(),
        "del-idMTD": DelayedIdealMTD(),
        "idCont": IdealContainment(),
    }
    if thresholds.N_min is not None:
        out.update({
            "Int": Intermittent(),
            "ContNmin": Containment(thresholds.N_min),
            "idInt": IdealIntermittent(),
            "idContNmin": IdealContainment(thresholds.N_min),
        })
    return out
