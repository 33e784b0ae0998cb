"""Time-domain simulation of a tumor model under a policy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .models import ContractViolation, TumorModel
from .ode import DenseTrack, Event, IntegrationError, IntegratorConfig, integrate
from .policies import Context, Phase, Policy, ResetAction, Thresholds, Watch, \
    NoTreat, stabilizing_dose


class NumericalDomainError(IntegrationError):
    """Integrated state left the biological domain (e.g. S < 0)."""


class TumorState(NamedTuple):
    S: float
    R: float
    t: float = 0.0

    @property
    def N(self) -> float:
        return self.S + self.R

    def check(self):
        if not (self.S >= 0 and self.R > 0 and self.t >= 0):
            raise ContractViolation(f"invalid tumor state {self!r}: need S >= 0, R > 0, t >= 0")
        return self


class TrajEvent(NamedTuple):
    kind: str
    t: float
    before: TumorState
    after: TumorState
    phase_before: str
    phase_after: str


class OutcomeMetrics(NamedTuple):
    """First upward crossing times; ``None`` means not reached."""

    t_progression: Optional[float]
    t_failure: Optional[float]
    t_survival: Optional[float]


@dataclass
class Trajectory:
    """Samples at accepted steps and events, plus dense output in (S, R)."""

    t: np.ndarray
    S: np.ndarray
    R: np.ndarray
    L: np.ndarray
    phase: list
    events: list
    dense: DenseTrack
    policy: str = ""

    @property
    def N(self) -> np.ndarray:
        return self.S + self.R

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def state_at(self, times, left: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """(S, R) at arbitrary times; right-continuous at resets unless ``left``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if len(self.dense) == 0:
            return np.full(times.shape, self.S[-1]), np.full(times.shape, self.R[-1])
        y = self.dense(times, left)
        return y[:, 0], y[:, 1]

    def N_at(self, times, left: bool = False) -> np.ndarray:
        S, R = self.state_at(times, left)
        return S + R


def _watch_fn(w: Watch, model: TumorModel):
    k, lv = w.kind, w.level
    if k == "N":
        return lambda N, R, t: N - lv
    if k == "R":
        return lambda N, R, t: R - lv
    if k == "t":
        return lambda N, R, t: t - lv
    if k == "fN":
        dose = w.dose
        return lambda N, R, t: model.fN(N, R, dose)
    raise ContractViolation(f"unknown watch kind {k!r}")


def apply_ideal_reset(state: TumorState, action: ResetAction) -> TumorState:
    if action.kind == "eliminate_sensitive":
        return TumorState(0.0, state.R, state.t)
    if action.kind == "drop_to":
        N_new = max(action.level, state.R)
        return TumorState(max(N_new - state.R, 0.0), state.R, state.t)
    raise ContractViolation(f"unknown reset kind {action.kind!r}")


def notreat_survival_time(model: TumorModel, init: TumorState,
                          config: IntegratorConfig = IntegratorConfig(),
                          cap: float = 1e7) -> float:
    """Time for the untreated tumor to reach N_crit (used for default horizons)."""
    th = Thresholds(N0=init.N, N_tol=max(init.N, model.N_crit))
    traj, m = simulate(model, NoTreat(), init, config.with_(horizon=cap), th)
    if m.t_survival is None:
        raise IntegrationError("untreated tumor never reaches N_crit", traj.t_end)
    return m.t_survival


def default_horizon(model, init, config=IntegratorConfig()) -> float:
    return 10.0 * notreat_survival_time(model, init, config)


def simulate(model: TumorModel, policy: Policy, init: TumorState,
             config: IntegratorConfig = IntegratorConfig(),
             thresholds: Optional[Thresholds] = None) -> tuple[Trajectory, OutcomeMetrics]:
    init = TumorState(*init).check()
    if thresholds is None:
        thresholds = Thresholds(N0=init.N, N_tol=init.N)
    ctx = Context(model, thresholds)
    horizon = config.horizon if config.horizon is not None else \
        default_horizon(model, init, config)
    N_stop = model.N_crit * (1.0 + config.crit_margin)
    atol = config.abs_tol

    seg = DenseTrack(2)
    samples: list = []  # (t, S, R, phase)
    events: list = []

    def sample(t, S, R, phase):
        if samples and samples[-1][0] == t:
            samples[-1] = (t, S, R, phase)
        else:
            samples.append((t, S, R, phase))

    S, R, t = init.S, init.R, init.t
    phase, reset = policy.start(ctx, S + R, R, t)
    sample(t, S, R, phase)
    if reset is not None:
        S, R, t = _reset(events, reset, S, R, t, "start", phase, phase)
        sample(t, S, R, phase)

    h_hint = None
    stalls = 0
    while t < horizon:
        mode = policy.mode(phase, ctx)
        if mode.kind == "hold":
            S = max(mode.level - R, 0.0)
        elif mode.kind == "extinct":
            S = 0.0
        sample(t, S, R, phase)
        watches = policy.watches(phase, ctx)
        t_end = horizon
        time_watch = None
        for w in watches:
            if w.kind == "t" and w.level < t_end:
                t_end, time_watch = w.level, w
        fired = None
        if time_watch is not None and t_end <= t:
            fired = time_watch
        else:
            fun, y0, to_SR, lift, atols = _system(model, mode, config, S, R, atol)
            evs = [Event(_lift(_watch_fn(w, model), to_SR), w.direction, w)
                   for w in watches if w.kind != "t"]
            evs.append(Event(_lift(lambda N, R_, tt: N - N_stop, to_SR), +1, "stop"))

            def rec(t0, h, t1, coef, to_SR=to_SR, lift=lift):
                seg.add(t0, h, t1, lift(coef))
                if t1 == t0 + h:
                    b = to_SR(_end(coef))
                    sample(t1, b[0], b[1], phase)

            stop = integrate(fun, t, y0, t_end, config, evs, atol=atols,
                             record=rec, h0=h_hint)
            h_hint = stop.h
            S, R = to_SR(stop.y)
            if S < 0:
                # in hold mode S = level - R, so a small negative value is
                # only event overshoot past R = level
                if mode.kind == "free" and S < -max(atol, 1e-9 * R):
                    raise NumericalDomainError("sensitive population went negative",
                                               stop.t, (S, R))
                S = 0.0
            t_prev, t = t, stop.t
            stalls = stalls + 1 if t == t_prev else 0
            if stalls > 100:
                raise IntegrationError("phase machine is not advancing", t, (S, R))
            if stop.event is not None:
                tag = evs[stop.event].tag
                if tag == "stop":
                    sample(t, S, R, phase)
                    break
                fired = tag
            elif time_watch is not None and t >= time_watch.level:
                fired = time_watch
            else:
                sample(t, S, R, phase)
                break
        if fired.kind == "N":
            # land exactly on the threshold
            S = max(fired.level - R, 0.0)
            if len(seg) and seg.t1[-1] == t:
                seg.snap_last(0, S)
        sample(t, S, R, phase)
        new_phase, reset = policy.transition(phase, fired.event, ctx, S + R, R, t)
        before = TumorState(S, R, t)
        if reset is not None:
            S, R, t = apply_ideal_reset(before, reset)
        events.append(TrajEvent(fired.event, t, before, TumorState(S, R, t),
                                phase.name, new_phase.name))
        phase = new_phase
        sample(t, S, R, phase)

    traj = _build(samples, events, seg, policy, ctx)
    return traj, outcome_metrics(traj, thresholds.N0, thresholds.N_tol, model.N_crit)


def _reset(events, reset, S, R, t, kind, ph0, ph1):
    before = TumorState(S, R, t)
    after = apply_ideal_reset(before, reset)
    events.append(TrajEvent(kind if kind != "start" else reset.kind, t, before, after,
                            ph0.name, ph1.name))
    return after.S, after.R, t


def _lift(g, to_SR):
    def fn(t, y):
        S, R = to_SR(y)
        return g(S + R, R, t)
    return fn


def _system(model: TumorModel, mode, config, S, R, atol):
    """ODE right-hand side in the coordinates used for this mode."""
    if mode.kind == "free":
        L = mode.dose
        rates = model.rates

        def fun(t, y):
            return rates(y[0] if y[0] > 0 else 0.0, y[1], L)
        return fun, (S, R), _ident, _ident, (atol, atol)
    if mode.kind == "hold" and config.hold_mode == "feedback":
        level = mode.level
        rates = model.rates

        def fun(t, y):
            s, r = (y[0] if y[0] > 0 else 0.0), y[1]
            L = stabilizing_dose(model, s + r, r).dose if s > 0 else model.L_max
            return rates(s, r, L)
        return fun, (S, R), _ident, _ident, (atol, atol)
    if mode.kind == "hold":
        level = mode.level
        fR = model.fR

        def fun(t, y):
            return (fR(level, y[0]),)
        def lift(coef):
            out = [(level - coef[0][0], coef[0][0])]
            out += [(-c[0], c[0]) for c in coef[1:]]
            return out
        return fun, (R,), (lambda y: (max(level - y[0], 0.0), y[0])), lift, (atol,)
    fR = model.fR

    def fun(t, y):
        return (fR(y[0], y[0]),)
    return fun, (R,), (lambda y: (0.0, y[0])), \
        (lambda coef: [(0.0, c[0]) for c in coef]), (atol,)


def _ident(y):
    return y


def _end(coef):
    """Interpolant value at the end of the step (s = 1)."""
    return tuple(a + b for a, b in zip(coef[0], coef[1]))


def _build(samples, events, seg, policy, ctx) -> Trajectory:
    t = np.array([s[0] for s in samples])
    S = np.array([s[1] for s in samples])
    R = np.array([s[2] for s in samples])
    phases = [s[3] for s in samples]
    L = np.array([policy.dose(ph, ctx, s_ + r_, r_, tt)
                  for tt, s_, r_, ph in samples])
    return Trajectory(t=t, S=S, R=R, L=L, phase=[p.name for p in phases],
                      events=events, dense=seg, policy=policy.label)


# --------------------------------------------------------------------------
# threshold crossings

_LEVEL_EPS = 1e-12
_PROBE = np.linspace(0.0, 1.0, 9)[1:]


def first_crossing(traj: Trajectory, level: float, which: str = "N",
                   time_tol: float = 1e-9) -> Optional[float]:
    """Earliest time the quantity (``"N"`` or ``"R"``) exceeds ``level``."""
    lim = level * (1.0 + _LEVEL_EPS)
    pick = (lambda y: y[..., 1]) if which == "R" else (lambda y: y[..., 0] + y[..., 1])
    t_first = float(traj.t[0])
    v_first = traj.R[0] if which == "R" else traj.N[0]
    if v_first > lim:
        return t_first
    track = traj.dense
    if len(track) == 0:
        return None
    t0, t1 = track.t0, track.t1
    probe_t = t0[:, None] + (t1 - t0)[:, None] * _PROBE[None, :]
    rows = np.arange(len(track))[:, None]
    vals = pick(track.eval_rows(rows, probe_t))
    over = vals > lim
    hit = np.nonzero(over.any(axis=1))[0]
    if len(hit) == 0:
        return None
    i = int(hit[0])
    j = int(np.argmax(over[i]))
    hi = float(probe_t[i, j])
    lo = float(t0[i]) if j == 0 else float(probe_t[i, j - 1])

    def value(x):
        return float(pick(track.eval_rows(np.array([i]), np.array([x])))[0])

    v_lo = value(lo)
    if v_lo > lim or (lo == t_first and v_lo >= level * (1.0 - _LEVEL_EPS)):
        # jump over the level at a reset, or leaving it upward from the start
        return lo
    return locate_threshold_crossing(value, lo, hi, level, time_tol)


def locate_threshold_crossing(value, t_lo: float, t_hi: float, threshold: float,
                              time_tol: float = 1e-9) -> float:
    """Bisection for the upward crossing of ``threshold`` by ``value(t)``.

    ``value(t_lo) <= threshold < value(t_hi)`` is required. Returns the
    triggered-side end of the final bracket.
    """
    lim = threshold * (1.0 + _LEVEL_EPS) if threshold > 0 else threshold
    v_lo, v_hi = value(t_lo), value(t_hi)
    if not (v_lo <= lim < v_hi):
        raise ContractViolation("no upward crossing of the threshold in the bracket")
    lo, hi = t_lo, t_hi
    while hi - lo > time_tol:
        mid = 0.5 * (lo + hi)
        if value(mid) > lim:
            hi = mid
        else:
            lo = mid
    return hi


def outcome_metrics(traj: Trajectory, N0: float, N_tol: float, N_crit: float) -> OutcomeMetrics:
    if len(traj.t) == 0:
        raise ContractViolation("empty trajectory")
    return OutcomeMetrics(first_crossing(traj, N0), first_crossing(traj, N_tol),
                          first_crossing(traj, N_crit))
