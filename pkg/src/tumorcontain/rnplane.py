"""Trajectories in the R-N plane: tumor size as a function of resistant size.

Along a trajectory with increasing R, tumor size satisfies

    dN~/dr = f_N(N~, r, L~(r)) / f_R(N~, r),    dt/dr = 1 / f_R(N~, r),

so the pair (N~, t) is integrated with r as the independent variable. The
same policy phase machine as in the time domain supplies the dose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .models import ContractViolation, TumorModel
from .ode import DenseTrack, Event, IntegrationError, IntegratorConfig, integrate
from .policies import Context, Policy, Thresholds, Watch
from .simulator import Trajectory, TumorState, apply_ideal_reset, default_horizon


class AssumptionViolation(IntegrationError):
    """f_R <= 0 met while integrating in r."""


@dataclass
class RNCurve:
    r_grid: np.ndarray
    N_tilde: np.ndarray
    S_tilde: np.ndarray
    L_tilde: np.ndarray
    t_of_r: np.ndarray
    phase: list
    jumps: list  # (r, N before, N after)
    dense: DenseTrack  # components (N~, t) over r
    policy: str = ""

    @property
    def r_start(self) -> float:
        return float(self.r_grid[0])

    @property
    def r_end(self) -> float:
        return float(self.r_grid[-1])

    def _eval(self, r, col: int, left: bool = False) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if len(self.dense) == 0:
            base = self.N_tilde if col == 0 else self.t_of_r
            return np.full(r.shape, base[-1])
        return self.dense(r, left)[:, col]

    def N_at(self, r, left: bool = False) -> np.ndarray:
        """N~(r), right-continuous at jumps (``left=True`` for the left limit)."""
        return self._eval(r, 0, left)

    def t_at(self, r) -> np.ndarray:
        return self._eval(r, 1)

    def S_at(self, r, left: bool = False) -> np.ndarray:
        return self.N_at(r, left) - np.asarray(r, dtype=float)


def _system(model: TumorModel, mode):
    """RHS in r and the map y -> (N, t) for this mode."""
    fN, fR = model.fN, model.fR

    def rate_R(N, r):
        v = fR(N, r)
        if not v > 0:
            raise AssumptionViolation("f_R must stay positive", r, (N,))
        return v

    if mode.kind == "free":
        L = mode.dose

        def fun(r, y):
            N = y[0] if y[0] > r else r
            inv = 1.0 / rate_R(N, r)
            return (fN(N, r, L) * inv, inv)
        return fun, (lambda r, y: (y[0], y[1])), (lambda N, t: (N, t)), \
            (lambda r0, h, coef: coef)
    if mode.kind == "hold":
        level = mode.level

        def fun(r, y):
            return (1.0 / rate_R(level, r),)
        return fun, (lambda r, y: (level, y[0])), (lambda N, t: (t,)), \
            (lambda r0, h, coef: [(level if k == 0 else 0.0, c[0]) for k, c in enumerate(coef)])

    def fun(r, y):
        return (1.0 / rate_R(r, r),)

    def lift(r0, h, coef):
        # N~ = r is linear in the step variable
        return [(r0, coef[0][0]), (h, coef[1][0])] + [(0.0, c[0]) for c in coef[2:]]
    return fun, (lambda r, y: (r, y[0])), (lambda N, t: (t,)), lift


def _watch_fn(w: Watch, model: TumorModel, to_Nt):
    lv = w.level
    if w.kind == "N":
        return lambda r, y: to_Nt(r, y)[0] - lv
    if w.kind == "t":
        return lambda r, y: to_Nt(r, y)[1] - lv
    if w.kind == "fN":
        dose = w.dose
        return lambda r, y: model.fN(to_Nt(r, y)[0], r, dose)
    raise ContractViolation(f"watch kind {w.kind!r} is not a state event in r")


def rn_trajectory(model: TumorModel, policy: Policy, init: TumorState,
                  r_end: float = math.inf, config: IntegratorConfig = IntegratorConfig(),
                  thresholds: Optional[Thresholds] = None) -> RNCurve:
    init = TumorState(*init).check()
    if thresholds is None:
        thresholds = Thresholds(N0=init.N, N_tol=init.N)
    if r_end <= init.R:
        raise ContractViolation("r_end must exceed R0")
    ctx = Context(model, thresholds)
    horizon = config.horizon if config.horizon is not None else \
        default_horizon(model, init, config)
    N_stop = model.N_crit * (1.0 + config.crit_margin)
    # event tolerance along r, in cells
    rcfg = config.with_(event_time_tol=max(1e-12 * init.R, 1e-9), max_step=math.inf) \
        if config.method == "dopri45" else config
    atol_N, atol_t = config.abs_tol, config.event_time_tol * 1e-3

    seg = DenseTrack(2)
    samples: list = []  # (r, N, t, phase)
    jumps: list = []

    def sample(r, N, t, phase):
        if samples and samples[-1][0] == r and samples[-1][2] == t:
            samples[-1] = (r, N, t, phase)
        else:
            samples.append((r, N, t, phase))

    r, N, t = init.R, init.N, init.t
    phase, reset = policy.start(ctx, N, r, t)
    sample(r, N, t, phase)
    if reset is not None:
        N = _jump(jumps, reset, r, N, t)
        sample(r, N, t, phase)

    h_hint = None
    stalls = 0
    while r < r_end:
        mode = policy.mode(phase, ctx)
        if mode.kind == "hold":
            N = mode.level
        elif mode.kind == "extinct":
            N = r
        sample(r, N, t, phase)
        watches = policy.watches(phase, ctx)
        r_stop, r_watch = r_end, None
        for w in watches:
            if w.kind == "R" and w.level < r_stop:
                r_stop, r_watch = w.level, w
        t_fire = [w for w in watches if w.kind == "t" and w.level <= t]
        fired = None
        if t_fire:
            fired = min(t_fire, key=lambda w: w.level)
        elif r_watch is not None and r_stop <= r:
            fired = r_watch
        else:
            fun, to_Nt, from_Nt, lift = _system(model, mode)
            evs = [Event(_watch_fn(w, model, to_Nt), w.direction, w)
                   for w in watches if w.kind != "R"]
            evs.append(Event(lambda rr, y, to_Nt=to_Nt: to_Nt(rr, y)[0] - N_stop, +1, "stop"))
            evs.append(Event(lambda rr, y, to_Nt=to_Nt: to_Nt(rr, y)[1] - horizon, +1, "stop"))
            atols = (atol_N, atol_t) if mode.kind == "free" else (atol_t,)

            def rec(r0, h, r1, coef, lift=lift):
                c = lift(r0, h, coef)
                seg.add(r0, h, r1, c)
                if r1 == r0 + h:
                    sample(r1, c[0][0] + c[1][0], c[0][1] + c[1][1], phase)

            stop = integrate(fun, r, from_Nt(N, t), r_stop, rcfg, evs, atol=atols,
                             record=rec, h0=h_hint)
            h_hint = stop.h
            r_prev = r
            r = stop.t
            N, t = to_Nt(r, stop.y)
            N = max(N, r)
            stalls = stalls + 1 if r == r_prev else 0
            if stalls > 100:
                raise IntegrationError("phase machine is not advancing", r, (N, t))
            if stop.event is not None:
                tag = evs[stop.event].tag
                if tag == "stop":
                    break
                fired = tag
            elif r_watch is not None and r >= r_watch.level:
                fired = r_watch
            else:
                break
        if fired.kind == "N":
            N = fired.level
            if len(seg) and seg.t1[-1] == r:
                seg.snap_last(0, N)
        sample(r, N, t, phase)
        new_phase, reset = policy.transition(phase, fired.event, ctx, N, r, t)
        if reset is not None:
            N = _jump(jumps, reset, r, N, t)
        phase = new_phase
        sample(r, N, t, phase)

    rs = np.array([s[0] for s in samples])
    Ns = np.array([s[1] for s in samples])
    ts = np.array([s[2] for s in samples])
    Ls = np.array([policy.dose(s[3], ctx, s[1], s[0], s[2]) for s in samples])
    return RNCurve(r_grid=rs, N_tilde=Ns, S_tilde=Ns - rs, L_tilde=Ls, t_of_r=ts,
                   phase=[s[3].name for s in samples], jumps=jumps,
                   dense=seg, policy=policy.label)


def _jump(jumps, reset, r, N, t):
    after = apply_ideal_reset(TumorState(max(N - r, 0.0), r, t), reset)
    jumps.append((r, N, after.N))
    return after.N


# --------------------------------------------------------------------------
# comparisons

class PointwiseOrderReport(NamedTuple):
    """Order of ``a.N_tilde`` relative to ``b.N_tilde`` on the overlap.

    ``relation`` is ``"<="`` (a <= b), ``">="`` or ``"crossing"``.
    ``max_violation`` is in cells, for the reported relation (for a crossing,
    for ``a <= b``); ``margin`` is the signed relative slack of ``a <= b``.
    """

    relation: str
    max_violation: float
    violation_locus: Optional[float]
    margin: float
    r_overlap: tuple


def common_grid(a: RNCurve, b: RNCurve, per_segment: int = 4) -> np.ndarray:
    lo = max(a.r_start, b.r_start)
    hi = min(a.r_end, b.r_end)
    if not hi > lo:
        raise ContractViolation("curves have disjoint r ranges")
    pts = [a.r_grid, b.r_grid]
    frac = np.linspace(0.0, 1.0, per_segment + 2)[1:-1]
    for c in (a, b):
        if len(c.dense):
            r0, r1 = c.dense.t0, c.dense.t1
            pts.append((r0[:, None] + (r1 - r0)[:, None] * frac).ravel())
    g = np.unique(np.concatenate(pts))
    return g[(g >= lo) & (g < hi)]


def compare_curves(a: RNCurve, b: RNCurve, tol: float = 1e-6) -> PointwiseOrderReport:
    """Pointwise order of N~ on a common refined grid.

    Both one-sided limits are compared at every grid point, so vertical
    jumps are covered from both sides.
    """
    if a.r_start != b.r_start:
        raise ContractViolation("curves must share R0")
    r = common_grid(a, b)
    rows = []
    for left in (False, True):
        na, nb = a.N_at(r, left), b.N_at(r, left)
        rows.append((na, nb))
    na = np.concatenate([x[0] for x in rows])
    nb = np.concatenate([x[1] for x in rows])
    rr = np.concatenate([r, r])
    scale = np.maximum(np.abs(na), np.abs(nb))
    rel = (nb - na) / scale
    lo_rel, hi_rel = rel.min(), rel.max()
    span = (float(r[0]), float(r[-1]))
    if lo_rel >= -tol:
        i = int(np.argmax(na - nb))
        return PointwiseOrderReport("<=", max(0.0, float(na[i] - nb[i])),
                                    float(rr[i]) if na[i] > nb[i] else None, float(lo_rel), span)
    if hi_rel <= tol:
        i = int(np.argmax(nb - na))
        return PointwiseOrderReport(">=", max(0.0, float(nb[i] - na[i])),
                                    float(rr[i]) if nb[i] > na[i] else None, float(lo_rel), span)
    i = int(np.argmax(na - nb))
    return PointwiseOrderReport("crossing", float(na[i] - nb[i]), float(rr[i]), float(lo_rel), span)


class ConsistencyReport(NamedTuple):
    max_relative_deviation: float
    coverage: float
    worst_t: Optional[float]


def consistency_check(traj: Trajectory, curve: RNCurve) -> ConsistencyReport:
    """max |N(t) - N~(R(t))| / N(t) over trajectory samples inside the curve's range.

    At a vertical jump the sample may sit on either side of it, so
    both one-sided limits count, as does the jump location itself when the
    sample's R lies within 1e-8 relative of it.
    """
    R, N, t = traj.R, traj.N, traj.t
    inside = (R >= curve.r_start) & (R <= curve.r_end)
    coverage = float(inside.mean())
    if not inside.any():
        return ConsistencyReport(math.inf, 0.0, None)
    R, N, t = R[inside], N[inside], t[inside]
    dev = np.minimum(np.abs(N - curve.N_at(R)), np.abs(N - curve.N_at(R, left=True)))
    for rj, n_before, n_after in curve.jumps:
        near = np.abs(R - rj) <= 1e-8 * rj
        if near.any():
            d = np.minimum(np.abs(N[near] - n_before), np.abs(N[near] - n_after))
            dev[near] = np.minimum(dev[near], d)
    rel = dev / N
    i = int(np.argmax(rel))
    return ConsistencyReport(float(rel[i]), coverage, float(t[i]))
