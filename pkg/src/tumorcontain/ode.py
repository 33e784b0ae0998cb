"""Small explicit Runge-Kutta integrators with event location.

Written for the 1-2 dimensional systems of this package: state vectors
are plain tuples of floats, which keeps per-step overhead far below what a
general array-based solver costs on such tiny problems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np


class IntegrationError(RuntimeError):
    """Step size underflow or non-finite state."""

    def __init__(self, msg, t=None, y=None):
        super().__init__(f"{msg} (t={t!r}, y={y!r})")
        self.t, self.y = t, y


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "dopri45"
    abs_tol: float = 1.0
    rel_tol: float = 1e-9
    max_step: float = math.inf
    event_time_tol: float = 1e-6
    horizon: Optional[float] = None
    # integration stops once N exceeds N_crit * (1 + crit_margin)
    crit_margin: float = 0.01
    # "reduced": 1-D dR/dt = f_R(level, R) while N is held; "feedback": 2-D
    # system driven by the stabilizing dose
    hold_mode: str = "reduced"

    def __post_init__(self):
        if self.method not in ("dopri45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.event_time_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.method == "rk4" and not math.isfinite(self.max_step):
            raise ValueError("rk4 uses max_step as its fixed step; give a finite value")
        if self.hold_mode not in ("reduced", "feedback"):
            raise ValueError(f"unknown hold mode {self.hold_mode!r}")

    def with_(self, **kw) -> "IntegratorConfig":
        return replace(self, **kw)


class Event(NamedTuple):
    """Root of ``fn(t, y)``.

    ``direction=+1`` fires when fn goes from < 0 to >= 0, ``-1`` from > 0
    to <= 0.
    """

    fn: Callable[[float, tuple], float]
    direction: int
    tag: object = None


class Stop(NamedTuple):
    t: float
    y: tuple
    event: Optional[int]
    h: float


# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


# dense output coefficients (Hairer's continuous extension of DOPRI5)
_D = (-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
      -10690763975 / 1880347072, 701980252875 / 199316789632,
      -1453857185 / 822651844, 69997945 / 29380423)


def _dopri_step(fun, t, y, f0, h):
    n = len(y)
    ks = [f0]
    for s in range(1, 7):
        a = _A[s]
        ys = tuple(y[i] + h * sum(a[j] * ks[j][i] for j in range(s)) for i in range(n))
        ks.append(fun(t + _C[s] * h, ys))
        if s == 6:
            ynew = ys
    err = tuple(h * sum(_E[j] * ks[j][i] for j in range(7)) for i in range(n))
    return ynew, ks[6], err, ks


def _rk4_step(fun, t, y, f0, h):
    n = len(y)
    k1 = f0
    k2 = fun(t + h / 2, tuple(y[i] + h / 2 * k1[i] for i in range(n)))
    k3 = fun(t + h / 2, tuple(y[i] + h / 2 * k2[i] for i in range(n)))
    k4 = fun(t + h, tuple(y[i] + h * k3[i] for i in range(n)))
    ynew = tuple(y[i] + h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(n))
    return ynew, fun(t + h, ynew)


def dense_coefficients(y0, y1, f0, f1, h, ks=None):
    """Coefficients ``(c1..c5)`` of one step's interpolant.

    ``y(t0 + s h) = c1 + s (c2 + (1-s) (c3 + s (c4 + (1-s) c5)))``. With
    ``c5 = 0`` this is the cubic Hermite interpolant; DOPRI5 stages supply
    the quartic correction that makes it 4th order.
    """
    c1 = tuple(y0)
    c2 = tuple(b - a for a, b in zip(y0, y1))
    c3 = tuple(h * fa - d for fa, d in zip(f0, c2))
    c4 = tuple(d - h * fb - e for d, fb, e in zip(c2, f1, c3))
    if ks is None:
        c5 = (0.0,) * len(c1)
    else:
        c5 = tuple(h * sum(_D[j] * ks[j][i] for j in range(7) if _D[j])
                   for i in range(len(c1)))
    return (c1, c2, c3, c4, c5)


def dense_eval(coef, s):
    c1, c2, c3, c4, c5 = coef
    u = 1.0 - s
    return tuple(a + s * (b + u * (c + s * (d + u * e)))
                 for a, b, c, d, e in zip(c1, c2, c3, c4, c5))


def hermite(t0, t1, y0, y1, f0, f1, t):
    """Cubic Hermite interpolant of one step at time ``t``."""
    h = t1 - t0
    if h == 0:
        return y1
    return dense_eval(dense_coefficients(y0, y1, f0, f1, h), (t - t0) / h)


def _norm(v, sc):
    return math.sqrt(sum((a / b) ** 2 for a, b in zip(v, sc)) / len(v))


def _initial_step(fun, t, y, f0, atol, rtol, direction_span):
    sc = [a + rtol * abs(v) for a, v in zip(atol, y)]
    d0, d1 = _norm(y, sc), _norm(f0, sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    y1 = tuple(v + h0 * f for v, f in zip(y, f0))
    f1 = fun(t + h0, y1)
    d2 = _norm([(a - b) for a, b in zip(f1, f0)], sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, direction_span)


def _locate(ev, t0, h, coef, tol, a=None):
    """Bisect the step interpolant; return the triggered-side point."""
    a, b = (t0 if a is None else a), t0 + h
    yb = dense_eval(coef, 1.0)
    while b - a > tol:
        m = 0.5 * (a + b)
        if not a < m < b:
            break  # float resolution reached
        ym = dense_eval(coef, (m - t0) / h)
        g = ev.fn(m, ym)
        fired = g >= 0 if ev.direction > 0 else g <= 0
        if fired:
            b, yb = m, ym
        else:
            a = m
    return b, yb


# dense near the step start, where a grazing dip is shortest
_DIP_PROBE = np.union1d(np.geomspace(1e-9, 1.0, 50)[:-1], np.linspace(0.0, 1.0, 17)[1:-1])


def _dip(ev, t0, h, coef):
    """Last interior time on the untriggered side before the step end."""
    last = None
    for s in _DIP_PROBE:
        g = ev.fn(t0 + s * h, dense_eval(coef, s))
        if g * ev.direction < 0:
            last = float(t0 + s * h)
    return last


def integrate(fun: Callable[[float, tuple], tuple], t0: float, y0: Sequence[float],
              t_end: float, cfg: IntegratorConfig, events: Sequence[Event] = (),
              atol: Optional[Sequence[float]] = None,
              record: Optional[Callable] = None, h0: Optional[float] = None) -> Stop:
    """Integrate forward from ``t0`` until ``t_end`` or the first event.

    ``record(t0, h, t1, coef)`` is called for every accepted step with its
    dense-output coefficients (see :func:`dense_coefficients`); for the
    step containing an event, ``t1 < t0 + h`` marks where it was cut.
    Returns the end point; for an event, the state is the first point on the
    triggered side of the root within ``cfg.event_time_tol``.
    """
    y = tuple(float(v) for v in y0)
    t = float(t0)
    n = len(y)
    atol = tuple(atol) if atol is not None else (cfg.abs_tol,) * n
    rtol = cfg.rel_tol
    f = fun(t, y)
    gs = [ev.fn(t, y) for ev in events]
    if t >= t_end:
        return Stop(t, y, None, h0 or 0.0)
    fixed = cfg.method == "rk4"
    if fixed:
        h = cfg.max_step
    elif h0 is not None and h0 > 0:
        h = min(h0, cfg.max_step)
    else:
        h = min(_initial_step(fun, t, y, f, atol, rtol, t_end - t), cfg.max_step)
    while t < t_end:
        last = t + h >= t_end
        hs = t_end - t if last else h
        if fixed:
            ynew, fnew = _rk4_step(fun, t, y, f, hs)
            ks = None
            tnew = t_end if last else t + hs
        else:
            ynew, fnew, err, ks = _dopri_step(fun, t, y, f, hs)
            sc = [a + rtol * max(abs(u), abs(v)) for a, u, v in zip(atol, y, ynew)]
            en = _norm(err, sc)
            if not math.isfinite(en):
                en = 1e10
            if en > 1.0:
                h = hs * max(0.2, 0.9 * en ** -0.2)
                if h < 1e-13 * max(1.0, abs(t)):
                    raise IntegrationError("step size underflow", t, y)
                continue
            tnew = t_end if last else t + hs
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = min(hs * fac, cfg.max_step)
        if not all(math.isfinite(v) for v in ynew):
            raise IntegrationError("non-finite state", tnew, ynew)
        coef = dense_coefficients(y, ynew, f, fnew, hs, ks)
        hit = None
        if events:
            gnew = [ev.fn(tnew, ynew) for ev in events]
            t_hit = math.inf
            for i, ev in enumerate(events):
                g_old, g_new = gs[i], gnew[i]
                a = None
                if g_old * ev.direction >= 0 and g_new * ev.direction >= 0:
                    # already on the triggered side (e.g. started on the
                    # level): fire only if the step dips back and returns
                    a = _dip(ev, t, hs, coef)
                    if a is None:
                        continue
                elif not ((ev.direction > 0 and g_old < 0 <= g_new) or
                          (ev.direction < 0 and g_old > 0 >= g_new)):
                    continue
                te, ye = _locate(ev, t, hs, coef, cfg.event_time_tol, a)
                if te < t_hit:
                    t_hit, hit, y_hit = te, i, ye
            gs = gnew
        if hit is not None:
            if record is not None:
                record(t, hs, t_hit, coef)
            return Stop(t_hit, y_hit, hit, h)
        if record is not None:
            record(t, hs, tnew, coef)
        t, y, f = tnew, ynew, fnew
    return Stop(t, y, None, h)


class DenseTrack:
    """Piecewise dense output of consecutive steps, evaluated vectorized.

    Segments are ``[t0, t1]`` pieces of steps of length ``h`` (``t1`` may
    cut a step short at an event). Where two segments meet at a reset the
    later one wins (right-continuous), unless ``left=True``.
    """

    def __init__(self, n: int):
        self.n = n
        self._rows: list = []
        self._frozen = None

    def add(self, t0, h, t1, coef):
        if t1 > t0:
            self._rows.append((t0, h, t1) + tuple(v for c in coef for v in c))
            self._frozen = None

    def map_last(self, fn):
        """Replace the coefficients of the last segment by ``fn(coef)``."""
        row = self._rows[-1]
        n = self.n
        coef = tuple(tuple(row[3 + k * n:3 + (k + 1) * n]) for k in range(5))
        self._rows[-1] = row[:3] + tuple(v for c in fn(coef) for v in c)
        self._frozen = None

    def snap_last(self, component: int, value: float):
        """Shift the last segment linearly so it ends exactly at ``value``."""
        row = self._rows[-1]
        t0, h, t1 = row[:3]
        s_cut = (t1 - t0) / h
        end = self.eval_rows(np.array([len(self) - 1]), np.array([t1]))[0, component]
        delta = value - end
        # y = c1 + s*c2 + ..., so adding d to c2 adds d*s
        row = list(row)
        row[3 + self.n + component] += delta / s_cut
        self._rows[-1] = tuple(row)
        self._frozen = None

    def __len__(self):
        return len(self._rows)

    @property
    def array(self) -> np.ndarray:
        if self._frozen is None:
            self._frozen = (np.asarray(self._rows, dtype=float) if self._rows
                            else np.zeros((0, 3 + 5 * self.n)))
        return self._frozen

    @property
    def t0(self) -> np.ndarray:
        return self.array[:, 0]

    @property
    def t1(self) -> np.ndarray:
        return self.array[:, 2]

    def eval_rows(self, rows, x) -> np.ndarray:
        """Values at ``x`` (broadcast against ``rows``) using those segments."""
        a = self.array[rows]
        n = self.n
        s = np.clip((x - a[..., 0]) / a[..., 1], 0.0, (a[..., 2] - a[..., 0]) / a[..., 1])
        u = 1.0 - s
        out = np.empty(np.shape(s) + (n,))
        for i in range(n):
            c1, c2, c3, c4, c5 = (a[..., 3 + k * n + i] for k in range(5))
            out[..., i] = c1 + s * (c2 + u * (c3 + s * (c4 + u * c5)))
        return out

    def __call__(self, x, left: bool = False) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if len(self) == 0:
            raise ValueError("empty dense track")
        if left:
            idx = np.searchsorted(self.t1, x, side="left")
        else:
            idx = np.searchsorted(self.t0, x, side="right") - 1
        idx = np.clip(idx, 0, len(self) - 1)
        return self.eval_rows(idx, x)
