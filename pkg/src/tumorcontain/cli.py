"""Command-line front end: ``run``, ``verify`` and ``figure-data``.

Scenario configs are flat ``section.key = value`` lines (``#`` starts a
comment). Sections: ``model``, ``init``, ``thresholds``, ``integrator``,
``outputs`` and one ``policy.<name>`` block per treatment, e.g.::

    model.variant = monro_gaffney
    model.rho = 0.007
    policy.cont_N0.type = containment
    policy.cont_N0.threshold = 1e10
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .models import (MODEL_KEYS, ConfigurationError, Grid, check_model_assumptions,
                     model_from_config)
from .ode import IntegratorConfig
from .policies import (MTD, Alternative, ConstantDose, Containment, DelayedDose, DelayedIdealMTD,
                       DelayedMTD, IdealContainment, IdealIntermittent, IdealMTD, Intermittent,
                       NoTreat, Policy, Thresholds, reference_policies)
from .rnplane import RNCurve, rn_trajectory
from .simulator import Trajectory, TumorState, default_horizon, notreat_survival_time, simulate
from .verification import (SUITES, AltConstraints, Scenario, SuiteConfig, generate_alternative_policy,
                           run_cp_suite, run_suites)


class ConfigParseError(ConfigurationError):
    pass


# --------------------------------------------------------------------------
# config grammar

POLICY_TYPES = {
    "noTreat": ((), lambda: NoTreat()),
    "MTD": ((), lambda: MTD()),
    "delMTD": ((), lambda: DelayedMTD()),
    "idMTD": ((), lambda: IdealMTD()),
    "del-idMTD": ((), lambda: DelayedIdealMTD()),
    "constant": (("level",), lambda level: ConstantDose(level)),
    "delayed": (("level", "start_size"), lambda level, start_size: DelayedDose(level, start_size)),
    "containment": (("threshold",), lambda threshold=None: Containment(threshold)),
    "intermittent": (("N_min", "N_tol"), lambda N_min=None, N_tol=None: Intermittent(N_min, N_tol)),
    "idCont": (("threshold",), lambda threshold=None: IdealContainment(threshold)),
    "idInt": (("N_min", "N_tol"),
              lambda N_min=None, N_tol=None: IdealIntermittent(N_min, N_tol)),
    "alternative": (("schedule", "feedback_override", "eliminate_at"), None),
}
INIT_KEYS = ("R0", "S0")
THRESHOLD_KEYS = ("N0", "N_tol", "N_min", "N_crit")
INTEGRATOR_KEYS = tuple(f.name for f in fields(IntegratorConfig))
OUTPUT_KEYS = ("dir", "rn_curves", "events")
_STR_KEYS = {"variant", "law", "type", "schedule", "method", "hold_mode", "dir"}
_BOOL_KEYS = {"feedback_override", "rn_curves", "events"}


@dataclass
class ScenarioConfig:
    model: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    policies: dict = field(default_factory=dict)  # name -> {type, params...}


def _value(key: str, raw: str, where: str):
    if key in _STR_KEYS:
        return raw
    if key in _BOOL_KEYS:
        if raw.lower() not in ("true", "false"):
            raise ConfigParseError(f"{where}: {key} must be true or false, got {raw!r}")
        return raw.lower() == "true"
    try:
        return float(raw)
    except ValueError:
        raise ConfigParseError(f"{where}: {key} must be a number, got {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    cfg = ScenarioConfig()
    allowed = {"model": MODEL_KEYS, "init": INIT_KEYS, "thresholds": THRESHOLD_KEYS,
               "integrator": INTEGRATOR_KEYS, "outputs": OUTPUT_KEYS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigParseError(f"{where}: expected 'section.key = value'")
        dotted, raw = (s.strip() for s in line.split("=", 1))
        parts = dotted.split(".")
        if parts[0] == "policy":
            if len(parts) != 3:
                raise ConfigParseError(f"{where}: policy keys look like policy.<name>.<key>")
            _, name, key = parts
            block = cfg.policies.setdefault(name, {})
        elif len(parts) == 2 and parts[0] in allowed:
            section, key = parts
            if key not in allowed[section]:
                raise ConfigParseError(f"{where}: unknown key {dotted!r}")
            block = getattr(cfg, section)
        else:
            raise ConfigParseError(f"{where}: unknown key {dotted!r}")
        if key in block:
            raise ConfigParseError(f"{where}: duplicate key {dotted!r}")
        block[key] = _value(key, raw, where)
    for name, block in cfg.policies.items():
        kind = block.get("type")
        if kind not in POLICY_TYPES:
            raise ConfigParseError(f"{source}: policy {name!r} has unknown type {kind!r}")
        extra = set(block) - {"type"} - set(POLICY_TYPES[kind][0])
        if extra:
            raise ConfigParseError(f"{source}: unknown key(s) for policy {name!r}: "
                                   f"{', '.join(sorted(extra))}")
    return cfg


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ScenarioConfig) -> str:
    """Inverse of :func:`parse_config` (floats are written losslessly)."""
    lines = []
    for section in ("model", "init", "thresholds", "integrator", "outputs"):
        for k, v in getattr(cfg, section).items():
            lines.append(f"{section}.{k} = {_fmt(v)}")
    for name, block in cfg.policies.items():
        for k, v in block.items():
            lines.append(f"policy.{name}.{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def parse_schedule(text: str) -> tuple:
    """``"0:0, 10:1.5"`` -> ``((0.0, 0.0), (10.0, 1.5))``."""
    out = []
    for item in text.split(","):
        try:
            t, L = item.split(":")
            out.append((float(t), float(L)))
        except ValueError:
            raise ConfigParseError(f"bad schedule entry {item.strip()!r} (want time:level)") from None
    return tuple(out)


def build_policy(name: str, block: dict) -> Policy:
    kind = block["type"]
    params = {k: v for k, v in block.items() if k != "type"}
    if kind == "alternative":
        return Alternative(schedule=parse_schedule(params.get("schedule", "0:0")),
                           feedback_override=params.get("feedback_override", True),
                           eliminate_at=params.get("eliminate_at"), name=name)
    keys, make = POLICY_TYPES[kind]
    try:
        return make(**params)
    except TypeError:
        raise ConfigParseError(f"policy {name!r} of type {kind!r} needs keys {', '.join(keys)}") \
            from None


def build_scenario(cfg: ScenarioConfig, seed: int = 0) -> tuple[Scenario, IntegratorConfig, dict]:
    model = model_from_config(cfg.model)
    th = dict(cfg.thresholds)
    if "N0" not in th or "N_tol" not in th:
        raise ConfigurationError("thresholds.N0 and thresholds.N_tol are required")
    th.setdefault("N_crit", model.N_crit)
    if "R0" not in cfg.init:
        raise ConfigurationError("init.R0 is required")
    R0 = cfg.init["R0"]
    S0 = cfg.init.get("S0", th["N0"] - R0)
    for k, v in list(th.items()) + [("R0", R0)]:
        if not v > 0:
            raise ConfigurationError(f"{k} must be a positive cell count")
    if S0 < 0:
        raise ConfigurationError("init.S0 must be non-negative")
    thresholds = Thresholds(**th)
    policies = ({name: build_policy(name, b) for name, b in cfg.policies.items()}
                or reference_policies(thresholds))
    integ = IntegratorConfig(**cfg.integrator)
    sc = Scenario(model, TumorState(S0, R0), thresholds, seed, "config", tuple(policies))
    return sc, integ, policies


# --------------------------------------------------------------------------
# output files


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_trajectory(path: Path, tr: Trajectory):
    write_csv(path, ("t", "S", "R", "N", "L", "phase"),
              zip(tr.t, tr.S, tr.R, tr.N, tr.L, tr.phase))


def write_curve(path: Path, c: RNCurve):
    write_csv(path, ("r", "N_tilde", "S_tilde", "L_tilde", "t", "phase"),
              zip(c.r_grid, c.N_tilde, c.S_tilde, c.L_tilde, c.t_of_r, c.phase))


def write_events(path: Path, tr: Trajectory):
    with open(path, "w") as fh:
        for e in tr.events:
            fh.write(json.dumps({"kind": e.kind, "t": float(e.t),
                                 "before": [float(x) for x in e.before],
                                 "after": [float(x) for x in e.after],
                                 "phase_before": e.phase_before,
                                 "phase_after": e.phase_after}, sort_keys=True) + "\n")


def _fine(track, grid, per: int = 8) -> np.ndarray:
    """Sample points plus ``per`` dense-output points inside every step."""
    if len(track) == 0:
        return np.asarray(grid, dtype=float)
    frac = np.linspace(0.0, 1.0, per + 2)[1:-1]
    inner = (track.t0[:, None] + (track.t1 - track.t0)[:, None] * frac).ravel()
    return np.unique(np.concatenate([grid, inner]))


def curve_columns(c: RNCurve, r_max: float = math.inf) -> tuple:
    """(r, N~) on a refined grid, for plotting."""
    r = _fine(c.dense, c.r_grid)
    r = r[r <= r_max]
    return r, c.N_at(r)


def trajectory_columns(tr: Trajectory, t_max: float = math.inf) -> tuple:
    """(t, R, N) on a refined grid, for plotting."""
    t = _fine(tr.dense, tr.t)
    t = t[t <= t_max]
    S, R = tr.state_at(t)
    return t, R, S + R


def read_csv(path) -> dict:
    """Numeric columns of a CSV written here (non-numeric columns kept as str)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = {}
    for j, name in enumerate(rows[0]):
        col = [r[j] for r in rows[1:]]
        try:
            out[name] = np.array([float(x) if x else math.nan for x in col])
        except ValueError:
            out[name] = col
    return out


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


# --------------------------------------------------------------------------
# commands


def _certify(sc: Scenario, out=sys.stderr) -> bool:
    rep = check_model_assumptions(sc.model, sc.R0, Grid())
    if rep.ok:
        return True
    print("model violates the assumptions on its domain:", file=out)
    for key, point, value in rep.violations[:10]:
        print(f"  ({key}) at N, R, L = {point}: {value:.6g}", file=out)
    return False


def run_command(config_path, out_dir=None, seed: int = 0) -> int:
    cfg = load_config(config_path)
    sc, integ, policies = build_scenario(cfg, seed)
    if not _certify(sc):
        return 2
    out = Path(out_dir or cfg.outputs.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    if integ.horizon is None:
        integ = integ.with_(horizon=default_horizon(sc.model, sc.init, integ))
    (out / "scenario.cfg").write_text(dump_config(cfg))
    metrics = []
    for name, pol in policies.items():
        tr, m = simulate(sc.model, pol, sc.init, integ, sc.thresholds)
        write_trajectory(out / f"{_safe(name)}_trajectory.csv", tr)
        if cfg.outputs.get("rn_curves", True):
            write_curve(out / f"{_safe(name)}_rn.csv",
                        rn_trajectory(sc.model, pol, sc.init, config=integ,
                                      thresholds=sc.thresholds))
        if cfg.outputs.get("events", False):
            write_events(out / f"{_safe(name)}_events.jsonl", tr)
        metrics.append((name, m.t_progression, m.t_failure, m.t_survival))
    write_csv(out / "metrics.csv", ("policy", "t_progression", "t_failure", "t_survival"), metrics)
    print(f"{'policy':12s} {'t_progression':>14s} {'t_failure':>12s} {'t_survival':>12s}")
    for name, *ts in metrics:
        print(f"{name:12s} " + " ".join(f"{'never' if t is None else f'{t:.4f}':>12s}"
                                        for t in ts))
    print(f"wrote {len(policies)} policies to {out}")
    return 0


def verify_command(suite: str, n: int, seed: int, out_dir=None, workers: int = 1,
                   negative_control: bool = False, n_alternatives: int = 10) -> int:
    if suite == "all":
        suites, cp = list(SUITES), True
    elif suite == "cp":
        suites, cp = [], True
    elif suite in SUITES:
        suites, cp = [suite], False
    else:
        raise ConfigurationError(f"unknown suite {suite!r}")
    family = "broken" if negative_control else None
    reports = {}
    if suites:
        reports.update(run_suites(suites, n, seed, family=family,
                                  cfg=SuiteConfig(n_alternatives=n_alternatives),
                                  workers=workers))
    if cp:
        reports.update({r.prop_id: r for r in run_cp_suite(n, seed).values()})
    out = Path(out_dir) if out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for rep in reports.values():
            with open(out / f"verify_{rep.prop_id}.jsonl", "w") as fh:
                if rep.note:
                    fh.write(json.dumps({"note": rep.note}) + "\n")
                for r in rep.results:
                    fh.write(r.record() + "\n")
    lines = [rep.summary_line() for rep in reports.values()]
    for rep in reports.values():
        for s, m, locus in rep.failures[:5]:
            lines.append(f"    {rep.prop_id} seed={s} margin={m:+.3e} {locus}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if out is not None:
        (out / "verify_summary.txt").write_text(text)
    return 0 if all(r.ok for r in reports.values()) else 1


FIGURES = ("fig3", "fig4", "fig5")


def _crossing_time(curve: RNCurve, r: float) -> float:
    return float(curve.t_at(np.array([r]))[0])


def figure_data_command(figure: str, config_path, out_dir=None, seed: int = 0,
                        L1: float = 0.4, L2: float = 0.9, r_star: float = 4e9) -> int:
    if figure not in FIGURES:
        raise ConfigurationError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    cfg = load_config(config_path)
    sc, integ, _ = build_scenario(cfg, seed)
    if not _certify(sc):
        return 2
    if integ.horizon is None:
        integ = integ.with_(horizon=default_horizon(sc.model, sc.init, integ))
    out = Path(out_dir or cfg.outputs.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    th = sc.thresholds

    def both(p):
        tr, _ = simulate(sc.model, p, sc.init, integ, th)
        return tr, rn_trajectory(sc.model, p, sc.init, config=integ, thresholds=th)

    if figure == "fig3":
        for name, p in (("MTD", MTD()), ("Cont_N0", Containment(th.N0)),
                        ("Cont_Ntol", Containment(th.N_tol))):
            tr, c = both(p)
            write_csv(out / f"fig3_{name}_trajectory.csv", ("t", "R", "N"),
                      zip(*trajectory_columns(tr)))
            write_csv(out / f"fig3_{name}_rn.csv", ("r", "N_tilde"), zip(*curve_columns(c)))
    elif figure == "fig4":
        curves, trajs = [], []
        for k, L in ((1, L1), (2, L2)):
            tr, c = both(ConstantDose(L))
            curves.append(c)
            trajs.append(tr)
            if c.r_end < r_star:
                raise ConfigurationError(f"dose {L} never drives R to r* = {r_star:g}")
        t_star = [_crossing_time(c, r_star) for c in curves]
        t_cut = min(t_star)
        for k, (tr, c) in enumerate(zip(trajs, curves), 1):
            write_csv(out / f"fig4_L{k}_rn.csv", ("r", "N_tilde"), zip(*curve_columns(c, r_star)))
            write_csv(out / f"fig4_L{k}_trajectory.csv", ("t", "R", "N"),
                      zip(*trajectory_columns(tr, t_cut)))
        write_csv(out / "fig4_markers.csv", ("L1", "L2", "r_star", "t1_r_star", "t2_r_star"),
                  [(L1, L2, r_star, t_star[0], t_star[1])])
    else:
        _, cont = both(Containment())
        horizon = 2.0 * notreat_survival_time(sc.model, sc.init, integ)
        alt_pol = generate_alternative_policy(seed, False, AltConstraints(horizon, sc.model.L_max))
        _, alt = both(alt_pol)
        write_csv(out / "fig5_Cont_rn.csv", ("r", "N_tilde"), zip(*curve_columns(cont)))
        write_csv(out / "fig5_alt_rn.csv", ("r", "N_tilde"), zip(*curve_columns(alt)))
        write_csv(out / "fig5_loci.csv", ("r1", "r2", "r_max", "N_tol"),
                  [fig5_loci(cont, alt, th.N_tol) + (th.N_tol,)])
        (out / "fig5_alternative.txt").write_text(
            "schedule = " + ", ".join(f"{t!r}:{L!r}" for t, L in alt_pol.schedule) + "\n")
    print(f"wrote {figure} data to {out}")
    return 0


def fig5_loci(cont: RNCurve, alt: RNCurve, N_tol: float) -> tuple:
    """``r1``: containment first reaches N_tol. ``r2``: closest approach of
    the alternative to the containment curve beyond r1. ``r_max``: last r
    up to r2 where the alternative is at most N_tol."""
    tol = 1e-9 * N_tol
    hit = np.nonzero(cont.N_tilde >= N_tol - tol)[0]
    if len(hit) == 0:
        return (None, None, None)
    r1 = float(cont.r_grid[hit[0]])
    lo, hi = r1, min(cont.r_end, alt.r_end)
    if hi <= lo:
        return (r1, None, None)
    g = np.unique(np.concatenate([cont.r_grid, alt.r_grid]))
    g = g[(g >= lo) & (g <= hi)]
    gap = cont.N_at(g) - alt.N_at(g)
    r2 = float(g[int(np.argmin(gap))])
    below = g[(g <= r2) & (alt.N_at(g) <= N_tol + tol)]
    r_max = float(below[-1]) if len(below) else None
    return (r1, r2, r_max)


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tumorcontain",
                                 description="Tumor treatment simulations and ordering checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate the policies of a scenario config")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.add_argument("--seed", type=int, default=0)
    v = sub.add_parser("verify", help="run ordering certification suites")
    v.add_argument("--suite", default="all", choices=("all", "cp") + SUITES)
    v.add_argument("--n", type=int, default=100)
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--out-dir")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--alternatives", type=int, default=10)
    v.add_argument("--negative-control", action="store_true",
                   help="sample from a model that breaks the assumptions")
    f = sub.add_parser("figure-data", help="export plotting columns for a figure")
    f.add_argument("figure", choices=FIGURES)
    f.add_argument("--config", required=True)
    f.add_argument("--out-dir")
    f.add_argument("--seed", type=int, default=0)
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return run_command(args.config, args.out_dir, args.seed)
        if args.command == "verify":
            return verify_command(args.suite, args.n, args.seed, args.out_dir, args.workers,
                                  args.negative_control, args.alternatives)
        return figure_data_command(args.figure, args.config, args.out_dir, args.seed)
    except ValueError as exc:  # configuration and domain errors
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
