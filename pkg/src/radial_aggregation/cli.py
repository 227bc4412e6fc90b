"""Command-line scenario runner.

Scenarios are described by flat ``key = value`` files (``#`` starts a comment)
or by flags on the matching subcommand; flags override file values. Every run
writes CSV data and a ``summary.txt`` listing each invariant with its margin.
Exit status: 0 when every hard invariant holds, 1 otherwise, 2 for a bad
configuration or unreadable input. ``RADAGG_OUTPUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import burgers, concentration, kernel, lagrangian
from .radial_measure import (
    RadialMeasure,
    is_radially_decreasing,
    read_measure_csv,
    smooth_bump,
    uniform_ball,
    write_cumulative_csv,
    write_measure_csv,
)

OUTPUT_ENV = "RADAGG_OUTPUT_DIR"
SCENARIOS = ("evolve", "picard", "burgers", "concentration", "kernel-table")


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending key."""


def _float_list(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


# key -> (type, default); a default of ``None`` marks an optional key without default
KEYS = {
    "scenario": (str, None),
    "alpha": (float, None),
    "dim": (int, None),
    "initial": (str, "uniform_ball"),
    "r0": (float, None),
    "n_particles": (int, 1000),
    "dt": (float, None),
    "t_end": (float, None),
    "absorption_radius": (float, 1e-12),
    "integrator": (str, "rk4"),
    "output_every": (int, 1),
    "velocity_method": (str, "auto"),
    "stop_atom_fraction": (float, None),
    "picard_max_iters": (int, 30),
    "picard_tol": (float, 1e-8),
    "n_bins": (int, 20),
    "monotone_tol": (float, 0.1),
    "trajectory_columns": (int, 200),
    "flux": (str, "classical"),
    "dt_report": (float, 0.1),
    "ring_z": (float, 0.5),
    "ring_mass": (float, 1.0),
    "background": (float, 0.0),
    "z_max": (float, 1.0),
    "family": (str, None),
    "times": (_float_list, None),
    "eps": (float, 0.3),
    "s_min": (float, 0.0),
    "s_max": (float, 1000.0),
    "n_points": (int, 201),
    "output_dir": (str, "radagg_output"),
    "seed": (int, 0),
}

REQUIRED = {
    "evolve": ("alpha", "dim", "dt", "t_end"),
    "picard": ("alpha", "dim", "dt", "t_end"),
    "burgers": ("dim", "t_end"),
    "concentration": ("alpha", "dim", "family", "times", "dt"),
    "kernel-table": ("alpha", "dim"),
}


@dataclass
class ScenarioConfig:
    scenario: str
    values: dict
    params: kernel.KernelParams | None = None
    given: tuple = ()

    def __getitem__(self, key):
        return self.values[key]

    @property
    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.values["output_dir"])

    def solver(self) -> lagrangian.SolverConfig:
        v = self.values
        try:
            return lagrangian.SolverConfig(
                dt=v["dt"], t_end=v["t_end"], absorption_radius=v["absorption_radius"],
                integrator=v["integrator"], picard_max_iters=v["picard_max_iters"],
                picard_tol=v["picard_tol"], output_every=v["output_every"],
                velocity_method=v["velocity_method"],
                stop_atom_fraction=v["stop_atom_fraction"])
        except ValueError as exc:
            raise ConfigError(f"solver settings: {exc}") from None


def _split_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        yield key.strip(), value.strip()


def parse_pairs(text: str) -> dict:
    """Raw ``key -> string`` mapping; rejects duplicates and unknown keys."""
    out = {}
    for key, value in _split_lines(text):
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        if key in out:
            raise ConfigError(f"duplicate key {key!r}")
        out[key] = value
    return out


def build_config(raw: dict) -> ScenarioConfig:
    """Type-check, fill defaults and validate a raw mapping."""
    for key in raw:
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
    scenario = raw.get("scenario")
    if scenario is None:
        raise ConfigError("missing required key 'scenario'")
    if scenario not in SCENARIOS:
        raise ConfigError(f"key 'scenario': expected one of {SCENARIOS}, got {scenario!r}")
    values = {}
    for key, (kind, default) in KEYS.items():
        if key in raw:
            try:
                values[key] = kind(raw[key]) if isinstance(raw[key], str) else raw[key]
            except ValueError:
                name = getattr(kind, "__name__", "value").lstrip("_")
                raise ConfigError(f"key {key!r}: cannot read {raw[key]!r} as {name}") from None
        else:
            values[key] = default
    for key in REQUIRED[scenario]:
        if values[key] is None:
            raise ConfigError(f"missing required key {key!r} for scenario {scenario!r}")
    for key in ("dt", "t_end", "absorption_radius", "dt_report", "z_max", "r0"):
        if values[key] is not None and not values[key] > 0:
            raise ConfigError(f"key {key!r} must be positive, got {values[key]!r}")
    for key in ("n_particles", "n_points", "n_bins", "output_every", "trajectory_columns"):
        if values[key] < 1:
            raise ConfigError(f"key {key!r} must be at least 1, got {values[key]!r}")
    if values["dim"] is not None and values["dim"] < 2:
        raise ConfigError(f"key 'dim' must be at least 2, got {values['dim']!r}")
    params = None
    if values["alpha"] is not None and values["dim"] is not None:
        try:
            params = kernel.KernelParams(values["alpha"], values["dim"])
        except ValueError as exc:
            raise ConfigError(f"key 'alpha': {exc}") from None
    if scenario == "concentration":
        if len(values["times"]) != 3 or not values["times"][0] < values["times"][1] < values["times"][2]:
            raise ConfigError("key 'times' must hold three increasing values t1,t2,t3")
        try:
            concentration.SingularProfile.parse(values["family"], params, values["r0"])
        except ValueError as exc:
            raise ConfigError(f"key 'family': {exc}") from None
    if scenario == "burgers":
        try:
            burgers.FluxPair.parse(values["flux"])
        except ValueError as exc:
            raise ConfigError(f"key 'flux': {exc}") from None
    return ScenarioConfig(scenario, values, params, tuple(sorted(raw)))


def parse_config(text: str) -> ScenarioConfig:
    """Parse a flat ``key = value`` configuration."""
    return build_config(parse_pairs(text))


# -- summary ---------------------------------------------------------------------

@dataclass
class Summary:
    config: ScenarioConfig
    entries: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def check(self, name: str, passed: bool, margin, hard: bool = True):
        self.entries.append((name, bool(passed), float(margin), hard))

    def note(self, text: str):
        self.notes.append(text)

    @property
    def failed(self) -> bool:
        return any(hard and not ok for _, ok, _, hard in self.entries)

    def write(self, path: Path):
        lines = [f"scenario: {self.config.scenario}", f"seed: {self.config['seed']}"]
        for key in self.config.given:
            if key not in ("scenario", "seed", "output_dir"):
                lines.append(f"config.{key}: {self.config.values[key]}")
        lines += self.notes
        for name, ok, margin, hard in self.entries:
            tag = "" if hard else " (report)"
            lines.append(f"{name}: {'PASS' if ok else 'FAIL'}{tag} margin={margin!r}")
        lines.append(f"overall: {'FAIL' if self.failed else 'PASS'}")
        path.write_text("\n".join(lines) + "\n")


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


# -- initial data ----------------------------------------------------------------

def initial_measure(cfg: ScenarioConfig, summary: Summary) -> RadialMeasure:
    """Unit-mass measure in the unit ball described by ``initial``."""
    choice = cfg["initial"]
    n = cfg["n_particles"]
    dim = cfg["dim"]
    if choice == "uniform_ball":
        return uniform_ball(dim, n, cfg["r0"] or 1.0)
    if choice == "bump":
        return smooth_bump(dim, n, cfg["r0"] or 1.0)
    if choice.startswith("file:"):
        path = choice[5:]
        try:
            mu = read_measure_csv(path)
        except OSError as exc:
            raise OSError(f"cannot read initial measure {path}: {exc.strerror}") from None
        scaled, length, time = lagrangian.normalize_to_unit_ball(mu, cfg["alpha"])
        summary.note(f"rescaled input: length_scale={float(length)!r} time_scale={float(time)!r}")
        return scaled
    try:
        prof = concentration.SingularProfile.parse(choice, cfg.params, cfg["r0"])
    except ValueError as exc:
        raise ConfigError(f"key 'initial': {exc}") from None
    if prof.r0 > 1.0:
        raise ConfigError("key 'r0' must not exceed 1 for particle runs")
    return concentration.discretize_profile(prof.normalized(), n)


# -- scenarios -------------------------------------------------------------------

def _trajectory_checks(cfg, traj, mu0, summary):
    diag = lagrangian.trajectory_diagnostics(traj)
    summary.check("mass-conserved", diag["mass_drift"] <= 1e-9, diag["mass_drift"])
    summary.check("order-preserved", diag["order_preserved"], 0.0)
    summary.check("concentration-monotone", diag["concentration_monotone"], 0.0)
    summary.check("speed-bound", diag["speed_bound_ratio"] <= 1.0 + 1e-9,
                  1.0 - diag["speed_bound_ratio"])
    summary.check("jacobian-nonincreasing", diag["log_jacobian_max"] <= 1e-9,
                  -diag["log_jacobian_max"])
    if cfg.params.alpha < 1.0:
        ratio = lagrangian.holder_ratio(traj)
        summary.check("holder-bound", ratio <= 1.05, 1.05 - ratio)
    edges0 = lagrangian.quantile_bin_edges(mu0, cfg["n_bins"])
    if mu0.n_particles > cfg["n_bins"] and is_radially_decreasing(
            mu0, edges0, cfg["dim"], tol=cfg["monotone_tol"]):
        ok = True
        for state in traj.states:
            mu = state.measure
            if mu.n_particles <= 2 * cfg["n_bins"]:
                continue
            edges = lagrangian.quantile_bin_edges(mu, cfg["n_bins"])
            ok &= is_radially_decreasing(mu, edges, cfg["dim"], tol=cfg["monotone_tol"])
        summary.check("monotonicity-preserved", ok, cfg["monotone_tol"])


def run_evolve(cfg: ScenarioConfig, out: Path, summary: Summary):
    mu0 = initial_measure(cfg, summary)
    traj = lagrangian.run(cfg.params, mu0, cfg.solver())
    stride = max(1, math.ceil(mu0.n_particles / cfg["trajectory_columns"]))
    traj.write_trajectories_csv(out / "trajectories.csv", stride=stride)
    traj.write_w2_csv(out / "w2.csv")
    write_measure_csv(mu0, out / "measure_initial.csv")
    write_measure_csv(traj.final.measure, out / "measure_final.csv")
    write_cumulative_csv(traj.final.measure, out / "cumulative_final.csv")
    _write_rows(out / "atom.csv", ["t", "atom_mass"],
                zip(traj.times.tolist(), traj.atom_masses.tolist()))
    summary.note(f"final_time: {float(traj.final.time)!r}")
    summary.note(f"final_atom_mass: {float(traj.final.atom_mass)!r}")
    _trajectory_checks(cfg, traj, mu0, summary)


def run_picard(cfg: ScenarioConfig, out: Path, summary: Summary):
    mu0 = initial_measure(cfg, summary)
    result = lagrangian.picard_iterate(cfg.params, mu0, cfg.solver())
    rep = result.report
    rep.write_csv(out / "picard.csv")
    gaps = np.asarray(rep.sup_gaps, dtype=float)
    decreasing = bool(np.all(np.diff(gaps) < 0)) if gaps.size > 1 else True
    summary.check("picard-ordering", all(rep.ordering_ok), 0.0)
    summary.check("picard-speed-bound", all(rep.speed_ok), 0.0)
    summary.check("sup-gap-decreasing", decreasing,
                  float(-np.max(np.diff(gaps))) if gaps.size > 1 else 0.0)
    summary.check("picard-converged", rep.converged,
                  float(cfg["picard_tol"] - gaps[-1]) if gaps.size else 0.0)


def _burgers_profile(cfg: ScenarioConfig) -> burgers.MassProfile:
    choice = cfg["initial"]
    dim = cfg["dim"]
    if choice == "uniform_ball":
        return burgers.uniform_ball_profile(dim)
    if choice == "ring":
        z, m, b, top = cfg["ring_z"], cfg["ring_mass"], cfg["background"], cfg["z_max"]
        if not 0.0 < z < top:
            raise ConfigError("key 'ring_z' must lie in (0, z_max)")
        return burgers.MassProfile([0.0, z, z, top], [0.0, b * z, b * z + m, b * top + m], dim)
    if choice.startswith("file:"):
        try:
            mu = read_measure_csv(choice[5:])
        except OSError as exc:
            raise OSError(f"cannot read initial measure {choice[5:]}: {exc.strerror}") from None
        return burgers.to_mass_coordinates(mu, dim)
    raise ConfigError(f"key 'initial': burgers accepts uniform_ball, ring or file:<path>, got {choice!r}")


def run_burgers(cfg: ScenarioConfig, out: Path, summary: Summary):
    profile = _burgers_profile(cfg)
    flux = burgers.FluxPair.parse(cfg["flux"])
    t_end, step = cfg["t_end"], cfg["dt_report"]
    times = np.arange(0.0, t_end + 0.5 * step, step)
    times = np.unique(np.clip(np.round(times, 12), 0.0, t_end))
    result = burgers.front_track(profile, flux, t_end=t_end, report_times=times.tolist())
    result.write_atom_csv(out / "atom.csv")
    result.write_jumps_csv(out / "jumps.csv")
    result.write_profiles_csv(out / "profiles.csv")
    _write_rows(out / "events.csv", ["t", "kind", "z"],
                ((e.time, e.kind, e.z) for e in result.events))
    atoms = np.asarray(result.atom_masses)
    drift = max(abs(p.total_mass - profile.total_mass) for p in result.profiles)
    summary.check("lax-entropy", result.lax_ok, 0.0)
    summary.check("mass-conserved", drift <= 1e-9 * max(1.0, profile.total_mass), drift)
    summary.check("atom-nondecreasing", bool(np.all(np.diff(atoms) >= -1e-12)),
                  float(np.min(np.diff(atoms))) if atoms.size > 1 else 0.0)
    if not profile.has_jumps:
        summary.note(f"first_shock_time: {burgers.shock_time(profile)!r}")
    for e in result.events:
        summary.note(f"event: t={float(e.time)!r} kind={e.kind} z={float(e.z)!r}")


def run_concentration(cfg: ScenarioConfig, out: Path, summary: Summary):
    prof = concentration.SingularProfile.parse(cfg["family"], cfg.params, cfg["r0"]).normalized()
    if prof.r0 > 1.0:
        raise ConfigError("key 'r0' must not exceed 1 for particle runs")
    mu0 = concentration.discretize_profile(prof, cfg["n_particles"])
    values = dict(cfg.values, t_end=cfg["times"][2])
    sim_cfg = ScenarioConfig(cfg.scenario, values, cfg.params, cfg.given)
    traj = lagrangian.run(cfg.params, mu0, sim_cfg.solver())
    report = concentration.bootstrap_verdict(traj, cfg.params, cfg["times"], eps=cfg["eps"])
    report.write_csv(out / "verdict.csv")
    (out / "verdict.txt").write_text(report.text() + "\n")
    _write_rows(out / "atom.csv", ["t", "atom_mass"],
                zip(traj.times.tolist(), traj.atom_masses.tolist()))
    summary.note(f"profile: {cfg['family']} r0={float(prof.r0)!r} c={float(prof.c)!r}")
    for c in report.checks:
        summary.check(f"verdict-{c.name}", c.passed, c.value, hard=False)
    _trajectory_checks(sim_cfg, traj, mu0, summary)


def run_kernel_table(cfg: ScenarioConfig, out: Path, summary: Summary):
    params = cfg.params
    s_min, s_max, n = cfg["s_min"], cfg["s_max"], cfg["n_points"]
    if not 0.0 <= s_min < s_max:
        raise ConfigError("keys 's_min'/'s_max' must satisfy 0 <= s_min < s_max")
    if s_min > 0.0:
        s = np.geomspace(s_min, s_max, n)
    else:
        s = np.concatenate([[0.0], np.geomspace(1e-3, s_max, n - 1)]) if n > 1 else np.zeros(1)
    phis = kernel.phi(params, s)
    table = phi_prime_safe(params, s)
    tails = phis * s ** (2.0 - params.alpha)
    _write_rows(out / "kernel_table.csv", ["s", "phi", "phi_prime", "phi_tail"],
                zip(s.tolist(), np.asarray(phis, dtype=float).tolist(), table.tolist(),
                    np.asarray(tails, dtype=float).tolist()))
    phi0 = kernel.phi(params, 0.0)
    summary.check("phi-at-origin", abs(phi0 - 1.0) <= 1e-8, 1e-8 - abs(phi0 - 1.0))
    summary.check("phi-positive", bool(np.all(np.asarray(phis) > 0)), float(np.min(phis)))
    tail_err = abs(tails[-1] - params.tail_constant) / params.tail_constant
    summary.check("tail-limit", tail_err <= 0.05, 0.05 - tail_err, hard=False)


def phi_prime_safe(params: kernel.KernelParams, s: np.ndarray) -> np.ndarray:
    """``phi'`` on a grid, ``nan`` where the derivative is undefined next to ``s = 1``."""
    out = np.full(s.shape, math.nan)
    ok = np.abs(s - 1.0) > kernel.DERIVATIVE_WINDOW
    out[ok] = kernel.phi_prime(params, s[ok])
    return out


RUNNERS = {
    "evolve": run_evolve,
    "picard": run_picard,
    "burgers": run_burgers,
    "concentration": run_concentration,
    "kernel-table": run_kernel_table,
}


def run_scenario(cfg: ScenarioConfig) -> int:
    """Execute ``cfg``; returns the exit status."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = Summary(cfg)
    RUNNERS[cfg.scenario](cfg, out, summary)
    summary.write(out / "summary.txt")
    return 1 if summary.failed else 0


# -- argument handling -----------------------------------------------------------

FLAG_KEYS = {
    "evolve": ("alpha", "dim", "initial", "r0", "n_particles", "dt", "t_end", "output_every",
               "velocity_method", "stop_atom_fraction", "integrator"),
    "picard": ("alpha", "dim", "initial", "r0", "n_particles", "dt", "t_end", "picard_max_iters",
               "picard_tol"),
    "burgers": ("dim", "initial", "flux", "t_end", "dt_report", "ring_z", "ring_mass",
                "background", "z_max"),
    "concentration": ("family", "alpha", "dim", "times", "r0", "n_particles", "dt", "eps"),
    "kernel-table": ("alpha", "dim", "s_min", "s_max", "n_points"),
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radagg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the scenario described by a config file")
    run.add_argument("config", help="path to a key = value file")
    run.add_argument("--output-dir")
    for name, keys in FLAG_KEYS.items():
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--config", help="optional key = value file; flags override it")
        p.add_argument("--output-dir")
        p.add_argument("--seed")
        for key in keys:
            p.add_argument("--" + key.replace("_", "-"), dest=key)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            raw = parse_pairs(_read(args.config))
        else:
            raw = parse_pairs(_read(args.config)) if args.config else {}
            if raw.get("scenario", args.command) != args.command:
                raise ConfigError(f"key 'scenario': file says {raw['scenario']!r}, "
                                  f"command is {args.command!r}")
            raw["scenario"] = args.command
            for key in FLAG_KEYS[args.command] + ("seed",):
                if getattr(args, key, None) is not None:
                    raw[key] = getattr(args, key)
        if args.output_dir:
            raw["output_dir"] = args.output_dir
        cfg = build_config(raw)
        return run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from None


if __name__ == "__main__":
    sys.exit(main())
