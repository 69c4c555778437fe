"""Run configuration, persistence, sweeps and the command-line interface."""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .diagnostics import WeightSpec, fit_decay, qform_check, theorem_rate
from .dynamics import SchemeConfig, evolve, make_initial, read_trajectory_csv
from .errors import NumericalError, PreconditionError
from .grid import HalfLineGrid, PeriodicStrip
from .model import PlasmaParams, Regime, classify_regime, degenerate_constants, solve_lambda0
from .sagdeev import SagdeevContext, existence_check
from .stationary import (build_profile, default_length, profile_residuals,
                         verify_degenerate_asymptotics, verify_nondegenerate_decay)

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NUMERICAL = 3


class ConfigError(PreconditionError):
    """Malformed or unknown configuration entry."""


@dataclass(frozen=True)
class GridSpec:
    L: float | None = None
    M: int = 512
    stretching: str = "geometric"
    ratio: float | None = None
    ny: int | None = None

    def build(self, params: PlasmaParams):
        L = self.L if self.L is not None else default_length(params)
        ratio = self.ratio
        if ratio is None and self.stretching == "geometric" and classify_regime(params) is Regime.DEGENERATE_BOHM:
            ratio = min(1.02, 1000.0 ** (1.0 / self.M))
        return HalfLineGrid.from_spec(L, self.M, self.stretching, ratio)


@dataclass(frozen=True)
class InitialSpec:
    family: str = "gaussian_exp"
    amplitude: float = 1e-3
    lam: float = 0.5
    beta: float | None = None
    center: float = 2.0
    width: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    params: PlasmaParams = field(default_factory=PlasmaParams)
    grid: GridSpec = field(default_factory=GridSpec)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    initial: InitialSpec = field(default_factory=InitialSpec)
    probes: tuple = ()
    seed: int | None = None
    output_dir: str = "runs"

    # -- (de)serialization
    def to_dict(self) -> dict:
        d = {
            "params": self.params.to_dict(),
            "grid": asdict(self.grid),
            "scheme": self.scheme.to_dict(),
            "initial": asdict(self.initial),
            "probes": [w.to_dict() for w in self.probes],
            "seed": self.seed,
            "output_dir": self.output_dir,
        }
        return _drop_none(d)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
        params = _build(PlasmaParams, d.get("params", {}), "params", _params_hook)
        probes = tuple(_build(WeightSpec, p, f"probes[{i}]") for i, p in enumerate(d.get("probes", [])))
        return cls(
            params=params,
            grid=_build(GridSpec, d.get("grid", {}), "grid"),
            scheme=_build(SchemeConfig, d.get("scheme", {}), "scheme"),
            initial=_build(InitialSpec, d.get("initial", {}), "initial"),
            probes=probes,
            seed=d.get("seed"),
            output_dir=str(d.get("output_dir", "runs")),
        )

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(tomli.loads(text))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_toml(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply dotted ``key=value`` assignments (values parsed as TOML)."""
        d = self.to_dict()
        for item in overrides:
            key, value = _parse_override(item)
            parts = key.split(".")
            tgt = d
            for part in parts[:-1]:
                tgt = tgt.setdefault(part, {})
                if not isinstance(tgt, dict):
                    raise ConfigError(f"cannot set {key!r}")
            tgt[parts[-1]] = value
        return RunConfig.from_dict(d)

    def run_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    # -- resolved objects
    def beta_default(self) -> float:
        p = self.params
        if self.initial.beta is not None:
            return self.initial.beta
        if classify_regime(p) is Regime.DEGENERATE_BOHM and p.phi_b > 0:
            return degenerate_constants(p).Gamma * math.sqrt(p.phi_b)
        return self.initial.lam

    def resolved_probes(self) -> list:
        if self.probes:
            return list(self.probes)
        if classify_regime(self.params) is Regime.DEGENERATE_BOHM:
            return [WeightSpec.algebraic(1.0, self.beta_default(), 1)]
        return [WeightSpec.exponential(self.initial.lam, 1)]


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_drop_none(v) for v in d]
    return d


def _params_hook(d: dict) -> dict:
    d = dict(d)
    if d.get("u_inf") == "bohm":
        m = d.get("m", 1.0)
        g = d.get("gamma", 5.0 / 3.0)
        R = d.get("R", 1.0)
        T = d.get("T_inf", 1.0)
        d["u_inf"] = -math.sqrt((g * R * T + 1.0) / m)
    return d


def _build(cls, d, section, hook=None):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a table")
    if hook:
        d = hook(d)
    names = {f.name for f in fields(cls)}
    for k in d:
        if k not in names:
            raise ConfigError(f"unknown config key {section}.{k}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad value in {section}: {exc}") from exc
    except PreconditionError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return key, value


# --- manifests and files ---------------------------------------------------

def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def derived_quantities(params: PlasmaParams) -> dict:
    ctx = SagdeevContext(params)
    regime = classify_regime(params)
    d = {"regime": regime.value, "lambda0": solve_lambda0(params.gamma), "c_inf": ctx.c_inf,
         "V2_at_zero": ctx.V2_at_zero, "Gamma": None}
    if regime is Regime.DEGENERATE_BOHM and params.phi_b > 0:
        d["Gamma"] = degenerate_constants(params).Gamma
    return d


@dataclass
class RunManifest:
    config: dict
    derived: dict
    artifacts: list
    timing: dict
    status: str
    exit_code: int
    results: dict = field(default_factory=dict)
    build: str = ""

    def write(self, directory) -> Path:
        """Atomic write of ``manifest.json``."""
        path = Path(directory) / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default))
        os.replace(tmp, path)
        return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _run_dir(config: RunConfig, out: str | None) -> Path:
    d = Path(out or config.output_dir) / config.run_id()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _status(exc) -> tuple:
    if exc is None:
        return "ok", EXIT_OK
    if isinstance(exc, PreconditionError):
        return f"precondition: {exc}", EXIT_PRECONDITION
    return f"numerical: {exc}", EXIT_NUMERICAL


# --- run kinds -------------------------------------------------------------

def stationary_results(profile) -> dict:
    res = {k: float(v) for k, v in profile_residuals(profile).items()}
    out = {"residuals": res, "x_switch": _finite_or_none(profile.x_switch)}
    if profile.regime is Regime.NONDEGENERATE_BOHM:
        fit = verify_nondegenerate_decay(profile)
        out["decay_fit"] = {"rate": fit.rate, "predicted": fit.predicted, "rel_error": fit.rel_error,
                            "r_squared": fit.r_squared}
    elif profile.regime is Regime.DEGENERATE_BOHM and 0 < profile.params.phi_b <= 0.05:
        out["degenerate_sups"] = verify_degenerate_asymptotics(profile)
    return out


def run_stationary(config: RunConfig, out: str | None = None) -> RunManifest:
    t0 = time.perf_counter()
    d = _run_dir(config, out)
    artifacts, results, exc = [], {}, None
    try:
        grid = config.grid.build(config.params)
        profile = build_profile(config.params, grid)
        profile.to_csv(d / "profile.csv")
        artifacts.append("profile.csv")
        results = stationary_results(profile)
    except (PreconditionError, NumericalError) as e:
        exc = e
    status, code = _status(exc)
    man = RunManifest(config.to_dict(), _safe_derived(config.params), artifacts,
                      {"wall_seconds": time.perf_counter() - t0}, status, code, results, git_describe())
    man.write(d)
    return man


def _safe_derived(params):
    try:
        return derived_quantities(params)
    except (PreconditionError, NumericalError) as exc:
        return {"error": str(exc)}


def _fit_rate(config, traj, probe):
    t = traj.t
    y = traj.norms(probe.id)
    try:
        if classify_regime(config.params) is Regime.DEGENERATE_BOHM:
            fit = fit_decay((t, y), "algebraic", beta=config.beta_default())
        else:
            fit = fit_decay((t, y), "exponential")
        return fit.rate, fit.r_squared
    except PreconditionError:
        return math.nan, math.nan


def run_simulation(config: RunConfig, out: str | None = None) -> RunManifest:
    t0 = time.perf_counter()
    d = _run_dir(config, out)
    artifacts, results, exc = [], {}, None
    try:
        p = config.params
        grid = config.grid.build(p)
        profile = build_profile(p, grid)
        profile.to_csv(d / "profile.csv")
        artifacts.append("profile.csv")
        sim_grid = PeriodicStrip(grid, config.grid.ny) if config.grid.ny else grid
        ini = config.initial
        state0 = make_initial(ini.family, ini.amplitude, sim_grid, profile, lam=ini.lam,
                              beta=config.beta_default(), center=ini.center, width=ini.width,
                              seed=config.seed)
        probes = config.resolved_probes()
        _, traj = evolve(state0, profile, scheme=config.scheme, probes=probes)
        traj.to_csv(d / "trajectory.csv")
        artifacts.append("trajectory.csv")
        results = {"steps": traj.steps, "final": dict(zip(traj.header, traj.rows[-1]))}
        for w in probes:
            rate, r2 = _fit_rate(config, traj, w)
            results[f"rate_{w.id}"] = _finite_or_none(rate)
            results[f"r2_{w.id}"] = _finite_or_none(r2)
    except (PreconditionError, NumericalError) as e:
        exc = e
    status, code = _status(exc)
    man = RunManifest(config.to_dict(), _safe_derived(config.params), artifacts,
                      {"wall_seconds": time.perf_counter() - t0}, status, code, results, git_describe())
    man.write(d)
    return man


def run_qform(config: RunConfig, epsilon: float, beta: float | None = None, check_bounds: bool = True,
              out: str | None = None):
    t0 = time.perf_counter()
    d = _run_dir(config, out)
    p = config.params
    if beta is None:
        beta = degenerate_constants(p).Gamma * math.sqrt(p.phi_b)
    grid = config.grid.build(p)
    report = qform_check(epsilon, beta, p, grid, check_bounds=check_bounds)
    report.to_csv(d / "qform.csv")
    results = {"epsilon": epsilon, "beta": beta, "all_pass": report.all_pass,
               "oracle_agrees": report.oracle_agrees, "c_margin": report.c_margin,
               "min_scaled_eig": report.min_scaled_eig,
               "failing_nodes": int(np.sum(~report.conditions_ok))}
    man = RunManifest(config.to_dict(), _safe_derived(p), ["qform.csv"],
                      {"wall_seconds": time.perf_counter() - t0}, "ok", EXIT_OK, results, git_describe())
    man.write(d)
    return report, man


# --- sweeps ----------------------------------------------------------------

def _sweep_task(args):
    cfg_dict, out, mode = args
    cfg = RunConfig.from_dict(cfg_dict)
    man = run_simulation(cfg, out) if mode == "simulate" else run_stationary(cfg, out)
    return cfg.run_id(), man


def expand_axes(template: RunConfig, axes: dict) -> list:
    keys = list(axes)
    combos = []
    for values in itertools.product(*(axes[k] for k in keys)):
        sets = [f"{k}={_toml_value(v)}" for k, v in zip(keys, values)]
        combos.append((dict(zip(keys, values)), template.with_overrides(sets)))
    return combos


def _toml_value(v):
    return tomli_w.dumps({"v": v}).split("=", 1)[1].strip()


def sweep(template: RunConfig, axes: dict, out: str | None = None, jobs: int = 1,
          mode: str = "simulate") -> list:
    """Run every combination of ``axes`` and write ``sweep.csv`` under ``out``.

    Rows come back in combination order whatever the degree of parallelism.
    Failed runs become rows with their status; the sweep itself never aborts.
    """
    if mode not in ("simulate", "stationary"):
        raise ConfigError(f"unknown sweep mode {mode!r}")
    combos = expand_axes(template, axes)
    out = out or template.output_dir
    tasks = [(cfg.to_dict(), out, mode) for _, cfg in combos]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    rows = []
    for (values, _), (rid, man) in zip(combos, results):
        row = {"run_id": rid, **values, "status": man.status, "exit_code": man.exit_code}
        if mode == "simulate":
            final = man.results.get("final", {})
            row.update({k: v for k, v in final.items() if k.startswith("norm_")})
            row.update({k: v for k, v in man.results.items() if k.startswith("rate_")})
        else:
            sups = man.results.get("degenerate_sups")
            if sups:
                row.update({f"sup[{name}][{i}]": v for name, vals in sups.items() for i, v in enumerate(vals)})
            fit = man.results.get("decay_fit")
            if fit:
                row["decay_rate"] = fit["rate"]
        rows.append(row)
    write_rows_csv(rows, Path(out) / "sweep.csv")
    return rows


def write_rows_csv(rows, path) -> None:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r.get(c)) for c in cols) + "\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    s = str(v)
    return f'"{s}"' if "," in s else s


# --- CLI -------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.set:
        cfg = cfg.with_overrides(args.set)
    return cfg


def _cmd_existence(args):
    v = existence_check(_load_config(args).params)
    for k, val in v.as_dict().items():
        print(f"{k}={val}")
    return EXIT_OK


def _cmd_stationary(args):
    man = run_stationary(_load_config(args), args.out)
    print(json.dumps(man.results, indent=2, default=_json_default))
    print(f"status={man.status}")
    return man.exit_code


def _cmd_simulate(args):
    cfg = _load_config(args)
    man = run_simulation(cfg, args.out)
    print(f"run_id={cfg.run_id()}")
    print(f"status={man.status}")
    for k, v in man.results.items():
        if k.startswith(("rate_", "r2_")):
            print(f"{k}={v}")
    return man.exit_code


def _cmd_sweep(args):
    cfg = _load_config(args)
    axes = {}
    for item in args.axis or []:
        key, raw = item.split("=", 1) if "=" in item else (item, "")
        vals = [_parse_override(f"x={v}")[1] for v in raw.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"axis {key!r} has no values")
        axes[key.strip()] = vals
    if not axes:
        raise ConfigError("sweep needs at least one --axis key=v1,v2,...")
    rows = sweep(cfg, axes, args.out, args.jobs, args.mode)
    bad = sum(r["exit_code"] != 0 for r in rows)
    print(f"runs={len(rows)} failed={bad}")
    return EXIT_OK


def _cmd_qform(args):
    cfg = _load_config(args)
    report, man = run_qform(cfg, args.epsilon, args.beta, not args.no_bounds, args.out)
    for k, v in man.results.items():
        print(f"{k}={v}")
    return EXIT_OK


def _cmd_roots(args):
    if args.gamma_limit:
        print(f"lambda0(limit)={solve_lambda0(None):.6f}")
        return EXIT_OK
    gammas = args.gammas or [1.1, 1.2, 1.3, 1.4, 5.0 / 3.0, 2.0, 2.5, 3.0, 5.0]
    print("gamma,lambda0")
    for g in gammas:
        print(f"{g:.6g},{solve_lambda0(g):.10f}")
    return EXIT_OK


def _cmd_fit(args):
    data = read_trajectory_csv(args.trajectory)
    col = args.column or next(c for c in data if c.startswith("norm_"))
    if col not in data:
        raise ConfigError(f"column {col!r} not in trajectory")
    fit = fit_decay((data["t"], data[col]), args.model, beta=args.beta,
                    window=tuple(args.window) if args.window else None)
    print(f"column={col}")
    print(f"model={fit.model}")
    print(f"rate={fit.rate:.10g}")
    print(f"amplitude={fit.amplitude:.10g}")
    print(f"r_squared={fit.r_squared:.10g}")
    print(f"window={fit.window[0]:.6g},{fit.window[1]:.6g}")
    if fit.flagged:
        print("flagged=nonpositive values dropped")
    if args.lam is not None and args.eps is not None:
        regime = Regime.DEGENERATE_BOHM if args.model == "algebraic" else Regime.NONDEGENERATE_BOHM
        print(f"theorem_rate={theorem_rate(args.lam, args.eps, regime):.10g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sheathlab", description="Plasma sheath stationary profiles and stability runs")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    common.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("existence", parents=[common], help="report whether a monotone sheath exists")
    sub.add_parser("stationary", parents=[common], help="build and verify the stationary profile")
    sub.add_parser("simulate", parents=[common], help="evolve a perturbation and record norms")
    sp = sub.add_parser("sweep", parents=[common], help="run a grid of configurations")
    sp.add_argument("--axis", action="append", metavar="KEY=V1,V2", help="sweep axis")
    sp.add_argument("--mode", choices=("simulate", "stationary"), default="simulate")
    qp = sub.add_parser("qform", parents=[common], help="check positivity of the weighted-energy form")
    qp.add_argument("--epsilon", type=float, default=4.0)
    qp.add_argument("--beta", type=float, default=None)
    qp.add_argument("--no-bounds", action="store_true", help="skip the exponent preconditions")
    rp = sub.add_parser("roots", parents=[common], help="critical weight exponent table")
    rp.add_argument("--gamma-limit", action="store_true", help="limiting root as gamma -> 1")
    rp.add_argument("--gammas", type=float, nargs="+")
    fp = sub.add_parser("fit", parents=[common], help="fit a decay law to a trajectory CSV")
    fp.add_argument("trajectory")
    fp.add_argument("--column")
    fp.add_argument("--model", choices=("exponential", "algebraic"), default="exponential")
    fp.add_argument("--beta", type=float)
    fp.add_argument("--window", type=float, nargs=2)
    fp.add_argument("--lam", type=float)
    fp.add_argument("--eps", type=float)
    return ap


COMMANDS = {
    "existence": _cmd_existence,
    "stationary": _cmd_stationary,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "qform": _cmd_qform,
    "roots": _cmd_roots,
    "fit": _cmd_fit,
}


def cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


def main() -> None:
    sys.exit(cli())
