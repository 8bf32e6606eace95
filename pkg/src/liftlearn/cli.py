"""Configuration-driven pipeline driver.

Stages run in order ``simulate-fom -> lift-snapshots -> build-basis -> infer
-> simulate-rom -> diagnose``. Each stage writes its artifacts below the
output directory and records them (with sha256 checksums) in
``manifest.json``; a stage whose cache key and artifacts are unchanged is
skipped unless ``--force`` is given.

Exit codes: 0 success, 2 invalid configuration, 3 stage failure or missing
artifact, 4 checksum mismatch.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .integrators import IntegrationError, chord_midpoint_stepper, integrate
from .io import file_sha256, load_matrix, read_csv, save_matrix, write_csv
from .lifting import lift_fields, make_lifting
from .pde_bench import PAPER_POINTS, Problem, initial_condition, make_fom
from .pipeline import (METHODS, FOMRun, diagnose_trajectory, fit, model_from_operators,
                       operators_of, simulate)
from .reduction import ReducedBasis, SnapshotSet, block_map, build_basis
from .rom import mean_wall_clock, n_steps_for

log = logging.getLogger("liftlearn")

STAGES = ("simulate-fom", "lift-snapshots", "build-basis", "infer", "simulate-rom", "diagnose")
CONFIG_VERSION = 1
ENV_PREFIX = "LIFTLEARN_CFG_"

DEFAULTS: Dict[str, Any] = {
    "version": CONFIG_VERSION,
    "grid": {"points": None},
    "dt": 0.005,
    "t_train": 10.0,
    "t_end": None,
    "r_sweep": [1, 2, 3, 4, 5],
    "methods": ["sp-liftlearn"],
    "reg": 0.0,
    "stepper": "kahan",
    "stride": 1,
    "output": "runs/default",
    "timing_repeats": 20,
    "seed": 0,
}

# config keys that affect each stage (cumulative along the chain)
STAGE_KEYS = {
    "simulate-fom": ("problem", "grid", "dt", "t_end"),
    "lift-snapshots": ("stride",),
    "build-basis": ("t_train", "r_sweep"),
    "infer": ("methods", "reg"),
    "simulate-rom": ("stepper", "timing_repeats"),
    "diagnose": (),
}

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE, EXIT_MISMATCH = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


class MissingArtifact(StageError):
    """An input artifact is absent; ``producer`` names the subcommand that writes it."""

    def __init__(self, producer: str, path: str = ""):
        super().__init__(producer, f"missing artifact {path}; run `{producer}` first")
        self.producer = producer


class ArtifactMismatch(RuntimeError):
    pass


# ---- configuration -------------------------------------------------------------
def _deep_update(base: Dict, upd: Dict) -> Dict:
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def apply_env_overrides(cfg: Dict, environ: Optional[Dict[str, str]] = None) -> Dict:
    """``LIFTLEARN_CFG_DT=0.01`` or ``LIFTLEARN_CFG_GRID__POINTS=[50,50]`` (YAML values)."""
    environ = os.environ if environ is None else environ
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = cfg
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = yaml.safe_load(raw)
    return cfg


def validate_config(cfg: Dict) -> Dict:
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}")
    try:
        cfg["problem"] = Problem(cfg["problem"]).value
    except (KeyError, ValueError):
        raise ConfigError(f"problem must be one of {[p.value for p in Problem]}") from None
    dt = float(cfg["dt"])
    if not dt > 0:
        raise ConfigError("dt must be positive")
    cfg["dt"] = dt
    t_train = float(cfg["t_train"])
    t_end = float(cfg["t_end"] if cfg["t_end"] is not None else t_train)
    if t_end < t_train:
        raise ConfigError("t_end must be >= t_train (the test window starts at t_train)")
    for name, T in (("t_train", t_train), ("t_end", t_end)):
        try:
            n_steps_for(T, dt)
        except ValueError:
            raise ConfigError(f"{name}={T} is not an integer multiple of dt={dt}") from None
    cfg["t_train"], cfg["t_end"] = t_train, t_end
    stride = int(cfg["stride"])
    if stride < 1 or n_steps_for(t_train, dt) % stride:
        raise ConfigError("stride must be >= 1 and divide the number of training steps")
    cfg["stride"] = stride
    rs = cfg["r_sweep"]
    if not rs or any(int(r) < 1 for r in rs):
        raise ConfigError("r_sweep must be a nonempty list of positive ranks")
    cfg["r_sweep"] = sorted({int(r) for r in rs})
    unknown = set(cfg["methods"]) - set(METHODS)
    if unknown or not cfg["methods"]:
        raise ConfigError(f"methods must be a nonempty subset of {METHODS}")
    if cfg["problem"] == Problem.KGZ_2D.value and "hopinf" in cfg["methods"]:
        raise ConfigError("hopinf needs a canonical Hamiltonian problem; KGZ is not")
    reg = cfg["reg"]
    regs = reg if isinstance(reg, dict) else {m: reg for m in cfg["methods"]}
    if any(float(v) < 0 for v in regs.values()):
        raise ConfigError("reg must be nonnegative")
    if cfg["stepper"] not in ("kahan", "midpoint"):
        raise ConfigError("stepper must be kahan or midpoint")
    if int(cfg["timing_repeats"]) < 0:
        raise ConfigError("timing_repeats must be >= 0")
    pts = cfg["grid"].get("points")
    if pts is not None:
        want = len(PAPER_POINTS[Problem(cfg["problem"])])
        if len(pts) != want:
            raise ConfigError(f"grid.points needs {want} entries")
    return cfg


def load_config(path: Optional[str], overrides: Optional[Dict] = None,
                environ: Optional[Dict[str, str]] = None) -> Dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        _deep_update(cfg, data)
    apply_env_overrides(cfg, environ)
    if overrides:
        _deep_update(cfg, overrides)
    return validate_config(cfg)


def reg_for(cfg: Dict, method: str) -> float:
    reg = cfg["reg"]
    return float(reg.get(method, 0.0) if isinstance(reg, dict) else reg)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def stage_key(cfg: Dict, stage: str) -> str:
    key = {"tool": __version__}
    for s in STAGES[:STAGES.index(stage) + 1]:
        for k in STAGE_KEYS[s]:
            key[k] = cfg[k]
    return _hash(key)


# ---- manifest ------------------------------------------------------------------
@dataclass
class Workspace:
    root: Path
    cfg: Dict
    manifest: Dict = field(default_factory=dict)

    @classmethod
    def open(cls, root, cfg) -> "Workspace":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        mpath = root / "manifest.json"
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
        manifest.setdefault("stages", {})
        manifest["config_hash"] = _hash({k: v for k, v in cfg.items() if k not in ("output",)})
        manifest["tool_version"] = __version__
        manifest["config"] = cfg
        return cls(root, cfg, manifest)

    def save(self):
        tmp = self.root / "manifest.json.tmp"
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        os.replace(tmp, self.root / "manifest.json")

    def path(self, rel: str) -> Path:
        return self.root / rel

    def is_current(self, stage: str) -> bool:
        entry = self.manifest["stages"].get(stage)
        if not entry or entry.get("key") != stage_key(self.cfg, stage):
            return False
        for rel, digest in entry["artifacts"].items():
            p = self.path(rel)
            if not p.exists() or file_sha256(p) != digest:
                return False
        return True

    def verify(self, stage: str):
        """Check a finished upstream stage before reading its artifacts."""
        entry = self.manifest["stages"].get(stage)
        if not entry:
            raise MissingArtifact(stage, f"for stage {stage!r}")
        for rel, digest in entry["artifacts"].items():
            p = self.path(rel)
            if not p.exists():
                raise MissingArtifact(stage, rel)
            if file_sha256(p) != digest:
                raise ArtifactMismatch(f"{rel} does not match its manifest checksum")
        if entry.get("key") != stage_key(self.cfg, stage):
            raise ArtifactMismatch(f"artifacts of {stage!r} were produced by a different configuration; "
                                   "re-run it or use --force")

    def record(self, stage: str, artifacts: Dict[str, str], seconds: float, extra=None):
        self.manifest["stages"][stage] = {
            "key": stage_key(self.cfg, stage), "artifacts": dict(sorted(artifacts.items())),
            "seconds": seconds, **(extra or {})}
        # downstream entries are stale once an upstream stage is rewritten
        for later in STAGES[STAGES.index(stage) + 1:]:
            self.manifest["stages"].pop(later, None)
        self.save()

    def save_matrix(self, artifacts: Dict[str, str], rel: str, a: np.ndarray):
        artifacts[rel] = save_matrix(self.path(rel), a)

    def write_json(self, artifacts: Dict[str, str], rel: str, obj):
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float))
        artifacts[rel] = file_sha256(p)


# ---- stages --------------------------------------------------------------------
def _points(cfg):
    pts = cfg["grid"].get("points")
    return tuple(pts) if pts else None


def stage_simulate_fom(ws: Workspace) -> Dict[str, str]:
    cfg = ws.cfg
    model = make_fom(cfg["problem"], _points(cfg))
    x0 = model.pack(initial_condition(model))
    step = chord_midpoint_stepper(model.rhs, model.linear_part(), cfg["dt"])
    t0 = time.perf_counter()
    times, X = integrate(step, x0, cfg["dt"], n_steps_for(cfg["t_end"], cfg["dt"]))
    seconds = time.perf_counter() - t0
    art: Dict[str, str] = {}
    ws.save_matrix(art, "fom/states.spll", X)
    ws.save_matrix(art, "fom/times.spll", times)
    ws.write_json(art, "fom/info.json", {"seconds": seconds, "n": model.n, "dim": model.dim})
    return art


def stage_lift_snapshots(ws: Workspace) -> Dict[str, str]:
    ws.verify("simulate-fom")
    cfg = ws.cfg
    model = make_fom(cfg["problem"], _points(cfg))
    spec = make_lifting(model.problem)
    s = cfg["stride"]
    X = load_matrix(ws.path("fom/states.spll"))[:, ::s]
    times = load_matrix(ws.path("fom/times.spll"))[::s]
    art: Dict[str, str] = {}
    for name, M in lift_fields(spec, model.split(X)).items():
        ws.save_matrix(art, f"snapshots/{name}.spll", M)
    ws.save_matrix(art, "snapshots/times.spll", times)
    return art


def load_run(ws: Workspace) -> FOMRun:
    ws.verify("lift-snapshots")
    cfg = ws.cfg
    model = make_fom(cfg["problem"], _points(cfg))
    spec = make_lifting(model.problem)
    fields = {name: load_matrix(ws.path(f"snapshots/{name}.spll")) for name in spec.lifted_fields}
    times = load_matrix(ws.path("snapshots/times.spll"))
    info = json.loads(ws.path("fom/info.json").read_text()) if ws.path("fom/info.json").exists() else {}
    return FOMRun(model, spec, SnapshotSet(fields, times, model.problem), info.get("seconds", float("nan")),
                  initial_condition(model), cfg["dt"], cfg["stride"])


def stage_build_basis(ws: Workspace) -> Dict[str, str]:
    cfg = ws.cfg
    run = load_run(ws)
    k = n_steps_for(cfg["t_train"], run.snapshots.dt) + 1
    basis = build_basis(run.snapshots.window(0, k), run.spec.aux_names, max(cfg["r_sweep"]))
    art: Dict[str, str] = {}
    for name, B in basis.blocks.items():
        ws.save_matrix(art, f"basis/{name}.spll", B)
    return art


def load_basis(ws: Workspace, run: FOMRun) -> ReducedBasis:
    ws.verify("build-basis")
    fmap = block_map(run.model.problem, run.spec.aux_names)
    blocks = {name: load_matrix(ws.path(f"basis/{name}.spll")) for name in sorted(set(fmap.values()))}
    return ReducedBasis(run.model.problem, blocks, fmap)


def _jobs(cfg):
    return [(m, r) for m in cfg["methods"] for r in cfg["r_sweep"]]


def _rom_dir(method, r):
    return f"rom/{method}/r{r:03d}"


def _traj_path(method, r):
    return f"traj/{method}/r{r:03d}.spll"


def _infer_job(args):
    root, cfg, method, r = args
    ws = Workspace.open(root, cfg)
    run = load_run(ws)
    basis = load_basis(ws, run).truncate(r)
    fitted = fit(run, method, r, cfg["t_train"], reg_for(cfg, method), basis=basis)
    arrays = {k: np.asarray(v) for k, v in operators_of(fitted).items()}
    reports = {k: {**rep.as_dict(), **rep.notes} for k, rep in fitted.reports.items()}
    return method, r, arrays, reports


def _pool_map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def stage_infer(ws: Workspace, workers: int = 1) -> Dict[str, str]:
    cfg = ws.cfg
    ws.verify("build-basis")
    art: Dict[str, str] = {}
    jobs = [(str(ws.root), cfg, m, r) for m, r in _jobs(cfg)]
    for method, r, arrays, reports in _pool_map(_infer_job, jobs, workers):
        d = _rom_dir(method, r)
        for name, a in sorted(arrays.items()):
            ws.save_matrix(art, f"{d}/{name}.spll", a)
        ws.write_json(art, f"{d}/report.json", {"method": method, "r": r, "reg": reg_for(cfg, method),
                                                "t_train": cfg["t_train"], "problem": cfg["problem"],
                                                "reports": reports})
    return art


def load_fitted(ws: Workspace, run: FOMRun, basis: ReducedBasis, method: str, r: int):
    d = ws.path(_rom_dir(method, r))
    arrays = {p.stem: load_matrix(p) for p in sorted(d.glob("*.spll"))}
    if not arrays:
        raise MissingArtifact("infer", str(d))
    return model_from_operators(run, method, basis.truncate(r), arrays)


def _simulate_job(args):
    root, cfg, method, r = args
    ws = Workspace.open(root, cfg)
    run = load_run(ws)
    basis = load_basis(ws, run)
    fitted = load_fitted(ws, run, basis, method, r)
    try:
        times, X = simulate(fitted, cfg["dt"], cfg["t_end"], cfg["stepper"])
    except IntegrationError as exc:
        raise StageError("simulate-rom", f"{method} r={r} failed at step {exc.step}: {exc}") from exc
    return method, r, X


def stage_simulate_rom(ws: Workspace, workers: int = 1) -> Dict[str, str]:
    cfg = ws.cfg
    ws.verify("infer")
    art: Dict[str, str] = {}
    jobs = [(str(ws.root), cfg, m, r) for m, r in _jobs(cfg)]
    for method, r, X in _pool_map(_simulate_job, jobs, workers):
        ws.save_matrix(art, _traj_path(method, r), X)
    # timing runs sequentially in this process for stable wall-clock numbers
    timings = {}
    if cfg["timing_repeats"]:
        run = load_run(ws)
        basis = load_basis(ws, run)
        for method, r in _jobs(cfg):
            fitted = load_fitted(ws, run, basis, method, r)
            timings[f"{method}/{r}"] = mean_wall_clock(
                lambda: simulate(fitted, cfg["dt"], cfg["t_train"], cfg["stepper"]), cfg["timing_repeats"])
    ws.write_json(art, "rom/timings.json", timings)
    return art


SUMMARY_HEADER = ["problem", "method", "r", "label_2r", "rom_dim", "train_error", "test_error",
                  "max_energy_error", "max_lifted_energy_drift", "seconds", "efficacy"]


def stage_diagnose(ws: Workspace) -> Dict[str, str]:
    cfg = ws.cfg
    ws.verify("simulate-rom")
    run = load_run(ws)
    basis = load_basis(ws, run)
    timings = json.loads(ws.path("rom/timings.json").read_text())
    rows, energy_rows = [], []
    for method, r in _jobs(cfg):
        fitted = load_fitted(ws, run, basis, method, r)
        X = load_matrix(ws.path(_traj_path(method, r)))
        times = cfg["dt"] * np.arange(X.shape[1])
        rep = diagnose_trajectory(run, fitted, times, X, cfg["t_train"],
                                  timings.get(f"{method}/{r}", float("nan")))
        drift = float(np.max(rep.lifted_energy_drift)) if rep.lifted_energy_drift is not None else float("nan")
        rows.append([rep.problem, method, r, 2 * r, X.shape[0], rep.train_error, rep.test_error,
                     rep.max_energy_error, drift, rep.seconds, rep.efficacy])
        label = f"{method}/2r={2 * r}"
        energy_rows.extend((t, e, label) for t, e in zip(times, rep.energy_error))
    art: Dict[str, str] = {}
    write_csv(ws.path("summary.csv"), SUMMARY_HEADER, rows)
    art["summary.csv"] = file_sha256(ws.path("summary.csv"))
    write_csv(ws.path("energy_error.csv"), ["t", "value", "series"], energy_rows)
    art["energy_error.csv"] = file_sha256(ws.path("energy_error.csv"))
    return art


STAGE_FUNCS = {
    "simulate-fom": lambda ws, w: stage_simulate_fom(ws),
    "lift-snapshots": lambda ws, w: stage_lift_snapshots(ws),
    "build-basis": lambda ws, w: stage_build_basis(ws),
    "infer": stage_infer,
    "simulate-rom": stage_simulate_rom,
    "diagnose": lambda ws, w: stage_diagnose(ws),
}


def run_stage(ws: Workspace, stage: str, workers: int = 1, force: bool = False) -> bool:
    """Run one stage; returns ``False`` when it was skipped as up to date."""
    if not force and ws.is_current(stage):
        log.info("%s: up to date", stage)
        return False
    t0 = time.perf_counter()
    try:
        art = STAGE_FUNCS[stage](ws, workers)
    except (StageError, ArtifactMismatch):
        raise
    except Exception as exc:  # surface with the stage name
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    ws.record(stage, art, time.perf_counter() - t0)
    log.info("%s: done in %.2fs", stage, time.perf_counter() - t0)
    return True


def run_pipeline(config_path: Optional[str], output: Optional[str] = None, workers: int = 1,
                 force: bool = False, stages: Sequence[str] = STAGES,
                 overrides: Optional[Dict] = None) -> Dict:
    """Run ``stages`` in order and return the manifest."""
    cfg = load_config(config_path, overrides)
    if output is not None:
        cfg["output"] = output
    ws = Workspace.open(cfg["output"], cfg)
    for stage in stages:
        run_stage(ws, stage, workers, force)
    ws.save()
    return ws.manifest


# ---- compare -------------------------------------------------------------------
def compare(run_dirs: Sequence[str], out_path: str) -> List[List]:
    """Join ``summary.csv`` files into a train-error-by-2r table, one column per method."""
    table: Dict[tuple, Dict[str, str]] = {}
    methods: List[str] = []
    for d in run_dirs:
        p = Path(d) / "summary.csv"
        if not p.exists():
            raise MissingArtifact("diagnose", str(p))
        for row in read_csv(p):
            key = (row["problem"], int(row["label_2r"]))
            table.setdefault(key, {})[row["method"]] = row["train_error"]
            if row["method"] not in methods:
                methods.append(row["method"])
    rows = [[prob, l2r] + [table[(prob, l2r)].get(m, "") for m in methods]
            for prob, l2r in sorted(table)]
    write_csv(out_path, ["problem", "label_2r"] + [f"train_error[{m}]" for m in methods], rows)
    return rows


# ---- entry point -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liftlearn", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"liftlearn {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML experiment config")
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="parallel (method, r) jobs")
        p.add_argument("--force", action="store_true", help="ignore cached stage results")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("run", help="run the whole pipeline (or one stage)")
    common(p)
    p.add_argument("--stage", choices=STAGES, help="run only this stage")
    for name in ("simulate-fom", "build-basis", "infer", "simulate-rom", "diagnose"):
        common(sub.add_parser(name, help=f"run the {name} stage"))
    p = sub.add_parser("compare", help="join summary tables of several runs")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--output", required=True, help="CSV file to write")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            compare(args.runs, args.output)
            return EXIT_OK
        if args.command == "run":
            stages = (args.stage,) if args.stage else STAGES
        elif args.command == "simulate-fom":
            # lifting is part of producing usable snapshot data
            stages = ("simulate-fom", "lift-snapshots")
        else:
            stages = (args.command,)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        run_pipeline(args.config, args.output, args.workers, args.force, stages)
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ArtifactMismatch as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
