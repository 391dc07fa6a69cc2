"""Configuration, run manifests, experiment orchestration and CSV export.

A run directory holds ``manifest.txt`` plus ``costs.csv``, ``trace.csv`` and
``summary.csv``; learning methods add ``curve.csv`` and one checkpoint
directory per seed. Every CSV starts with a ``# manifest=<id>`` line naming
the manifest it came from. Nothing written to a CSV depends on wall-clock
time, so re-running a manifest reproduces the CSVs byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import MethodRun, method_spec, run_method
from .domain import ConfigError, ExperimentConfig, read_plansets
from .epos import EposProblem, brute_force_oracle, epos_run
from .marl import CURVE_COLUMNS, execute, load_checkpoint, save_checkpoint, train
from .plangen import GENERATOR_NAME, write_dataset
from .scenario import Scenario

OUTPUT_ENV = "HRCL_OUTPUT_ROOT"
COST_COLUMNS = ("seed", "episode", "period", "mean_discomfort", "inefficiency", "combined", "reward")
TRACE_COLUMNS = ("seed", "period", "iteration", "inefficiency", "combined")
SUMMARY_METRICS = ("mean_discomfort", "inefficiency", "combined", "reward")
PLOT_COLUMNS = ("method", "param", "param_value", "seed", "metric", "value")

PROFILES: dict[str, dict] = {
    "desk": {},
    "paper": {"U": 40, "K": 16, "D": 100, "T": 16, "episodes": 2000},
}
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


# --- configuration ------------------------------------------------------------------

_PI = re.compile(r"^\s*(?:([0-9.eE+-]+)\s*\*\s*)?pi\s*(?:/\s*([0-9.eE+-]+))?\s*$")


def _parse_float(text: str) -> float:
    m = _PI.match(text)
    if m:
        num = float(m.group(1)) if m.group(1) else 1.0
        den = float(m.group(2)) if m.group(2) else 1.0
        return num * math.pi / den
    return float(text)


def parse_value(key: str, text: str):
    """Convert ``text`` to the type of config field ``key``; unknown keys raise ConfigError."""
    if key == "seeds":
        return parse_seeds(text)
    if key == "workers":
        return _typed(key, text, int)
    if key == "profile":
        if text not in PROFILES:
            raise ConfigError(key, f"profile={text!r} is not one of {sorted(PROFILES)}")
        return text
    if key not in CONFIG_FIELDS:
        raise ConfigError(key, f"unknown config key {key!r}")
    kind = type(getattr(ExperimentConfig(), key))
    if kind is bool:
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(key, f"{key}={text!r} is not a boolean")
        return low in ("true", "1", "yes")
    if kind is float:
        return _typed(key, text, _parse_float)
    if kind is int:
        return _typed(key, text, int)
    return text.strip()


def _typed(key, text, convert):
    try:
        return convert(text.strip())
    except ValueError:
        raise ConfigError(key, f"{key}={text!r} is not a valid value") from None


def parse_seeds(text: str) -> tuple[int, ...]:
    items = [s for s in re.split(r"[,\s]+", text.strip()) if s]
    if not items:
        raise ConfigError("seeds", "seed list is empty")
    try:
        return tuple(int(s) for s in items)
    except ValueError:
        raise ConfigError("seeds", f"seeds={text!r} must be integers") from None


def read_config_file(path: Path | str) -> dict[str, str]:
    """Flatten a ``key = value`` file with optional ``[section]`` headers into raw strings.

    Section names only group keys for readability; a key may appear once.
    """
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[__top__]\n" + text
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as err:
        raise ConfigError("config", f"cannot parse {path}: {err}") from None
    raw: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in raw:
                raise ConfigError(key, f"key {key!r} set twice in {path}")
            raw[key] = value
    return raw


@dataclass(frozen=True)
class Settings:
    config: ExperimentConfig
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    workers: int = 1


def resolve_settings(file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None,
                     profile: str | None = None) -> Settings:
    """Profile defaults, then the config file, then CLI overrides (last wins)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if profile is not None:
        merged["profile"] = profile
    values = {k: parse_value(k, str(v)) for k, v in merged.items()}
    base = dict(PROFILES[values.pop("profile", "desk")])
    seeds = values.pop("seeds", DEFAULT_SEEDS)
    workers = values.pop("workers", 1)
    base.update(values)
    if workers < 1:
        raise ConfigError("workers", "workers >= 1")
    return Settings(ExperimentConfig(**base), tuple(seeds), workers)


def config_lines(config: ExperimentConfig) -> list[str]:
    """``key=value`` lines for every field except method and seed (recorded separately)."""
    return [f"{f}={_fmt(getattr(config, f))}" for f in CONFIG_FIELDS if f not in ("method", "seed")]


# --- manifest -----------------------------------------------------------------------

def dataset_hash(directory: Path | str | None) -> str:
    if directory is None:
        return "generated"
    h = hashlib.sha256()
    for path in sorted(Path(directory).glob("agent_*.plans")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class RunManifest:
    """Everything that determines a run's outputs, plus when it was created.

    ``run_id`` hashes the deterministic part only, so two runs of the same
    manifest carry the same id in their CSVs.
    """

    config: ExperimentConfig
    seeds: tuple[int, ...]
    output_dir: Path
    dataset: Path | None = None
    dataset_hash: str = "generated"
    sweep_param: str = ""
    sweep_value: str = ""
    workers: int = 1
    created: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds", "seed list is empty")

    @property
    def method(self) -> str:
        return self.config.method

    def body(self) -> list[str]:
        return ([f"method={self.method}", f"seeds={','.join(map(str, self.seeds))}",
                 f"dataset_hash={self.dataset_hash}", f"sweep_param={self.sweep_param}",
                 f"sweep_value={self.sweep_value}"] + config_lines(self.config))

    @property
    def run_id(self) -> str:
        return hashlib.sha256("\n".join(self.body()).encode()).hexdigest()[:12]

    def write(self) -> Path:
        """Write ``manifest.txt`` once; an existing manifest must describe the same run."""
        path = Path(self.output_dir) / "manifest.txt"
        if path.exists():
            existing = read_manifest(path)
            if existing.get("run_id") != self.run_id:
                raise FileExistsError(f"{path} belongs to a different run ({existing.get('run_id')})")
            return path
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"run_id={self.run_id}"] + self.body() + [f"created={self.created}"]
        path.write_text("\n".join(lines) + "\n")
        return path


def read_manifest(path: Path | str) -> dict[str, str]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    out = {}
    for line in path.read_text().splitlines():
        k, _, v = line.partition("=")
        out[k] = v
    return out


def make_manifest(settings: Settings, output_dir: Path | str | None = None, dataset: Path | str | None = None,
                  sweep_param: str = "", sweep_value: str = "") -> RunManifest:
    config = settings.config
    if output_dir is None:
        output_dir = output_root() / config.method
    return RunManifest(config, settings.seeds, Path(output_dir), Path(dataset) if dataset else None,
                       dataset_hash(dataset), sweep_param, str(sweep_value), settings.workers)


# --- CSV helpers --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns, rows, run_id: str) -> Path:
    """CSV with a leading ``# manifest=<id>`` line; floats use repr so values round-trip."""
    buf = io.StringIO()
    buf.write(f"# manifest={run_id}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns] if isinstance(row, dict) else [_fmt(x) for x in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path: Path | str) -> list[dict[str, str]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def summarize(per_seed: dict[int, dict[str, float]]) -> list[dict]:
    """Per-seed rows followed by ``mean`` and ``sem`` (standard error of the mean) rows."""
    rows = [{"seed": s, **per_seed[s]} for s in per_seed]
    rows.append({"seed": "mean", **{m: math.fsum(per_seed[s][m] for s in per_seed) / len(per_seed)
                                    for m in SUMMARY_METRICS}})
    rows.append({"seed": "sem", **{m: standard_error([per_seed[s][m] for s in per_seed]) for m in SUMMARY_METRICS}})
    return rows


# --- orchestration ------------------------------------------------------------------

def _report_row(seed: int, episode: int, r) -> dict:
    return {"seed": seed, "episode": episode, "period": r.period, "mean_discomfort": r.mean_discomfort,
            "inefficiency": r.inefficiency, "combined": r.combined, "reward": r.reward}


def _seed_outputs(manifest: RunManifest, seed: int) -> dict:
    """Run one seed and return plain rows (picklable, so seeds can run in worker processes)."""
    config = manifest.config.replace(seed=seed)
    plansets = read_plansets(manifest.dataset) if manifest.dataset else None
    scenario = Scenario(config, plansets)
    kwargs = {"keep_episodes": True} if method_spec(config).learns else {}
    run: MethodRun = run_method(config, scenario, **kwargs)
    costs, curve = [], []
    if run.training is not None:
        for e, ep in enumerate(run.training.eval_episodes):
            costs.extend(_report_row(seed, e, r) for r in ep.reports)
        curve = [{"seed": seed, **row} for row in run.training.curve]
        final_episode = len(run.training.eval_episodes)
    else:
        final_episode = 0
    costs.extend(_report_row(seed, final_episode, r) for r in run.reports)
    trace = []
    for info in run.infos:
        if info.epos is None:
            continue
        for it, (ineff, comb) in enumerate(zip(info.epos.inefficiency_trace, info.epos.combined_trace)):
            trace.append({"seed": seed, "period": info.report.period, "iteration": it,
                          "inefficiency": ineff, "combined": comb})
    summary = {
        "mean_discomfort": float(np.mean([r.mean_discomfort for r in run.reports])),
        "inefficiency": float(np.mean([r.inefficiency for r in run.reports])),
        "combined": float(np.mean([r.combined for r in run.reports])),
        "reward": float(np.mean([r.reward for r in run.reports])),
    }
    checkpoint = None
    if run.training is not None:
        t = run.training
        checkpoint = save_checkpoint(Path(manifest.output_dir) / f"checkpoint_seed{seed}", t.policy, t.critic,
                                     config, t.updates)
    return {"costs": costs, "curve": curve, "trace": trace, "summary": summary, "beta": run.beta,
            "checkpoint": str(checkpoint) if checkpoint else None}


def run_experiment(manifest: RunManifest) -> Path:
    """Execute the manifest's method for every seed and write the run's CSVs."""
    out = Path(manifest.output_dir)
    manifest.write()
    if manifest.workers > 1 and len(manifest.seeds) > 1:
        with ProcessPoolExecutor(manifest.workers) as pool:
            results = list(pool.map(_seed_outputs, [manifest] * len(manifest.seeds), manifest.seeds))
    else:
        results = [_seed_outputs(manifest, s) for s in manifest.seeds]
    rid = manifest.run_id
    write_csv(out / "costs.csv", COST_COLUMNS, [r for res in results for r in res["costs"]], rid)
    write_csv(out / "trace.csv", TRACE_COLUMNS, [r for res in results for r in res["trace"]], rid)
    per_seed = {s: res["summary"] for s, res in zip(manifest.seeds, results)}
    write_csv(out / "summary.csv", ("seed",) + SUMMARY_METRICS, summarize(per_seed), rid)
    if any(res["curve"] for res in results):
        write_csv(out / "curve.csv", ("seed",) + CURVE_COLUMNS, [r for res in results for r in res["curve"]], rid)
    return out


def run_sweep(settings: Settings, param: str, values, methods, output_dir: Path | str,
              dataset: Path | str | None = None) -> list[Path]:
    """One run directory per (method, value): ``<output>/<method>/<param>=<value>``."""
    if param not in CONFIG_FIELDS or param in ("method", "seed"):
        raise ConfigError(param, f"cannot sweep {param!r}")
    values = list(values)
    if not values:
        raise ConfigError(param, "sweep has no values")
    outs = []
    for method in methods:
        for raw in values:
            value = parse_value(param, str(raw))
            cfg = settings.config.replace(method=method, **{param: value})
            point = dataclasses.replace(settings, config=cfg)
            out = Path(output_dir) / method / f"{param}={raw}"
            outs.append(run_experiment(make_manifest(point, out, dataset, param, str(raw))))
    return outs


def emit_plot_data(directory: Path | str) -> Path:
    """Collect every run below ``directory`` into one tidy ``plot_data.csv``.

    One row per (method, sweep point, seed, metric) plus a ``_mean`` row per
    (method, sweep point, metric). The comment line lists the source run ids.
    Rows are sorted, so re-emission is byte-identical.
    """
    directory = Path(directory)
    manifests = sorted(directory.rglob("manifest.txt"))
    if not manifests:
        raise FileNotFoundError(f"no completed runs under {directory}")
    rows, run_ids = [], []
    for path in manifests:
        man = read_manifest(path)
        run_ids.append(man["run_id"])
        summary = path.parent / "summary.csv"
        if not summary.exists():
            raise FileNotFoundError(f"{summary} missing; run incomplete")
        param = man.get("sweep_param") or "none"
        value = man.get("sweep_value", "")
        for rec in read_csv(summary):
            if rec["seed"] == "sem":
                continue
            seed = "_mean" if rec["seed"] == "mean" else rec["seed"]
            for metric in SUMMARY_METRICS:
                rows.append((man["method"], param, value, seed, metric, rec[metric]))

    def order(row):
        method, param, value, seed, metric, _ = row
        try:
            v = (0, float(value), "")
        except ValueError:
            v = (1, 0.0, value)
        s = (1, 0) if seed == "_mean" else (0, int(seed))
        return method, param, v, s, metric

    rows.sort(key=order)
    return write_csv(directory / "plot_data.csv", PLOT_COLUMNS, rows, ",".join(sorted(run_ids)))


# --- single-purpose commands ----------------------------------------------------------

def generate_dataset(settings: Settings, output_dir: Path | str, draw: int | None = None) -> Path:
    """Write one plan set per agent (default: the first evaluation draw) plus ``dataset.meta``."""
    config = settings.config
    scenario = Scenario(config)
    draw = scenario.eval_draws[0] if draw is None else draw
    plansets = scenario.plansets(draw)
    meta = {"seed": config.seed, "K": plansets[0].K, "D": plansets[0].D, "U": len(plansets),
            "generator": GENERATOR_NAME, "amplitude": _fmt(scenario.amplitude),
            "scenario": config.scenario, "draw": draw}
    return write_dataset(output_dir, plansets, meta)


def train_run(manifest: RunManifest) -> Path:
    """Train the manifest's learning method on its first seed; write ``curve.csv`` and a checkpoint."""
    config = manifest.config.replace(seed=manifest.seeds[0])
    if not method_spec(config).learns:
        raise ConfigError("method", f"method={config.method!r} does not learn")
    out = Path(manifest.output_dir)
    manifest.write()
    scenario = Scenario(config, read_plansets(manifest.dataset) if manifest.dataset else None)
    result = train(config, method_spec(config), scenario)
    write_csv(out / "curve.csv", CURVE_COLUMNS, result.curve, manifest.run_id)
    save_checkpoint(out / "checkpoint", result.policy, result.critic, config, result.updates)
    return out


def eval_run(manifest: RunManifest, checkpoint: Path | str) -> Path:
    """Decentralized greedy execution of a saved policy on the evaluation episode of every seed."""
    out = Path(manifest.output_dir)
    manifest.write()
    rows, per_seed = [], {}
    for seed in manifest.seeds:
        config = manifest.config.replace(seed=seed)
        scenario = Scenario(config, read_plansets(manifest.dataset) if manifest.dataset else None)
        policy = load_checkpoint(checkpoint, config, None, scenario)
        result = execute(policy, config, None, scenario)
        rows.extend(_report_row(seed, 0, r) for r in result.reports)
        per_seed[seed] = {m: float(np.mean([getattr(r, m) for r in result.reports])) for m in SUMMARY_METRICS}
    write_csv(out / "costs.csv", COST_COLUMNS, rows, manifest.run_id)
    write_csv(out / "summary.csv", ("seed",) + SUMMARY_METRICS, summarize(per_seed), manifest.run_id)
    return out


ORACLE_COLUMNS = ("seed", "epos_objective", "oracle_objective", "epos_inefficiency", "oracle_inefficiency",
                  "relative_gap")


def oracle_run(manifest: RunManifest) -> Path:
    """EPOS against exhaustive search on the first period of each seed's evaluation episode."""
    out = Path(manifest.output_dir)
    manifest.write()
    rows = []
    for seed in manifest.seeds:
        config = manifest.config.replace(seed=seed)
        scenario = Scenario(config, read_plansets(manifest.dataset) if manifest.dataset else None)
        plansets = scenario.plansets(scenario.schedule(0, True)[0])
        target = scenario.initial_target()
        problem = EposProblem(plansets, target, np.full(len(plansets), config.beta), None, scenario.kind,
                              ineff_scale=scenario.ineff_scale(target, plansets),
                              sigma1=config.sigma1, sigma2=config.sigma2)
        result = epos_run(problem, config.L, config.guard)
        value, best = brute_force_oracle(problem)
        epos_value = problem.behavior_objective(result.selections)
        gap = (epos_value - value) / abs(value) if value != 0 else (0.0 if epos_value == 0 else math.inf)
        rows.append({"seed": seed, "epos_objective": epos_value, "oracle_objective": value,
                     "epos_inefficiency": result.inefficiency_trace[-1],
                     "oracle_inefficiency": problem.inefficiency(problem.global_plan(best)),
                     "relative_gap": gap})
    write_csv(out / "oracle.csv", ORACLE_COLUMNS, rows, manifest.run_id)
    return out
