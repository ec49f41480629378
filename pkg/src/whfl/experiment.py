"""File-backed experiment configuration, orchestration and deterministic writers."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bound import BoundParams, bound_table
from .config import MODES, SystemConfig
from .learning import (TRACE_COLUMNS, MetricsTrace, PartitionSpec, QuadraticTask,
                       partition, run_whfl, softmax_task)
from .numerics import RngStream
from .schedules import Schedules
from .topology import Topology, sample_topology

SCHEMA_VERSION = 1
ENV_PREFIX = "WHFL_"
OBJECTIVES = ("mnist_softmax", "quadratic")
BOUND_COLUMNS = ("t", "bound_whfl", "bound_conventional", "bound_idealized")
SUMMARY_COLUMNS = ("sweep_key", "sweep_value", "mode", "final_train_loss",
                   "final_test_accuracy", "mean_edge_power")

_SYSTEM_FIELDS = tuple(f.name for f in dataclasses.fields(SystemConfig) if f.name != "mode")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; every SystemConfig field except ``mode`` is a key."""

    schema_version: int = SCHEMA_VERSION
    system: SystemConfig = field(default_factory=SystemConfig)
    modes: Tuple[str, ...] = MODES
    # objective
    objective: str = "mnist_softmax"
    mnist_dir: str = "data/mnist"
    quadratic_kappa_min: float = 1.0
    quadratic_kappa_max: float = 1.0
    quadratic_spread: float = 1.0
    quadratic_noise_std: float = 0.0
    # data partition
    partition: str = "iid"
    groups_per_user: int = 3
    # topology JSON to load instead of sampling one
    topology_path: Optional[str] = None
    evaluate_every: int = 1
    # bound evaluation
    bound: bool = False
    bound_L: float = 10.0
    bound_mu: float = 1.0
    bound_G2: float = 1.0
    bound_Gamma: float = 1.0
    bound_D0: float = 1e3
    # Monte Carlo validation
    trials: int = 100000
    validate_P_t: float = 1.0
    validate_P_IS: float = 10.0
    # sweep
    sweep_key: Optional[str] = None
    sweep_values: Tuple = ()
    out: str = "out"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}; "
                              f"expected {SCHEMA_VERSION}")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigError(f"modes must be a non-empty subset of {MODES}, got {list(self.modes)}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        PartitionSpec(self.partition, self.groups_per_user)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.evaluate_every < 1:
            raise ConfigError("evaluate_every must be >= 1")
        if self.sweep_key is not None and self.sweep_key not in _all_keys():
            raise ConfigError(f"unknown sweep_key {self.sweep_key!r}")

    # ---- (de)serialization

    def to_dict(self) -> dict:
        d = {"schema_version": self.schema_version}
        d.update({k: v for k, v in self.system.to_dict().items() if k != "mode"})
        for f in dataclasses.fields(self):
            if f.name in ("schema_version", "system"):
                continue
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - set(_all_keys()))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "schema_version" not in doc:
            raise ConfigError("missing schema_version")
        sys_kw = {k: doc[k] for k in _SYSTEM_FIELDS if k in doc}
        exp_kw = {k: v for k, v in doc.items() if k not in sys_kw}
        for k in ("modes", "sweep_values"):
            if k in exp_kw:
                exp_kw[k] = tuple(exp_kw[k])
        try:
            return cls(system=SystemConfig(**sys_kw), **exp_kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


def _experiment_keys():
    return tuple(f.name for f in dataclasses.fields(ExperimentConfig) if f.name != "system")


def _all_keys():
    return _experiment_keys() + _SYSTEM_FIELDS


def _env_key_map() -> Dict[str, str]:
    keys = {}
    for k in _all_keys():
        env = ENV_PREFIX + k.upper()
        if env in keys:
            raise RuntimeError(f"ambiguous environment key {env}")
        keys[env] = k
    return keys


def env_overrides(environ=None) -> dict:
    """Config values from ``WHFL_<KEY>`` variables (JSON literals, else strings)."""
    environ = os.environ if environ is None else environ
    out = {}
    for env, key in _env_key_map().items():
        if env in environ:
            raw = environ[env]
            try:
                out[key] = json.loads(raw)
            except json.JSONDecodeError:
                out[key] = raw
    return out


def load_config(path=None, overrides: Optional[dict] = None, environ=None) -> ExperimentConfig:
    """Defaults, then the file, then environment overrides, then ``overrides``."""
    doc = ExperimentConfig().to_dict()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                file_doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(file_doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        if "schema_version" not in file_doc:
            raise ConfigError(f"{path}: missing schema_version")
        unknown = sorted(set(file_doc) - set(_all_keys()))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
        doc.update(file_doc)
    doc.update(env_overrides(environ))
    doc.update(overrides or {})
    return ExperimentConfig.from_dict(doc)


# ------------------------------------------------------------ writers

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else None
    return o


def write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ------------------------------------------------------- orchestration

def experiment_topology(exp: ExperimentConfig) -> Topology:
    if exp.topology_path:
        return Topology.from_json(Path(exp.topology_path).read_text(encoding="utf-8"))
    cfg = exp.system
    return sample_topology(cfg, RngStream(cfg.seed, ("topology",)))


def build_task(exp: ExperimentConfig):
    cfg = exp.system
    U = cfg.C * cfg.M
    root = RngStream(cfg.seed)
    if exp.objective == "quadratic":
        return QuadraticTask.random(U, 2 * cfg.N, root.child("objective"),
                                    (exp.quadratic_kappa_min, exp.quadratic_kappa_max),
                                    exp.quadratic_spread, exp.quadratic_noise_std)
    from .data import load_mnist_dir
    train = load_mnist_dir(exp.mnist_dir, "train")
    test = load_mnist_dir(exp.mnist_dir, "test")
    shards = partition(train.labels, PartitionSpec(exp.partition, exp.groups_per_user),
                       cfg.C, cfg.M, root.child("partition"))
    return softmax_task(train, test, shards)


def run_modes(exp: ExperimentConfig, task=None, topology: Topology = None) -> Dict[str, MetricsTrace]:
    """One topology and one partition shared by every requested mode."""
    top = topology if topology is not None else experiment_topology(exp)
    task = task if task is not None else build_task(exp)
    out = {}
    for mode in exp.modes:
        cfg = exp.system.for_mode(mode)
        out[mode] = run_whfl(cfg, top, task, stream=RngStream(cfg.seed, ("run", mode)),
                             evaluate_every=exp.evaluate_every)
    return out


def trace_rows(trace: MetricsTrace):
    return trace.rows


def bound_params(exp: ExperimentConfig) -> BoundParams:
    cfg = exp.system
    return BoundParams.from_config(cfg, exp.bound_L, exp.bound_mu, exp.bound_G2,
                                   exp.bound_Gamma, exp.bound_D0, Schedules.from_config(cfg))


def bound_tables(exp: ExperimentConfig, topology: Topology = None):
    """(distance table, loss table), each with columns BOUND_COLUMNS and T+1 rows."""
    top = topology if topology is not None else experiment_topology(exp)
    params = bound_params(exp)
    dist = bound_table(params, top, exp.system.T, loss=False)
    loss = bound_table(params, top, exp.system.T, loss=True)
    return dist, loss


def _table_rows(table):
    return [(int(r[0]),) + tuple(float(v) for v in r[1:]) for r in table]


def cmd_simulate(exp: ExperimentConfig, out_dir) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    top = experiment_topology(exp)
    write_json(out_dir / "topology.json", top.to_dict())
    traces = run_modes(exp, topology=top)
    paths = {}
    for mode, tr in traces.items():
        p = out_dir / f"metrics_{mode}.csv"
        write_csv(p, TRACE_COLUMNS, tr.rows)
        paths[mode] = p
    if exp.bound:
        paths.update(cmd_bound(exp, out_dir, top))
    return paths


def cmd_bound(exp: ExperimentConfig, out_dir, topology: Topology = None) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    dist, loss = bound_tables(exp, topology)
    write_csv(out_dir / "bound.csv", BOUND_COLUMNS, _table_rows(dist))
    write_csv(out_dir / "bound_loss.csv", BOUND_COLUMNS, _table_rows(loss))
    return {"bound": out_dir / "bound.csv", "bound_loss": out_dir / "bound_loss.csv"}


# pinned small system of the lemma check
VALIDATE_SYSTEM = dict(C=2, M=2, K=4, K_ps=4, N=8, I=2)


def validation_report(exp: ExperimentConfig, trials: int = None) -> dict:
    from .mcvalidate import (LOW_CONFIDENCE_TRIALS, check_unbiasedness, run_lemma_suite)

    trials = exp.trials if trials is None else trials
    cfg = exp.system.replace(**VALIDATE_SYSTEM, mode="ota")
    top = sample_topology(cfg, RngStream(cfg.seed, ("topology",)))
    gen = RngStream(cfg.seed, ("validate", "deltas")).generator()
    deltas = gen.standard_normal((cfg.I, cfg.C, cfg.M, 2 * cfg.N))
    terms = run_lemma_suite(deltas, cfg, top, trials, exp.validate_P_t, exp.validate_P_IS,
                            seed=cfg.seed)
    unb = [check_unbiasedness("cluster", deltas[0], cfg, top, trials, exp.validate_P_t,
                              seed=cfg.seed),
           check_unbiasedness("global", deltas[0].sum(axis=1), cfg, top, trials,
                              exp.validate_P_IS, seed=cfg.seed)]
    low = trials < LOW_CONFIDENCE_TRIALS
    return {
        "schema_version": SCHEMA_VERSION,
        "system": cfg.to_dict(),
        "topology": top.to_dict(),
        "trials": trials,
        "P_t": exp.validate_P_t,
        "P_IS": exp.validate_P_IS,
        "low_confidence": low,
        "terms": [t.to_dict() for t in terms],
        "unbiasedness": [u.to_dict() for u in unb],
        "pass": all(t.passed for t in terms),
    }


def cmd_validate(exp: ExperimentConfig, out_dir, trials: int = None):
    rep = validation_report(exp, trials)
    path = Path(out_dir) / "lemma_report.json"
    write_json(path, rep)
    return rep, path


# keys that change the sampled topology
_GEOMETRY_KEYS = ("C", "M", "path_loss_exp", "seed", "topology_path")


def cmd_sweep(exp: ExperimentConfig, out_dir) -> Path:
    if exp.sweep_key is None or not exp.sweep_values:
        raise ConfigError("sweep needs sweep_key and a non-empty sweep_values list")
    out_dir = Path(out_dir)
    rows = []
    shared = exp.sweep_key not in _GEOMETRY_KEYS
    top = experiment_topology(exp) if shared else None
    for j, value in enumerate(exp.sweep_values):
        point = exp.replace(**{exp.sweep_key: value})
        traces = run_modes(point, topology=top if shared else experiment_topology(point))
        for mode, tr in traces.items():
            write_csv(out_dir / f"sweep_{j:03d}_{mode}.csv", TRACE_COLUMNS, tr.rows)
            last = tr.rows[-1] if tr.rows else (None,) * len(TRACE_COLUMNS)
            rows.append((exp.sweep_key, value, mode, last[3], last[4], tr.mean_edge_power()))
    path = out_dir / "sweep_summary.csv"
    write_csv(path, SUMMARY_COLUMNS, rows)
    return path
