"""Experiment orchestration: restriction modes, search loops, exports.

An experiment file names a schema, model, system fixture, objective, agent,
and budget. Single-stack restriction pins the frozen knobs to the system
fixture's values (overridable), keeping the full point structure so the
evaluator never needs special cases. Search logs are written incrementally
(JSONL), so an interrupted run keeps its completed steps and can resume:
agents re-propose deterministically and logged rewards replay from cache.
"""

from __future__ import annotations

import csv
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import fixtures
from .agents import AgentConfig, configure_action_space, make_agent
from .objectives import Evaluation, Evaluator
from .schema import (
    TOO_LARGE,
    DesignPoint,
    Knob,
    Schema,
    SchemaError,
    constrained_cardinality,
    decode_action,
    iter_valid_actions,
    load_schema,
)
from .simulator import ComputeSpec, CostCoefficients, TopologySpec
from .workload import ModelSpec, load_model

SEED_ENV_VAR = "STACKDSE_SEED"
RESTRICTION_MODES = ("workload-only", "collective-only", "network-only", "full-stack", "custom")
_MODE_STACKS = {
    "workload-only": {"workload"},
    "collective-only": {"collective"},
    "network-only": {"network"},
}


class HarnessError(ValueError):
    """Bad experiment configuration or unusable fixtures."""


# ---------------------------------------------------------------------------
# System fixtures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemFixture:
    """A concrete target platform: compute device, network, collective defaults."""

    name: str
    npu_count: int
    compute: ComputeSpec
    link_latency: float
    network: Mapping[str, Any]
    collective: Mapping[str, Any]
    workload_defaults: Mapping[str, Any]

    def default_values(self) -> dict[str, Any]:
        """Knob defaults used to pin frozen stacks."""
        values: dict[str, Any] = {}
        values.update(self.workload_defaults)
        values.update(self.collective)
        values.update({k: v for k, v in self.network.items() if k != "link_latency"})
        return values

    def topology(self) -> TopologySpec:
        return TopologySpec.build(
            blocks=self.network["topology"],
            npus=self.network["npus_per_dim"],
            bandwidths=self.network["bandwidth_per_dim"],
            latency=self.link_latency,
        )


def load_system(source: str | Path) -> SystemFixture:
    doc = json.loads(fixtures.find(source, kind="system").read_text())
    compute = ComputeSpec(
        peak_perf=float(doc["compute"]["peak_perf_tflops"]) * 1e12,
        local_mem_bw=float(doc["compute"]["local_mem_bw_gbps"]) * 1e9,
        memory_capacity=float(doc["compute"].get("memory_capacity_gib", 24)) * 2**30,
    )
    return SystemFixture(
        name=doc.get("name", str(source)),
        npu_count=int(doc["npu_count"]),
        compute=compute,
        link_latency=float(doc["network"].get("link_latency", 1e-6)),
        network=doc["network"],
        collective=doc["collective"],
        workload_defaults=doc.get("workload_defaults", {}),
    )


# ---------------------------------------------------------------------------
# Schema restriction
# ---------------------------------------------------------------------------

def restrict_schema(schema: Schema, mode: str, defaults: Mapping[str, Any] | None = None,
                    searchable: Iterable[str] = ()) -> Schema:
    """Pin frozen knobs to single-value lists; searchable knobs untouched.

    ``mode`` selects which stacks stay searchable; ``custom`` takes an
    explicit knob-name list. Constraints are preserved. A missing default is
    an error; defaults that leave no valid point at all raise a warning.
    """
    if mode not in RESTRICTION_MODES:
        raise HarnessError(f"unknown restriction mode {mode!r}; expected one of {RESTRICTION_MODES}")
    if mode == "full-stack":
        return schema
    defaults = defaults or {}
    keep = set(searchable) if mode == "custom" else None
    new_knobs = []
    for knob in schema.knobs:
        searched = knob.name in keep if keep is not None else knob.stack in _MODE_STACKS[mode]
        if searched:
            new_knobs.append(knob)
            continue
        if knob.name not in defaults:
            raise HarnessError(f"restriction freezes knob {knob.name!r} but no default was given")
        value = defaults[knob.name]
        if knob.is_multidim:
            if isinstance(value, (list, tuple)):
                if len(value) != knob.dims:
                    raise HarnessError(
                        f"default for {knob.name!r} needs {knob.dims} components"
                    )
                pinned = tuple((v,) for v in value)
            else:
                pinned = tuple((value,) for _ in range(knob.dims))
        else:
            pinned = ((value,),)
        new_knobs.append(Knob(name=knob.name, stack=knob.stack, kind=knob.kind, values=pinned))
    restricted = Schema(npu_count=schema.npu_count, knobs=tuple(new_knobs),
                        constraints=schema.constraints)
    if constrained_cardinality(restricted) == 0:
        warnings.warn(
            f"restriction defaults leave no constraint-satisfying point (mode {mode!r})",
            stacklevel=2,
        )
    return restricted


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    schema: str
    model: str
    system: str
    objective: str = "perf_per_bw"
    phase: str = "training"
    global_batch: int = 1024
    budget: int = 1000
    restriction_mode: str = "full-stack"
    restriction_defaults: dict[str, Any] = field(default_factory=dict)
    searchable_knobs: tuple[str, ...] = ()
    agent: AgentConfig = field(default_factory=AgentConfig)
    memory_limit: float | None = None
    exhaustive_cap: int = 50_000
    near_optimal_band: float = 0.01
    workers: int = 1
    resume: bool = False
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise HarnessError("budget must be >= 1")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ExperimentConfig":
        doc = dict(doc)
        agent_doc = dict(doc.pop("agent", {}))
        if "seed" not in agent_doc and os.environ.get(SEED_ENV_VAR):
            agent_doc["seed"] = int(os.environ[SEED_ENV_VAR])
        restriction = dict(doc.pop("restriction", {}))
        # These fields are populated from the "agent"/"restriction" sections.
        reserved = {"agent", "restriction_mode", "restriction_defaults", "searchable_knobs"}
        known = set(cls.__dataclass_fields__) - reserved
        unknown = set(doc) - known
        if unknown:
            raise HarnessError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(
            agent=AgentConfig(**agent_doc),
            restriction_mode=restriction.get("mode", "full-stack"),
            restriction_defaults=dict(restriction.get("defaults", {})),
            searchable_knobs=tuple(restriction.get("knobs", ())),
            **doc,
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class _Workbench:
    schema: Schema
    model: ModelSpec
    system: SystemFixture
    evaluator: Evaluator


def _prepare(cfg: ExperimentConfig) -> _Workbench:
    schema = load_schema(cfg.schema)
    system = load_system(cfg.system)
    model = load_model(cfg.model)
    if schema.npu_count != system.npu_count:
        # The schema's symbolic "npu_count" bound follows the target system.
        schema = Schema(npu_count=system.npu_count, knobs=schema.knobs,
                        constraints=schema.constraints)
    defaults = system.default_values()
    defaults.update(cfg.restriction_defaults)
    schema = restrict_schema(schema, cfg.restriction_mode, defaults,
                             searchable=cfg.searchable_knobs)
    evaluator = Evaluator(
        schema=schema,
        model=model,
        compute=system.compute,
        objective=cfg.objective,
        memory_limit=cfg.memory_limit,
        phase=cfg.phase,
        global_batch=cfg.global_batch,
        link_latency=system.link_latency,
    )
    return _Workbench(schema=schema, model=model, system=system, evaluator=evaluator)


# ---------------------------------------------------------------------------
# Search logs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchRecord:
    step: int
    action: tuple[int, ...]
    reward: float
    valid: bool
    latency: float
    best_so_far: float
    wall_time: float

    def deterministic_fields(self) -> dict[str, Any]:
        """Everything except wall time, which is inherently run-dependent."""
        return {
            "step": self.step,
            "action": list(self.action),
            "reward": self.reward.hex(),
            "valid": self.valid,
            "latency": self.latency.hex(),
            "best_so_far": self.best_so_far.hex(),
        }


@dataclass
class SearchLog:
    records: list[SearchRecord] = field(default_factory=list)
    best_action: tuple[int, ...] | None = None
    best_reward: float = 0.0
    best_point: dict[str, Any] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def append(self, record: SearchRecord) -> None:
        if self.records and record.best_so_far < self.records[-1].best_so_far:
            raise HarnessError("best-so-far column must be non-decreasing")
        self.records.append(record)

    def fingerprint(self) -> str:
        import hashlib

        payload = json.dumps(
            [r.deterministic_fields() for r in self.records], sort_keys=True
        ).encode()
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str | Path) -> None:
        doc = {
            "meta": self.meta,
            "best_action": list(self.best_action) if self.best_action else None,
            "best_reward": self.best_reward,
            "best_point": self.best_point,
            "records": [
                {
                    "step": r.step, "action": list(r.action), "reward": r.reward,
                    "valid": r.valid, "latency": r.latency,
                    "best_so_far": r.best_so_far, "wall_time": r.wall_time,
                }
                for r in self.records
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SearchLog":
        doc = json.loads(Path(path).read_text())
        log = cls(meta=doc.get("meta", {}),
                  best_action=tuple(doc["best_action"]) if doc.get("best_action") else None,
                  best_reward=doc.get("best_reward", 0.0),
                  best_point=doc.get("best_point"))
        for r in doc.get("records", []):
            log.append(SearchRecord(
                step=r["step"], action=tuple(r["action"]), reward=r["reward"],
                valid=r["valid"], latency=r["latency"],
                best_so_far=r["best_so_far"], wall_time=r.get("wall_time", 0.0),
            ))
        return log


class CachedEvaluator:
    """Memoizes evaluations by action; replay keeps logs consistent."""

    def __init__(self, evaluator: Evaluator, seed_cache: Mapping[tuple[int, ...], Evaluation] | None = None):
        self._evaluator = evaluator
        self._cache: dict[tuple[int, ...], Evaluation] = dict(seed_cache or {})

    def __call__(self, action: Sequence[int]) -> Evaluation:
        key = tuple(action)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._evaluator.evaluate_action(key)
            self._cache[key] = hit
        return hit

    def evaluate_batch(self, actions: Sequence[Sequence[int]], workers: int = 1) -> list[Evaluation]:
        keys = [tuple(a) for a in actions]
        missing = [k for k in dict.fromkeys(keys) if k not in self._cache]
        if workers > 1 and len(missing) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self._evaluator.evaluate_action, missing,
                                        chunksize=max(1, len(missing) // workers)))
            for key, ev in zip(missing, results):
                self._cache[key] = ev
        else:
            for key in missing:
                self._cache[key] = self._evaluator.evaluate_action(key)
        return [self._cache[k] for k in keys]


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

def _load_jsonl_records(path: Path) -> list[SearchRecord]:
    records = []
    if not path.exists():
        return records
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        records.append(SearchRecord(
            step=r["step"], action=tuple(r["action"]), reward=r["reward"],
            valid=r["valid"], latency=r["latency"], best_so_far=r["best_so_far"],
            wall_time=r.get("wall_time", 0.0),
        ))
    return records


def run_search(cfg: ExperimentConfig) -> SearchLog:
    """propose -> evaluate -> observe until the evaluation budget is spent."""
    bench = _prepare(cfg)
    space = configure_action_space(bench.schema)
    agent = make_agent(cfg.agent, space)

    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    jsonl_path = None
    replay: dict[tuple[int, ...], Evaluation] = {}
    prior: list[SearchRecord] = []
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        jsonl_path = out_dir / "records.jsonl"
        if cfg.resume:
            prior = _load_jsonl_records(jsonl_path)
            for r in prior:
                replay.setdefault(r.action, Evaluation(
                    reward=r.reward, latency=r.latency, valid=r.valid, diagnostics={}
                ))
        elif jsonl_path.exists():
            jsonl_path.unlink()

    cached = CachedEvaluator(bench.evaluator, seed_cache=replay)
    log = SearchLog(meta={
        "schema": cfg.schema, "model": cfg.model, "system": cfg.system,
        "objective": cfg.objective, "phase": cfg.phase,
        "restriction": cfg.restriction_mode, "budget": cfg.budget,
        "agent": cfg.agent.kind, "seed": cfg.agent.seed,
        "batch_size": agent.batch_size,
    })

    started = time.monotonic()
    best = 0.0
    evaluated = 0
    already_logged = len(prior)  # resume: those rows are on disk already
    sink = open(jsonl_path, "a") if jsonl_path is not None else None
    try:
        while evaluated < cfg.budget:
            proposals = agent.propose()[: cfg.budget - evaluated]
            evals = cached.evaluate_batch(proposals, workers=cfg.workers)
            for action, ev in zip(proposals, evals):
                best = max(best, ev.reward)
                record = SearchRecord(
                    step=evaluated, action=tuple(action), reward=ev.reward,
                    valid=ev.valid, latency=ev.latency, best_so_far=best,
                    wall_time=time.monotonic() - started,
                )
                log.append(record)
                if sink is not None and record.step >= already_logged:
                    payload = {
                        "step": record.step, "action": list(record.action),
                        "reward": record.reward, "valid": record.valid,
                        "latency": record.latency, "best_so_far": record.best_so_far,
                        "wall_time": record.wall_time,
                    }
                    sink.write(json.dumps(payload) + "\n")
                evaluated += 1
            if sink is not None:
                sink.flush()
            agent.observe(proposals, evals)
    finally:
        if sink is not None:
            sink.close()

    best_records = [r for r in log.records if r.reward == best]
    if best_records:
        winner = min(best_records, key=lambda r: r.action)
        log.best_action = winner.action
        log.best_reward = best
        log.best_point = decode_action(bench.schema, winner.action).as_dict()
    if out_dir is not None:
        export(log, out_dir, fmt="csv", schema=bench.schema)
        log.save(out_dir / "search_log.json")
    return log


# ---------------------------------------------------------------------------
# Exhaustive enumeration
# ---------------------------------------------------------------------------

@dataclass
class ExhaustiveResult:
    best_action: tuple[int, ...]
    best_reward: float
    best_point: dict[str, Any]
    evaluations: int
    valid_evaluations: int
    min_latency: float
    max_latency: float
    ties: list[tuple[int, ...]]
    near_optimal: list[tuple[int, ...]]
    rows: list[tuple[tuple[int, ...], float, bool, float]]

    @property
    def latency_spread(self) -> float:
        return self.max_latency / self.min_latency if self.min_latency > 0 else float("inf")


def run_exhaustive(cfg: ExperimentConfig) -> ExhaustiveResult:
    """Evaluate every constraint-satisfying point; refuse oversized spaces."""
    bench = _prepare(cfg)
    count = constrained_cardinality(bench.schema, cap=cfg.exhaustive_cap)
    if count is TOO_LARGE:
        raise HarnessError(
            f"constrained space exceeds the exhaustive cap ({cfg.exhaustive_cap}); "
            "use run_search instead"
        )

    rows: list[tuple[tuple[int, ...], float, bool, float]] = []
    best_action: tuple[int, ...] | None = None
    best_reward = -1.0
    min_lat, max_lat = float("inf"), 0.0
    valid_count = 0
    for action in iter_valid_actions(bench.schema):
        ev = bench.evaluator.evaluate_action(action)
        rows.append((action, ev.reward, ev.valid, ev.latency))
        if ev.valid:
            valid_count += 1
            min_lat = min(min_lat, ev.latency)
            max_lat = max(max_lat, ev.latency)
        # Ties break toward the lexicographically smallest action vector;
        # enumeration order is already lexicographic.
        if ev.reward > best_reward:
            best_reward = ev.reward
            best_action = action
    if best_action is None:
        raise HarnessError("schema admits no constraint-satisfying point")

    ties = [a for a, r, _, _ in rows if r == best_reward]
    near = [a for a, r, _, _ in rows if r >= best_reward * (1.0 - cfg.near_optimal_band)]
    result = ExhaustiveResult(
        best_action=best_action,
        best_reward=best_reward,
        best_point=decode_action(bench.schema, best_action).as_dict(),
        evaluations=len(rows),
        valid_evaluations=valid_count,
        min_latency=min_lat if valid_count else 0.0,
        max_latency=max_lat,
        ties=ties,
        near_optimal=near,
        rows=rows,
    )
    if cfg.output_dir:
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "exhaustive.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["action", "reward", "valid", "latency"])
            for action, reward, valid, latency in rows:
                writer.writerow([" ".join(map(str, action)), reward, int(valid), latency])
        report = {
            "best_reward": best_reward,
            "best_point": result.best_point,
            "valid_evaluations": valid_count,
            "latency_spread": result.latency_spread,
            "equivalent_optima": len(ties),
            "near_optimal": len(near),
        }
        (out_dir / "exhaustive_best.json").write_text(json.dumps(report, indent=2) + "\n")
    return result


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def _best_config_report(schema: Schema, log: SearchLog) -> dict[str, Any]:
    by_stack: dict[str, dict[str, Any]] = {"workload": {}, "collective": {}, "network": {}}
    if log.best_point:
        for knob in schema.knobs:
            if knob.name in log.best_point:
                by_stack[knob.stack][knob.name] = log.best_point[knob.name]
    return {
        "best_reward": log.best_reward,
        "meta": log.meta,
        "knobs": by_stack,
    }


def export(log: SearchLog, out_dir: str | Path, fmt: str = "csv",
           schema: Schema | None = None) -> list[Path]:
    """Write the convergence CSV and best-configuration report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        path = out_dir / "convergence.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["step", "reward", "best_so_far", "valid"])
            for r in log.records:
                writer.writerow([r.step, r.reward, r.best_so_far, int(r.valid)])
        written.append(path)
    elif fmt == "json":
        path = out_dir / "search_log.json"
        log.save(path)
        written.append(path)
    else:
        raise HarnessError(f"unknown export format {fmt!r}")
    if schema is not None and log.best_point is not None:
        report = out_dir / "best_config.json"
        report.write_text(json.dumps(_best_config_report(schema, log), indent=2) + "\n")
        written.append(report)
    return written
