"""Scalar rewards over simulation results, with the per-NPU memory gate.

Both rewards share the shape ``1 / |latency * metric - 1|``: the minus-one
offset keeps degenerate zero-latency/zero-metric inputs finite (they score
exactly 1), and the denominator is clamped at ``REWARD_EPS`` so the
``latency * metric == 1`` singularity stays bounded. Invalid design points
never reach the formula -- they score 0, carrying diagnostics instead of
exceptions, so search loops are never interrupted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from . import workload
from .schema import DesignPoint, Schema, check_constraints, decode_action
from .simulator import (
    CollectiveConfig,
    ComputeSpec,
    CostCoefficients,
    SimulationError,
    TopologySpec,
    simulate,
)

REWARD_EPS = 1e-12
OBJECTIVES = ("perf_per_bw", "perf_per_cost")
DEFAULT_MEMORY_LIMIT = 24 * 2**30  # 24 GiB per NPU


def _offset_reward(latency: float, metric: float) -> float:
    return 1.0 / max(abs(latency * metric - 1.0), REWARD_EPS)


def reward_perf_per_bw(latency: float, bandwidth_per_dim: Iterable[float]) -> float:
    """1 / |latency * sum(per-dimension link bandwidth) - 1|, clamped."""
    return _offset_reward(latency, sum(bandwidth_per_dim))


def reward_perf_per_cost(latency: float, network_cost: float) -> float:
    """1 / |latency * network dollar cost - 1|, clamped."""
    return _offset_reward(latency, network_cost)


@dataclass(frozen=True)
class Evaluation:
    reward: float
    latency: float
    valid: bool
    diagnostics: Mapping[str, Any] = field(default_factory=dict)


def _invalid(stage: str, detail: Any, **extra: Any) -> Evaluation:
    diag = {"stage": stage, "detail": detail}
    diag.update(extra)
    return Evaluation(reward=0.0, latency=0.0, valid=False, diagnostics=diag)


class Evaluator:
    """Design-point evaluation pipeline: constraints, trace, simulation, reward.

    Pure and stateless after construction; safe for concurrent batch
    evaluation. Knobs absent from the schema fall back to ``fixed_values``
    (useful when a schema only spans part of the stack).
    """

    def __init__(
        self,
        schema: Schema,
        model: workload.ModelSpec,
        compute: ComputeSpec,
        *,
        objective: str = "perf_per_bw",
        memory_limit: float | None = None,
        phase: str = "training",
        global_batch: int = 1024,
        link_latency: float = 1e-6,
        cost_coefficients: CostCoefficients | None = None,
        fixed_values: Mapping[str, Any] | None = None,
    ):
        if objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
        self.schema = schema
        self.model = model
        self.compute = compute
        self.objective = objective
        self.memory_limit = memory_limit if memory_limit is not None else compute.memory_capacity
        self.phase = phase
        self.global_batch = global_batch
        self.link_latency = link_latency
        self.cost_coefficients = cost_coefficients or CostCoefficients()
        self.fixed_values = dict(fixed_values or {})

    def _knob(self, point: DesignPoint, name: str) -> Any:
        if name in point:
            return point[name]
        if name in self.fixed_values:
            value = self.fixed_values[name]
            return tuple(value) if isinstance(value, (list, tuple)) else value
        raise KeyError(f"knob {name!r} neither searched nor fixed")

    def evaluate_action(self, action: Sequence[int]) -> Evaluation:
        try:
            point = decode_action(self.schema, tuple(action))
        except Exception as exc:
            return _invalid("decode", str(exc))
        return self.evaluate(point)

    def evaluate(self, point: DesignPoint) -> Evaluation:
        try:
            return self._evaluate(point)
        except Exception as exc:  # invalid points must never crash the search
            return _invalid("error", f"{type(exc).__name__}: {exc}")

    def _evaluate(self, point: DesignPoint) -> Evaluation:
        report = check_constraints(self.schema, point)
        if not report.valid:
            return _invalid("constraints", "schema constraints violated",
                            violations=list(report.violations))

        dp = int(self._knob(point, "dp"))
        pp = int(self._knob(point, "pp"))
        sp = int(self._knob(point, "sp"))
        sharded = bool(int(self._knob(point, "weight_sharded")))
        try:
            tp = workload.derive_tensor_parallel(dp, sp, pp, self.schema.npu_count)
        except workload.InvalidParallelization as exc:
            return _invalid("derivation", str(exc))
        par = workload.ParallelizationSpec(
            dp=dp, pp=pp, sp=sp, tp=tp, weight_sharded=sharded,
            global_batch=self.global_batch,
        )
        try:
            par.validate(self.model)
        except workload.InvalidParallelization as exc:
            return _invalid("workload", str(exc))

        memory = workload.memory_footprint(self.model, par)
        if memory > self.memory_limit:
            return _invalid("memory", "per-NPU footprint exceeds the memory limit",
                            memory_bytes=memory, memory_limit=self.memory_limit)

        topo = TopologySpec.build(
            blocks=self._knob(point, "topology"),
            npus=self._knob(point, "npus_per_dim"),
            bandwidths=self._knob(point, "bandwidth_per_dim"),
            latency=self.link_latency,
        )
        coll = CollectiveConfig(
            algorithms=tuple(self._knob(point, "collective_algorithm")),
            chunks=int(self._knob(point, "chunks_per_collective")),
            scheduling=str(self._knob(point, "scheduling_policy")),
            multidim=str(self._knob(point, "multidim_collective")),
        )
        try:
            trace = workload.build_trace(self.model, par, self.phase)
            report = simulate(trace, topo, self.compute, coll,
                              cost_coefficients=self.cost_coefficients)
        except (workload.WorkloadError, SimulationError) as exc:
            return _invalid("simulation", str(exc))
        report = workload.scale_report(report, self.model)

        if report.peak_memory > self.memory_limit:
            return _invalid("memory", "per-NPU footprint exceeds the memory limit",
                            memory_bytes=report.peak_memory, memory_limit=self.memory_limit)

        bandwidths = [float(b) for b in self._knob(point, "bandwidth_per_dim")]
        if self.objective == "perf_per_bw":
            reward = reward_perf_per_bw(report.total_latency, bandwidths)
            metric = sum(bandwidths)
        else:
            reward = reward_perf_per_cost(report.total_latency, report.network_cost)
            metric = report.network_cost

        diagnostics = {
            "stage": "ok",
            "workload": {"dp": dp, "pp": pp, "sp": sp, "tp": tp,
                         "weight_sharded": int(sharded)},
            "collective": {"algorithms": list(coll.algorithms), "chunks": coll.chunks,
                           "scheduling": coll.scheduling, "multidim": coll.multidim},
            "network": {"topology": list(self._knob(point, "topology")),
                        "npus_per_dim": [int(x) for x in self._knob(point, "npus_per_dim")],
                        "bandwidth_per_dim": bandwidths},
            "memory_bytes": report.peak_memory,
            "compute_time": report.compute_time,
            "exposed_comm_time": report.exposed_comm_time,
            "per_dim_comm_time": list(report.per_dim_comm_time),
            "network_cost": report.network_cost,
            "objective_metric": metric,
        }
        return Evaluation(reward=reward, latency=report.total_latency, valid=True,
                          diagnostics=diagnostics)
