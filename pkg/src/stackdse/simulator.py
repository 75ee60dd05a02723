"""Analytical system simulator: roofline compute, queued collectives, cost.

:func:`simulate` executes a trace DAG event-driven. Each pipeline stage is a
serial compute resource (one representative NPU; tensor/sequence/data peers
run the same program in parallel). Each network dimension admits one
outstanding collective; contending collectives queue and are released in
scheduling-policy order (FIFO or LIFO by issue time, op id as tie-break).
Compute and communication overlap freely subject to DAG dependencies.

The simulated pass covers a single microbatch through the pipeline plus the
once-per-step gradient sync; the steady state contributes
``(microbatches - 1)`` repeats of the slowest stage's per-microbatch window.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .collectives import axis_spans, collective_time_1d, multidim_collective_time

TOPOLOGY_BLOCKS = ("RI", "SW", "FC")
SCHEDULING_POLICIES = ("LIFO", "FIFO")
MULTIDIM_MODES = ("Baseline", "BlueConnect")

GB = 1e9


class SimulationError(ValueError):
    """Trace/topology mismatch or unschedulable trace."""


@dataclass(frozen=True)
class TopologyDim:
    block: str
    npus: int
    bandwidth: float        # GB/s per link
    latency: float = 1e-6   # seconds

    def __post_init__(self) -> None:
        if self.block not in TOPOLOGY_BLOCKS:
            raise SimulationError(f"unknown topology block {self.block!r}")
        if self.npus < 2:
            raise SimulationError("a topology dimension needs at least 2 NPUs")
        if self.bandwidth <= 0 or self.latency <= 0:
            raise SimulationError("bandwidth and latency must be positive")

    @property
    def bandwidth_bytes(self) -> float:
        return self.bandwidth * GB


@dataclass(frozen=True)
class TopologySpec:
    dims: tuple[TopologyDim, ...]

    def __post_init__(self) -> None:
        if not self.dims:
            raise SimulationError("topology needs at least one dimension")

    @property
    def npu_count(self) -> int:
        return math.prod(d.npus for d in self.dims)

    @classmethod
    def build(cls, blocks: Sequence[str], npus: Sequence[int], bandwidths: Sequence[float],
              latency: float = 1e-6) -> "TopologySpec":
        if not (len(blocks) == len(npus) == len(bandwidths)):
            raise SimulationError("topology dimension lists must have equal length")
        return cls(tuple(
            TopologyDim(block=b, npus=int(n), bandwidth=float(bw), latency=latency)
            for b, n, bw in zip(blocks, npus, bandwidths)
        ))


@dataclass(frozen=True)
class ComputeSpec:
    peak_perf: float          # flops/s
    local_mem_bw: float       # bytes/s
    memory_capacity: float = 24 * 2**30

    def __post_init__(self) -> None:
        if self.peak_perf <= 0 or self.local_mem_bw <= 0 or self.memory_capacity <= 0:
            raise SimulationError("compute parameters must be positive")


@dataclass(frozen=True)
class CollectiveConfig:
    algorithms: tuple[str, ...]
    chunks: int = 1
    scheduling: str = "FIFO"
    multidim: str = "Baseline"

    def __post_init__(self) -> None:
        if self.chunks < 1:
            raise SimulationError("chunks must be >= 1")
        if self.scheduling not in SCHEDULING_POLICIES:
            raise SimulationError(f"unknown scheduling policy {self.scheduling!r}")
        if self.multidim not in MULTIDIM_MODES:
            raise SimulationError(f"unknown multi-dim mode {self.multidim!r}")


@dataclass(frozen=True)
class CostCoefficients:
    """Dollar-cost weights per link per GB/s, by topology block."""

    ring: float = 1.0
    switch: float = 2.0
    fc: float = 1.0
    switch_port: float = 0.5

    def __post_init__(self) -> None:
        if min(self.ring, self.switch, self.fc, self.switch_port) <= 0:
            raise SimulationError("cost coefficients must be positive")


@dataclass(frozen=True)
class SimReport:
    total_latency: float
    compute_time: float
    exposed_comm_time: float
    per_dim_comm_time: tuple[float, ...]
    peak_memory: float
    valid: bool
    network_cost: float


def roofline_time(flops: float, bytes_moved: float, compute: ComputeSpec) -> float:
    """max(flops/peak_perf, bytes/local_mem_bw)."""
    if flops < 0 or bytes_moved < 0:
        raise ValueError("flops and bytes must be non-negative")
    return max(flops / compute.peak_perf, bytes_moved / compute.local_mem_bw)


def network_cost(topo: TopologySpec, coeffs: CostCoefficients | None = None) -> float:
    """Per-dimension link cost: link count x bandwidth x block coefficient.

    Ring counts one link per NPU, Switch one up/down link per NPU plus a
    per-port switch term, fully-connected the complete-graph edge count.
    """
    coeffs = coeffs or CostCoefficients()
    total = 0.0
    for dim in topo.dims:
        if dim.block == "RI":
            total += dim.npus * dim.bandwidth * coeffs.ring
        elif dim.block == "SW":
            total += dim.npus * dim.bandwidth * coeffs.switch
            total += dim.npus * dim.bandwidth * coeffs.switch_port
        else:  # FC
            total += dim.npus * (dim.npus - 1) / 2 * dim.bandwidth * coeffs.fc
    return total


def _send_time(payload: float, span, topo: TopologySpec) -> float:
    """Point-to-point stage boundary crossing along the spanned dimensions."""
    if payload <= 0 or not span:
        return 0.0
    latency = sum(topo.dims[d].latency for d, _ in span)
    bottleneck = min(topo.dims[d].bandwidth_bytes for d, _ in span)
    return latency + payload / bottleneck


def simulate(trace, topo: TopologySpec, compute: ComputeSpec, coll: CollectiveConfig,
             *, cost_coefficients: CostCoefficients | None = None) -> SimReport:
    """Event-driven execution of a trace DAG on a configured system."""
    if topo.npu_count != trace.npu_count:
        raise SimulationError(
            f"topology is {topo.npu_count} NPUs but trace expects {trace.npu_count}"
        )
    if len(coll.algorithms) != len(topo.dims):
        raise SimulationError("need one collective algorithm per topology dimension")

    dim_sizes = [d.npus for d in topo.dims]
    spans: dict[str, tuple[tuple[int, int], ...]] = {}
    for axis, group in trace.groups.items():
        if group.size <= 1:
            spans[axis] = ()
        elif group.span is not None:
            spans[axis] = group.span
        else:
            try:
                spans[axis] = axis_spans(dim_sizes, group.stride, group.size)
            except ValueError as exc:
                raise SimulationError(str(exc)) from exc

    ops = trace.ops
    n = len(ops)
    duration = [0.0] * n
    per_dim_share: list[dict[int, float]] = [dict() for _ in range(n)]
    op_dims: list[tuple[int, ...]] = [()] * n
    for op in ops:
        if op.kind == "compute":
            duration[op.op_id] = roofline_time(op.flops, op.bytes_moved, compute)
        elif op.kind == "collective":
            span = spans.get(op.axis, ())
            if span and op.payload > 0:
                t, share = multidim_collective_time(op.pattern, op.payload, span, topo, coll)
                duration[op.op_id] = t
                per_dim_share[op.op_id] = share
                op_dims[op.op_id] = tuple(d for d, _ in span)
        elif op.kind == "send-recv":
            span = spans.get(op.axis, ())
            duration[op.op_id] = _send_time(op.payload, span, topo)
            if span and duration[op.op_id] > 0:
                op_dims[op.op_id] = tuple(d for d, _ in span)
                per_dim_share[op.op_id] = {d: duration[op.op_id] for d, _ in span}
        else:
            raise SimulationError(f"unknown op kind {ops[op.op_id].kind!r}")

    indegree = [len(op.deps) for op in ops]
    successors: list[list[int]] = [[] for _ in range(n)]
    for op in ops:
        for dep in op.deps:
            successors[dep].append(op.op_id)

    stage_ready: dict[int, list[int]] = {}
    stage_busy: dict[int, bool] = {}
    comm_ready: list[tuple[float, int]] = []   # (issue time, op id)
    dim_busy = [False] * len(topo.dims)
    start = [0.0] * n
    finish = [0.0] * n
    done = [False] * n

    events: list[tuple[float, int, int]] = []
    seq = 0

    def mark_ready(op_id: int, now: float) -> None:
        op = ops[op_id]
        if op.kind == "compute":
            heapq.heappush(stage_ready.setdefault(op.stage, []), op_id)
        else:
            comm_ready.append((now, op_id))

    def launch(op_id: int, now: float) -> None:
        nonlocal seq
        start[op_id] = now
        seq += 1
        heapq.heappush(events, (now + duration[op_id], seq, op_id))

    def schedule(now: float) -> None:
        nonlocal comm_ready
        for stage, ready in stage_ready.items():
            if ready and not stage_busy.get(stage, False):
                op_id = heapq.heappop(ready)
                stage_busy[stage] = True
                launch(op_id, now)
        if comm_ready:
            if coll.scheduling == "FIFO":
                order = sorted(comm_ready, key=lambda item: (item[0], item[1]))
            else:
                order = sorted(comm_ready, key=lambda item: (-item[0], item[1]))
            started = set()
            for issue, op_id in order:
                dims = op_dims[op_id]
                if any(dim_busy[d] for d in dims):
                    continue
                for d in dims:
                    dim_busy[d] = True
                launch(op_id, now)
                started.add(op_id)
            if started:
                comm_ready = [item for item in comm_ready if item[1] not in started]

    for op in ops:
        if indegree[op.op_id] == 0:
            mark_ready(op.op_id, 0.0)
    schedule(0.0)

    now = 0.0
    while events:
        now, _, op_id = heapq.heappop(events)
        completed = [op_id]
        while events and events[0][0] == now:
            completed.append(heapq.heappop(events)[2])
        for oid in completed:
            op = ops[oid]
            finish[oid] = now
            done[oid] = True
            if op.kind == "compute":
                stage_busy[op.stage] = False
            else:
                for d in op_dims[oid]:
                    dim_busy[d] = False
            for succ in successors[oid]:
                indegree[succ] -= 1
                if indegree[succ] == 0:
                    mark_ready(succ, now)
        schedule(now)

    if not all(done):
        raise SimulationError("trace is cyclic or unschedulable")

    # Per-stage per-microbatch windows (fwd + bwd), excluding step-scope ops.
    windows: dict[tuple[int, str], tuple[float, float]] = {}
    for op in ops:
        if op.scope != "microbatch" or op.kind == "send-recv":
            continue
        key = (op.stage, op.pass_)
        lo, hi = windows.get(key, (math.inf, -math.inf))
        windows[key] = (min(lo, start[op.op_id]), max(hi, finish[op.op_id]))
    stage_window = {}
    for (stage, _), (lo, hi) in windows.items():
        stage_window[stage] = stage_window.get(stage, 0.0) + (hi - lo)
    bottleneck = max(stage_window.values(), default=0.0)

    m = max(1, trace.microbatches)
    dag_end = max(finish) if n else 0.0
    total_latency = dag_end + (m - 1) * bottleneck

    # Pure-compute critical path: every stage's serial compute chains through
    # the pipeline once, then the bottleneck stage repeats per microbatch.
    stage_compute: dict[int, float] = {}
    step_compute = 0.0
    for op in ops:
        if op.kind != "compute":
            continue
        if op.scope == "microbatch":
            stage_compute[op.stage] = stage_compute.get(op.stage, 0.0) + duration[op.op_id]
        else:
            step_compute += duration[op.op_id]
    compute_time = (
        sum(stage_compute.values())
        + (m - 1) * max(stage_compute.values(), default=0.0)
        + step_compute
    )

    per_dim = [0.0] * len(topo.dims)
    for op in ops:
        repeats = m if op.scope == "microbatch" else 1
        for d, share in per_dim_share[op.op_id].items():
            per_dim[d] += share * repeats

    return SimReport(
        total_latency=total_latency,
        compute_time=compute_time,
        exposed_comm_time=max(0.0, total_latency - compute_time),
        per_dim_comm_time=tuple(per_dim),
        peak_memory=trace.memory_per_npu,
        valid=True,
        network_cost=network_cost(topo, cost_coefficients),
    )
