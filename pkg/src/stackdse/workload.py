"""Transformer workload modeling: trace templates, parallelization, memory.

A model is described by a symbolic layer template (GEMM shapes written as
expressions over ``{B, S, D, H, ffn, dp, sp, tp, pp, S_q, S_kv, b_local}``).
:func:`build_trace` substitutes a concrete parallelization into the template
and emits an operator-level DAG for one microbatch flowing through the
pipeline, injecting the collectives the sharding requires:

* tensor-parallel sync after each layer block -- an all-reduce when the
  sequence is not sharded, a reduce-scatter + all-gather pair over the
  combined tensor/sequence group otherwise (payloads carry the 1/sp shard);
* a data-parallel gradient sync per layer in training (reduce-scatter +
  all-gather when weights are sharded), tagged ``scope="step"`` because it
  runs once per training step rather than per microbatch;
* stage-boundary activation/gradient sends when the pipeline is split.

Parallelism axes pack innermost-first in the fixed order TP, SP, DP, PP, so
an axis may span one or more consecutive network dimensions; the simulator
resolves the spans against its topology.

Pipeline steady state is handled analytically: the trace carries the
microbatch count (local batch, microbatch size 1) and the simulator adds
``(microbatches - 1)`` repeats of the bottleneck stage on top of the
simulated single-microbatch fill/drain pass.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

PHASES = ("training", "inference-prefill", "inference-decode")
AXIS_ORDER = ("tp", "sp", "dp", "pp")

# (prefill tokens, decode tokens) presets for combined-inference studies.
INFERENCE_PROFILES = {"chat": (2048, 128), "qa": (512, 32)}

DEFAULT_OPTIMIZER_MULTIPLIER = 6.0   # mixed-precision moments + master copy
DEFAULT_ACTIVATION_FACTOR = 8.0      # per-layer activation bytes ~= factor * S * D * bytes_per_param


class WorkloadError(ValueError):
    """Invalid model or parallelization input."""


class InvalidParallelization(WorkloadError):
    """Parallelization cannot be realized; evaluates to a zero-reward point."""


# ---------------------------------------------------------------------------
# Symbolic dimension expressions
# ---------------------------------------------------------------------------

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.FloorDiv, ast.USub,
)


def _compile_expr(source: str):
    tree = ast.parse(source, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise WorkloadError(f"unsupported construct in dimension expression {source!r}")
    return compile(tree, f"<dim:{source}>", "eval")


_EXPR_CACHE: dict[str, Any] = {}


def eval_dim(source: str, env: Mapping[str, int]) -> int:
    """Evaluate a dimension expression to a positive integer."""
    code = _EXPR_CACHE.get(source)
    if code is None:
        code = _compile_expr(source)
        _EXPR_CACHE[source] = code
    value = eval(code, {"__builtins__": {}}, dict(env))
    rounded = round(value)
    if abs(value - rounded) > 1e-9 or rounded < 1:
        raise InvalidParallelization(
            f"dimension expression {source!r} = {value} is not a positive integer"
        )
    return int(rounded)


# ---------------------------------------------------------------------------
# Model and parallelization specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GemmTemplate:
    name: str
    m: str
    k: str
    n: str
    kv_cache: bool = False


@dataclass(frozen=True)
class BlockTemplate:
    name: str
    gemms: tuple[GemmTemplate, ...]


DEFAULT_LAYER_BLOCKS: tuple[BlockTemplate, ...] = (
    BlockTemplate("attention", (
        GemmTemplate("qkv_proj", "S_q", "D", "3*D/tp"),
        GemmTemplate("attn_scores", "S_q", "D/tp", "S_kv", kv_cache=True),
        GemmTemplate("attn_context", "S_q", "S_kv", "D/tp", kv_cache=True),
        GemmTemplate("out_proj", "S_q", "D/tp", "D"),
    )),
    BlockTemplate("ffn", (
        GemmTemplate("ffn_up", "S_q", "D", "ffn/tp"),
        GemmTemplate("ffn_down", "S_q", "ffn/tp", "D"),
    )),
)


@dataclass(frozen=True)
class ModelSpec:
    """Transformer model dimensions plus its symbolic layer template."""

    name: str
    num_layers: int
    embedding_dim: int
    ffn_dim: int
    sequence_length: int
    num_heads: int
    bytes_per_param: int = 2
    simulated_layers: int = 4
    layer_blocks: tuple[BlockTemplate, ...] = DEFAULT_LAYER_BLOCKS

    def __post_init__(self) -> None:
        for name in ("num_layers", "embedding_dim", "ffn_dim", "sequence_length",
                     "num_heads", "bytes_per_param", "simulated_layers"):
            if getattr(self, name) < 1:
                raise WorkloadError(f"{name} must be positive")
        if self.ffn_dim < self.embedding_dim:
            raise WorkloadError("ffn_dim must be >= embedding_dim")
        if self.simulated_layers > self.num_layers:
            raise WorkloadError("simulated_layers cannot exceed num_layers")
        # Heads need not divide the embedding evenly (some published models
        # do not); head counts only gate tensor-parallel splits.

    def layer_params(self) -> int:
        """Weight count per layer: attention 4*D^2 + FFN 2*D*ffn, biases ignored."""
        d = self.embedding_dim
        return 4 * d * d + 2 * d * self.ffn_dim

    def total_params(self) -> int:
        return self.num_layers * self.layer_params()


def _blocks_from_doc(doc: Sequence[Mapping[str, Any]]) -> tuple[BlockTemplate, ...]:
    blocks = []
    for block in doc:
        gemms = tuple(
            GemmTemplate(
                name=g["name"], m=g["m"], k=g["k"], n=g["n"],
                kv_cache=bool(g.get("kv_cache", False)),
            )
            for g in block["ops"]
        )
        blocks.append(BlockTemplate(name=block["name"], gemms=gemms))
    return tuple(blocks)


def model_from_dict(doc: Mapping[str, Any]) -> ModelSpec:
    kwargs = dict(
        name=doc["name"],
        num_layers=int(doc["num_layers"]),
        embedding_dim=int(doc["embedding_dim"]),
        ffn_dim=int(doc["ffn_dim"]),
        sequence_length=int(doc["sequence_length"]),
        num_heads=int(doc["num_heads"]),
        bytes_per_param=int(doc.get("bytes_per_param", 2)),
        simulated_layers=int(doc.get("simulated_layers", 4)),
    )
    if "layer_blocks" in doc:
        kwargs["layer_blocks"] = _blocks_from_doc(doc["layer_blocks"])
    return ModelSpec(**kwargs)


def load_model(source: str | Path) -> ModelSpec:
    """Load a model template from a path or packaged fixture name."""
    from . import fixtures

    return model_from_dict(json.loads(fixtures.find(source, kind="model").read_text()))


def derive_tensor_parallel(dp: int, sp: int, pp: int, npu_count: int) -> int:
    """Tensor-parallel degree filling the cluster: npu_count / (dp*sp*pp)."""
    product = dp * sp * pp
    if product < 1 or npu_count % product != 0:
        raise InvalidParallelization(
            f"dp*sp*pp = {product} does not divide npu_count = {npu_count}"
        )
    return npu_count // product


@dataclass(frozen=True)
class ParallelizationSpec:
    dp: int
    pp: int
    sp: int
    tp: int
    weight_sharded: bool
    global_batch: int

    @property
    def npu_count(self) -> int:
        return self.dp * self.pp * self.sp * self.tp

    @property
    def local_batch(self) -> int:
        return self.global_batch // self.dp

    def validate(self, model: ModelSpec) -> None:
        for name in ("dp", "pp", "sp", "tp", "global_batch"):
            if getattr(self, name) < 1:
                raise InvalidParallelization(f"{name} must be positive")
        if model.num_heads % self.tp != 0 or model.embedding_dim % self.tp != 0:
            raise InvalidParallelization(
                f"tp={self.tp} must divide num_heads={model.num_heads} and "
                f"embedding_dim={model.embedding_dim}"
            )
        if model.sequence_length % self.sp != 0:
            raise InvalidParallelization(
                f"sp={self.sp} must divide sequence_length={model.sequence_length}"
            )
        if self.global_batch % self.dp != 0:
            raise InvalidParallelization(
                f"dp={self.dp} must divide global_batch={self.global_batch}"
            )
        if model.simulated_layers % self.pp != 0 or model.num_layers % self.pp != 0:
            raise InvalidParallelization(
                f"pp={self.pp} must divide simulated ({model.simulated_layers}) "
                f"and total ({model.num_layers}) layer counts"
            )


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceOp:
    """One node of the trace DAG.

    ``scope`` is ``"microbatch"`` for work repeated per microbatch and
    ``"step"`` for once-per-training-step work (gradient sync).
    """

    op_id: int
    kind: str                      # compute | collective | send-recv
    stage: int
    deps: tuple[int, ...]
    pass_: str = "fwd"             # fwd | bwd
    scope: str = "microbatch"
    name: str = ""
    flops: int = 0
    bytes_moved: int = 0
    pattern: str = ""              # collective pattern
    payload: int = 0               # collective / send payload bytes
    axis: str = ""                 # communicator axis name
    src_stage: int = -1
    dst_stage: int = -1


@dataclass(frozen=True)
class CommGroup:
    """Communicator group for one parallelism axis (representative members)."""

    axis: str
    size: int
    stride: int
    span: tuple[tuple[int, int], ...] | None = None  # explicit (dim, participants) override

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(k * self.stride for k in range(self.size))


@dataclass(frozen=True)
class Trace:
    ops: tuple[TraceOp, ...]
    groups: Mapping[str, CommGroup]
    microbatches: int
    stages: int
    npu_count: int
    memory_per_npu: float
    axes: Mapping[str, int]

    def validate(self) -> None:
        for op in self.ops:
            if any(dep >= op.op_id or dep < 0 for dep in op.deps):
                raise WorkloadError(f"op {op.op_id} has a forward/cyclic dependency")
            if op.kind == "compute" and op.flops <= 0:
                raise WorkloadError(f"compute op {op.op_id} must have positive flops")
            if op.kind in ("collective", "send-recv") and op.payload <= 0:
                raise WorkloadError(f"comm op {op.op_id} must have positive payload")
            if op.kind == "collective" and op.axis not in self.groups:
                raise WorkloadError(f"collective op {op.op_id} references unknown axis {op.axis!r}")

    def total_flops(self) -> int:
        """Cluster-wide flops per training step (exact integer arithmetic)."""
        stage_width = self.npu_count // self.stages
        total = 0
        for op in self.ops:
            if op.kind != "compute":
                continue
            repeats = self.microbatches if op.scope == "microbatch" else 1
            total += op.flops * repeats * stage_width
        return total

    def collective_payload(self, axis: str) -> int:
        return sum(op.payload for op in self.ops if op.kind == "collective" and op.axis == axis)


def _make_groups(par: ParallelizationSpec) -> dict[str, CommGroup]:
    sizes = {"tp": par.tp, "sp": par.sp, "dp": par.dp, "pp": par.pp}
    groups: dict[str, CommGroup] = {}
    stride = 1
    for axis in AXIS_ORDER:
        groups[axis] = CommGroup(axis=axis, size=sizes[axis], stride=stride)
        stride *= sizes[axis]
    # Combined tensor/sequence layout used by sharded-sequence sync.
    groups["tpsp"] = CommGroup(axis="tpsp", size=par.tp * par.sp, stride=1)
    return groups


def build_trace(model: ModelSpec, par: ParallelizationSpec, phase: str = "training") -> Trace:
    """Expand the model template into a concrete operator DAG."""
    if phase not in PHASES:
        raise WorkloadError(f"unknown phase {phase!r}; expected one of {PHASES}")
    par.validate(model)

    decode = phase == "inference-decode"
    training = phase == "training"
    bpp = model.bytes_per_param
    env = {
        "B": par.global_batch,
        "S": model.sequence_length,
        "D": model.embedding_dim,
        "H": model.num_heads,
        "ffn": model.ffn_dim,
        "dp": par.dp, "sp": par.sp, "tp": par.tp, "pp": par.pp,
        "b_local": par.local_batch,
        "S_q": 1 if decode else model.sequence_length // par.sp,
        "S_kv": model.sequence_length,
    }
    kv_extra = env["S_kv"] * (model.embedding_dim // par.tp) * bpp if decode else 0
    act_payload = env["S_q"] * model.embedding_dim * bpp
    sync_group = "tp" if par.sp == 1 else "tpsp"
    sync_size = par.tp if par.sp == 1 else par.tp * par.sp
    layers_per_stage = model.simulated_layers // par.pp

    ops: list[TraceOp] = []

    def emit(**kwargs: Any) -> int:
        op_id = len(ops)
        ops.append(TraceOp(op_id=op_id, **kwargs))
        return op_id

    def chain(dep: int | None) -> tuple[int, ...]:
        return () if dep is None else (dep,)

    def emit_sync(tail: int, stage: int, pass_: str) -> int:
        if sync_size <= 1:
            return tail
        if par.sp == 1:
            return emit(kind="collective", stage=stage, pass_=pass_, deps=(tail,),
                        name="tp_sync", pattern="all-reduce", payload=act_payload,
                        axis=sync_group)
        rs = emit(kind="collective", stage=stage, pass_=pass_, deps=(tail,),
                  name="tpsp_reduce", pattern="reduce-scatter", payload=act_payload,
                  axis=sync_group)
        return emit(kind="collective", stage=stage, pass_=pass_, deps=(rs,),
                    name="tpsp_gather", pattern="all-gather", payload=act_payload,
                    axis=sync_group)

    def block_cost(block: BlockTemplate) -> list[tuple[str, int, int]]:
        cost = []
        for gemm in block.gemms:
            m, k, n = (eval_dim(e, env) for e in (gemm.m, gemm.k, gemm.n))
            flops = 2 * m * k * n
            moved = (m * k + k * n + m * n) * bpp
            if gemm.kv_cache:
                moved += kv_extra
            cost.append((gemm.name, flops, moved))
        return cost

    block_costs = [block_cost(block) for block in model.layer_blocks]
    grad_payload = model.layer_params() // par.tp * bpp

    # Forward pass, stage by stage.
    prev_tail: int | None = None
    stage_fwd_tail: dict[int, int] = {}
    for stage in range(par.pp):
        tail = prev_tail
        if stage > 0:
            tail = emit(kind="send-recv", stage=stage, pass_="fwd", deps=chain(tail),
                        name="activation_send", payload=act_payload, axis="pp",
                        src_stage=stage - 1, dst_stage=stage)
        for _ in range(layers_per_stage):
            for block, costs in zip(model.layer_blocks, block_costs):
                for gemm_name, flops, moved in costs:
                    tail = emit(kind="compute", stage=stage, pass_="fwd", deps=chain(tail),
                                name=gemm_name, flops=flops, bytes_moved=moved)
                tail = emit_sync(tail, stage, "fwd")
        stage_fwd_tail[stage] = tail
        prev_tail = tail

    # Backward pass mirrors the forward, block-granular, with 2x flops.
    if training:
        prev_tail = stage_fwd_tail[par.pp - 1]
        for stage in reversed(range(par.pp)):
            tail = prev_tail
            if stage < par.pp - 1:
                tail = emit(kind="send-recv", stage=stage, pass_="bwd", deps=chain(tail),
                            name="gradient_send", payload=act_payload, axis="pp",
                            src_stage=stage + 1, dst_stage=stage)
            for _ in range(layers_per_stage):
                for block, costs in zip(reversed(model.layer_blocks), reversed(block_costs)):
                    flops = 2 * sum(f for _, f, _ in costs)
                    moved = 2 * sum(b for _, _, b in costs)
                    tail = emit(kind="compute", stage=stage, pass_="bwd", deps=chain(tail),
                                name=f"{block.name}_bwd", flops=flops, bytes_moved=moved)
                    tail = emit_sync(tail, stage, "bwd")
                if par.dp > 1:
                    # Gradient sync overlaps later backward work: no successors.
                    if par.weight_sharded:
                        rs = emit(kind="collective", stage=stage, pass_="bwd", scope="step",
                                  deps=(tail,), name="grad_reduce", pattern="reduce-scatter",
                                  payload=grad_payload, axis="dp")
                        emit(kind="collective", stage=stage, pass_="bwd", scope="step",
                             deps=(rs,), name="param_gather", pattern="all-gather",
                             payload=grad_payload, axis="dp")
                    else:
                        emit(kind="collective", stage=stage, pass_="bwd", scope="step",
                             deps=(tail,), name="grad_sync", pattern="all-reduce",
                             payload=grad_payload, axis="dp")
            prev_tail = tail

    trace = Trace(
        ops=tuple(ops),
        groups=_make_groups(par),
        microbatches=par.local_batch,
        stages=par.pp,
        npu_count=par.npu_count,
        memory_per_npu=_footprint(model, par, layer_count=model.simulated_layers),
        axes={"tp": par.tp, "sp": par.sp, "dp": par.dp, "pp": par.pp},
    )
    trace.validate()
    return trace


# ---------------------------------------------------------------------------
# Memory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryBreakdown:
    weights: float
    optimizer_state: float
    activations: float

    @property
    def total(self) -> float:
        return self.weights + self.optimizer_state + self.activations


def _breakdown(
    model: ModelSpec,
    par: ParallelizationSpec,
    layer_count: int,
    opt_multiplier: float,
    activation_factor: float,
) -> MemoryBreakdown:
    params = layer_count * model.layer_params()
    shard = par.dp * par.sp if par.weight_sharded else 1
    weights = params * model.bytes_per_param / (par.tp * par.pp * shard)
    in_flight = min(par.pp, max(1, par.local_batch))
    activations = (
        model.sequence_length * model.embedding_dim * model.bytes_per_param
        * activation_factor * (layer_count / par.pp) * in_flight / (par.tp * par.sp)
    )
    return MemoryBreakdown(weights, weights * opt_multiplier, activations)


def _footprint(model, par, layer_count, opt_multiplier=DEFAULT_OPTIMIZER_MULTIPLIER,
               activation_factor=DEFAULT_ACTIVATION_FACTOR) -> float:
    return _breakdown(model, par, layer_count, opt_multiplier, activation_factor).total


def memory_breakdown(
    model: ModelSpec,
    par: ParallelizationSpec,
    *,
    opt_multiplier: float = DEFAULT_OPTIMIZER_MULTIPLIER,
    activation_factor: float = DEFAULT_ACTIVATION_FACTOR,
) -> MemoryBreakdown:
    """Full-model per-NPU memory, split into weights / optimizer / activations."""
    return _breakdown(model, par, model.num_layers, opt_multiplier, activation_factor)


def memory_footprint(
    model: ModelSpec,
    par: ParallelizationSpec,
    *,
    opt_multiplier: float = DEFAULT_OPTIMIZER_MULTIPLIER,
    activation_factor: float = DEFAULT_ACTIVATION_FACTOR,
) -> float:
    """Bytes per NPU for the whole model under a parallelization.

    weights = total_params * bytes_per_param / (tp * pp * (dp*sp if sharded));
    optimizer state multiplies weights; activations follow the declared
    per-layer model ``activation_factor * S * D * bytes_per_param`` scaled by
    layers per stage, in-flight microbatches, and the tensor/sequence split.
    """
    return memory_breakdown(
        model, par, opt_multiplier=opt_multiplier, activation_factor=activation_factor
    ).total


def scale_report(report, model: ModelSpec):
    """Rescale a simulated-layer report to the full model depth.

    Latency, per-dimension communication, and memory all grow linearly with
    layers per stage, so one ratio covers compute, collectives, and the
    analytic pipeline fill/drain; stage-boundary sends are slightly inflated,
    which keeps the estimate conservative.
    """
    if model.simulated_layers == 0:
        raise WorkloadError("simulated_layers must be positive")
    ratio = model.num_layers / model.simulated_layers
    return replace(
        report,
        total_latency=report.total_latency * ratio,
        compute_time=report.compute_time * ratio,
        exposed_comm_time=report.exposed_comm_time * ratio,
        per_dim_comm_time=tuple(t * ratio for t in report.per_dim_comm_time),
        peak_memory=report.peak_memory * ratio,
    )
