"""stackdse: full-stack design-space exploration for distributed ML systems.

Schema-defined search spaces over workload / collective / network knobs, an
analytical end-to-end cost simulator, memory-gated reward objectives, and
four interchangeable search agents, tied together by an experiment harness
and CLI.
"""

from .agents import (
    ActionSpaceSpec,
    AgentConfig,
    SlotSpec,
    configure_action_space,
    make_agent,
)
from .harness import (
    ExperimentConfig,
    ExhaustiveResult,
    HarnessError,
    SearchLog,
    SearchRecord,
    SystemFixture,
    export,
    load_system,
    restrict_schema,
    run_exhaustive,
    run_search,
)
from .objectives import (
    DEFAULT_MEMORY_LIMIT,
    Evaluation,
    Evaluator,
    reward_perf_per_bw,
    reward_perf_per_cost,
)
from .collectives import (
    axis_spans,
    collective_time_1d,
    multidim_collective_time,
    ring_hop_penalty,
)
from .schema import (
    TOO_LARGE,
    Constraint,
    DesignPoint,
    Knob,
    SamplingError,
    Schema,
    SchemaError,
    check_constraints,
    constrained_cardinality,
    decode_action,
    encode_point,
    iter_valid_actions,
    load_schema,
    parse_schema,
    raw_cardinality,
    sample_uniform,
)
from .simulator import (
    CollectiveConfig,
    ComputeSpec,
    CostCoefficients,
    SimReport,
    SimulationError,
    TopologyDim,
    TopologySpec,
    network_cost,
    roofline_time,
    simulate,
)
from .workload import (
    INFERENCE_PROFILES,
    CommGroup,
    InvalidParallelization,
    ModelSpec,
    ParallelizationSpec,
    Trace,
    TraceOp,
    WorkloadError,
    build_trace,
    derive_tensor_parallel,
    load_model,
    memory_breakdown,
    memory_footprint,
    scale_report,
)

__version__ = "0.1.0"
