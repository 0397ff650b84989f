"""Shared-parameter model placement on wireless edge caches."""

__version__ = "0.1.0"

from .library import (
    BlockCombination,
    Chain,
    LibraryConfig,
    Model,
    ModelLibrary,
    ParameterBlock,
    detect_chain,
    enumerate_combinations,
    generate_library,
    shared_blocks,
    specific_size,
)
from .network import (
    ChannelParams,
    EdgeServer,
    Topology,
    TopologyConfig,
    UserNode,
    e2e_latency,
    expected_rate,
    generate_topology,
    latency_indicator,
    mobility_step,
    sampled_rate,
)
from .objective import (
    UNIT,
    EvalContext,
    HitAccounting,
    Placement,
    Workload,
    cache_hits,
    hit_ratio,
    hit_units,
    marginal_gain,
    per_server_hit_ratio,
    round_hits,
    storage_usage,
    unserved_indicator,
)
from .solvers import (
    DpTable,
    OnlineResult,
    SolveReport,
    backtrack,
    online_policy,
    solve_exhaustive,
    solve_gen,
    solve_independent,
    solve_spec,
    solve_subproblem,
)
from .harness import (
    ExperimentConfig,
    MetricRow,
    WorkloadConfig,
    evaluate_fading,
    generate_workload,
    perturb_probabilities,
    run_mobility,
    run_online,
    run_perturbation,
    run_sweep,
)
