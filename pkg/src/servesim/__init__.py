"""Trace-driven simulator for data-parallel LLM serving clusters.

Models continuously batched engines with paged KV memory under pluggable
dispatch policies (fcfs, nopreempt, trail_plus, larry) and cluster load
balancers (rr, random, p2c, sal), and reports time-to-first-token and
generation-time distributions.
"""

from .balancers import (
    BALANCER_NAMES,
    BalancerView,
    BetaEstimator,
    LoadBalancer,
    PowerOfTwoBalancer,
    RandomBalancer,
    RoundRobinBalancer,
    ServerAwareBalancer,
    ServerStats,
    make_balancer,
    sal_load,
)
from .cluster import build_engine, run_cluster, snapshot_stats
from .config import (
    BalancerSettings,
    ClusterSettings,
    ConfigError,
    EngineSettings,
    ExperimentConfig,
    WorkloadSettings,
    apply_overrides,
    config_from_dict,
    default_config,
    load_config_file,
    resolve_trace,
)
from .costmodel import CostParams, crossover_batch_tokens, default_params, iteration_latency
from .engine import (
    BatchPlan,
    Engine,
    IterationReport,
    Request,
    RequestState,
    StallError,
)
from .kvmem import (
    DEFAULT_BLOCK_SIZE,
    KvBlockPool,
    ModelProfile,
    PROFILES,
    blocks_needed,
    kv_bytes,
    pool_blocks_for,
)
from .metrics import (
    MetricsRecord,
    Summary,
    capacity_sweep,
    percentile,
    summarize,
    write_records_csv,
    write_summary_csv,
    write_summary_json,
)
from .policies import (
    EngineLimits,
    FcfsPolicy,
    InfeasibleRequestError,
    LoadAdaptivePolicy,
    NoPreemptPolicy,
    POLICY_NAMES,
    PolicyDecision,
    SchedulerPolicy,
    ShortestRemainingPolicy,
    larry_score,
    make_policy,
)
from .workload import (
    LengthDist,
    SynthSpec,
    TRACE_FORMATS,
    TraceEntry,
    TraceFormatError,
    load_trace,
    pair_arrivals_with_sizes,
    scale_qps,
    synthesize,
    write_trace,
)

__version__ = "0.1.0"
