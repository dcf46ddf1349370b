"""Experiment configuration: dataclasses, JSON parsing, defaults, overrides.

A config file is a single JSON document. Every key is optional and falls
back to the defaults below; unknown keys are rejected so typos fail loudly.
`--set a.b.c=value` overrides use dotted paths with JSON-parsed values.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .balancers import BALANCER_NAMES
from .kvmem import DEFAULT_BLOCK_SIZE, PROFILES
from .policies import POLICY_NAMES
from .workload import LengthDist, SynthSpec


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class EngineSettings:
    policy: str = "fcfs"
    alpha: float = 1.0
    c: float = 0.0
    max_output: int = 8191  # any output the default workload can emit
    profile: str = "llama3-8b"
    hardware: str = "a100"
    block_size: int = DEFAULT_BLOCK_SIZE
    pool_blocks: int | None = None  # None: derived from gpu_mem_bytes and profile
    gpu_mem_bytes: float = 40e9
    max_tokens_per_batch: int = 1024
    max_running: int | None = None
    cost: dict = field(default_factory=dict)


@dataclass
class BalancerSettings:
    name: str = "random"
    poll_interval_s: float = 0.1
    beta_prior: float = 2.0
    beta_fixed: float | None = None


@dataclass
class ClusterSettings:
    n_servers: int = 1
    engine: EngineSettings = field(default_factory=EngineSettings)
    balancer: BalancerSettings = field(default_factory=BalancerSettings)
    seed: int = 0


@dataclass
class WorkloadSettings:
    """Exactly one source: a synthetic spec, a combined trace file, or an
    arrivals file paired with a sizes file."""

    synth: SynthSpec | None = None
    combined: str | None = None
    arrivals: str | None = None
    sizes: str | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    workload: WorkloadSettings = field(default_factory=WorkloadSettings)
    cluster: ClusterSettings = field(default_factory=ClusterSettings)
    policies: list[str] | None = None  # None: just cluster.engine.policy
    balancers: list[str] | None = None  # None: just cluster.balancer.name
    sweep_factors: list[float] = field(default_factory=lambda: [1.0])


def default_config() -> ExperimentConfig:
    """Well-provisioned single-server baseline on a synthetic workload."""
    cfg = ExperimentConfig()
    cfg.workload.synth = SynthSpec(
        duration_s=180.0,
        mean_qps=2.0,
        burstiness=1.0,
        prompt_dist=LengthDist(location=6.2, scale=1.1),
        output_dist=LengthDist(location=4.9, scale=0.9),
        max_context=8192,
        seed=0,
    )
    return cfg


def _take(d: dict, key: str, default):
    return d.pop(key) if key in d else default


def _no_leftovers(d: dict, where: str) -> None:
    if d:
        raise ConfigError(f"unknown {where} keys: {sorted(d)}")


def _length_dist(d, where: str, default: LengthDist) -> LengthDist:
    if d is None:
        return default
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object with location/scale")
    d = dict(d)
    try:
        dist = LengthDist(
            location=float(_take(d, "location", default.location)),
            scale=float(_take(d, "scale", default.scale)),
        )
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from None
    _no_leftovers(d, where)
    return dist


def _synth_spec(d: dict, top_seed: int) -> SynthSpec:
    d = dict(d)
    base = default_config().workload.synth
    seed = _take(d, "seed", None)
    try:
        spec = SynthSpec(
            duration_s=float(_take(d, "duration_s", base.duration_s)),
            mean_qps=float(_take(d, "mean_qps", base.mean_qps)),
            burstiness=float(_take(d, "burstiness", base.burstiness)),
            prompt_dist=_length_dist(_take(d, "prompt_dist", None), "workload.synth.prompt_dist", base.prompt_dist),
            output_dist=_length_dist(_take(d, "output_dist", None), "workload.synth.output_dist", base.output_dist),
            max_context=int(_take(d, "max_context", base.max_context)),
            seed=int(seed) if seed is not None else top_seed,
        )
    except ValueError as err:
        raise ConfigError(f"workload.synth: {err}") from None
    _no_leftovers(d, "workload.synth")
    return spec


def _workload(d, top_seed: int) -> WorkloadSettings:
    if d is None:
        w = default_config().workload
        w.synth = dataclasses.replace(w.synth, seed=top_seed)
        return w
    if not isinstance(d, dict):
        raise ConfigError("workload must be an object")
    d = dict(d)
    w = WorkloadSettings(
        synth=None,
        combined=_take(d, "combined", None),
        arrivals=_take(d, "arrivals", None),
        sizes=_take(d, "sizes", None),
    )
    synth = _take(d, "synth", None)
    if synth is not None:
        w.synth = _synth_spec(synth, top_seed)
    _no_leftovers(d, "workload")
    sources = [w.synth is not None, w.combined is not None, w.arrivals is not None]
    if sum(sources) != 1:
        raise ConfigError(
            "workload needs exactly one source: synth, combined, or arrivals+sizes"
        )
    if (w.arrivals is None) != (w.sizes is None):
        raise ConfigError("workload.arrivals and workload.sizes go together")
    return w


def _engine(d) -> EngineSettings:
    base = EngineSettings()
    if d is None:
        return base
    if not isinstance(d, dict):
        raise ConfigError("cluster.engine must be an object")
    d = dict(d)
    e = EngineSettings(
        policy=str(_take(d, "policy", base.policy)),
        alpha=float(_take(d, "alpha", base.alpha)),
        c=float(_take(d, "c", base.c)),
        max_output=int(_take(d, "max_output", base.max_output)),
        profile=str(_take(d, "profile", base.profile)),
        hardware=str(_take(d, "hardware", base.hardware)),
        block_size=int(_take(d, "block_size", base.block_size)),
        pool_blocks=_opt_int(_take(d, "pool_blocks", None), "cluster.engine.pool_blocks"),
        gpu_mem_bytes=float(_take(d, "gpu_mem_bytes", base.gpu_mem_bytes)),
        max_tokens_per_batch=int(_take(d, "max_tokens_per_batch", base.max_tokens_per_batch)),
        max_running=_opt_int(_take(d, "max_running", None), "cluster.engine.max_running"),
        cost=dict(_take(d, "cost", {})),
    )
    _no_leftovers(d, "cluster.engine")
    _check_engine(e)
    return e


def _opt_int(v, where: str) -> int | None:
    if v is None:
        return None
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be an integer or null") from None


def _check_engine(e: EngineSettings) -> None:
    if e.policy not in POLICY_NAMES:
        raise ConfigError(f"unknown policy {e.policy!r}; expected one of {POLICY_NAMES}")
    if e.profile not in PROFILES:
        raise ConfigError(f"unknown profile {e.profile!r}; expected one of {sorted(PROFILES)}")
    if e.alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {e.alpha}")
    if not 0 <= e.c <= 1:
        raise ConfigError(f"c must be in [0, 1], got {e.c}")
    if e.max_output < 1:
        raise ConfigError(f"max_output must be >= 1, got {e.max_output}")
    if e.block_size < 1:
        raise ConfigError(f"block_size must be >= 1, got {e.block_size}")
    if e.pool_blocks is not None and e.pool_blocks < 1:
        raise ConfigError(f"pool_blocks must be >= 1, got {e.pool_blocks}")
    if e.max_tokens_per_batch < 1:
        raise ConfigError(f"max_tokens_per_batch must be >= 1, got {e.max_tokens_per_batch}")
    if e.max_running is not None and e.max_running < 1:
        raise ConfigError(f"max_running must be >= 1, got {e.max_running}")
    cost_keys = {"mem_base_s", "mem_per_kv_token_s", "compute_per_token_s", "overhead_s"}
    bad = set(e.cost) - cost_keys
    if bad:
        raise ConfigError(f"unknown cost keys: {sorted(bad)}")


def _balancer(d) -> BalancerSettings:
    base = BalancerSettings()
    if d is None:
        return base
    if not isinstance(d, dict):
        raise ConfigError("cluster.balancer must be an object")
    d = dict(d)
    fixed = _take(d, "beta_fixed", None)
    b = BalancerSettings(
        name=str(_take(d, "name", base.name)),
        poll_interval_s=float(_take(d, "poll_interval_s", base.poll_interval_s)),
        beta_prior=float(_take(d, "beta_prior", base.beta_prior)),
        beta_fixed=float(fixed) if fixed is not None else None,
    )
    _no_leftovers(d, "cluster.balancer")
    if b.name not in BALANCER_NAMES:
        raise ConfigError(f"unknown balancer {b.name!r}; expected one of {BALANCER_NAMES}")
    if b.poll_interval_s <= 0:
        raise ConfigError(f"poll_interval_s must be > 0, got {b.poll_interval_s}")
    if b.beta_prior < 1:
        raise ConfigError(f"beta_prior must be >= 1, got {b.beta_prior}")
    if b.beta_fixed is not None and b.beta_fixed < 1:
        raise ConfigError(f"beta_fixed must be >= 1, got {b.beta_fixed}")
    return b


def _cluster(d, top_seed: int) -> ClusterSettings:
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError("cluster must be an object")
    d = dict(d)
    c = ClusterSettings(
        n_servers=int(_take(d, "n_servers", 1)),
        engine=_engine(_take(d, "engine", None)),
        balancer=_balancer(_take(d, "balancer", None)),
        seed=int(_take(d, "seed", top_seed)),
    )
    _no_leftovers(d, "cluster")
    if c.n_servers < 1:
        raise ConfigError(f"n_servers must be >= 1, got {c.n_servers}")
    return c


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed JSON object."""
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    d = copy.deepcopy(d)
    seed = int(_take(d, "seed", 0))
    cfg = ExperimentConfig(
        seed=seed,
        workload=_workload(_take(d, "workload", None), seed),
        cluster=_cluster(_take(d, "cluster", None), seed),
        policies=_name_list(_take(d, "policies", None), POLICY_NAMES, "policies"),
        balancers=_name_list(_take(d, "balancers", None), BALANCER_NAMES, "balancers"),
        sweep_factors=_factors(_take(d, "sweep_factors", [1.0])),
    )
    _no_leftovers(d, "top-level")
    return cfg


def _name_list(v, known, where: str) -> list[str] | None:
    if v is None:
        return None
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where} must be a non-empty list")
    names = [str(x) for x in v]
    for n in names:
        if n not in known:
            raise ConfigError(f"{where}: unknown name {n!r}; expected one of {known}")
    if len(set(names)) != len(names):
        raise ConfigError(f"{where}: duplicate names")
    return names


def _factors(v) -> list[float]:
    if not isinstance(v, list) or not v:
        raise ConfigError("sweep_factors must be a non-empty list")
    factors = [float(x) for x in v]
    if any(f <= 0 for f in factors):
        raise ConfigError("sweep_factors must all be > 0")
    return factors


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON: {err}") from None


def apply_overrides(d: dict, assignments: list[str]) -> dict:
    """Apply `--set a.b.c=value` overrides; values parse as JSON, falling
    back to a bare string."""
    out = copy.deepcopy(d)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"--set needs a non-empty key, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for k in keys[:-1]:
            nxt = node.get(k)
            if not isinstance(nxt, dict):
                nxt = {}
                node[k] = nxt
            node = nxt
        node[keys[-1]] = value
    return out


def resolve_trace(cfg: ExperimentConfig):
    """Materialize the configured workload as a list of trace entries."""
    from .workload import load_trace, pair_arrivals_with_sizes, synthesize

    w = cfg.workload
    if w.synth is not None:
        return synthesize(w.synth)
    if w.combined is not None:
        return load_trace(w.combined, "combined")
    arrivals = load_trace(w.arrivals, "arrivals")
    sizes = load_trace(w.sizes, "sizes")
    return pair_arrivals_with_sizes(arrivals, sizes, cfg.seed)
