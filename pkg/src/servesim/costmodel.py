"""Iteration latency model for a continuously batched serving engine.

A single engine iteration either streams the weights plus the resident KV
cache through memory or crunches the batched tokens through the ALUs,
whichever is slower, plus a fixed scheduling overhead:

    latency = overhead_s + max(mem_base_s + mem_per_kv_token_s * resident_kv,
                               compute_per_token_s * batch_tokens)

Small batches are memory-bound (latency barely moves with batch size); past
the crossover the compute term takes over and latency grows linearly. The
built-in parameter sets are derived from public bandwidth/FLOPs figures and
give plausible shapes and relative behavior, not calibrated wall-clock
numbers for any particular deployment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class CostParams:
    mem_base_s: float
    mem_per_kv_token_s: float
    compute_per_token_s: float
    overhead_s: float

    def __post_init__(self):
        if self.mem_base_s <= 0:
            raise ValueError(f"mem_base_s must be > 0, got {self.mem_base_s}")
        for name in ("mem_per_kv_token_s", "compute_per_token_s", "overhead_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


def iteration_latency(params: CostParams, batch_tokens: int, resident_kv_tokens: int) -> float:
    """Seconds for one iteration processing `batch_tokens` new tokens.

    `resident_kv_tokens` is the total KV context the batch has to read
    (sum of the batched requests' current context lengths).
    """
    if batch_tokens < 0 or resident_kv_tokens < 0:
        raise ValueError("token counts must be >= 0")
    mem = params.mem_base_s + params.mem_per_kv_token_s * resident_kv_tokens
    compute = params.compute_per_token_s * batch_tokens
    return params.overhead_s + max(mem, compute)


def crossover_batch_tokens(params: CostParams, resident_kv_tokens: int = 0) -> float:
    """Batch size where compute time overtakes memory time."""
    if params.compute_per_token_s == 0:
        return float("inf")
    mem = params.mem_base_s + params.mem_per_kv_token_s * resident_kv_tokens
    return mem / params.compute_per_token_s


# Defaults per (model profile, hardware) pair.
#   mem_base_s:           weights bytes / aggregate HBM bandwidth
#   mem_per_kv_token_s:   kv bytes per token / aggregate HBM bandwidth
#   compute_per_token_s:  2 * params FLOPs per token / usable throughput
_DEFAULTS = {
    ("llama3-8b", "a100"): CostParams(
        mem_base_s=1.03e-2,
        mem_per_kv_token_s=8.4e-8,
        compute_per_token_s=1.0e-4,
        overhead_s=5e-4,
    ),
    ("llama3-70b", "h100x2"): CostParams(
        mem_base_s=1.05e-2,
        mem_per_kv_token_s=4.9e-8,
        compute_per_token_s=1.4e-4,
        overhead_s=5e-4,
    ),
}


def default_params(profile_name: str, hardware: str, **overrides: float) -> CostParams:
    """Cost parameters for a known (profile, hardware) pair.

    Individual fields can be overridden by keyword. An unknown pair is an
    error unless all four fields are supplied explicitly.
    """
    key = (profile_name, hardware)
    if key in _DEFAULTS:
        base = _DEFAULTS[key]
        return replace(base, **overrides) if overrides else base
    required = {"mem_base_s", "mem_per_kv_token_s", "compute_per_token_s", "overhead_s"}
    if set(overrides) == required:
        return CostParams(**overrides)
    raise KeyError(
        f"no default cost parameters for {profile_name!r} on {hardware!r}; "
        f"known pairs: {sorted(_DEFAULTS)}"
    )
