"""Engine-level dispatch policies.

A policy looks at the engine's waiting queue, running set, memory pool, and
clock, and decides which waiting requests to dispatch this iteration and
which running requests to evict. Policies never mutate engine state; the
engine applies the returned decision.

Registry keys (used in config files): fcfs, nopreempt, trail_plus, larry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .kvmem import blocks_needed


class InfeasibleRequestError(ValueError):
    """A request that can never run under the given engine configuration."""


@dataclass(frozen=True)
class EngineLimits:
    max_tokens_per_batch: int
    max_running: int | None
    max_context: int

    def __post_init__(self):
        if self.max_tokens_per_batch < 1:
            raise ValueError(
                f"max_tokens_per_batch must be >= 1, got {self.max_tokens_per_batch}"
            )
        if self.max_running is not None and self.max_running < 1:
            raise ValueError(f"max_running must be >= 1, got {self.max_running}")
        if self.max_context < 1:
            raise ValueError(f"max_context must be >= 1, got {self.max_context}")


@dataclass
class PolicyDecision:
    """Waiting requests to dispatch (in dispatch order) and running requests
    to evict. The two id lists are disjoint."""

    dispatch: list[int] = field(default_factory=list)
    preempt: list[int] = field(default_factory=list)


class SchedulerPolicy:
    """Base class; subclasses implement select()."""

    name = "base"

    def select(self, waiting, running, pool, clock, limits) -> PolicyDecision:
        raise NotImplementedError

    def check_feasible(self, request, pool, limits) -> None:
        """Raise InfeasibleRequestError if the request can never complete."""
        peak = request.prompt_len + request.output_len
        if peak > limits.max_context:
            raise InfeasibleRequestError(
                f"request {request.id}: prompt {request.prompt_len} + output "
                f"{request.output_len} exceeds the {limits.max_context}-token context window"
            )
        if blocks_needed(peak, pool.block_size) > pool.total_blocks:
            raise InfeasibleRequestError(
                f"request {request.id}: needs {blocks_needed(peak, pool.block_size)} blocks "
                f"at peak, pool holds {pool.total_blocks}"
            )

    def _open_slots(self, running_count: int, limits: EngineLimits) -> float:
        if limits.max_running is None:
            return float("inf")
        return limits.max_running - running_count


class FcfsPolicy(SchedulerPolicy):
    """Strict first-come-first-served.

    Walks the queue in order and dispatches while the next request's pending
    prefill fits in free memory (and a concurrency slot is open). Stops at
    the first request that does not fit, so a large request at the head
    blocks everything behind it.
    """

    name = "fcfs"

    def select(self, waiting, running, pool, clock, limits) -> PolicyDecision:
        free = pool.free_blocks
        slots = self._open_slots(len(running), limits)
        dispatch: list[int] = []
        for r in waiting:
            need = blocks_needed(r.pending_prefill, pool.block_size)
            if len(dispatch) >= slots or need > free:
                break
            dispatch.append(r.id)
            free -= need
        return PolicyDecision(dispatch=dispatch)


class NoPreemptPolicy(SchedulerPolicy):
    """FIFO admission with worst-case memory reservations.

    Each admitted request reserves blocks for min(max_context, prompt +
    max_output) tokens, the most KV it could ever hold. Requests are
    dispatched in queue order only while the full reservation fits, so a
    running request can always grow and is never evicted.
    """

    name = "nopreempt"

    def __init__(self, max_output: int = 1024):
        if max_output < 1:
            raise ValueError(f"max_output must be >= 1, got {max_output}")
        self.max_output = max_output

    def reservation_tokens(self, request, limits: EngineLimits) -> int:
        return min(limits.max_context, request.prompt_len + self.max_output)

    def check_feasible(self, request, pool, limits) -> None:
        super().check_feasible(request, pool, limits)
        if request.output_len > self.max_output:
            raise InfeasibleRequestError(
                f"request {request.id}: output {request.output_len} exceeds the "
                f"promised max_output {self.max_output}"
            )
        reservation = blocks_needed(self.reservation_tokens(request, limits), pool.block_size)
        if reservation > pool.total_blocks:
            raise InfeasibleRequestError(
                f"request {request.id}: reservation of {reservation} blocks "
                f"exceeds the pool ({pool.total_blocks})"
            )

    def select(self, waiting, running, pool, clock, limits) -> PolicyDecision:
        bs = pool.block_size
        committed = sum(
            blocks_needed(self.reservation_tokens(q, limits), bs) for q in running
        )
        slots = self._open_slots(len(running), limits)
        dispatch: list[int] = []
        for r in waiting:
            need = blocks_needed(self.reservation_tokens(r, limits), bs)
            if len(dispatch) >= slots or committed + need > pool.total_blocks:
                break
            dispatch.append(r.id)
            committed += need
        return PolicyDecision(dispatch=dispatch)


class ShortestRemainingPolicy(SchedulerPolicy):
    """Shortest-remaining-output-first using ground-truth response lengths.

    Waiting requests are considered in ascending remaining-output order
    (remaining = output_len - generated); a request that does not fit is
    skipped rather than blocking the rest. When c > 0, a candidate may evict
    running requests that (a) have strictly more remaining output and
    (b) have generated less than the fraction c of their response; victims
    are taken largest-remaining-first until the candidate fits. c = 0 never
    evicts anything.
    """

    name = "trail_plus"

    def __init__(self, c: float = 0.0):
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"c must be in [0, 1], got {c}")
        self.c = c

    def select(self, waiting, running, pool, clock, limits) -> PolicyDecision:
        bs = pool.block_size
        free = pool.free_blocks
        order = sorted(
            waiting, key=lambda r: (r.output_len - r.generated, r.arrival_time, r.id)
        )
        dispatch: list[int] = []
        preempt: list[int] = []
        marked: set[int] = set()
        running_count = len(running)
        for r in order:
            slots = self._open_slots(running_count + len(dispatch) - len(preempt), limits)
            if slots < 1:
                continue
            need = blocks_needed(r.pending_prefill, bs)
            if need <= free:
                dispatch.append(r.id)
                free -= need
                continue
            if self.c == 0:
                continue
            remaining = r.output_len - r.generated
            victims = [
                q
                for q in running
                if q.id not in marked
                and q.generated < self.c * q.output_len
                and (q.output_len - q.generated) > remaining
            ]
            victims.sort(key=lambda q: (-(q.output_len - q.generated), -q.dispatch_seq))
            gain = 0
            chosen: list[int] = []
            for q in victims:
                if free + gain >= need:
                    break
                gain += pool.allocated_blocks(q.id)
                chosen.append(q.id)
            if free + gain < need:
                continue
            preempt.extend(chosen)
            marked.update(chosen)
            free += gain
            dispatch.append(r.id)
            free -= need
        return PolicyDecision(dispatch=dispatch, preempt=preempt)


def larry_score(request, clock: float, queue_len: int, alpha: float) -> float:
    """Priority score trading waiting time against memory footprint.

    Grows with how long the request has been queued and shrinks with its
    pending-prefill size, the latter scaled by how long the queue is: under
    backlog, large requests yield to small ones; an empty-ish queue lets
    arrival order win.
    """
    wait = clock - request.enqueue_time
    return alpha * wait - queue_len * request.pending_prefill


class LoadAdaptivePolicy(SchedulerPolicy):
    """Score-ordered admission that adapts to queue pressure.

    Waiting requests are sorted by descending larry_score (ties: earlier
    enqueue, then id) and dispatched while each one's pending prefill fits
    free memory and the iteration's token budget is not already claimed by
    running work. The walk stops at the first request that cannot be
    scheduled; it never skips ahead and never evicts running requests.
    """

    name = "larry"

    def __init__(self, alpha: float = 1.0):
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        self.alpha = alpha

    def select(self, waiting, running, pool, clock, limits) -> PolicyDecision:
        bs = pool.block_size
        free = pool.free_blocks
        slots = self._open_slots(len(running), limits)

        # Token budget left for new prefills after running work claims its
        # share of this iteration's batch.
        budget = limits.max_tokens_per_batch
        budget -= sum(1 for q in running if q.is_decoding)
        budget = max(0, budget)
        for q in sorted((q for q in running if q.is_prefilling), key=lambda q: q.dispatch_seq):
            if budget == 0:
                break
            budget -= min(q.pending_prefill, budget)

        queue_len = len(waiting)
        order = sorted(
            waiting,
            key=lambda r: (
                -larry_score(r, clock, queue_len, self.alpha),
                r.enqueue_time,
                r.id,
            ),
        )
        dispatch: list[int] = []
        for r in order:
            need = blocks_needed(r.pending_prefill, bs)
            if len(dispatch) >= slots or need > free or budget <= 0:
                break
            dispatch.append(r.id)
            free -= need
            budget -= min(r.pending_prefill, budget)
        return PolicyDecision(dispatch=dispatch)


POLICY_NAMES = ("fcfs", "nopreempt", "trail_plus", "larry")


def make_policy(
    name: str,
    *,
    alpha: float = 1.0,
    c: float = 0.0,
    max_output: int = 1024,
) -> SchedulerPolicy:
    """Build a policy from its registry key and parameters."""
    if name == "fcfs":
        return FcfsPolicy()
    if name == "nopreempt":
        return NoPreemptPolicy(max_output=max_output)
    if name == "trail_plus":
        return ShortestRemainingPolicy(c=c)
    if name == "larry":
        return LoadAdaptivePolicy(alpha=alpha)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
