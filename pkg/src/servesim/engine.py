"""Single-server serving engine with continuous batching and paged KV memory.

The engine advances in discrete iterations. One call to step():

1. asks the policy which waiting requests to dispatch and which running
   requests to evict, and applies that decision (dispatch allocates blocks
   for the request's pending prefill),
2. forms the token batch: every decoding request contributes one token,
   then prefilling requests contribute prompt chunks in dispatch order,
   all capped by max_tokens_per_batch,
3. advances the clock by the modeled iteration latency,
4. applies progress at the new clock: prefill chunks land, a request whose
   prefill just completed emits its first token (unless it is re-computing
   after an eviction, in which case it silently resumes decoding), decoding
   requests grow their allocation by one token and may finish.

If a decode or first-token grow finds the pool full, the engine evicts
running requests in reverse dispatch order (their KV is dropped and later
recomputed; generated tokens are kept) until the grow fits. A request that
cannot fit even after evicting everything else is parked back in the queue
with a warning.

Evicted requests re-enter the waiting queue at the head with a fresh
enqueue_time; their pending prefill covers prompt plus generated tokens.

Arrivals are only visible at iteration boundaries: enqueue() timestamps the
request with the engine clock, and run() injects trace arrivals before each
step.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .costmodel import CostParams, iteration_latency
from .kvmem import KvBlockPool, blocks_needed
from .metrics import MetricsRecord
from .policies import EngineLimits, PolicyDecision, SchedulerPolicy

logger = logging.getLogger(__name__)


class RequestState(Enum):
    WAITING = "waiting"
    PREFILLING = "prefilling"
    DECODING = "decoding"
    PREEMPTED = "preempted"
    FINISHED = "finished"


@dataclass(eq=False)
class Request:
    """One request's lifecycle state inside an engine.

    Evicted requests are put back in the waiting queue (state WAITING,
    preempt_count incremented); PREEMPTED only labels log events.
    """

    id: int
    arrival_time: float
    prompt_len: int
    output_len: int
    state: RequestState = RequestState.WAITING
    prefill_done: int = 0
    generated: int = 0
    enqueue_time: float = 0.0
    first_token_time: float | None = None
    finish_time: float | None = None
    preempt_count: int = 0
    dispatch_seq: int | None = None

    def __post_init__(self):
        if self.arrival_time < 0:
            raise ValueError(f"arrival_time must be >= 0, got {self.arrival_time}")
        if self.prompt_len < 1:
            raise ValueError(f"prompt_len must be >= 1, got {self.prompt_len}")
        if self.output_len < 1:
            raise ValueError(f"output_len must be >= 1, got {self.output_len}")

    @property
    def prefill_target(self) -> int:
        """Tokens the prefill must cover before (re)entering decode."""
        return self.prompt_len + self.generated

    @property
    def pending_prefill(self) -> int:
        return self.prefill_target - self.prefill_done

    @property
    def is_waiting(self) -> bool:
        return self.state is RequestState.WAITING

    @property
    def is_prefilling(self) -> bool:
        return self.state is RequestState.PREFILLING

    @property
    def is_decoding(self) -> bool:
        return self.state is RequestState.DECODING

    @property
    def is_finished(self) -> bool:
        return self.state is RequestState.FINISHED

    @property
    def context_len(self) -> int:
        """KV tokens this request currently holds."""
        if self.state is RequestState.DECODING:
            return self.prompt_len + self.generated
        if self.state is RequestState.PREFILLING:
            return self.prefill_done
        return 0


@dataclass(frozen=True)
class BatchPlan:
    """Tokens scheduled for one iteration."""

    decode_ids: list[int]
    prefill_chunks: list[tuple[int, int]]
    total_tokens: int


@dataclass(frozen=True)
class IterationReport:
    latency_s: float
    total_tokens: int
    dispatched: list[int]
    preempted: list[int]
    first_tokens: list[int]
    finished: list[int]


class StallError(RuntimeError):
    """The engine has work but cannot schedule a single token."""


class Engine:
    def __init__(
        self,
        pool: KvBlockPool,
        policy: SchedulerPolicy,
        cost: CostParams,
        *,
        max_tokens_per_batch: int = 1024,
        max_running: int | None = None,
        max_context: int = 8192,
    ):
        self.pool = pool
        self.policy = policy
        self.cost = cost
        self.limits = EngineLimits(
            max_tokens_per_batch=max_tokens_per_batch,
            max_running=max_running,
            max_context=max_context,
        )
        self.clock = 0.0
        self.waiting: deque[Request] = deque()
        self.running: dict[int, Request] = {}
        self.requests: dict[int, Request] = {}
        self.event_log: list[tuple[str, float, int, str]] = []
        self.peak_batch_tokens = 0
        self.iterations = 0
        self._next_dispatch_seq = 0
        self._preempted_now: list[int] = []

    @property
    def has_work(self) -> bool:
        return bool(self.waiting) or bool(self.running)

    def enqueue(self, request: Request) -> None:
        """Admit an arrival to the waiting queue at the current clock."""
        if request.id in self.requests:
            raise ValueError(f"duplicate request id {request.id}")
        if request.state is not RequestState.WAITING:
            raise ValueError(f"request {request.id} is {request.state.value}, not waiting")
        request.enqueue_time = self.clock
        self.requests[request.id] = request
        self.waiting.append(request)
        self._log("enqueue", request.id)

    def advance_to(self, t: float) -> None:
        """Jump an idle engine's clock forward (never backward)."""
        if self.has_work:
            raise RuntimeError("cannot jump the clock while work is pending")
        if t > self.clock:
            self.clock = t

    def step(self) -> IterationReport:
        """Run one iteration; returns what happened."""
        if not self.has_work:
            raise StallError("step() called with no work")
        self._preempted_now = []

        decision = self.policy.select(
            list(self.waiting), list(self.running.values()), self.pool, self.clock, self.limits
        )
        self._validate_decision(decision)
        for rid in decision.preempt:
            self._preempt(self.requests[rid], "preempt")
        for rid in decision.dispatch:
            self._dispatch(self.requests[rid])

        plan = self._form_batch()
        if plan.total_tokens == 0:
            raise StallError(
                f"no schedulable tokens at t={self.clock:.6f} "
                f"(waiting={len(self.waiting)}, running={len(self.running)}, "
                f"free_blocks={self.pool.free_blocks})"
            )
        assert plan.total_tokens <= self.limits.max_tokens_per_batch

        resident = sum(self.requests[rid].context_len for rid in plan.decode_ids)
        resident += sum(self.requests[rid].context_len for rid, _ in plan.prefill_chunks)
        latency = iteration_latency(self.cost, plan.total_tokens, resident)
        self.clock += latency

        first_tokens, finished = self._apply_progress(plan)

        assert self.pool.conserved()
        self.peak_batch_tokens = max(self.peak_batch_tokens, plan.total_tokens)
        self.iterations += 1
        return IterationReport(
            latency_s=latency,
            total_tokens=plan.total_tokens,
            dispatched=list(decision.dispatch),
            preempted=list(self._preempted_now),
            first_tokens=first_tokens,
            finished=finished,
        )

    def run(self, trace, validate: bool = True) -> list[MetricsRecord]:
        """Simulate a whole trace on a fresh engine; one record per request."""
        if self.requests:
            raise RuntimeError("run() needs a fresh engine")
        entries = list(trace)
        for a, b in zip(entries, entries[1:]):
            if b.arrival_time < a.arrival_time:
                raise ValueError("trace arrivals must be sorted")
        requests = [
            Request(
                id=i,
                arrival_time=e.arrival_time,
                prompt_len=e.prompt_len,
                output_len=e.output_len,
            )
            for i, e in enumerate(entries)
        ]
        if validate:
            for r in requests:
                self.policy.check_feasible(r, self.pool, self.limits)
        pending = deque(requests)
        done = 0
        while done < len(requests):
            if not self.has_work:
                self.advance_to(pending[0].arrival_time)
            while pending and pending[0].arrival_time <= self.clock:
                self.enqueue(pending.popleft())
            report = self.step()
            done += len(report.finished)
        return [self._record(r, server=0) for r in requests]

    def event_lines(self) -> list[str]:
        """Event log as 'event,time,request_id,detail' lines."""
        return [f"{ev},{t!r},{rid},{detail}" for ev, t, rid, detail in self.event_log]

    # -- internals ---------------------------------------------------------

    def _log(self, event: str, request_id: int, detail: str = "") -> None:
        self.event_log.append((event, self.clock, request_id, detail))

    def _validate_decision(self, decision: PolicyDecision) -> None:
        waiting_ids = {r.id for r in self.waiting}
        bad = [rid for rid in decision.dispatch if rid not in waiting_ids]
        if bad or len(set(decision.dispatch)) != len(decision.dispatch):
            raise RuntimeError(f"policy dispatched non-waiting or duplicate ids: {decision.dispatch}")
        bad = [rid for rid in decision.preempt if rid not in self.running]
        if bad or len(set(decision.preempt)) != len(decision.preempt):
            raise RuntimeError(f"policy evicted non-running or duplicate ids: {decision.preempt}")
        if set(decision.dispatch) & set(decision.preempt):
            raise RuntimeError("policy decision dispatches and evicts the same id")

    def _dispatch(self, r: Request) -> None:
        if not self.pool.try_allocate(r.id, r.pending_prefill):
            raise RuntimeError(
                f"policy over-admitted: {blocks_needed(r.pending_prefill, self.pool.block_size)} "
                f"blocks needed for request {r.id}, {self.pool.free_blocks} free"
            )
        self.waiting.remove(r)
        r.state = RequestState.PREFILLING
        r.dispatch_seq = self._next_dispatch_seq
        self._next_dispatch_seq += 1
        self.running[r.id] = r
        self._log("dispatch", r.id, f"seq={r.dispatch_seq}")

    def _form_batch(self) -> BatchPlan:
        budget = self.limits.max_tokens_per_batch
        decode_ids: list[int] = []
        for r in sorted(
            (q for q in self.running.values() if q.is_decoding), key=lambda q: q.dispatch_seq
        ):
            if budget == 0:
                break
            decode_ids.append(r.id)
            budget -= 1
        chunks: list[tuple[int, int]] = []
        for r in sorted(
            (q for q in self.running.values() if q.is_prefilling), key=lambda q: q.dispatch_seq
        ):
            if budget == 0:
                break
            chunk = min(r.pending_prefill, budget)
            chunks.append((r.id, chunk))
            budget -= chunk
        return BatchPlan(
            decode_ids=decode_ids,
            prefill_chunks=chunks,
            total_tokens=self.limits.max_tokens_per_batch - budget,
        )

    def _apply_progress(self, plan: BatchPlan) -> tuple[list[int], list[int]]:
        first_tokens: list[int] = []
        finished: list[int] = []
        for rid, chunk in plan.prefill_chunks:
            r = self.running.get(rid)
            if r is None or not r.is_prefilling:
                continue  # evicted earlier in this apply pass
            r.prefill_done += chunk
            if r.prefill_done < r.prefill_target:
                continue
            if r.generated == 0:
                if not self._grow_or_evict(r, r.prompt_len + 1):
                    continue
                r.generated = 1
                r.first_token_time = self.clock
                r.state = RequestState.DECODING
                first_tokens.append(rid)
                self._log("first_token", rid)
                if r.generated == r.output_len:
                    self._finish(r, finished)
            else:
                # Recompute after an eviction: KV already covers
                # prompt+generated; decoding resumes next iteration.
                r.state = RequestState.DECODING
        for rid in plan.decode_ids:
            r = self.running.get(rid)
            if r is None or not r.is_decoding:
                continue
            if not self._grow_or_evict(r, r.prompt_len + r.generated + 1):
                continue
            r.generated += 1
            if r.generated == r.output_len:
                self._finish(r, finished)
        return first_tokens, finished

    def _finish(self, r: Request, finished: list[int]) -> None:
        self.pool.free(r.id)
        r.state = RequestState.FINISHED
        r.finish_time = self.clock
        del self.running[r.id]
        finished.append(r.id)
        self._log("finish", r.id)

    def _preempt(self, r: Request, kind: str) -> None:
        """Drop a running request's KV and push it to the queue head."""
        self.pool.free(r.id)
        r.state = RequestState.WAITING
        r.prefill_done = 0
        r.preempt_count += 1
        r.enqueue_time = self.clock
        r.dispatch_seq = None
        del self.running[r.id]
        self.waiting.appendleft(r)
        self._preempted_now.append(r.id)
        self._log(kind, r.id, f"count={r.preempt_count}")

    def _evict_for_blocks(self, needed: int, exclude_id: int) -> None:
        victims = sorted(self.running.values(), key=lambda q: q.dispatch_seq, reverse=True)
        for q in victims:
            if self.pool.free_blocks >= needed:
                break
            if q.id == exclude_id:
                continue
            self._preempt(q, "preempt")

    def _grow_or_evict(self, r: Request, new_total_tokens: int) -> bool:
        """Grow r's allocation, evicting younger requests if needed.

        Returns False if r had to be parked (it alone exceeds the pool).
        """
        if self.pool.try_grow(r.id, new_total_tokens):
            return True
        needed = blocks_needed(new_total_tokens, self.pool.block_size) - self.pool.allocated_blocks(
            r.id
        )
        self._evict_for_blocks(needed, exclude_id=r.id)
        if self.pool.try_grow(r.id, new_total_tokens):
            return True
        logger.warning(
            "capacity: request %d cannot grow to %d tokens even after evicting "
            "all other requests (pool=%d blocks x %d tokens); parking it",
            r.id,
            new_total_tokens,
            self.pool.total_blocks,
            self.pool.block_size,
        )
        self._preempt(r, "park")
        return False

    def _record(self, r: Request, server: int) -> MetricsRecord:
        assert r.is_finished and r.first_token_time is not None and r.finish_time is not None
        return MetricsRecord(
            request_id=r.id,
            server=server,
            arrival_time=r.arrival_time,
            first_token_time=r.first_token_time,
            finish_time=r.finish_time,
            prompt_len=r.prompt_len,
            output_len=r.output_len,
            preempt_count=r.preempt_count,
        )
