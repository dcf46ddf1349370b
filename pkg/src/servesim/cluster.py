"""Data-parallel cluster simulation: one balancer routing to n engines.

Each engine advances independently at its own iteration boundaries; the
cluster interleaves arrivals and boundaries on a global event heap. An
arriving request is routed immediately (after the balancer's view gets its
poll-eligibility check) but only becomes visible to the chosen engine at
that engine's next scheduling instant. Events at equal times order arrivals
first, then engines by server index.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Sequence

import numpy as np

from .balancers import BalancerView, ServerStats, make_balancer
from .config import ClusterSettings, EngineSettings
from .costmodel import default_params
from .engine import Engine, Request, RequestState
from .kvmem import KvBlockPool, PROFILES, pool_blocks_for
from .metrics import MetricsRecord
from .policies import make_policy


def build_engine(settings: EngineSettings) -> Engine:
    """Construct an engine from settings (pool sized from the GPU memory
    budget when pool_blocks is not given)."""
    profile = PROFILES[settings.profile]
    blocks = settings.pool_blocks
    if blocks is None:
        blocks = pool_blocks_for(settings.gpu_mem_bytes, profile, settings.block_size)
    pool = KvBlockPool(blocks, settings.block_size)
    cost = default_params(settings.profile, settings.hardware, **settings.cost)
    policy = make_policy(
        settings.policy, alpha=settings.alpha, c=settings.c, max_output=settings.max_output
    )
    return Engine(
        pool,
        policy,
        cost,
        max_tokens_per_batch=settings.max_tokens_per_batch,
        max_running=settings.max_running,
        max_context=profile.max_context,
    )


def snapshot_stats(engine: Engine) -> ServerStats:
    """Ground-truth load of one engine: queued prefill tokens, free KV
    tokens, and unfinished request count."""
    queued = sum(r.pending_prefill for r in engine.waiting)
    free_mem = engine.pool.free_blocks * engine.pool.block_size
    return ServerStats(
        queued_tokens=queued,
        free_mem_tokens=free_mem,
        in_flight=len(engine.waiting) + len(engine.running),
    )


_ARRIVAL, _BOUNDARY = 0, 1


def run_cluster(
    settings: ClusterSettings, trace, *, engines: list[Engine] | None = None
) -> list[MetricsRecord]:
    """Simulate the trace on the configured cluster; one record per request,
    in request-id order. Deterministic for a given (settings, trace).

    `engines` substitutes prebuilt engines (e.g. to inspect them afterward);
    by default n_servers identical engines are built from settings.engine.
    """
    n = settings.n_servers
    if engines is None:
        engines = [build_engine(settings.engine) for _ in range(n)]
    elif len(engines) != n:
        raise ValueError(f"expected {n} engines, got {len(engines)}")

    entries = list(trace)
    for a, b in zip(entries, entries[1:]):
        if b.arrival_time < a.arrival_time:
            raise ValueError("trace arrivals must be sorted")
    requests = [
        Request(
            id=i, arrival_time=e.arrival_time, prompt_len=e.prompt_len, output_len=e.output_len
        )
        for i, e in enumerate(entries)
    ]
    for engine in engines:
        for r in requests:
            engine.policy.check_feasible(r, engine.pool, engine.limits)

    rng = np.random.default_rng(settings.seed)
    view = BalancerView(n, settings.balancer.poll_interval_s)
    balancer = make_balancer(
        settings.balancer.name,
        n,
        rng=rng,
        view=view,
        max_tokens_per_batch=settings.engine.max_tokens_per_batch,
        beta_prior=settings.balancer.beta_prior,
        beta_fixed=settings.balancer.beta_fixed,
    )

    inbox: list[deque[Request]] = [deque() for _ in range(n)]
    scheduled = [False] * n
    server_of: list[int | None] = [None] * len(requests)

    def ground_truth() -> list[ServerStats]:
        # Routed-but-not-yet-visible requests count toward their server so a
        # poll does not erase the balancer's own recent placements.
        out = []
        for s in range(n):
            st = snapshot_stats(engines[s])
            for q in inbox[s]:
                st.queued_tokens += q.pending_prefill
                st.in_flight += 1
            out.append(st)
        return out

    view.refresh(0.0, ground_truth())

    heap: list[tuple[float, int, int, int]] = []
    for i, r in enumerate(requests):
        heapq.heappush(heap, (r.arrival_time, _ARRIVAL, i, i))

    while heap:
        t, kind, key, payload = heapq.heappop(heap)
        if kind == _ARRIVAL:
            req = requests[payload]
            view.poll(t, ground_truth)
            s = balancer.route(req.prompt_len)
            if not 0 <= s < n:
                raise RuntimeError(f"balancer routed to invalid server {s}")
            server_of[req.id] = s
            inbox[s].append(req)
            if not scheduled[s]:
                wake = max(t, engines[s].clock)
                heapq.heappush(heap, (wake, _BOUNDARY, s, 0))
                scheduled[s] = True
        else:
            s = key
            engine = engines[s]
            scheduled[s] = False
            if t > engine.clock:
                engine.advance_to(t)
            while inbox[s]:
                engine.enqueue(inbox[s].popleft())
            if not engine.has_work:
                continue
            report = engine.step()
            for rid in report.finished:
                balancer.on_finish(requests[rid].prompt_len, requests[rid].output_len)
            if engine.has_work:
                heapq.heappush(heap, (engine.clock, _BOUNDARY, s, 0))
                scheduled[s] = True

    unfinished = [r.id for r in requests if r.state is not RequestState.FINISHED]
    if unfinished:
        raise RuntimeError(f"cluster run ended with unfinished requests: {unfinished[:10]}")
    return [
        MetricsRecord(
            request_id=r.id,
            server=server_of[r.id],
            arrival_time=r.arrival_time,
            first_token_time=r.first_token_time,
            finish_time=r.finish_time,
            prompt_len=r.prompt_len,
            output_len=r.output_len,
            preempt_count=r.preempt_count,
        )
        for r in requests
    ]
