"""Cluster-level load balancers over a periodically polled server view.

The balancer does not see server state directly: it keeps a BalancerView
that is refreshed from ground truth at most once per poll interval. Between
polls the view is stale; the server-aware balancer additionally updates it
additively for its own routing decisions (assuming nothing finishes in the
gap). Routing itself takes zero simulated time.

Registry keys (used in config files): rr, random, p2c, sal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass
class ServerStats:
    """Per-server load snapshot, all token quantities in tokens."""

    queued_tokens: int
    free_mem_tokens: int
    in_flight: int


class BalancerView:
    """Stale per-server stats, refreshed at most once per poll interval."""

    def __init__(self, n_servers: int, poll_interval_s: float = 0.1):
        if n_servers < 1:
            raise ValueError(f"n_servers must be >= 1, got {n_servers}")
        if poll_interval_s <= 0:
            raise ValueError(f"poll_interval_s must be > 0, got {poll_interval_s}")
        self.n_servers = n_servers
        self.poll_interval_s = poll_interval_s
        self.stats = [ServerStats(0, 0, 0) for _ in range(n_servers)]
        self.last_poll_time = float("-inf")

    def due(self, clock: float) -> bool:
        return clock - self.last_poll_time >= self.poll_interval_s

    def refresh(self, clock: float, stats: Sequence[ServerStats]) -> None:
        """Overwrite the view with ground truth."""
        if len(stats) != self.n_servers:
            raise ValueError(f"expected {self.n_servers} stats, got {len(stats)}")
        self.stats = [ServerStats(s.queued_tokens, s.free_mem_tokens, s.in_flight) for s in stats]
        self.last_poll_time = clock

    def poll(self, clock: float, fetch: Callable[[], Sequence[ServerStats]]) -> bool:
        """Refresh from `fetch()` if the interval has elapsed."""
        if not self.due(clock):
            return False
        self.refresh(clock, fetch())
        return True

    def note_routed(self, server: int, prompt_tokens: int) -> None:
        """Additive estimate for a request just routed to `server`."""
        s = self.stats[server]
        s.queued_tokens += prompt_tokens
        s.free_mem_tokens = max(0, s.free_mem_tokens - prompt_tokens)
        s.in_flight += 1


class BetaEstimator:
    """Running estimate of (mean_input + mean_output) / mean_output.

    Returns the configured prior until the first completion is observed.
    """

    def __init__(self, prior: float = 2.0):
        if prior < 1:
            raise ValueError(f"prior must be >= 1, got {prior}")
        self.prior = prior
        self.count = 0
        self._sum_in = 0
        self._sum_out = 0

    def update(self, prompt_tokens: int, output_tokens: int) -> None:
        if prompt_tokens < 1 or output_tokens < 1:
            raise ValueError("token counts must be >= 1")
        self.count += 1
        self._sum_in += prompt_tokens
        self._sum_out += output_tokens

    @property
    def mean_in(self) -> float:
        return self._sum_in / self.count if self.count else float("nan")

    @property
    def mean_out(self) -> float:
        return self._sum_out / self.count if self.count else float("nan")

    @property
    def beta(self) -> float:
        if self.count == 0:
            return self.prior
        return (self._sum_in + self._sum_out) / self._sum_out


def sal_load(
    stats: ServerStats, prompt_tokens: int, beta: float, max_tokens_per_batch: int
) -> float:
    """Load of placing a request on a server: the worse of memory pressure
    (how far the request's prefill KV overshoots free memory, scaled by beta
    to account for decode growth) and queue pressure (queued prefill work in
    batch units)."""
    memory_term = beta * (prompt_tokens - stats.free_mem_tokens)
    queue_term = (stats.queued_tokens + prompt_tokens) / max_tokens_per_batch
    return max(memory_term, queue_term)


class LoadBalancer:
    """Base: maps each arriving request to a server index."""

    name = "base"

    def __init__(self, n_servers: int):
        if n_servers < 1:
            raise ValueError(f"n_servers must be >= 1, got {n_servers}")
        self.n_servers = n_servers

    def route(self, prompt_tokens: int) -> int:
        raise NotImplementedError

    def on_finish(self, prompt_tokens: int, output_tokens: int) -> None:
        pass


class RoundRobinBalancer(LoadBalancer):
    name = "rr"

    def __init__(self, n_servers: int):
        super().__init__(n_servers)
        self._i = 0

    def route(self, prompt_tokens: int) -> int:
        s = self._i % self.n_servers
        self._i += 1
        return s


class RandomBalancer(LoadBalancer):
    name = "random"

    def __init__(self, n_servers: int, rng: np.random.Generator):
        super().__init__(n_servers)
        self.rng = rng

    def route(self, prompt_tokens: int) -> int:
        return int(self.rng.integers(self.n_servers))


class PowerOfTwoBalancer(LoadBalancer):
    """Sample two distinct servers, route to the one with fewer in-flight
    requests (ties keep the first sample)."""

    name = "p2c"

    def __init__(self, n_servers: int, rng: np.random.Generator, view: BalancerView):
        super().__init__(n_servers)
        self.rng = rng
        self.view = view

    def route(self, prompt_tokens: int) -> int:
        if self.n_servers == 1:
            return 0
        i = int(self.rng.integers(self.n_servers))
        j = int(self.rng.integers(self.n_servers - 1))
        if j >= i:
            j += 1
        if self.view.stats[j].in_flight < self.view.stats[i].in_flight:
            return j
        return i


class ServerAwareBalancer(LoadBalancer):
    """Route to the server with the lowest sal_load; ties take the lowest
    index. After routing, the stale view is bumped as if the request had
    already landed."""

    name = "sal"

    def __init__(
        self,
        n_servers: int,
        view: BalancerView,
        max_tokens_per_batch: int = 1024,
        beta_prior: float = 2.0,
        beta_fixed: float | None = None,
    ):
        super().__init__(n_servers)
        self.view = view
        self.max_tokens_per_batch = max_tokens_per_batch
        self.beta_fixed = beta_fixed
        self.estimator = BetaEstimator(prior=beta_prior)

    @property
    def beta(self) -> float:
        return self.beta_fixed if self.beta_fixed is not None else self.estimator.beta

    def route(self, prompt_tokens: int) -> int:
        beta = self.beta
        loads = [
            sal_load(s, prompt_tokens, beta, self.max_tokens_per_batch)
            for s in self.view.stats
        ]
        best = min(range(self.n_servers), key=loads.__getitem__)
        self.view.note_routed(best, prompt_tokens)
        return best

    def on_finish(self, prompt_tokens: int, output_tokens: int) -> None:
        if self.beta_fixed is None:
            self.estimator.update(prompt_tokens, output_tokens)


BALANCER_NAMES = ("rr", "random", "p2c", "sal")


def make_balancer(
    name: str,
    n_servers: int,
    *,
    rng: np.random.Generator | None = None,
    view: BalancerView | None = None,
    max_tokens_per_batch: int = 1024,
    beta_prior: float = 2.0,
    beta_fixed: float | None = None,
) -> LoadBalancer:
    """Build a balancer from its registry key."""
    if name == "rr":
        return RoundRobinBalancer(n_servers)
    if name == "random":
        if rng is None:
            raise ValueError("random balancer needs an rng")
        return RandomBalancer(n_servers, rng)
    if name == "p2c":
        if rng is None or view is None:
            raise ValueError("p2c balancer needs an rng and a view")
        return PowerOfTwoBalancer(n_servers, rng, view)
    if name == "sal":
        if view is None:
            raise ValueError("sal balancer needs a view")
        return ServerAwareBalancer(
            n_servers,
            view,
            max_tokens_per_batch=max_tokens_per_batch,
            beta_prior=beta_prior,
            beta_fixed=beta_fixed,
        )
    raise ValueError(f"unknown balancer {name!r}; expected one of {BALANCER_NAMES}")
