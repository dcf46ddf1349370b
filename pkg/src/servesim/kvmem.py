"""Block-granular KV-cache memory accounting for one simulated server.

KV memory is managed in fixed-size blocks of `block_size` tokens each, so a
request holding t tokens of context occupies ceil(t / block_size) blocks.
Failed allocations and failed grows leave the pool untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_BLOCK_SIZE = 16


def blocks_needed(tokens: int, block_size: int) -> int:
    """Number of blocks required to hold `tokens` tokens of KV context."""
    if tokens < 0:
        raise ValueError(f"token count must be >= 0, got {tokens}")
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    return -(-tokens // block_size)


@dataclass(frozen=True)
class ModelProfile:
    """Static per-model constants used for memory sizing."""

    name: str
    kv_bytes_per_token: int
    max_context: int
    weights_bytes: int


# kv_bytes_per_token = layers * kv_heads * head_dim * 2 (K and V) * 2 (fp16).
PROFILES = {
    "llama3-8b": ModelProfile(
        name="llama3-8b",
        kv_bytes_per_token=32 * 8 * 128 * 2 * 2,
        max_context=8192,
        weights_bytes=16_000_000_000,
    ),
    "llama3-70b": ModelProfile(
        name="llama3-70b",
        kv_bytes_per_token=80 * 8 * 128 * 2 * 2,
        max_context=8192,
        weights_bytes=70_000_000_000,
    ),
}


def kv_bytes(tokens: int, profile: ModelProfile) -> int:
    """KV-cache bytes consumed by `tokens` tokens of context."""
    if tokens < 0:
        raise ValueError(f"token count must be >= 0, got {tokens}")
    return tokens * profile.kv_bytes_per_token


def pool_blocks_for(
    gpu_mem_bytes: float, profile: ModelProfile, block_size: int = DEFAULT_BLOCK_SIZE
) -> int:
    """Block capacity of the KV pool on a device with `gpu_mem_bytes` memory.

    Whatever is left after the weights is given to the KV cache.
    """
    spare = gpu_mem_bytes - profile.weights_bytes
    if spare <= 0:
        raise ValueError(
            f"{profile.name} weights ({profile.weights_bytes} B) do not fit in "
            f"{gpu_mem_bytes} B of device memory"
        )
    return int(spare // (profile.kv_bytes_per_token * block_size))


class KvBlockPool:
    """Fixed pool of KV blocks with per-request allocations.

    Allocations are tracked in tokens and charged in whole blocks. The pool
    conserves blocks: free_blocks + sum of allocated blocks == total_blocks
    at all times.
    """

    def __init__(self, total_blocks: int, block_size: int = DEFAULT_BLOCK_SIZE):
        if total_blocks < 0:
            raise ValueError(f"total_blocks must be >= 0, got {total_blocks}")
        if block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {block_size}")
        self.total_blocks = total_blocks
        self.block_size = block_size
        self.free_blocks = total_blocks
        self._tokens: dict[int, int] = {}

    @property
    def allocations(self) -> dict[int, int]:
        """Snapshot of request id -> allocated block count."""
        return {rid: blocks_needed(t, self.block_size) for rid, t in self._tokens.items()}

    def holds(self, request_id: int) -> bool:
        return request_id in self._tokens

    def allocated_tokens(self, request_id: int) -> int:
        return self._tokens[request_id]

    def allocated_blocks(self, request_id: int) -> int:
        return blocks_needed(self._tokens[request_id], self.block_size)

    def try_allocate(self, request_id: int, tokens: int) -> bool:
        """Allocate blocks for a new request; False (no side effects) if full."""
        if request_id in self._tokens:
            raise ValueError(f"request {request_id} already holds an allocation")
        if tokens < 0:
            raise ValueError(f"token count must be >= 0, got {tokens}")
        need = blocks_needed(tokens, self.block_size)
        if need > self.free_blocks:
            return False
        self._tokens[request_id] = tokens
        self.free_blocks -= need
        return True

    def try_grow(self, request_id: int, new_total_tokens: int) -> bool:
        """Grow an existing allocation to `new_total_tokens` tokens.

        Growing within the last partially filled block needs no new block.
        Shrinking is not a thing here; context only ever grows.
        """
        if request_id not in self._tokens:
            raise KeyError(f"request {request_id} holds no allocation")
        current = self._tokens[request_id]
        if new_total_tokens < current:
            raise ValueError(
                f"allocation for request {request_id} cannot shrink "
                f"({current} -> {new_total_tokens} tokens)"
            )
        extra = blocks_needed(new_total_tokens, self.block_size) - blocks_needed(
            current, self.block_size
        )
        if extra > self.free_blocks:
            return False
        self._tokens[request_id] = new_total_tokens
        self.free_blocks -= extra
        return True

    def free(self, request_id: int) -> int:
        """Release a request's allocation; returns the block count released."""
        if request_id not in self._tokens:
            raise KeyError(f"request {request_id} holds no allocation")
        released = self.allocated_blocks(request_id)
        del self._tokens[request_id]
        self.free_blocks += released
        return released

    def conserved(self) -> bool:
        """True when free + allocated block counts add up to the pool size."""
        held = sum(blocks_needed(t, self.block_size) for t in self._tokens.values())
        return self.free_blocks + held == self.total_blocks and self.free_blocks >= 0
