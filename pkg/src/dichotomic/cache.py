"""Block-granular prefix cache simulator.

Token sequences are cut into fixed-size blocks; each full block is identified
by a hash chained through its parent block, so two sequences that share a
token prefix share the same block chain. Partial tail blocks are never
stored. The cache holds token identity only (no key/value tensors).

Eviction is LRU restricted to leaf blocks, which keeps every stored block's
parent resident. When an insert overflows the capacity and the only leaf left
is the block just admitted, that block is dropped again (counted as an
eviction) and the rest of the sequence is not stored.
"""

from __future__ import annotations

import heapq
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .tokenizer import TokenSeq

ROOT = 0


_MASK64 = (1 << 64) - 1


def block_hash(parent: int, block: Sequence[int]) -> int:
    # CPython hashes int tuples without per-process salting, so chains are
    # reproducible across runs. Not collision-resistant; hash values never
    # leave the simulator.
    return hash((parent, tuple(block))) & _MASK64


def chain_hashes(tokens: Sequence[int], block_size: int, parent: int = ROOT) -> list[int]:
    """Chain hashes of every full block of ``tokens``."""
    out = []
    for start in range(0, len(tokens) - block_size + 1, block_size):
        parent = block_hash(parent, tokens[start:start + block_size])
        out.append(parent)
    return out


class ChainHasher:
    """Memoizes the block chain of shared prompt prefixes.

    ``hashes(tokens, prefix_len, key)`` returns the same list as
    ``chain_hashes(tokens, block_size)``; the chain over the first
    ``prefix_len`` tokens is computed once per ``key``.
    """

    def __init__(self, block_size: int, max_entries: int = 4096):
        self.block_size = block_size
        self.max_entries = max_entries
        self._memo: OrderedDict = OrderedDict()

    def hashes(self, tokens: Sequence[int], prefix_len: int = 0, key=None) -> list[int]:
        bs = self.block_size
        if key is None or prefix_len < bs:
            return chain_hashes(tokens, bs)
        entry = self._memo.get(key)
        if entry is None:
            entry = chain_hashes(tokens[:prefix_len], bs)
            self._memo[key] = entry
            if len(self._memo) > self.max_entries:
                self._memo.popitem(last=False)
        else:
            self._memo.move_to_end(key)
        covered = len(entry) * bs
        parent = entry[-1] if entry else ROOT
        return entry + chain_hashes(tokens[covered:], bs, parent)


@dataclass
class CacheConfig:
    block_size: int = 16
    capacity_blocks: Optional[int] = None  # None means unbounded
    eviction: str = "lru"

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.capacity_blocks is not None and self.capacity_blocks < 0:
            raise ValueError("capacity_blocks must be >= 0")
        if self.eviction != "lru":
            raise ValueError(f"unsupported eviction policy {self.eviction!r}")

    @property
    def capacity_label(self) -> str:
        return "inf" if self.capacity_blocks is None else str(self.capacity_blocks)


@dataclass
class CacheStats:
    lookups: int = 0
    hit_tokens: int = 0
    miss_tokens: int = 0
    insertions: int = 0
    evictions: int = 0

    @property
    def hit_rate(self) -> float:
        total = self.hit_tokens + self.miss_tokens
        return self.hit_tokens / total if total else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Block:
    hash: int
    parent: Optional[int]
    token_count: int
    last_used: int
    children: int = 0


@dataclass
class PrefixCache:
    config: CacheConfig = field(default_factory=CacheConfig)
    record_events: bool = False

    def __post_init__(self):
        self._blocks: dict[int, Block] = {}
        self._leaf_heap: list[tuple[int, int]] = []
        self._tick = 0
        self._stats = CacheStats()
        self.events: list[dict] = []

    def __len__(self) -> int:
        return len(self._blocks)

    def __contains__(self, block: int) -> bool:
        return block in self._blocks

    def block(self, h: int) -> Block:
        return self._blocks[h]

    def hashes(self, seq: TokenSeq) -> list[int]:
        return chain_hashes(seq.tokens, self.config.block_size)

    # -- lookup ---------------------------------------------------------

    def lookup(self, seq: TokenSeq, prompt_id: Optional[str] = None) -> int:
        """Cached token count of ``seq``'s longest stored block prefix."""
        return self.lookup_hashes(self.hashes(seq), len(seq), prompt_id)

    def lookup_hashes(self, hashes: Sequence[int], n_tokens: int, prompt_id=None) -> int:
        blocks = self._blocks
        matched = 0
        for h in hashes:
            b = blocks.get(h)
            if b is None:
                break
            self._touch(b)
            matched += 1
        hit = matched * self.config.block_size
        st = self._stats
        st.lookups += 1
        st.hit_tokens += hit
        st.miss_tokens += n_tokens - hit
        if self.record_events:
            self.events.append(
                {"op": "lookup", "prompt_id": prompt_id, "tokens": n_tokens, "hits": hit,
                 "added": 0, "evictions": 0}
            )
        return hit

    # -- insert ---------------------------------------------------------

    def insert(self, seq: TokenSeq, prompt_id: Optional[str] = None) -> tuple[int, int]:
        """Store all full blocks of ``seq``; returns ``(blocks_added, blocks_evicted)``."""
        return self.insert_hashes(self.hashes(seq), len(seq), prompt_id)

    def insert_hashes(self, hashes: Sequence[int], n_tokens: int = 0, prompt_id=None) -> tuple[int, int]:
        return self._insert_from(hashes, 0, n_tokens, prompt_id)

    def _insert_from(self, hashes: Sequence[int], start: int, n_tokens: int, prompt_id) -> tuple[int, int]:
        # blocks hashes[:start] are known resident and already touched
        blocks = self._blocks
        cap = self.config.capacity_blocks
        bs = self.config.block_size
        added = evicted = 0
        parent: Optional[int] = hashes[start - 1] if start else None
        for h in hashes[start:]:
            b = blocks.get(h)
            if b is not None:
                self._touch(b)
                parent = h
                continue
            self._tick += 1
            b = blocks[h] = Block(h, parent, bs, self._tick)
            if parent is not None:
                blocks[parent].children += 1
            heapq.heappush(self._leaf_heap, (b.last_used, h))
            added += 1
            rejected = False
            while cap is not None and len(blocks) > cap:
                victim = self._pop_lru_leaf()
                self._remove(victim)
                evicted += 1
                if victim == h:
                    rejected = True
                    added -= 1
                    break
            if rejected:
                break
            parent = h
        self._stats.insertions += added
        self._stats.evictions += evicted
        if self.record_events:
            self.events.append(
                {"op": "insert", "prompt_id": prompt_id, "tokens": n_tokens, "hits": 0,
                 "added": added, "evictions": evicted}
            )
        if len(self._leaf_heap) > 4 * len(blocks) + 1024:
            self._rebuild_heap()
        return added, evicted

    def access(self, hashes: Sequence[int], n_tokens: int, prompt_id=None) -> tuple[int, int, int]:
        """``lookup`` followed by ``insert`` of the same sequence, in one pass.

        Returns ``(hit_tokens, blocks_added, blocks_evicted)``; stats and the
        event log are identical to the two separate calls.
        """
        blocks = self._blocks
        matched = 0
        for h in hashes:
            b = blocks.get(h)
            if b is None:
                break
            self._touch(b)
            matched += 1
        hit = matched * self.config.block_size
        st = self._stats
        st.lookups += 1
        st.hit_tokens += hit
        st.miss_tokens += n_tokens - hit
        if self.record_events:
            self.events.append(
                {"op": "lookup", "prompt_id": prompt_id, "tokens": n_tokens, "hits": hit,
                 "added": 0, "evictions": 0}
            )
        added, evicted = self._insert_from(hashes, matched, n_tokens, prompt_id)
        return hit, added, evicted

    # -- bookkeeping ----------------------------------------------------

    def _touch(self, b: Block) -> None:
        self._tick += 1
        b.last_used = self._tick
        if b.children == 0:
            heapq.heappush(self._leaf_heap, (b.last_used, b.hash))

    def _pop_lru_leaf(self) -> int:
        heap = self._leaf_heap
        blocks = self._blocks
        while heap:
            tick, h = heapq.heappop(heap)
            b = blocks.get(h)
            if b is not None and b.children == 0 and b.last_used == tick:
                return h
        raise RuntimeError("cache over capacity with no evictable leaf")

    def _remove(self, h: int) -> None:
        b = self._blocks.pop(h)
        if b.parent is not None:
            p = self._blocks[b.parent]
            p.children -= 1
            if p.children == 0:
                heapq.heappush(self._leaf_heap, (p.last_used, p.hash))

    def _rebuild_heap(self) -> None:
        self._leaf_heap = [(b.last_used, b.hash) for b in self._blocks.values() if b.children == 0]
        heapq.heapify(self._leaf_heap)

    def stats(self) -> CacheStats:
        return CacheStats(**asdict(self._stats))

    def reset_stats(self) -> None:
        self._stats = CacheStats()

    def check_invariants(self) -> None:
        """Raise AssertionError on an orphan block, a stale child count or overflow."""
        cap = self.config.capacity_blocks
        if cap is not None and len(self._blocks) > cap:
            raise AssertionError(f"{len(self._blocks)} blocks stored, capacity {cap}")
        counts: dict[int, int] = {}
        for b in self._blocks.values():
            if b.parent is not None:
                if b.parent not in self._blocks:
                    raise AssertionError(f"orphan block {b.hash:#x}")
                counts[b.parent] = counts.get(b.parent, 0) + 1
        for b in self._blocks.values():
            if b.children != counts.get(b.hash, 0):
                raise AssertionError(f"block {b.hash:#x} child count {b.children} != {counts.get(b.hash, 0)}")

    def export_events(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")


def replay_stats(events: Sequence[dict]) -> CacheStats:
    """Recompute counters from an exported event log."""
    st = CacheStats()
    for ev in events:
        if ev["op"] == "lookup":
            st.lookups += 1
            st.hit_tokens += ev["hits"]
            st.miss_tokens += ev["tokens"] - ev["hits"]
        elif ev["op"] == "insert":
            st.insertions += ev["added"]
            st.evictions += ev["evictions"]
    return st
