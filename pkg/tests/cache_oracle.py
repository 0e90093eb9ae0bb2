"""Brute-force reference models for the prefix cache tests."""


def blocks_of(tokens, bs):
    return [tuple(tokens[i:i + bs]) for i in range(0, len(tokens) - bs + 1, bs)]


def lcp_hit(query, inserted, bs):
    """Longest common token prefix with any earlier sequence, rounded down to blocks."""
    best = 0
    for seq in inserted:
        n = 0
        for a, b in zip(query, seq):
            if a != b:
                break
            n += 1
        best = max(best, n)
    full = len(query) // bs * bs
    return min(best // bs * bs, full)


class NaiveLruCache:
    """Stores block-content prefixes directly; linear scans everywhere."""

    def __init__(self, bs, capacity):
        self.bs = bs
        self.capacity = capacity
        self.store = {}  # prefix tuple-of-blocks -> last used tick
        self.tick = 0

    def _touch(self, key):
        self.tick += 1
        self.store[key] = self.tick

    def _leaves(self):
        return [k for k in self.store if not any(len(o) == len(k) + 1 and o[:-1] == k for o in self.store)]

    def lookup(self, tokens):
        blocks = blocks_of(tokens, self.bs)
        n = 0
        while n < len(blocks) and tuple(blocks[: n + 1]) in self.store:
            n += 1
            self._touch(tuple(blocks[:n]))
        return n * self.bs

    def insert(self, tokens):
        blocks = blocks_of(tokens, self.bs)
        added = evicted = 0
        for i in range(len(blocks)):
            key = tuple(blocks[: i + 1])
            if key in self.store:
                self._touch(key)
                continue
            self._touch(key)
            added += 1
            stop = False
            while self.capacity is not None and len(self.store) > self.capacity:
                victim = min(self._leaves(), key=lambda k: self.store[k])
                del self.store[victim]
                evicted += 1
                if victim == key:
                    added -= 1
                    stop = True
                    break
            if stop:
                break
        return added, evicted
