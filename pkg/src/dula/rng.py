"""Counter-based random streams keyed by (seed, purpose, agent).

Every agent owns its own Philox stream, so adding or removing agents never
changes the draws seen by the others, and a run is reproducible regardless of
how agent work is scheduled.
"""

import numpy as np

NOISE = 0
BATCH = 1
INIT = 2
DATA = 3

_MASK64 = (1 << 64) - 1


def stream(seed, agent=0, purpose=NOISE):
    """Return an independent ``Generator`` for one (seed, purpose, agent) key.

    The centralized chain uses agent 0, which makes a one-agent network and
    the centralized sampler share their noise sequence.
    """
    if agent < 0 or agent >= 1 << 32:
        raise ValueError(f"agent id out of range: {agent}")
    key = [int(seed) & _MASK64, (int(purpose) << 32) | int(agent)]
    return np.random.Generator(np.random.Philox(key=key))


class NoiseBuffer:
    """Standard-normal draws for all agents, pre-generated in blocks.

    Draw ``t`` of agent ``i`` is the ``t``-th row produced by that agent's
    stream, independent of the block size.
    """

    def __init__(self, seed, n_agents, dim, block=2048, first_agent=0):
        self.n_agents = n_agents
        self.dim = dim
        self.block = block
        self._gens = [stream(seed, first_agent + i, NOISE) for i in range(n_agents)]
        self._buf = None
        self._pos = block

    def _refill(self):
        self._buf = np.stack(
            [g.standard_normal((self.block, self.dim)) for g in self._gens], axis=1
        )
        self._pos = 0

    def next(self):
        """Next (n_agents, dim) array of N(0, 1) draws."""
        if self._pos >= self.block:
            self._refill()
        out = self._buf[self._pos]
        self._pos += 1
        return out


class BatchSampler:
    """Without-replacement mini-batches over one shard, reshuffled each epoch."""

    def __init__(self, size, batch_size, gen):
        self.size = size
        self.batch_size = batch_size
        self._gen = gen
        self._order = None
        self._pos = size

    def next(self):
        if self._pos >= self.size:
            self._order = self._gen.permutation(self.size)
            self._pos = 0
        out = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return out
