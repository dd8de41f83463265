"""Counter-based random streams for reproducible parallel Monte Carlo.

Every random number consumed anywhere in a simulation is a pure function of
(seed, label, position): ``block_uniforms(seed, label, n)`` evaluates the
Philox PRF at counters ((0,0,label_hi,label_lo) + i) for i < n.  Replica r
always reads position r of its block, so each replica owns a logical stream
that is independent of scheduling, chunking or thread count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # standard splitmix64 finalizer, used to spread structured labels
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def label_hash(*parts: int) -> int:
    """Mix an arbitrary tuple of small ints into one 64-bit label."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = _splitmix64(h ^ (int(p) & _MASK64))
    return h


def block_uniforms(seed: int, label: int, n: int) -> np.ndarray:
    """n uniforms on [0,1) at counter block `label`; position i = replica i."""
    bg = np.random.Philox(key=np.uint64(seed & _MASK64),
                          counter=[0, 0, np.uint64(label & _MASK64), 0])
    return np.random.Generator(bg).random(n)


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    """Dedicated Philox stream for one replica (event-driven simulations)."""
    bg = np.random.Philox(key=[np.uint64(seed & _MASK64),
                               np.uint64(replica & _MASK64)])
    return np.random.Generator(bg)
