"""Keyed, counter-based random streams (Philox4x32-10).

Every draw is a pure function of (seed, chain_id, step_index, substream,
draw_index): the 64-bit seed is the Philox key and the other identifiers fill
the 128-bit counter.  Identical keys give identical draws on every platform
and under any thread interleaving, which is what makes the speculative
engine's output independent of window boundaries and worker counts.

Uniforms take 53 bits from each 64-bit half of a Philox block; standard
normals are the Box-Muller transform of consecutive uniform pairs (a
deterministic transform of the uniform stream).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "ChainRng",
    "rng_draws",
    "keyed_uniforms",
    "keyed_normals",
    "SUB_INIT",
    "SUB_NOISE",
    "SUB_UNIF",
]

# Engine substream assignments: initial state, per-step noise z_k, per-step
# acceptance uniform u_k.
SUB_INIT = 0
SUB_NOISE = 1
SUB_UNIF = 2

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_INV_2_53 = 2.0**-53


def philox4x32(c0, c1, c2, c3, k0, k1, rounds: int = 10):
    """Philox-4x32 block function on uint32 arrays (broadcasting inputs).

    Returns four uint32 arrays; 10 rounds is the standard strength.
    """
    shape = np.broadcast_shapes(np.shape(c0), np.shape(c1), np.shape(c2), np.shape(c3))
    x0 = np.broadcast_to(np.asarray(c0, dtype=np.uint32), shape)
    x1 = np.broadcast_to(np.asarray(c1, dtype=np.uint32), shape)
    x2 = np.broadcast_to(np.asarray(c2, dtype=np.uint32), shape)
    x3 = np.broadcast_to(np.asarray(c3, dtype=np.uint32), shape)
    key0 = np.uint32(k0)
    key1 = np.uint32(k1)
    # The Weyl key bump wraps mod 2^32 by design.
    with np.errstate(over="ignore"):
        for _ in range(rounds):
            p0 = _M0 * x0.astype(np.uint64)
            p1 = _M1 * x2.astype(np.uint64)
            lo0 = (p0 & _MASK32).astype(np.uint32)
            hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
            lo1 = (p1 & _MASK32).astype(np.uint32)
            hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
            x0, x1, x2, x3 = hi1 ^ x1 ^ key0, lo1, hi0 ^ x3 ^ key1, lo0
            key0 = key0 + _W0
            key1 = key1 + _W1
    return x0, x1, x2, x3


def keyed_uniforms(seed: int, chain_id, step_index, substream: int, n: int) -> np.ndarray:
    """n uniforms in [0, 1) for each (chain_id, step_index) key.

    ``chain_id`` and ``step_index`` broadcast against each other; the result
    has their broadcast shape plus a trailing axis of length n.
    """
    chain = np.asarray(chain_id, dtype=np.uint32)
    step = np.asarray(step_index, dtype=np.uint32)
    lead = np.broadcast_shapes(chain.shape, step.shape)
    n_blocks = (n + 1) // 2
    blocks = np.arange(n_blocks, dtype=np.uint32)
    c0 = np.broadcast_to(chain[..., None], lead + (n_blocks,))
    c1 = np.broadcast_to(step[..., None], lead + (n_blocks,))
    c2 = np.uint32(substream)
    k0 = np.uint32(seed & 0xFFFFFFFF)
    k1 = np.uint32((seed >> 32) & 0xFFFFFFFF)
    x0, x1, x2, x3 = philox4x32(c0, c1, c2, blocks, k0, k1)
    hi = (x0.astype(np.uint64) << np.uint64(32)) | x1.astype(np.uint64)
    lo = (x2.astype(np.uint64) << np.uint64(32)) | x3.astype(np.uint64)
    bits = np.stack([hi, lo], axis=-1).reshape(lead + (2 * n_blocks,))
    u = (bits >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return u[..., :n]


def keyed_normals(seed: int, chain_id, step_index, substream: int, n: int) -> np.ndarray:
    """n standard normals per key, via Box-Muller on uniform pairs."""
    n_pairs = (n + 1) // 2
    u = keyed_uniforms(seed, chain_id, step_index, substream, 2 * n_pairs)
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    # 1 - u1 lies in (0, 1], keeping the log finite.
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * np.pi) * u2
    z = np.empty(u.shape)
    z[..., 0::2] = r * np.cos(theta)
    z[..., 1::2] = r * np.sin(theta)
    return z[..., :n]


@dataclass(frozen=True)
class RngStream:
    """One keyed stream: draws depend only on the key tuple and draw index.

    Streams are stateless: ``uniforms(n)`` always returns the first n draws
    of the stream, so re-running any computation reproduces it bitwise.
    """

    seed: int
    chain_id: int = 0
    step_index: int = 0
    substream: int = 0

    def uniforms(self, n: int) -> np.ndarray:
        return keyed_uniforms(self.seed, self.chain_id, self.step_index, self.substream, n)

    def normals(self, n: int) -> np.ndarray:
        return keyed_normals(self.seed, self.chain_id, self.step_index, self.substream, n)


def rng_draws(stream: RngStream, n: int, kind: str = "uniform") -> np.ndarray:
    """First n draws of a stream; ``kind`` is "uniform" or "normal"."""
    if kind == "uniform":
        return stream.uniforms(n)
    if kind == "normal":
        return stream.normals(n)
    raise ValueError(f"unknown draw kind: {kind!r}")


@dataclass(frozen=True)
class ChainRng:
    """Per-chain view handing out the step-keyed draws the engine uses.

    Drafting and verification share these draws: the z that generates draft
    state k is the same z the coupling recovers at step k, and the step's
    acceptance uniform comes from its own substream.
    """

    seed: int
    chain_id: int = 0

    def init_state(self, d: int) -> np.ndarray:
        return keyed_normals(self.seed, self.chain_id, 0, SUB_INIT, d)

    def step_normals(self, step_index, d: int) -> np.ndarray:
        return keyed_normals(self.seed, self.chain_id, step_index, SUB_NOISE, d)

    def step_uniform(self, step_index):
        u = keyed_uniforms(self.seed, self.chain_id, step_index, SUB_UNIF, 1)
        return u[..., 0]
