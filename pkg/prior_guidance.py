"""Memory-based prior guidance.

The prior feature P~ of a frame is compressed into a token: a per-pixel
softmax over transmission bins gives a distribution map, and the token is the
distribution-weighted pooling of P~ (one row per bin). Tokens from earlier
frames sit in a bounded FIFO memory that the current prior reads with
attention; the enhanced prior is then fused into the scene feature.

Feature maps are (C, H, W) tensors.
"""

import math
from dataclasses import dataclass

import tensor as T
from constants import MEMORY_TOKENS
from errors import DimensionError, ParameterError
from layers import conv_stack, tokens, untokens


@dataclass(frozen=True)
class TokenMemory:
    """FIFO of (D_bins, C) tokens, oldest first. Pushing returns a new memory."""

    capacity: int = MEMORY_TOKENS
    items: tuple = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ParameterError(f"memory capacity must be >= 1, got {self.capacity}")

    def __len__(self):
        return len(self.items)

    def push(self, token):
        return TokenMemory(self.capacity, (self.items + (token,))[-self.capacity:])

    def keys(self):
        """Stored tokens stacked row-wise in insertion order, (N*D_bins, C)."""
        return T.concat(self.items, axis=0)


def compress_prior(p_init, head, d_bins=None):
    """Return (distribution (D, H, W), token (D, C)) for an initial prior feature.

    `head` is the discretization conv producing one logit per bin.
    """
    if d_bins is not None and head.out_channels != d_bins:
        raise DimensionError(f"distribution head emits {head.out_channels} bins, expected {d_bins}")
    logits = head(p_init)
    distribution = T.softmax(logits, axis=0)
    d, h, w = distribution.shape
    c = p_init.shape[0]
    flat_dist = T.reshape(distribution, (d, h * w))
    token = T.matmul(flat_dist, tokens(p_init))
    if token.shape != (d, c):
        raise DimensionError(f"token shape {token.shape} is not ({d}, {c})")
    return distribution, token


def memory_push(mem, token):
    return mem.push(token)


def memory_attention(p_init, mem):
    """Attention read of the memory; returns (enhanced prior, weights (H*W, N*D) or None)."""
    if not len(mem):
        return p_init, None
    c, h, w = p_init.shape
    keys = mem.keys()
    if keys.shape[1] != c:
        raise DimensionError(f"memory tokens have {keys.shape[1]} channels, prior has {c}")
    q = tokens(p_init)
    scores = T.matmul(q, T.transpose(keys, (1, 0))) / math.sqrt(c)
    weights = T.softmax(scores, axis=-1)
    return untokens(T.matmul(weights, keys), h, w), weights


def memory_read(p_init, mem):
    return memory_attention(p_init, mem)[0]


def guide_scene(p_enh, j_init, fuse):
    """j_init + fuse(concat(p_enh, j_init)); `fuse` is a list of convs ending at C channels."""
    if p_enh.shape != j_init.shape:
        raise DimensionError(f"prior {p_enh.shape} and scene feature {j_init.shape} differ")
    delta = conv_stack(fuse, T.concat([p_enh, j_init], axis=0))
    if delta.shape != j_init.shape:
        raise DimensionError(f"fusion output {delta.shape} does not match {j_init.shape}")
    return j_init + delta
