from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

NEG_SENTINEL = -1e30


@dataclass
class AttentionInputs:
    """Query/key/value matrices plus an additive mask of 0 (attend) or -inf (blocked)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    mask: Optional[np.ndarray] = None
    d_k: Optional[int] = None

    def __post_init__(self):
        self.q, self.k, self.v = (np.asarray(a, dtype=np.float64) for a in (self.q, self.k, self.v))
        if self.q.ndim != 2 or self.k.ndim != 2 or self.v.ndim != 2:
            raise ValueError("q, k, v must be 2-D")
        if self.q.shape[1] != self.k.shape[1]:
            raise ValueError(f"q and k inner dims differ: {self.q.shape[1]} vs {self.k.shape[1]}")
        if self.k.shape[0] != self.v.shape[0]:
            raise ValueError("k and v must have the same number of rows")
        if self.d_k is None:
            self.d_k = self.q.shape[1]
        shape = (self.q.shape[0], self.k.shape[0])
        if self.mask is None:
            self.mask = np.zeros(shape)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.shape != shape:
            raise ValueError(f"mask shape {self.mask.shape} != scores shape {shape}")
        if not np.all((self.mask == 0) | np.isneginf(self.mask)):
            raise ValueError("mask entries must be 0 or -inf")


def attention_weights(inputs: AttentionInputs) -> np.ndarray:
    blocked = np.isneginf(inputs.mask)
    if np.any(blocked.all(axis=1)):
        raise ValueError("row fully masked")
    scores = inputs.q @ inputs.k.T / np.sqrt(inputs.d_k)
    scores = np.where(blocked, NEG_SENTINEL, scores)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    e[blocked] = 0.0
    return e / e.sum(axis=1, keepdims=True)


def masked_attention(inputs: AttentionInputs) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k) + M) V`` with blocked weights exactly zero."""
    return attention_weights(inputs) @ inputs.v
