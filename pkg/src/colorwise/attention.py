"""Single-head scaled dot-product attention with gated KV injection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AttentionFeatures:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.q.ndim != 2 or self.k.ndim != 2 or self.v.ndim != 2:
            raise ValueError("q, k and v must be 2-D token matrices")
        if self.q.shape[1] != self.k.shape[1]:
            raise ValueError(f"query/key width mismatch: {self.q.shape[1]} vs {self.k.shape[1]}")
        if self.k.shape[0] != self.v.shape[0]:
            raise ValueError(f"key/value token mismatch: {self.k.shape[0]} vs {self.v.shape[0]}")


@dataclass(frozen=True)
class InjectionGate:
    """Opens (reference keys/values are used) once ``current_t > t_start_style``.

    Both fields are denoising progress indices: 1 is the first denoising
    step and ``T`` the last.
    """

    t_start_style: float
    current_t: int

    @property
    def open(self) -> bool:
        return self.current_t > self.t_start_style


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(q, k) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    return softmax_rows(q @ k.T / np.sqrt(q.shape[1]))


def attend(q, k, v) -> np.ndarray:
    """``softmax(q k^T / sqrt(d_k)) v`` with a max-shifted row softmax."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    AttentionFeatures(q, k, v)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
        raise ValueError("attention inputs must be finite")
    return attention_weights(q, k) @ v


def gated_attend(gen: AttentionFeatures, ref: AttentionFeatures, gate: InjectionGate) -> np.ndarray:
    """Generation queries against generation or reference keys/values.

    Exactly one of ``attend(gen.q, gen.k, gen.v)`` (gate closed) and
    ``attend(gen.q, ref.k, ref.v)`` (gate open) is evaluated; the two are
    never blended.
    """
    if gen.q.shape[1] != ref.k.shape[1]:
        raise ValueError(
            f"generation queries ({gen.q.shape[1]}) and reference keys "
            f"({ref.k.shape[1]}) differ in width"
        )
    if gate.open:
        return attend(gen.q, ref.k, ref.v)
    return attend(gen.q, gen.k, gen.v)
