"""Momentum-contrast machinery: negative queue, cosine InfoNCE, EMA key updates.

The queue is a fixed-capacity FIFO ring of key embeddings owned by the single
training loop. ``info_nce`` is computed with max-subtraction (logsumexp) so
it stays stable at small temperatures, and preserves the dtype of its inputs
so float64 oracles can be checked at full precision.
"""

from __future__ import annotations

import torch

from .errors import ConfigError, NumericError

_NORM_EPS = 1e-12


def cosine_sim(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last dimension, with guarded norms.

    Raises NumericError on an exactly-zero vector instead of silently
    dividing by zero; otherwise norms get a 1e-12 floor.
    """
    nu = u.norm(dim=-1, keepdim=True)
    nv = v.norm(dim=-1, keepdim=True)
    if (nu == 0).any() or (nv == 0).any():
        raise NumericError("cosine_sim received a zero vector")
    return ((u * v).sum(dim=-1) / ((nu + _NORM_EPS) * (nv + _NORM_EPS)).squeeze(-1))


class EmbeddingQueue:
    """Fixed-capacity FIFO of key embeddings serving as contrastive negatives."""

    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        if capacity <= 0:
            raise ConfigError(f"queue capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._buffer = torch.zeros(capacity, dim, dtype=dtype)
        self._size = 0
        self._cursor = 0  # next write position

    def __len__(self) -> int:
        return self._size

    @property
    def full(self) -> bool:
        return self._size == self.capacity

    def push(self, keys: torch.Tensor) -> "EmbeddingQueue":
        """Append a batch of keys, evicting the oldest past capacity."""
        keys = keys.detach().to(self._buffer.dtype)
        if keys.ndim == 1:
            keys = keys[None]
        if keys.shape[-1] != self.dim:
            raise ConfigError(f"queue holds {self.dim}-d keys, got {keys.shape[-1]}-d")
        if keys.shape[0] > self.capacity:
            keys = keys[-self.capacity:]
        n = keys.shape[0]
        end = self._cursor + n
        if end <= self.capacity:
            self._buffer[self._cursor:end] = keys
        else:
            first = self.capacity - self._cursor
            self._buffer[self._cursor:] = keys[:first]
            self._buffer[: end - self.capacity] = keys[first:]
        self._cursor = end % self.capacity
        self._size = min(self._size + n, self.capacity)
        return self

    def entries(self) -> torch.Tensor:
        """Entries in FIFO order, oldest first."""
        if self._size < self.capacity:
            return self._buffer[: self._size].clone()
        return torch.cat([self._buffer[self._cursor:], self._buffer[: self._cursor]]).clone()

    def negatives(self) -> torch.Tensor | None:
        """Negative key matrix, or None while the queue is empty."""
        if self._size == 0:
            return None
        return self._buffer[: self._size] if self._size < self.capacity else self._buffer

    def state(self) -> dict:
        return {
            "buffer": self._buffer.clone(),
            "size": self._size,
            "cursor": self._cursor,
            "capacity": self.capacity,
        }

    @classmethod
    def from_state(cls, state: dict) -> "EmbeddingQueue":
        buf = state["buffer"]
        q = cls(int(state["capacity"]), buf.shape[1], dtype=buf.dtype)
        q._buffer = buf.clone()
        q._size = int(state["size"])
        q._cursor = int(state["cursor"])
        return q


def enqueue(queue: EmbeddingQueue, keys: torch.Tensor) -> EmbeddingQueue:
    """Functional alias for :meth:`EmbeddingQueue.push`."""
    return queue.push(keys)


def info_nce(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    negatives: "EmbeddingQueue | torch.Tensor | None",
    tau: float,
) -> torch.Tensor:
    """Contrastive loss for one query against one positive key and a negative set.

    -log( exp(s(q,k+)/tau) / (exp(s(q,k+)/tau) + sum_neg exp(s(q,k-)/tau)) )

    With no negatives the loss is exactly 0. Computed via logsumexp for
    stability; dtype follows the inputs.
    """
    if tau <= 0:
        raise ConfigError(f"temperature tau must be > 0, got {tau}")
    if isinstance(negatives, EmbeddingQueue):
        negatives = negatives.negatives()
    pos_logit = cosine_sim(q, k_pos) / tau
    if negatives is None or negatives.numel() == 0:
        return torch.zeros((), dtype=q.dtype, device=q.device)
    neg = negatives.to(q.dtype)
    neg_logits = cosine_sim(q[None, :].expand(neg.shape[0], -1), neg) / tau
    logits = torch.cat([pos_logit[None], neg_logits])
    return torch.logsumexp(logits, dim=0) - pos_logit


def info_nce_batch(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    negatives: "EmbeddingQueue | torch.Tensor | None",
    tau: float,
) -> torch.Tensor:
    """Mean InfoNCE over a batch of (query, positive) rows.

    While the queue is still empty, the other rows' positive keys act as
    in-batch negatives so early training is not degenerate.
    """
    if tau <= 0:
        raise ConfigError(f"temperature tau must be > 0, got {tau}")
    if isinstance(negatives, EmbeddingQueue):
        negatives = negatives.negatives()
    b = q.shape[0]
    pos = cosine_sim(q, k_pos) / tau  # (B,)
    if negatives is not None and negatives.numel() > 0:
        neg = negatives.to(q.dtype)
        qn = q / (q.norm(dim=-1, keepdim=True) + _NORM_EPS)
        nn_ = neg / (neg.norm(dim=-1, keepdim=True) + _NORM_EPS)
        neg_logits = (qn @ nn_.T) / tau  # (B, N)
        logits = torch.cat([pos[:, None], neg_logits], dim=1)
        return (torch.logsumexp(logits, dim=1) - pos).mean()
    if b == 1:
        return torch.zeros((), dtype=q.dtype, device=q.device)
    # in-batch fallback: negatives for row i are the other rows' positives
    qn = q / (q.norm(dim=-1, keepdim=True) + _NORM_EPS)
    kn = k_pos / (k_pos.norm(dim=-1, keepdim=True) + _NORM_EPS)
    sim = (qn @ kn.T) / tau  # (B, B); diagonal is the positive logit
    losses = torch.logsumexp(sim, dim=1) - sim.diagonal()
    return losses.mean()


@torch.no_grad()
def momentum_update(query_net: torch.nn.Module, key_net: torch.nn.Module, m: float) -> torch.nn.Module:
    """EMA update of the key network parameters: key <- m*key + (1-m)*query.

    Only parameters are updated; buffers (e.g. spectral-norm power-iteration
    vectors) evolve through the key network's own forward passes. The key
    network receives no gradients.
    """
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"momentum m must lie in [0,1], got {m}")
    q_params = dict(query_net.named_parameters())
    k_params = dict(key_net.named_parameters())
    if q_params.keys() != k_params.keys():
        raise ConfigError("momentum_update: parameter structures are not isomorphic")
    for name, qp in q_params.items():
        kp = k_params[name]
        if kp.shape != qp.shape:
            raise ConfigError(f"momentum_update: shape mismatch for {name}")
        if m == 1.0:
            continue  # endpoint must be bit-exact
        if m == 0.0:
            kp.copy_(qp)
        else:
            kp.mul_(m).add_(qp, alpha=1.0 - m)
    return key_net
