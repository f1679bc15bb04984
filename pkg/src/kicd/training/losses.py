from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from ..errors import InvalidConfigError, NumericalInstabilityError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    k: int = 16
    prob_floor: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidConfigError("alpha must be >= 0")
        if self.k < 1:
            raise InvalidConfigError("k must be >= 1")
        if not 0 < self.prob_floor < 0.5:
            raise InvalidConfigError("prob_floor must lie in (0, 0.5)")


def _offdiag(n: int, dtype) -> torch.Tensor:
    return 1.0 - torch.eye(n, dtype=dtype)


def loss_graph_batch(G_hat: torch.Tensor, truth: torch.Tensor, cfg: LossConfig, mask=None) -> torch.Tensor:
    """Per-instance Monte-Carlo negative log-likelihood.

    G_hat: (B, K, N, N) edge probabilities, one matrix per sampled permutation.
    truth: (B, N, N) binary adjacency. mask: optional (B, N, N) selecting the
    scored cells; defaults to every off-diagonal cell.
    """
    n = G_hat.shape[-1]
    if mask is None:
        mask = _offdiag(n, G_hat.dtype).expand(truth.shape)
    p = G_hat.clamp(cfg.prob_floor, 1.0 - cfg.prob_floor)
    t = truth.unsqueeze(1).to(G_hat.dtype)
    ll = (t * torch.log(p) + (1.0 - t) * torch.log1p(-p)) * mask.unsqueeze(1)
    ll = ll.sum(dim=(-1, -2))  # (B, K)
    k = G_hat.shape[1]
    loss = -(torch.logsumexp(ll, dim=1) - torch.log(torch.tensor(float(k), dtype=ll.dtype)))
    bad = ~torch.isfinite(loss)
    if bad.any():
        idx = int(bad.nonzero()[0, 0])
        raise NumericalInstabilityError(f"non-finite graph likelihood for batch entry {idx}")
    return loss


def loss_graph(G_hat: torch.Tensor, truth, cfg: LossConfig) -> torch.Tensor:
    """Single instance: G_hat is (K, N, N) or (N, N)."""
    G_hat = torch.as_tensor(G_hat)
    if G_hat.dim() == 2:
        G_hat = G_hat.unsqueeze(0)
    truth = torch.as_tensor(truth, dtype=G_hat.dtype)
    return loss_graph_batch(G_hat.unsqueeze(0), truth.unsqueeze(0), cfg)[0]


def _standardize(v: torch.Tensor) -> torch.Tensor:
    centred = v - v.mean()
    return centred / torch.sqrt((centred ** 2).mean() + 1e-12)


def loss_sim(H: torch.Tensor, G_hat: torch.Tensor) -> torch.Tensor:
    """Match pairwise similarity of dataset summaries to that of predicted graphs.

    H: (B, N, d). G_hat: (B, N, N) or (B, K, N, N); sampled graphs are averaged.
    Both similarity matrices are symmetric, so their off-diagonal entries are
    represented by the i < j pairs.
    """
    B = H.shape[0]
    if B < 2:
        return H.new_zeros(())
    emb = H.mean(dim=1)
    if G_hat.dim() == 4:
        G_hat = G_hat.mean(dim=1)
    y = G_hat.reshape(B, -1)

    norm = emb.norm(dim=-1, keepdim=True)
    zero = norm.squeeze(-1) == 0
    if zero.any():
        log.warning("zero-norm embedding in similarity loss; cosine set to 0 for %d items", int(zero.sum()))
    unit = emb / torch.where(norm > 0, norm, torch.ones_like(norm))

    i, j = torch.triu_indices(B, B, offset=1)
    s_emb = (unit[i] * unit[j]).sum(-1)
    sq = ((y[i] - y[j]) ** 2).sum(-1)
    pos = sq > 0
    dist = torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    s_out = 1.0 / (1.0 + dist)
    return ((_standardize(s_emb) - _standardize(s_out)) ** 2).mean()


def total_loss(l_graph, l_sim, alpha: float):
    return l_graph + alpha * l_sim
