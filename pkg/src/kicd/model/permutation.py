"""Permutation relaxation and DAG assembly: Gumbel-Sinkhorn, Hungarian hardening,
straight-through gradients, Q Phi Q^T assembly and Bernoulli graph sampling."""

from __future__ import annotations

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from ..errors import InvalidInputError, NumericalInstabilityError
from ..graph import Dag


def sample_gumbel(shape, generator=None, dtype=torch.float32, eps=1e-20):
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + eps) + eps)


def log_sinkhorn(log_alpha: torch.Tensor, n_iters: int, tau=None) -> torch.Tensor:
    """``n_iters`` alternating row/column normalisations in log space over the last two axes."""
    for it in range(n_iters):
        log_alpha = log_alpha - torch.logsumexp(log_alpha, dim=-1, keepdim=True)
        log_alpha = log_alpha - torch.logsumexp(log_alpha, dim=-2, keepdim=True)
        if not torch.isfinite(log_alpha).all():
            raise NumericalInstabilityError(
                f"Sinkhorn produced non-finite values at iteration {it} (tau={tau})"
            )
    return log_alpha


@torch.no_grad()
def balance(q: torch.Tensor, tol: float, max_iters: int, start: int = 0, tau=None,
            check_every: int = 10) -> torch.Tensor:
    """Continue Sinkhorn on a nearly balanced matrix until row sums are within ``tol``.

    Works on scaling vectors, diag(u) q diag(v), which is cheap once q is
    close to doubly stochastic. ``start`` only offsets iteration numbers in
    error messages. Not differentiated.
    """
    if (q.sum(-1) - 1).abs().max() <= tol:
        return q
    v = torch.ones_like(q[..., 0, :])
    it = 0
    while it < max_iters:
        for _ in range(min(check_every, max_iters - it)):
            u = 1.0 / (q @ v.unsqueeze(-1)).squeeze(-1)
            v = 1.0 / (q.transpose(-1, -2) @ u.unsqueeze(-1)).squeeze(-1)
            it += 1
        if not (torch.isfinite(u).all() and torch.isfinite(v).all()):
            raise NumericalInstabilityError(
                f"Sinkhorn produced non-finite values by iteration {start + it - 1} (tau={tau})"
            )
        dev = (u * (q @ v.unsqueeze(-1)).squeeze(-1) - 1).abs().max()
        if dev <= tol:
            break
    return u.unsqueeze(-1) * q * v.unsqueeze(-2)


def gumbel_sinkhorn(scores: torch.Tensor, tau: float, n_iters: int, noise=None, tol: float = 0.0,
                    max_iters: int | None = None) -> torch.Tensor:
    """Doubly-stochastic relaxation of Sinkhorn(scores / tau + noise).

    ``n_iters`` log-space rounds; with ``tol > 0`` further rounds follow until
    every row sum is within ``tol`` of 1, up to ``max_iters`` rounds in total.
    The extra rounds enter as a constant offset: the returned value is the
    balanced matrix, the gradient is that of the first ``n_iters`` rounds.
    """
    log_alpha = scores / tau
    if noise is not None:
        log_alpha = log_alpha + noise
    q = log_sinkhorn(log_alpha, n_iters, tau).exp()
    if tol > 0 and max_iters is not None and max_iters > n_iters:
        q = q + (balance(q, tol, max_iters - n_iters, n_iters, tau) - q).detach()
    return q


def hungarian(q_soft) -> torch.Tensor:
    """Maximum-weight permutation matrix for each matrix in a (..., N, N) batch."""
    t = torch.as_tensor(q_soft)
    w = t.detach().cpu().numpy()
    flat = w.reshape(-1, *w.shape[-2:])
    out = np.zeros_like(flat)
    for k, m in enumerate(flat):
        rows, cols = linear_sum_assignment(m, maximize=True)
        out[k, rows, cols] = 1.0
    return torch.from_numpy(out.reshape(w.shape)).to(dtype=t.dtype)


def straight_through(q_hard: torch.Tensor, q_soft: torch.Tensor, residual=None) -> torch.Tensor:
    """Forward value q_hard, gradient of q_soft.

    ``residual`` replaces the detached (q_hard - q_soft) term; holding it fixed
    turns the estimator into an ordinary differentiable function, which is how
    it is checked against finite differences.
    """
    if residual is None:
        residual = (q_hard - q_soft).detach()
    return q_soft + residual


def check_permutation(q) -> None:
    q = torch.as_tensor(q)
    ok = (
        q.shape[-1] == q.shape[-2]
        and bool(((q == 0) | (q == 1)).all())
        and bool((q.sum(-1) == 1).all())
        and bool((q.sum(-2) == 1).all())
    )
    if not ok:
        raise InvalidInputError("Q is not a permutation matrix")


def upper_mask(n: int, dtype=torch.float32) -> torch.Tensor:
    return torch.triu(torch.ones(n, n, dtype=dtype), diagonal=1)


def permute_pairs(q: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Re-index pair features by position: out[p, r] = sum_ab q[a, p] theta[a, b] q[b, r]."""
    return torch.einsum("...ap,...abd,...br->...prd", q, theta, q)


def assemble(q: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """G_hat = Q Phi Q^T, no validation (used inside the differentiable forward)."""
    return q @ phi @ q.transpose(-1, -2)


def assemble_graph(q, phi) -> torch.Tensor:
    check_permutation(q)
    q = torch.as_tensor(q)
    phi = torch.as_tensor(phi, dtype=q.dtype)
    return assemble(q, phi)


def threshold_graph(g_hat, threshold: float = 0.5) -> Dag:
    a = torch.as_tensor(g_hat).detach().cpu().numpy()
    return Dag((a > threshold).astype(np.uint8))


def sample_graphs(g_hat, k: int, seed) -> list[Dag]:
    """k independent Bernoulli draws of every edge."""
    p = np.asarray(torch.as_tensor(g_hat).detach().cpu().numpy(), dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise InvalidInputError(f"edge probabilities must be square, got {p.shape}")
    if not np.all((p >= 0) & (p <= 1)):
        raise InvalidInputError("edge probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    draws = rng.random((k, *p.shape)) < p
    return [Dag(d.astype(np.uint8)) for d in draws]
