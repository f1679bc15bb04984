"""Dual-source encoder and permutation-based graph decoder.

Tensors carry a leading batch axis: X is (B, S, N), the prior is (B, N, N),
the merged encoder state Z is (B, N + S, N, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import InvalidInputError
from .config import ModelConfig
from .permutation import (
    assemble,
    gumbel_sinkhorn,
    hungarian,
    permute_pairs,
    sample_gumbel,
    straight_through,
    upper_mask,
)


@dataclass
class EncoderState:
    E_P: torch.Tensor  # (B, N, N, d)
    E_X: torch.Tensor  # (B, S, N, d)

    @property
    def Z(self) -> torch.Tensor:
        return torch.cat([self.E_P, self.E_X], dim=1)

    @classmethod
    def split(cls, Z: torch.Tensor, n: int) -> "EncoderState":
        return cls(Z[:, :n], Z[:, n:])


@dataclass
class DecoderState:
    q: torch.Tensor  # (B, N, d)
    H: torch.Tensor  # (B, N, d)
    H_biased: torch.Tensor  # (B, N, d)
    Theta: torch.Tensor  # (B, N, N, d)
    scores: torch.Tensor  # (B, N, N) Sinkhorn input before temperature and noise
    Q_soft: torch.Tensor  # (B, K, N, N)
    Q_hard: torch.Tensor  # (B, K, N, N)
    Phi: torch.Tensor  # (B, K, N, N)
    G_hat: torch.Tensor  # (B, K, N, N)


def knowledge_bias(H: torch.Tensor, q: torch.Tensor, eps: float) -> torch.Tensor:
    return H + eps * q


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.kv = nn.Linear(d, 2 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        # x: (..., T, d) attends over ctx: (..., T', d)
        lead = x.shape[:-2]
        h = self.heads
        q = self.q(x)
        k, v = self.kv(ctx).chunk(2, dim=-1)

        def split(t):
            t = t.reshape(-1, t.shape[-2], h, t.shape[-1] // h)
            return t.transpose(1, 2)

        o = F.scaled_dot_product_attention(split(q), split(k), split(v))
        o = o.transpose(1, 2).reshape(*lead, x.shape[-2], -1)
        return self.out(o)


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, mult * d)
        self.fc2 = nn.Linear(mult * d, d)

    def forward(self, x):
        return x + self.fc2(F.gelu(self.fc1(self.norm(x))))


class SelfAttentionBlock(nn.Module):
    """Pre-norm transformer block attending over the second-to-last axis."""

    def __init__(self, d: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, x):
        h = self.norm(x)
        return self.ff(x + self.attn(h, h))


class InducedAttentionBlock(nn.Module):
    """Set attention routed through m learned inducing points, O(T m) instead of O(T^2)."""

    def __init__(self, d: int, heads: int, ff_mult: int, m: int):
        super().__init__()
        self.inducing = nn.Parameter(torch.randn(m, d) / math.sqrt(d))
        self.norm_i = nn.LayerNorm(d)
        self.norm_x = nn.LayerNorm(d)
        self.pool = MultiHeadAttention(d, heads)
        self.ff_i = FeedForward(d, ff_mult)
        self.norm_h = nn.LayerNorm(d)
        self.norm_x2 = nn.LayerNorm(d)
        self.bcast = MultiHeadAttention(d, heads)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, x):
        ind = self.inducing.expand(*x.shape[:-2], *self.inducing.shape)
        h = ind + self.pool(self.norm_i(ind), self.norm_x(x))
        h = self.norm_h(self.ff_i(h))
        return self.ff(x + self.bcast(self.norm_x2(x), h))


class CrossAttention(nn.Module):
    """Per-variable attention of the pooled prior query over that variable's samples."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def forward(self, q: torch.Tensor, E_X: torch.Tensor) -> torch.Tensor:
        B, S, N, d = E_X.shape
        h = self.heads
        qq = self.q(q).reshape(B * N, 1, h, d // h).transpose(1, 2)
        kv = E_X.transpose(1, 2).reshape(B * N, S, d)
        k = self.k(kv).reshape(B * N, S, h, d // h).transpose(1, 2)
        v = self.v(kv).reshape(B * N, S, h, d // h).transpose(1, 2)
        o = F.scaled_dot_product_attention(qq, k, v)
        return self.out(o.transpose(1, 2).reshape(B, N, d))


class KnowledgeInformedModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.lift_x = nn.Linear(1, d)
        self.lift_p = nn.Linear(1, d)
        # marks the self-pair cells so prior row i is tied to variable i
        self.diag_p = nn.Parameter(torch.zeros(d))
        if cfg.node_ids:
            # variable tags; the same tag marks data column i and prior row/column i
            self.node_tag = nn.Parameter(torch.randn(cfg.n_max, d))
            self.tag_row = nn.Linear(d, d, bias=False)
            self.tag_col = nn.Linear(d, d, bias=False)

        def sample_block():
            if cfg.sample_attention == "induced":
                return InducedAttentionBlock(d, cfg.heads, cfg.ff_mult, cfg.inducing_points)
            return SelfAttentionBlock(d, cfg.heads, cfg.ff_mult)

        self.layers = nn.ModuleList(
            sample_block() if l % 2 == 0 else SelfAttentionBlock(d, cfg.heads, cfg.ff_mult)
            for l in range(cfg.L)
        )
        self.final_norm = nn.LayerNorm(d)
        self.cross = CrossAttention(d, cfg.heads)

        self.dec_block = SelfAttentionBlock(d, cfg.heads, cfg.ff_mult)
        self.dec_norm = nn.LayerNorm(d)
        self.pair_a = nn.Linear(d, d)
        self.pair_b = nn.Linear(d, d, bias=False)
        self.pair_c = nn.Linear(d, d)
        self.pair_d = nn.Linear(d, d)
        if cfg.pair_skip:
            self.pair_e = nn.Linear(d, d, bias=False)
        self.score_head = nn.Linear(d, 1)
        self.edge_head = nn.Linear(d, 1)

    # encoder

    def embed_inputs(self, X: torch.Tensor, prior: torch.Tensor) -> EncoderState:
        n = self.cfg.n_max
        if X.dim() != 3 or X.shape[-1] != n:
            raise InvalidInputError(f"X must be (B, S, {n}), got {tuple(X.shape)}")
        if prior.shape != (X.shape[0], n, n):
            raise InvalidInputError(f"prior must be ({X.shape[0]}, {n}, {n}), got {tuple(prior.shape)}")
        E_X = self.lift_x(X.unsqueeze(-1))
        eye = torch.eye(n, dtype=X.dtype).unsqueeze(-1)
        E_P = self.lift_p(prior.unsqueeze(-1)) + eye * self.diag_p
        if self.cfg.node_ids:
            tag = self.node_tag.to(X.dtype)
            E_X = E_X + tag
            E_P = E_P + self.tag_row(tag).unsqueeze(1) + self.tag_col(tag).unsqueeze(0)
        return EncoderState(E_P, E_X)

    def sample_axis(self, layer: nn.Module, part: torch.Tensor) -> torch.Tensor:
        # attend over axis 1 (rows) independently for every variable column
        return layer(part.transpose(1, 2)).transpose(1, 2)

    def apply_layer(self, l: int, state: EncoderState) -> EncoderState:
        layer = self.layers[l]
        if l % 2 == 0:
            # one shared module, prior and data slices processed separately
            return EncoderState(self.sample_axis(layer, state.E_P), self.sample_axis(layer, state.E_X))
        return EncoderState.split(layer(state.Z), state.E_P.shape[1])

    def alternating_attention(self, state: EncoderState) -> EncoderState:
        for l in range(len(self.layers)):
            state = self.apply_layer(l, state)
        return EncoderState(self.final_norm(state.E_P), self.final_norm(state.E_X))

    def cross_attend(self, E_P: torch.Tensor, E_X: torch.Tensor):
        q = E_P.mean(dim=2)
        return q, self.cross(q, E_X)

    # decoder

    def pair_features(self, H_biased: torch.Tensor, E_P: torch.Tensor | None = None) -> torch.Tensor:
        u = self.dec_norm(self.dec_block(H_biased))
        a = self.pair_a(u).unsqueeze(-2)
        b = self.pair_b(u).unsqueeze(-3)
        c = self.pair_c(u).unsqueeze(-2)
        e = self.pair_d(u).unsqueeze(-3)
        z = a + b + c * e
        if self.cfg.pair_skip:
            if E_P is None:
                raise InvalidInputError("pair_skip needs the encoder's pair tokens")
            z = z + self.pair_e(E_P)
        return F.gelu(z)

    def assignment_scores(self, Theta: torch.Tensor) -> torch.Tensor:
        """Variable-by-position scores from pairwise precedence logits.

        Each variable gets a rank score from its net precedence over the
        others; the score for putting variable a at position p grows with that
        rank times the centred position, so the best assignment sorts by rank.
        """
        prec = self.score_head(Theta).squeeze(-1)
        rank = (prec - prec.transpose(-1, -2)).mean(dim=-1)
        n = Theta.shape[-2]
        pos = torch.arange(n, dtype=Theta.dtype) - (n - 1) / 2
        return rank.unsqueeze(-1) * pos

    def permutation_decode(self, H_biased, *, E_P=None, tau=None, n_samples=1, generator=None, noise=True,
                           hard=True, st_residual=None):
        cfg = self.cfg
        tau = cfg.tau if tau is None else tau
        Theta = self.pair_features(H_biased, E_P)
        scores = self.assignment_scores(Theta)
        B, n = scores.shape[0], scores.shape[-1]
        g = sample_gumbel((B, n_samples, n, n), generator, scores.dtype) if noise else None
        # Hungarian is invariant to the row/column rescaling that further rounds apply and
        # the straight-through gradient ignores them, so the hard path skips the tail
        tol = 0.0 if hard else cfg.sinkhorn_tol
        Q_soft = gumbel_sinkhorn(scores.unsqueeze(1), tau, cfg.sinkhorn_iters, g, tol, cfg.sinkhorn_max_iters)
        if Q_soft.shape[1] != n_samples:
            Q_soft = Q_soft.expand(B, n_samples, n, n)
        Q_hard = hungarian(Q_soft)
        if not hard:
            Q = Q_soft
        elif torch.is_grad_enabled() or st_residual is not None:
            Q = straight_through(Q_hard, Q_soft, st_residual)
        else:
            Q = Q_hard
        return Theta, scores, Q_soft, Q_hard, Q

    def lt_decode(self, Theta_pos: torch.Tensor) -> torch.Tensor:
        n = Theta_pos.shape[-2]
        return torch.sigmoid(self.edge_head(Theta_pos).squeeze(-1)) * upper_mask(n, Theta_pos.dtype)

    def forward(self, X, prior, *, tau=None, n_samples=None, generator=None, noise=True, hard=True,
                st_residual=None) -> DecoderState:
        if n_samples is None:
            n_samples = self.cfg.mc_samples
        state = self.alternating_attention(self.embed_inputs(X, prior))
        q, H = self.cross_attend(state.E_P, state.E_X)
        Hb = knowledge_bias(H, q, self.cfg.eps)
        Theta, scores, Q_soft, Q_hard, Q = self.permutation_decode(
            Hb, E_P=state.E_P, tau=tau, n_samples=n_samples, generator=generator, noise=noise, hard=hard,
            st_residual=st_residual,
        )
        Phi = self.lt_decode(permute_pairs(Q, Theta.unsqueeze(1)))
        return DecoderState(q, H, Hb, Theta, scores, Q_soft, Q_hard, Phi, assemble(Q, Phi))

    @torch.no_grad()
    def predict(self, X, prior, tau=None) -> torch.Tensor:
        """Evaluation forward: no noise, hard permutation; returns G_hat (B, N, N)."""
        tau = self.cfg.tau_final if tau is None else tau
        return self(X, prior, tau=tau, n_samples=1, noise=False).G_hat[:, 0]
