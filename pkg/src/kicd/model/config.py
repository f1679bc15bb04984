from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import InvalidConfigError


@dataclass(frozen=True)
class ModelConfig:
    n_max: int
    d: int = 64
    L: int = 4
    heads: int = 4
    eps: float = 0.01
    tau: float = 1.0
    tau_final: float = 0.3
    sinkhorn_iters: int = 20
    # after sinkhorn_iters rounds, continue until row sums are within tol (0 disables)
    sinkhorn_tol: float = 1e-5
    sinkhorn_max_iters: int = 20000
    mc_samples: int = 16
    ff_mult: int = 2
    # "full" attends over all samples; "induced" routes through a few learned inducing points
    sample_attention: str = "full"
    inducing_points: int = 16
    threshold: float = 0.5
    # learned per-index tags shared by data columns and prior rows/columns
    node_ids: bool = False
    pair_skip: bool = False  # feed the encoder's pair tokens straight into the pair map

    def __post_init__(self):
        if self.n_max < 1:
            raise InvalidConfigError(f"n_max must be >= 1, got {self.n_max}")
        if self.L < 2 or self.L % 2:
            raise InvalidConfigError(f"layer count L must be even and >= 2, got {self.L}")
        if self.d % self.heads:
            raise InvalidConfigError(f"width {self.d} is not divisible by {self.heads} heads")
        if not 0.0 <= self.eps <= 0.1:
            raise InvalidConfigError(f"knowledge-bias strength must lie in [0, 0.1], got {self.eps}")
        if self.tau <= 0 or self.tau_final <= 0:
            raise InvalidConfigError("Sinkhorn temperature must be positive")
        if self.sinkhorn_iters < 1:
            raise InvalidConfigError("sinkhorn_iters must be >= 1")
        if self.sinkhorn_tol < 0 or self.sinkhorn_max_iters < self.sinkhorn_iters:
            raise InvalidConfigError("need sinkhorn_tol >= 0 and sinkhorn_max_iters >= sinkhorn_iters")
        if self.mc_samples < 1:
            raise InvalidConfigError("mc_samples must be >= 1")
        if self.sample_attention not in ("full", "induced"):
            raise InvalidConfigError(f"unknown sample attention {self.sample_attention!r}")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfigError("edge threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)
