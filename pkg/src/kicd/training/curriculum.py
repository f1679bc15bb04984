"""Curriculum over the prior preservation rate.

Early epochs draw rho uniformly from [0, 1]. From epoch 5 onwards a growing
share of draws comes from a sparse branch that keeps few prior entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfigError

TABLE, MIXTURE = "table", "mixture"


@dataclass(frozen=True)
class Stage:
    start: int  # first epoch of the stage
    pi: float  # probability of the sparse branch
    lo: float  # sparse draws lie in (lo, hi]; lo == hi means the fixed value hi
    hi: float


DEFAULT_STAGES = (
    Stage(0, 0.0, 0.0, 0.0),
    Stage(5, 0.2, 0.34, 0.40),
    Stage(8, 0.4, 0.30, 0.34),
    Stage(10, 0.6, 0.20, 0.30),
    Stage(15, 0.8, 0.20, 0.20),
)


@dataclass(frozen=True)
class CurriculumSchedule:
    tau0: float = 0.5
    gamma: float = 0.01
    rho_min: float = 0.2
    stages: tuple[Stage, ...] = field(default=DEFAULT_STAGES)
    # TABLE draws sparse rho from the stage interval, MIXTURE from Uniform(0, rho_max(e))
    mode: str = TABLE

    def __post_init__(self):
        if self.mode not in (TABLE, MIXTURE):
            raise InvalidConfigError(f"unknown curriculum mode {self.mode!r}")
        if not self.stages or self.stages[0].start != 0:
            raise InvalidConfigError("stage table must start at epoch 0")
        starts = [s.start for s in self.stages]
        if starts != sorted(set(starts)):
            raise InvalidConfigError("stage starts must be strictly increasing")
        for s in self.stages:
            if not (0 <= s.pi <= 1 and 0 <= s.lo <= s.hi <= 1):
                raise InvalidConfigError(f"invalid stage {s}")

    def rho_max(self, epoch: int) -> float:
        return max(self.tau0 - self.gamma * epoch, self.rho_min)

    def stage(self, epoch: int) -> Stage:
        if epoch < 0:
            raise InvalidConfigError(f"epoch must be >= 0, got {epoch}")
        current = self.stages[0]
        for s in self.stages:
            if epoch >= s.start:
                current = s
        return current

    def pi(self, epoch: int) -> float:
        return self.stage(epoch).pi

    def to_dict(self) -> dict:
        return {
            "tau0": self.tau0, "gamma": self.gamma, "rho_min": self.rho_min, "mode": self.mode,
            "stages": [[s.start, s.pi, s.lo, s.hi] for s in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumSchedule":
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(Stage(int(a), float(b), float(c), float(e)) for a, b, c, e in d["stages"])
        return cls(**d)


def draw_rhos(epoch: int, sched: CurriculumSchedule, rng: np.random.Generator, size: int):
    """``size`` independent draws; returns (rho, sparse) arrays. Row k consumes the same
    two uniforms a single draw would, so one draw of size 1 equals ``draw_rho``."""
    stage = sched.stage(epoch)
    branch, u = rng.random((size, 2)).T
    sparse = branch < stage.pi
    if sched.mode == MIXTURE:
        low = u * sched.rho_max(epoch)
    else:
        # (lo, hi]: 1 - u lies in (0, 1]
        low = stage.lo + (1.0 - u) * (stage.hi - stage.lo)
    return np.where(sparse, low, u), sparse


def draw_rho(epoch: int, sched: CurriculumSchedule, rng: np.random.Generator) -> tuple[float, bool]:
    """Returns (rho, sparse) where ``sparse`` says which branch fired."""
    rho, sparse = draw_rhos(epoch, sched, rng, 1)
    return float(rho[0]), bool(sparse[0])


def curriculum_rho(epoch: int, sched: CurriculumSchedule, seed) -> float:
    return draw_rho(epoch, sched, np.random.default_rng(seed))[0]
