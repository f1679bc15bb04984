"""Training loop with prior-sparsity curriculum, epoch checkpoints and bit-exact resume."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..datagen import CorpusSpec, generate_record, standardize
from ..errors import InvalidConfigError, NumericalInstabilityError
from ..graph import Dag, f1, shd
from ..inference import predict_dags
from ..knowledge import (
    NEG_ONLY,
    PRIOR_TYPE_PROBS,
    REACHABILITY,
    WITH_POSITIVES,
    MaskConfig,
    build_prior,
    encode_prior,
    mask_prior,
    soften,
    to_neg_only,
)
from ..model import KnowledgeInformedModel, ModelConfig
from ..seeding import EVAL, TRAIN, derive_seed
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .curriculum import CurriculumSchedule, draw_rho
from .losses import LossConfig, loss_graph_batch, loss_sim, total_loss

log = logging.getLogger(__name__)

_PRIOR_KINDS = list(PRIOR_TYPE_PROBS)
_PRIOR_P = np.array(list(PRIOR_TYPE_PROBS.values()))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.0
    warmup_steps: int = 200
    grad_clip: float = 1.0
    seed: int = 0
    val_graphs: int = 32
    val_retention: tuple[float, ...] = (0.0, 0.5, 1.0)
    max_skips: int = 3
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise InvalidConfigError("lr must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["val_retention"] = list(self.val_retention)
        return d


@dataclass
class TrainingSet:
    """Standardized, padded corpus held in memory."""

    X: np.ndarray  # (G, S, n_max) float32
    adj: np.ndarray  # (G, n_max, n_max) uint8
    dags: list[Dag]
    n_eff: np.ndarray  # (G,)

    def __len__(self):
        return len(self.dags)

    @classmethod
    def from_records(cls, records, n_max: int) -> "TrainingSet":
        Xs, adjs, dags, ns = [], [], [], []
        for X, dag in records:
            X = standardize(np.asarray(X, dtype=np.float64))
            s, n = X.shape
            if n > n_max:
                raise InvalidConfigError(f"record with {n} variables exceeds n_max={n_max}")
            xp = np.zeros((s, n_max), dtype=np.float32)
            xp[:, :n] = X
            a = np.zeros((n_max, n_max), dtype=np.uint8)
            a[:n, :n] = dag.adj
            Xs.append(xp)
            adjs.append(a)
            dags.append(dag)
            ns.append(n)
        return cls(np.stack(Xs), np.stack(adjs), dags, np.array(ns))


@dataclass
class ValidationSet:
    Xs: list[np.ndarray]
    dags: list[Dag]
    priors: dict[str, list] = field(default_factory=dict)  # key "full@0.5" etc.


def validation_set(spec: CorpusSpec, seed: int, count: int, retention=(0.0, 0.5, 1.0)) -> ValidationSet:
    """Held-out graphs drawn from the evaluation seed domain."""
    Xs, dags = [], []
    for i in range(count):
        ci = i % len(spec.cells)
        ds = generate_record(spec, seed, ci, i // len(spec.cells), EVAL)
        Xs.append(standardize(ds.X))
        dags.append(ds.dag)
    vs = ValidationSet(Xs, dags)
    for rho in retention:
        for name, pol in (("full", WITH_POSITIVES), ("neg", NEG_ONLY)):
            vs.priors[f"{name}@{rho:g}"] = [
                build_prior(d, REACHABILITY, pol, rho, derive_seed(EVAL, seed, 99, i, int(rho * 1000)))
                for i, d in enumerate(dags)
            ]
    return vs


def evaluate(model, Xs, dags, priors) -> tuple[float, float]:
    preds = predict_dags(model, Xs, priors)
    return (float(np.mean([shd(p, t) for p, t in zip(preds, dags)])),
            float(np.mean([f1(p, t) for p, t in zip(preds, dags)])))


def instance_prior(dag: Dag, epoch: int, sched: CurriculumSchedule, rng: np.random.Generator):
    """Training prior for one instance: sampled prior type, curriculum rho, mask."""
    source, polarity = _PRIOR_KINDS[rng.choice(len(_PRIOR_KINDS), p=_PRIOR_P)]
    rho, sparse = draw_rho(epoch, sched, rng)
    prior = encode_prior(dag, source)
    if polarity == NEG_ONLY:
        prior = to_neg_only(prior)
    return mask_prior(prior, MaskConfig(rho), rng), sparse


def lr_at(step: int, total: int, cfg: TrainConfig) -> float:
    warm = min(1.0, (step + 1) / max(cfg.warmup_steps, 1))
    return cfg.lr * warm * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))


def tau_at(step: int, total: int, mcfg: ModelConfig) -> float:
    frac = step / max(total - 1, 1)
    return mcfg.tau + (mcfg.tau_final - mcfg.tau) * frac


class Trainer:
    def __init__(self, data: TrainingSet, model_cfg: ModelConfig, sched: CurriculumSchedule,
                 loss_cfg: LossConfig, cfg: TrainConfig, val: ValidationSet | None = None):
        self.data, self.sched, self.loss_cfg, self.cfg, self.val = data, sched, loss_cfg, cfg, val
        torch.manual_seed(derive_seed(TRAIN, cfg.seed, 1))
        self.model = KnowledgeInformedModel(model_cfg)
        self.opt = torch.optim.AdamW(self.model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.steps_per_epoch = math.ceil(len(data) / cfg.batch_size)
        self.total_steps = self.steps_per_epoch * cfg.epochs
        self.epoch = 0
        self.step = 0
        self.skips = 0
        self.metrics: list[dict] = []
        self.sparse_draws = 0
        self.draws = 0

    # state

    def checkpoint(self) -> Checkpoint:
        state = {
            "epoch": self.epoch, "step": self.step, "skips": self.skips, "metrics": self.metrics,
            "train_config": {k: v for k, v in self.cfg.to_dict().items() if k != "checkpoint_dir"},
            "schedule": self.sched.to_dict(),
            "loss_config": asdict(self.loss_cfg),
            "tau": tau_at(max(self.step - 1, 0), self.total_steps, self.model.cfg),
        }
        return Checkpoint(self.model.cfg, self.model.state_dict(), self.opt.state_dict(), state)

    def restore(self, ckpt: Checkpoint):
        self.model.load_state_dict(ckpt.params)
        self.opt.load_state_dict(ckpt.optimizer)
        st = ckpt.state
        self.epoch, self.step, self.skips = st["epoch"], st["step"], st["skips"]
        self.metrics = list(st["metrics"])

    # training

    def batch(self, epoch: int, ids: np.ndarray):
        d = self.data
        priors = np.empty((len(ids), d.X.shape[2], d.X.shape[2]))
        mask = np.zeros((len(ids), d.X.shape[2], d.X.shape[2]), dtype=np.float32)
        for b, rid in enumerate(ids):
            rng = np.random.default_rng([TRAIN, self.cfg.seed, epoch, int(rid)])
            dag = d.dags[rid]
            prior, sparse = instance_prior(dag, epoch, self.sched, rng)
            self.draws += 1
            self.sparse_draws += sparse
            n = d.n_eff[rid]
            full = np.zeros(priors.shape[1:], dtype=np.int8)
            full[:n, :n] = prior.r
            priors[b] = soften(full)
            mask[b, :n, :n] = 1.0 - np.eye(n)
        return (torch.from_numpy(d.X[ids]), torch.from_numpy(priors).float(),
                torch.from_numpy(d.adj[ids]).float(), torch.from_numpy(mask))

    def train_step(self, epoch: int, ids: np.ndarray) -> float | None:
        X, P, truth, mask = self.batch(epoch, ids)
        g = torch.Generator().manual_seed(derive_seed(TRAIN, self.cfg.seed, 2, self.step))
        tau = tau_at(self.step, self.total_steps, self.model.cfg)
        for group in self.opt.param_groups:
            group["lr"] = lr_at(self.step, self.total_steps, self.cfg)
        out = self.model(X, P, tau=tau, n_samples=self.loss_cfg.k, generator=g)
        lg = loss_graph_batch(out.G_hat, truth, self.loss_cfg, mask).mean()
        ls = loss_sim(out.H, out.G_hat)
        loss = total_loss(lg, ls, self.loss_cfg.alpha)
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.step += 1
        grads = [p.grad for p in self.model.parameters() if p.grad is not None]
        if not all(bool(torch.isfinite(gr).all()) for gr in grads):
            self.skips += 1
            log.warning("non-finite gradient at step %d (epoch %d); step skipped", self.step - 1, epoch)
            if self.skips >= self.cfg.max_skips:
                raise NumericalInstabilityError(
                    f"{self.skips} consecutive non-finite gradients, last at step {self.step - 1}, "
                    f"epoch {epoch}, loss {float(loss.detach())}"
                )
            return None
        self.skips = 0
        if self.cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.opt.step()
        return float(loss.detach())

    def validate(self) -> dict:
        out = {}
        if self.val is None:
            return out
        for key, priors in self.val.priors.items():
            name, rho = key.split("@")
            s, f = evaluate(self.model, self.val.Xs, self.val.dags, priors)
            pct = int(round(float(rho) * 100))
            prefix = "val" if name == "full" else "val_neg"
            out[f"{prefix}_shd@{pct}"] = s
            out[f"{prefix}_f1@{pct}"] = f
        return out

    def run_epoch(self) -> dict:
        e = self.epoch
        order = np.random.default_rng([TRAIN, self.cfg.seed, 3, e]).permutation(len(self.data))
        losses = []
        skipped = 0
        self.model.train()
        for lo in range(0, len(order), self.cfg.batch_size):
            loss = self.train_step(e, order[lo:lo + self.cfg.batch_size])
            if loss is None:
                skipped += 1
            else:
                losses.append(loss)
        rec = {"epoch": e, "mean_loss": float(np.mean(losses)) if losses else float("nan"),
               "skipped_steps": skipped}
        rec.update(self.validate())
        self.metrics.append(rec)
        self.epoch += 1
        return rec

    def fit(self, until_epoch: int | None = None):
        last = self.cfg.epochs if until_epoch is None else min(until_epoch, self.cfg.epochs)
        ckdir = Path(self.cfg.checkpoint_dir) if self.cfg.checkpoint_dir else None
        if ckdir:
            ckdir.mkdir(parents=True, exist_ok=True)
        while self.epoch < last:
            rec = self.run_epoch()
            log.info("epoch %d: %s", rec["epoch"], json.dumps(rec, sort_keys=True))
            if ckdir:
                save_checkpoint(ckdir / f"epoch_{rec['epoch']:03d}.ckpt", self.checkpoint())
                write_metrics(ckdir / "metrics.jsonl", self.metrics)
        return self.metrics


def write_metrics(path, metrics: list[dict]) -> None:
    Path(path).write_text("".join(json.dumps(m, sort_keys=True) + "\n" for m in metrics))


def train(data: TrainingSet, model_cfg: ModelConfig, sched: CurriculumSchedule, loss_cfg: LossConfig,
          cfg: TrainConfig, val: ValidationSet | None = None, resume=None) -> Trainer:
    """Train to cfg.epochs; with ``resume`` continue from a saved epoch checkpoint."""
    trainer = Trainer(data, model_cfg, sched, loss_cfg, cfg, val)
    if resume is not None:
        trainer.restore(load_checkpoint(resume, model_cfg.n_max))
    trainer.fit()
    return trainer
