"""Synthetic observational data from linear and MLP structural causal models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, ResourceBudgetError
from .graph import Dag, sample_er_dag, topological_order
from .seeding import TRAIN, derive_seed

log = logging.getLogger(__name__)

LINEAR, MLP, MLP_OOD = "linear", "mlp", "mlp_ood"

UNIFORM = "uniform(-1,1)"
GAMMA = "gamma(1,1)"
GAUSSIAN = "gaussian-gamma-scale"
GAMMA_OOD = "gamma(2.5,2.5)"
LATENTS = (UNIFORM, GAMMA, GAUSSIAN, GAMMA_OOD)

DEFAULT_BUDGET_BYTES = 16 * 2**30


@dataclass(frozen=True)
class MechanismConfig:
    kind: str
    weight_range: tuple[float, float] | None = None
    noise_gamma: tuple[float, float] | None = None
    latent_dist: str | None = None
    hidden_width: int = 32
    depth: int = 3
    activation: str = "leaky_relu"
    init_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind == LINEAR:
            if self.weight_range is None or tuple(self.weight_range) != (-10.0, 10.0):
                raise InvalidConfigError("linear mechanism uses weights in [-10, 10]")
            if self.noise_gamma is None or min(self.noise_gamma) <= 0:
                raise InvalidConfigError(f"invalid noise Gamma parameters {self.noise_gamma}")
        elif self.kind == MLP:
            if (self.depth, self.hidden_width, self.activation) != (3, 32, "leaky_relu"):
                raise InvalidConfigError("in-distribution MLP is 3 layers, width 32, leaky-ReLU")
            if self.latent_dist not in (UNIFORM, GAMMA, GAUSSIAN):
                raise InvalidConfigError(f"unknown latent distribution {self.latent_dist!r}")
        elif self.kind == MLP_OOD:
            if (self.depth, self.activation, self.latent_dist) != (5, "sigmoid", GAMMA_OOD):
                raise InvalidConfigError("OOD MLP is 5 layers, sigmoid, Gamma(2.5, 2.5) latent")
            if tuple(self.init_range) != (-50.0, 50.0):
                raise InvalidConfigError("OOD MLP weights are initialised in [-50, 50]")
        else:
            raise InvalidConfigError(f"unknown mechanism kind {self.kind!r}")

    @classmethod
    def linear(cls, noise_gamma=(1.0, 1.0)) -> "MechanismConfig":
        return cls(LINEAR, weight_range=(-10.0, 10.0),
                   noise_gamma=tuple(float(v) for v in noise_gamma))

    @classmethod
    def mlp(cls, latent_dist=UNIFORM) -> "MechanismConfig":
        return cls(MLP, latent_dist=latent_dist)

    @classmethod
    def mlp_ood(cls) -> "MechanismConfig":
        return cls(MLP_OOD, latent_dist=GAMMA_OOD, depth=5,
                   activation="sigmoid", init_range=(-50.0, 50.0))

    @property
    def tag(self) -> str:
        if self.kind == LINEAR:
            shape, scale = self.noise_gamma
            return f"linear-gamma({shape:g},{scale:g})"
        if self.kind == MLP:
            return f"mlp-{self.latent_dist}"
        return "mlp-ood"

    @classmethod
    def from_tag(cls, tag: str) -> "MechanismConfig":
        if tag.startswith("linear-gamma(") and tag.endswith(")"):
            shape, scale = tag[len("linear-gamma("):-1].split(",")
            return cls.linear((float(shape), float(scale)))
        if tag == "mlp-ood":
            return cls.mlp_ood()
        if tag.startswith("mlp-"):
            return cls.mlp(tag[len("mlp-"):])
        raise InvalidConfigError(f"unknown mechanism tag {tag!r}")


@dataclass(eq=False)
class ScmDataset:
    X: np.ndarray
    dag: Dag
    mechanism: MechanismConfig
    seed: int
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != self.dag.n:
            raise InvalidInputError(f"X has shape {self.X.shape}, expected S x {self.dag.n}")
        if not np.isfinite(self.X).all():
            raise InvalidInputError("generated observations contain non-finite values")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


def _check_samples(s: int):
    if s < 1:
        raise InvalidConfigError(f"sample count must be >= 1, got {s}")


def gen_linear(dag: Dag, s: int, noise_gamma=(1.0, 1.0), seed=None) -> ScmDataset:
    """Linear SCM with heteroscedastic Gaussian noise.

    X_i = sum_j w_ji X_j + eps_i, w ~ U(-10, 10) per edge, eps_i ~ N(0, sigma_i^2)
    and sigma_i ~ Gamma(shape, scale) drawn once per node.
    """
    _check_samples(s)
    mech = MechanismConfig.linear(noise_gamma)
    rng = np.random.default_rng(seed)
    n = dag.n
    lo, hi = mech.weight_range
    W = rng.uniform(lo, hi, size=(n, n)) * dag.adj
    sigma = rng.gamma(mech.noise_gamma[0], mech.noise_gamma[1], size=n)
    X = np.zeros((s, n))
    noise = rng.standard_normal((s, n)) * sigma
    for i in topological_order(dag):
        X[:, i] = X @ W[:, i] + noise[:, i]
    return ScmDataset(X, dag, mech, seed, {"weights": W, "sigma": sigma})


def _leaky_relu(x):
    return np.where(x > 0, x, 0.01 * x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_ACTIVATIONS = {"leaky_relu": _leaky_relu, "sigmoid": _sigmoid}


@dataclass
class NodeNetwork:
    """Per-node MLP: layer 1 sees the raw input, later layers see act(previous output)."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str

    def __call__(self, parents: np.ndarray, z: np.ndarray) -> np.ndarray:
        h = np.concatenate([parents, z[:, None]], axis=1)
        act = _ACTIVATIONS[self.activation]
        for k, (W, b) in enumerate(self.layers):
            if k:
                h = act(h)
            h = h @ W + b
        return h[:, 0]

    @classmethod
    def init(cls, n_inputs: int, mech: MechanismConfig, rng) -> "NodeNetwork":
        widths = [n_inputs] + [mech.hidden_width] * (mech.depth - 1) + [1]
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if mech.init_range is not None:
                lo, hi = mech.init_range
            else:
                hi = 1.0 / np.sqrt(fan_in)
                lo = -hi
            layers.append((rng.uniform(lo, hi, size=(fan_in, fan_out)),
                           rng.uniform(lo, hi, size=fan_out)))
        return cls(layers, mech.activation)


def _draw_latent(kind: str, s: int, rng, scale=None) -> np.ndarray:
    if kind == UNIFORM:
        return rng.uniform(-1.0, 1.0, size=s)
    if kind == GAMMA:
        return rng.gamma(1.0, 1.0, size=s)
    if kind == GAUSSIAN:
        return rng.standard_normal(s) * scale
    if kind == GAMMA_OOD:
        return rng.gamma(2.5, 2.5, size=s)
    raise InvalidConfigError(f"unknown latent distribution {kind!r}")


def _gen_network_scm(dag: Dag, s: int, mech: MechanismConfig, seed) -> ScmDataset:
    _check_samples(s)
    rng = np.random.default_rng(seed)
    n = dag.n
    parents = [np.flatnonzero(dag.adj[:, i]) for i in range(n)]
    nets = [NodeNetwork.init(len(parents[i]) + 1, mech, rng) for i in range(n)]
    # the gaussian latent's scale is drawn once per node, like the linear noise scale
    scales = rng.gamma(1.0, 1.0, size=n) if mech.latent_dist == GAUSSIAN else np.ones(n)
    X = np.zeros((s, n))
    for i in topological_order(dag):
        z = _draw_latent(mech.latent_dist, s, rng, scales[i])
        X[:, i] = nets[i](X[:, parents[i]], z)
    return ScmDataset(X, dag, mech, seed, {"networks": nets, "latent_scale": scales})


def gen_mlp(dag: Dag, s: int, latent_dist: str = UNIFORM, seed=None) -> ScmDataset:
    """Nonlinear SCM, X_i = MLP_i(parents(i) ++ z_i) with a 3-layer width-32 network per node."""
    if latent_dist not in (UNIFORM, GAMMA, GAUSSIAN):
        raise InvalidConfigError(f"unknown latent distribution {latent_dist!r}")
    return _gen_network_scm(dag, s, MechanismConfig.mlp(latent_dist), seed)


def gen_ood(dag: Dag, s: int, seed=None) -> ScmDataset:
    """Shifted mechanism: 5 sigmoid layers, weights U(-50, 50), Gamma(2.5, 2.5) latent."""
    return _gen_network_scm(dag, s, MechanismConfig.mlp_ood(), seed)


def generate(dag: Dag, s: int, mech: MechanismConfig, seed) -> ScmDataset:
    if mech.kind == LINEAR:
        return gen_linear(dag, s, mech.noise_gamma, seed)
    return _gen_network_scm(dag, s, mech, seed)


def standardize(X: np.ndarray) -> np.ndarray:
    """Per-column z-score (sample std); constant columns become zeros."""
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise InvalidInputError("cannot standardize non-finite observations")
    mean = X.mean(axis=0)
    centered = X - mean
    if X.shape[0] < 2:
        return np.zeros_like(X)
    std = centered.std(axis=0, ddof=1)
    const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    out = centered / np.where(const, 1.0, std)
    out[:, const] = 0.0
    return out


@dataclass(frozen=True)
class CorpusCell:
    n: int
    edge_range: tuple[int, int]
    mechanism: MechanismConfig
    graph_count: int


@dataclass(frozen=True)
class CorpusSpec:
    cells: tuple[CorpusCell, ...]
    samples_per_graph: int = 200

    @property
    def total_graphs(self) -> int:
        return sum(c.graph_count for c in self.cells)

    def payload_bytes(self) -> int:
        return sum(c.graph_count * c.n for c in self.cells) * self.samples_per_graph * 4

    def to_dict(self) -> dict:
        return {
            "samples_per_graph": self.samples_per_graph,
            "cells": [
                {"n": c.n, "edge_range": list(c.edge_range), "mechanism": c.mechanism.tag,
                 "graph_count": c.graph_count}
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        cells = tuple(
            CorpusCell(int(c["n"]), tuple(int(v) for v in c["edge_range"]),
                       MechanismConfig.from_tag(c["mechanism"]), int(c["graph_count"]))
            for c in d["cells"]
        )
        return cls(cells, int(d.get("samples_per_graph", 200)))


def default_corpus_spec(samples_per_graph: int = 200) -> CorpusSpec:
    """The full 300,000-graph mixture: N in {20, 30, 40}, ER(1)-ER(3) edge counts."""
    mechs = [
        (MechanismConfig.linear((2.5, 2.5)), 20_000),
        (MechanismConfig.linear((1.0, 1.0)), 30_000),
        (MechanismConfig.mlp(UNIFORM), 16_667),
        (MechanismConfig.mlp(GAMMA), 16_667),
        (MechanismConfig.mlp(GAUSSIAN), 16_667),
    ]
    cells = tuple(
        CorpusCell(n, (n, 3 * n), mech, count)
        for n in (20, 30, 40)
        for mech, count in mechs
    )
    return CorpusSpec(cells, samples_per_graph)


def desk_corpus_spec(graphs: int = 2000, n_range=(5, 8), samples_per_graph: int = 200,
                     mechanisms=None) -> CorpusSpec:
    """Small linear corpus with the same 2:3 split between the two noise families.

    Edge counts follow ER(1)-ER(3), i.e. [n, 3n], capped at n(n-1)/2.
    """
    if mechanisms is None:
        mechanisms = [(MechanismConfig.linear((2.5, 2.5)), 2), (MechanismConfig.linear((1.0, 1.0)), 3)]
    sizes = list(range(n_range[0], n_range[1] + 1))
    weights = np.array([w for _, w in mechanisms], dtype=float)
    cells = []
    per_size = np.full(len(sizes), graphs // len(sizes))
    per_size[: graphs % len(sizes)] += 1
    for n, count in zip(sizes, per_size):
        split = np.floor(count * weights / weights.sum()).astype(int)
        split[-1] += count - split.sum()
        for (mech, _), c in zip(mechanisms, split):
            cells.append(CorpusCell(n, (n, min(3 * n, n * (n - 1) // 2)), mech, int(c)))
    return CorpusSpec(tuple(cells), samples_per_graph)


def record_seeds(master_seed: int, cell_index: int, record_index: int, domain=TRAIN):
    graph_seed = derive_seed(domain, master_seed, cell_index, record_index, 0)
    data_seed = derive_seed(domain, master_seed, cell_index, record_index, 1)
    return graph_seed, data_seed


def generate_record(spec: CorpusSpec, master_seed: int, cell_index: int, record_index: int,
                    domain=TRAIN) -> ScmDataset:
    cell = spec.cells[cell_index]
    graph_seed, data_seed = record_seeds(master_seed, cell_index, record_index, domain)
    dag = sample_er_dag(cell.n, cell.edge_range, graph_seed)
    return generate(dag, spec.samples_per_graph, cell.mechanism, data_seed)


def build_corpus(spec: CorpusSpec, seed: int, budget_bytes: int = DEFAULT_BUDGET_BYTES,
                 domain=TRAIN) -> Iterator[tuple[ScmDataset, Dag]]:
    """Stream every record of ``spec``; any record can be regenerated alone via generate_record."""
    for cell in spec.cells:
        max_edges = cell.n * (cell.n - 1) // 2
        if cell.edge_range[1] > max_edges or cell.graph_count < 0:
            raise InvalidConfigError(f"invalid corpus cell {cell}")
    need = spec.payload_bytes()
    if need > budget_bytes:
        raise ResourceBudgetError(
            f"corpus needs {need / 2**30:.2f} GiB of observations, budget is "
            f"{budget_bytes / 2**30:.2f} GiB"
        )
    log.info("building corpus: %d graphs, %.1f MiB", spec.total_graphs, need / 2**20)
    for ci, cell in enumerate(spec.cells):
        for ri in range(cell.graph_count):
            ds = generate_record(spec, seed, ci, ri, domain)
            yield ds, ds.dag
