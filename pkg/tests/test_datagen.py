import hashlib
import struct

import numpy as np
import pytest

from kicd.container import DatasetReader, DatasetWriter, Record, decode_record, encode_record
from kicd.datagen import (
    GAMMA,
    GAUSSIAN,
    UNIFORM,
    CorpusCell,
    CorpusSpec,
    MechanismConfig,
    build_corpus,
    default_corpus_spec,
    desk_corpus_spec,
    gen_linear,
    gen_mlp,
    gen_ood,
    generate_record,
    standardize,
)
from kicd.errors import InvalidConfigError, InvalidInputError, ResourceBudgetError
from kicd.graph import Dag, is_acyclic, sample_er_dag
from kicd.knowledge import KnowledgePrior


class TestLinear:
    def test_isolated_node_variance(self):
        ds = gen_linear(Dag.empty(1), 100_000, (2.5, 2.5), seed=0)
        sigma = ds.params["sigma"][0]
        assert abs(ds.X[:, 0].var() / sigma**2 - 1) < 0.05

    def test_two_node_variance_propagation(self):
        ds = gen_linear(Dag.from_edges(2, [(0, 1)]), 100_000, (1, 1), seed=3)
        w = ds.params["weights"][0, 1]
        s_a, s_b = ds.params["sigma"]
        expected = w**2 * s_a**2 + s_b**2
        assert abs(ds.X[:, 1].var() / expected - 1) < 0.05

    def test_weights_bounded_and_on_edges_only(self):
        dag = sample_er_dag(20, (20, 60), 0)
        W = gen_linear(dag, 10, seed=1).params["weights"]
        assert np.all(np.abs(W) <= 10)
        assert np.all(W[dag.adj == 0] == 0)
        assert np.all(W[dag.adj == 1] != 0)

    def test_closed_form_covariance(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            dag = sample_er_dag(3, (2, 3), seed)
            ds = gen_linear(dag, 200_000, (2.5, 2.5), seed=int(rng.integers(1 << 30)))
            W, sigma = ds.params["weights"], ds.params["sigma"]
            inv = np.linalg.inv(np.eye(3) - W)
            cov = inv.T @ np.diag(sigma**2) @ inv
            emp = np.cov(ds.X, rowvar=False)
            d = np.sqrt(np.diag(cov))
            assert np.allclose(np.diag(emp) / np.diag(cov), 1, atol=0.03)
            assert np.allclose(emp / np.outer(d, d), cov / np.outer(d, d), atol=0.02)

    def test_bad_gamma(self):
        with pytest.raises(InvalidConfigError):
            gen_linear(Dag.empty(2), 10, (0, 1), seed=0)

    def test_row_order_does_not_change_moments(self):
        ds = gen_linear(sample_er_dag(6, (6, 12), 1), 5000, seed=2)
        for shuffle_seed in (0, 1):
            perm = np.random.default_rng(shuffle_seed).permutation(5000)
            shuffled = ds.X[perm]
            assert np.allclose(shuffled.mean(0), ds.X.mean(0), rtol=1e-9, atol=1e-9)
            assert np.allclose(np.cov(shuffled, rowvar=False), np.cov(ds.X, rowvar=False), rtol=1e-9)


class TestMlp:
    def test_parent_free_node(self):
        a = gen_mlp(Dag.empty(1), 50, UNIFORM, seed=1)
        b = gen_mlp(Dag.empty(1), 50, UNIFORM, seed=2)
        z = np.linspace(-1, 1, 7)
        fa = a.params["networks"][0](np.zeros((7, 0)), z)
        fb = b.params["networks"][0](np.zeros((7, 0)), z)
        assert not np.allclose(fa, fb)

    def test_shapes(self):
        dag = Dag.from_edges(3, [(0, 2), (1, 2)])
        net = gen_mlp(dag, 5, GAMMA, seed=0).params["networks"][2]
        assert [W.shape for W, _ in net.layers] == [(3, 32), (32, 32), (32, 1)]
        assert [b.shape for _, b in net.layers] == [(32,), (32,), (1,)]
        assert net.activation == "leaky_relu"

    def test_frozen_inputs_replay(self):
        dag = Dag.from_edges(3, [(0, 2), (1, 2)])
        parents = np.full((4, 2), 0.7)
        z = np.full(4, -0.3)
        outs = [gen_mlp(dag, 5, GAUSSIAN, seed=11).params["networks"][2](parents, z) for _ in range(2)]
        assert outs[0].tobytes() == outs[1].tobytes()
        assert np.all(outs[0] == outs[0][0])

    def test_unknown_latent(self):
        with pytest.raises(InvalidConfigError):
            gen_mlp(Dag.empty(2), 10, "cauchy", seed=0)

    @pytest.mark.parametrize("latent", [UNIFORM, GAMMA, GAUSSIAN])
    def test_finite(self, latent):
        ds = gen_mlp(sample_er_dag(20, (20, 60), 0), 500, latent, seed=1)
        assert np.isfinite(ds.X).all() and ds.X.shape == (500, 20)

    def test_layer_recursion(self):
        # layer 1 on the raw concatenation, then leaky-ReLU before layers 2 and 3
        ds = gen_mlp(Dag.from_edges(2, [(0, 1)]), 3, UNIFORM, seed=4)
        net = ds.params["networks"][1]
        x = np.array([[0.5], [-2.0]])
        z = np.array([0.1, -0.4])
        h = np.c_[x, z]
        (W1, b1), (W2, b2), (W3, b3) = net.layers
        lr = lambda v: np.maximum(v, 0) + 0.01 * np.minimum(v, 0)
        out = lr(lr(h @ W1 + b1) @ W2 + b2) @ W3 + b3
        assert np.allclose(net(x, z), out[:, 0])


class TestOod:
    def test_weights_in_range_and_depth(self):
        ds = gen_ood(sample_er_dag(10, (10, 30), 0), 20, seed=0)
        for net in ds.params["networks"]:
            assert len(net.layers) == 5
            assert net.activation == "sigmoid"
            for W, b in net.layers:
                assert np.all(np.abs(W) <= 50) and np.all(np.abs(b) <= 50)

    def test_finite_and_bounded(self):
        ds = gen_ood(sample_er_dag(20, (20, 40), 5), 10_000, seed=6)
        assert np.isfinite(ds.X).all()
        for i, net in enumerate(ds.params["networks"]):
            W, b = net.layers[-1]
            # the last layer sees sigmoid outputs in (0, 1)
            assert np.all(np.abs(ds.X[:, i]) <= np.abs(W).sum() + np.abs(b).sum())

    def test_config_invariants(self):
        with pytest.raises(InvalidConfigError):
            MechanismConfig("mlp_ood", latent_dist="gamma(2.5,2.5)", depth=3,
                            activation="sigmoid", init_range=(-50.0, 50.0))


class TestMechanismConfig:
    @pytest.mark.parametrize("mech", [
        MechanismConfig.linear((2.5, 2.5)), MechanismConfig.linear((1, 1)),
        MechanismConfig.mlp(UNIFORM), MechanismConfig.mlp(GAMMA), MechanismConfig.mlp(GAUSSIAN),
        MechanismConfig.mlp_ood(),
    ])
    def test_tag_roundtrip(self, mech):
        assert MechanismConfig.from_tag(mech.tag) == mech

    def test_linear_weight_range_fixed(self):
        with pytest.raises(InvalidConfigError):
            MechanismConfig("linear", weight_range=(-1.0, 1.0), noise_gamma=(1, 1))


class TestStandardize:
    def test_idempotent(self):
        Z = standardize(np.random.default_rng(0).normal(3, 5, size=(100, 4)))
        assert np.allclose(standardize(Z), Z, atol=1e-12)

    def test_constant_column(self):
        X = np.c_[np.full(10, 4.2), np.arange(10.0)]
        assert np.all(standardize(X)[:, 0] == 0)

    def test_moments(self):
        X = np.random.default_rng(1).gamma(2, 3, size=(200, 6)) * [1, 10, 100, 1e3, 1e4, 1e5]
        Z = standardize(X)
        assert np.all(np.abs(Z.mean(0)) < 1e-10)
        assert np.all(np.abs(Z.std(0, ddof=1) - 1) < 1e-10)

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            standardize(np.array([[1.0, np.nan], [2.0, 3.0]]))


class TestCorpus:
    def test_default_spec_table(self):
        spec = default_corpus_spec()
        assert spec.total_graphs == 3 * (20_000 + 30_000 + 3 * 16_667)
        cell = next(c for c in spec.cells if c.n == 20 and c.mechanism == MechanismConfig.linear((1, 1)))
        assert cell.graph_count == 30_000 and cell.edge_range == (20, 60)
        assert {c.edge_range for c in spec.cells} == {(20, 60), (30, 90), (40, 120)}

    def test_default_cell_record_count(self):
        spec = default_corpus_spec(samples_per_graph=1)
        cell = next(c for c in spec.cells if c.n == 20 and c.mechanism == MechanismConfig.linear((1, 1)))
        only = CorpusSpec((cell,), samples_per_graph=1)
        assert sum(1 for _ in build_corpus(only, seed=0)) == 30_000

    def test_desk_scale(self):
        spec = CorpusSpec((CorpusCell(6, (6, 15), MechanismConfig.linear(), 2000),), 20)
        count = 0
        for ds, dag in build_corpus(spec, seed=0):
            assert is_acyclic(dag.adj) and 6 <= dag.num_edges <= 18
            assert ds.X.shape == (20, 6)
            count += 1
        assert count == 2000

    def test_desk_spec_shape(self):
        spec = desk_corpus_spec(2000, (5, 8), 200)
        assert spec.total_graphs == 2000
        assert {c.n for c in spec.cells} == {5, 6, 7, 8}
        assert all(c.edge_range == (c.n, min(3 * c.n, c.n * (c.n - 1) // 2)) for c in spec.cells)
        assert all(c.mechanism.kind == "linear" for c in spec.cells)

    def test_zero_graph_cell(self):
        spec = CorpusSpec((CorpusCell(5, (0, 3), MechanismConfig.linear(), 0),), 10)
        assert list(build_corpus(spec, seed=0)) == []

    def test_budget(self):
        with pytest.raises(ResourceBudgetError):
            next(build_corpus(default_corpus_spec(), seed=0, budget_bytes=2**30))

    def test_record_regenerable(self):
        spec = desk_corpus_spec(40, (5, 6), 30)
        records = list(build_corpus(spec, seed=9))
        k = 0
        for ci, cell in enumerate(spec.cells):
            for ri in range(cell.graph_count):
                again = generate_record(spec, 9, ci, ri)
                assert again.X.tobytes() == records[k][0].X.tobytes()
                assert again.dag == records[k][1]
                k += 1

    def test_spec_dict_roundtrip(self):
        spec = desk_corpus_spec(100)
        assert CorpusSpec.from_dict(spec.to_dict()) == spec


class TestContainer:
    def record(self):
        return Record(X=np.array([[1.0, -2.0], [0.5, 3.25]]), dag=Dag.from_edges(2, [(0, 1)]),
                      mechanism="linear-gamma(1,1)", seed=7,
                      prior=KnowledgePrior(np.array([[0, 1], [0, 0]])))

    def test_documented_layout(self):
        header = (b'{"dag":{"edges":[[0,1]],"n":2},"mechanism":"linear-gamma(1,1)","n":2,'
                  b'"prior":[[0,1],[0,0]],"s":2,"seed":7}')
        expected = (b"KICD" + struct.pack("<II", 1, len(header)) + header
                    + struct.pack("<4f", 1.0, -2.0, 0.5, 3.25))
        assert encode_record(self.record()) == expected

    def test_golden_checksum(self):
        digest = hashlib.sha256(encode_record(self.record())).hexdigest()
        assert digest == "30fed84ec887165b6492cb50d1a9cef401c111795336368f89c160092e7c71f3"

    def test_roundtrip_and_index(self, tmp_path):
        path = tmp_path / "data.kicd"
        w = DatasetWriter(path)
        recs = [self.record(), Record(np.zeros((3, 4)), None, "external", 0)]
        assert [w.append(r) for r in recs] == [0, 1]
        # reopening appends after existing records
        assert DatasetWriter(path).append(recs[0]) == 2
        reader = DatasetReader(path)
        assert len(reader) == 3
        lines = (tmp_path / "data.kicd.idx").read_text().splitlines()
        assert lines[0] == "0 0"
        assert int(lines[1].split()[1]) == len(encode_record(recs[0]))
        back = reader[1]
        assert back.dag is None and back.prior is None and back.X.shape == (3, 4)
        first = reader[2]
        assert np.array_equal(first.X, recs[0].X) and first.dag == recs[0].dag
        assert np.array_equal(first.prior.r, recs[0].prior.r)

    def test_bad_magic(self):
        with pytest.raises(InvalidInputError):
            decode_record(b"XXXX" + bytes(8))
