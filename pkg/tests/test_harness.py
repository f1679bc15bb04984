import json
import math

import numpy as np
import pytest
import torch
import yaml
from oracles import has_cycle_dfs
from scipy.stats import norm

from kicd.cli import main
from kicd.container import DatasetReader
from kicd.errors import InvalidConfigError, InvalidInputError
from kicd.graph import Dag
from kicd.harness import (
    EvalReport,
    SweepSpec,
    abs_correlation,
    edge_range,
    ingest,
    make_prior,
    make_test_set,
    merge_cells,
    null_baseline,
    read_table,
    run_retention_sweep,
    score_model,
)
from kicd.harness.plots import plot_report
from kicd.knowledge import KnowledgePrior, write_prior_file
from kicd.model import KnowledgeInformedModel, ModelConfig
from kicd.seeding import EVAL, seed_domain
from kicd.training import Checkpoint, save_checkpoint

ALL_MODES = ("full_prior", "neg_only", "none", "ground_truth")


@pytest.fixture(scope="module")
def tiny_model():
    torch.manual_seed(0)
    return KnowledgeInformedModel(ModelConfig(n_max=8, d=8, L=2, heads=2, node_ids=True)).eval()


@pytest.fixture(scope="module")
def tiny_ckpt(tiny_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "tiny.ckpt"
    save_checkpoint(path, Checkpoint(tiny_model.cfg, tiny_model.state_dict()))
    return path


# sweep spec


def test_sweep_spec_validation():
    with pytest.raises(InvalidConfigError):
        SweepSpec(retention_grid=[1.5])
    with pytest.raises(InvalidConfigError):
        SweepSpec(trials=0)
    with pytest.raises(InvalidConfigError):
        SweepSpec(prior_modes=["bogus"])
    with pytest.raises(InvalidConfigError):
        SweepSpec(densities=["dense"])
    with pytest.raises(InvalidConfigError):
        SweepSpec.from_dict({"retention": [0]})
    s = SweepSpec(retention_grid=[0, 1], n_values=[5, "5-8"])
    assert SweepSpec.from_dict(s.to_dict()) == s


def test_edge_range():
    assert edge_range("er2", 6) == (12, 12)
    assert edge_range("er1-3", 5) == (5, 10)  # 15 capped at 10
    assert edge_range("er1-3", 8) == (8, 24)


def test_test_graphs_come_from_evaluation_domain():
    t = make_test_set("linear-gamma(1,1)", "5-8", "er1-3", 8, 50, seed=0)
    assert [d.n for d in t.dags] == [5, 6, 7, 8, 5, 6, 7, 8]
    assert all(seed_domain(s) == EVAL for s in t.seeds)
    assert all(abs(X.mean(0)).max() < 1e-9 for X in t.Xs)


def test_prior_modes():
    dag = Dag.from_edges(4, [(0, 1), (1, 2)])
    none = make_prior(dag, "none", 0.7, 1)
    assert none == KnowledgePrior.unknown(4)
    assert make_prior(dag, "full_prior", 0.0, 3) == none
    gt = make_prior(dag, "ground_truth", 0.0, 3)
    assert (gt.r == dag.adj).all()  # unmasked direct-edge prior, retention ignored
    neg = make_prior(dag, "neg_only", 1.0, 3)
    assert not (neg.r == 1).any() and (neg.r == 0).sum() > 4


# sweep


def test_sweep_cell_count_and_population(tiny_model):
    spec = SweepSpec(retention_grid=[0, 1], prior_modes=ALL_MODES, trials=20, n_values=["5-8"], samples=50)
    rep = run_retention_sweep(tiny_model, spec, seed=3)
    assert len(rep.cells) == 2 * len(ALL_MODES)
    for c in rep.cells:
        assert c["status"] == "ok" and c["trials"] == 20
        assert 0 <= c["mean_f1"] <= 1 and c["mean_shd"] >= 0
        assert c["std_f1"] >= 0 and c["std_shd"] >= 0


def test_row_count_over_mechanisms(tiny_model):
    spec = SweepSpec(retention_grid=[0, 0.5, 1], prior_modes=["full_prior", "neg_only"], trials=2,
                     test_mechanisms=["linear-gamma(1,1)", "mlp-uniform(-1,1)"], n_values=["5"], samples=30)
    rep = run_retention_sweep(tiny_model, spec, seed=0)
    assert len(rep.cells) == 3 * 2 * 2


def test_none_equals_full_at_zero(tiny_model):
    spec = SweepSpec(retention_grid=[0], prior_modes=["none", "full_prior"], trials=12, n_values=["5-8"],
                     samples=40, paired=True)
    rep = run_retention_sweep(tiny_model, spec, seed=5)
    a, b = rep.cell(prior_mode="none"), rep.cell(prior_mode="full_prior")
    for k in ("mean_f1", "mean_shd", "std_f1", "std_shd"):
        assert a[k] == b[k]
    t = make_test_set("linear-gamma(1,1)", "6", "er1-3", 6, 40, seed=1)
    assert score_model(tiny_model, t, "none", 0.0) == score_model(tiny_model, t, "full_prior", 0.0)


def test_paired_sweep_shares_graphs(tiny_model):
    spec = SweepSpec(retention_grid=[0, 1], prior_modes=["full_prior", "ground_truth"], trials=4,
                     n_values=["6"], samples=40, paired=True, baseline_threshold=0.3)
    rep = run_retention_sweep(tiny_model, spec, seed=2)
    # ground truth ignores retention, so with shared graphs both rows agree
    assert rep.cell(prior_mode="ground_truth", retention=0.0)["mean_f1"] == \
        rep.cell(prior_mode="ground_truth", retention=1.0)["mean_f1"]
    assert rep.cell(prior_mode="null_baseline")["trials"] == 4


def test_sweep_reproducible(tiny_model):
    spec = SweepSpec(retention_grid=[0, 0.5], prior_modes=["full_prior", "neg_only"], trials=5,
                     n_values=["5-8"], samples=40)
    a = run_retention_sweep(tiny_model, spec, seed=11).dumps()
    b = run_retention_sweep(tiny_model, spec, seed=11).dumps()
    c = run_retention_sweep(tiny_model, spec, seed=12).dumps()
    assert a == b and a != c


def test_failed_cells_are_marked(tiny_model):
    spec = SweepSpec(retention_grid=[0], prior_modes=["full_prior"], trials=2, n_values=["5", "9"], samples=30)
    rep = run_retention_sweep(tiny_model, spec, seed=0)
    ok, bad = rep.cell(n="5"), rep.cell(n="9")
    assert ok["status"] == "ok"
    assert bad["status"] == "failed" and "n_max" in bad["error"]
    assert rep.failed == [bad]


def test_report_roundtrip_and_merge(tiny_model, tmp_path):
    spec = SweepSpec(retention_grid=[0, 1], prior_modes=["full_prior"], trials=2, n_values=["5"], samples=30)
    rep = run_retention_sweep(tiny_model, spec, seed=0)
    path = rep.save(tmp_path / "r.json")
    again = EvalReport.load(path)
    assert again.dumps() == rep.dumps()
    assert json.loads(path.read_text())["schema_version"] == 1
    assert merge_cells(rep.cells[:1], rep.cells[1:]) == merge_cells(rep.cells[1:], rep.cells[:1])
    broken = dict(rep.cells[0], mean_f1=-1.0)
    with pytest.raises(InvalidInputError):
        merge_cells(rep.cells, [broken])
    d = rep.to_dict()
    d["schema_version"] = 99
    with pytest.raises(InvalidInputError):
        EvalReport.from_dict(d)


def test_plots_are_pure_function_of_report(tiny_model, tmp_path):
    spec = SweepSpec(retention_grid=[0, 1], prior_modes=["full_prior", "neg_only"], trials=2,
                     test_mechanisms=["linear-gamma(1,1)", "mlp-uniform(-1,1)"], n_values=["5"], samples=30)
    rep = run_retention_sweep(tiny_model, spec, seed=0)
    rep.save(tmp_path / "r.json")
    a = plot_report(EvalReport.load(tmp_path / "r.json"), tmp_path / "a")
    b = plot_report(EvalReport.load(tmp_path / "r.json"), tmp_path / "b")
    assert len(a) == 2 * 2  # (mechanism, metric) pairs
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert all(p.read_bytes()[:4] == b"\x89PNG" for p in a)


# null baseline


def test_baseline_empty_on_independent_noise():
    # under independence sqrt(S) * r is asymptotically N(0, 1); union bound over the 45 pairs
    s, n, thr = 1000, 10, 0.5
    bound = n * (n - 1) / 2 * 2 * norm.sf(thr * math.sqrt(s))
    assert bound < 0.01
    rng = np.random.default_rng(0)
    empty = [null_baseline(rng.standard_normal((s, n)), thr).num_edges == 0 for _ in range(200)]
    assert all(empty)


def test_baseline_perfectly_correlated_pair():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(500)
    X = np.column_stack([x, 2 * x + 1, rng.standard_normal(500)])
    g = null_baseline(X, 0.5)
    assert g.adj[0, 1] + g.adj[1, 0] == 1
    assert g.num_edges == 1


def test_baseline_constant_columns():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(100), rng.standard_normal(100), np.zeros(100)])
    with np.errstate(all="raise"):
        c = abs_correlation(X)
        g = null_baseline(X, 0.0)
    assert c[0].sum() == 0 and c[:, 2].sum() == 0
    assert g.adj[0].sum() + g.adj[:, 0].sum() + g.adj[2].sum() + g.adj[:, 2].sum() == 0


def test_baseline_acyclic_fuzz():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = int(rng.integers(2, 9))
        mix = rng.standard_normal((n, n))
        X = rng.standard_normal((50, n)) @ mix
        if rng.random() < 0.3:  # exercise variance ties
            X[:, 1] = X[:, 0]
        g = null_baseline(X, float(rng.uniform(0, 0.9)))
        assert not has_cycle_dfs(g.adj)


# ingest


def _write_table(path, X, header=None):
    header = header or [f"v{i}" for i in range(X.shape[1])]
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(f"{v:.6g}" for v in row) for row in X) + "\n")


def test_ingest_sachs_like_shape(tmp_path):
    X = np.random.default_rng(0).lognormal(size=(418, 11))
    _write_table(tmp_path / "t.csv", X)
    rec = ingest(tmp_path / "t.csv", tmp_path / "out.kicd")
    assert rec.X.shape == (418, 11)
    back = DatasetReader(tmp_path / "out.kicd")[0]
    assert back.X.shape == (418, 11) and back.dag is None and back.prior is None
    np.testing.assert_allclose(back.X, X, rtol=1e-5)


def test_ingest_with_prior_and_truth(tmp_path):
    X = np.random.default_rng(0).standard_normal((30, 3))
    _write_table(tmp_path / "t.csv", X)
    r = np.array([[0, 1, -1], [0, 0, -1], [-1, -1, 0]], dtype=np.int8)
    write_prior_file(KnowledgePrior(r), tmp_path / "p.txt")
    write_prior_file(KnowledgePrior(np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=np.int8)), tmp_path / "g.txt")
    rec = ingest(tmp_path / "t.csv", tmp_path / "o.kicd", prior=tmp_path / "p.txt", truth=tmp_path / "g.txt")
    back = DatasetReader(tmp_path / "o.kicd")[0]
    assert (back.prior.r == r).all()
    assert back.dag == rec.dag and back.dag.num_edges == 2


def test_ingest_errors(tmp_path):
    X = np.random.default_rng(0).standard_normal((30, 3))
    _write_table(tmp_path / "t.csv", X)
    write_prior_file(KnowledgePrior.unknown(4), tmp_path / "p4.txt")
    with pytest.raises(InvalidInputError, match="4 variables"):
        ingest(tmp_path / "t.csv", tmp_path / "o.kicd", prior=tmp_path / "p4.txt")
    (tmp_path / "bad.csv").write_text("a,b\n1,x\n")
    with pytest.raises(InvalidInputError, match="non-numeric"):
        read_table(tmp_path / "bad.csv")
    (tmp_path / "ragged.csv").write_text("a,b\n1,2\n3\n")
    with pytest.raises(InvalidInputError):
        read_table(tmp_path / "ragged.csv")
    with pytest.raises(InvalidInputError, match="no such file"):
        read_table(tmp_path / "missing.csv")


# cli


def test_cli_unknown_subcommand(capsys):
    assert main(["frobnicate"]) != 0
    assert "invalid choice" in capsys.readouterr().err


def test_cli_missing_file(tmp_path, capsys):
    assert main(["gen-data", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) != 0
    assert "not found" in capsys.readouterr().err
    assert main(["ingest", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) != 0


def test_cli_ingest(tmp_path, capsys):
    X = np.random.default_rng(0).standard_normal((418, 11))
    _write_table(tmp_path / "sachs.csv", X)
    assert main(["ingest", str(tmp_path / "sachs.csv"), "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["S"], out["N"]) == (418, 11)
    assert DatasetReader(tmp_path / "sachs.kicd")[0].X.shape == (418, 11)


def test_cli_gen_data(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"corpus": {"desk": {"graphs": 6, "n_range": [5, 6], "samples_per_graph": 20}}}))
    assert main(["gen-data", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "c.kicd")]) == 0
    recs = list(DatasetReader(tmp_path / "c.kicd"))
    assert len(recs) == 6 and all(r.X.shape[0] == 20 and r.dag is not None for r in recs)


def test_cli_sweep_and_eval(tiny_ckpt, tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({"sweep": {"n_values": ["5"], "samples": 30}}))
    args = ["sweep", "--config", str(cfg), "--checkpoint", str(tiny_ckpt), "--retention", "0,1",
            "--prior-mode", "full_prior,none", "--trials", "3", "--out", str(tmp_path / "sw")]
    assert main(args) == 0
    rep = EvalReport.load(tmp_path / "sw" / "report.json")
    assert len(rep.cells) == 4
    assert len(list((tmp_path / "sw").glob("*.png"))) == 2
    args = ["eval", "--config", str(cfg), "--checkpoint", str(tiny_ckpt), "--prior-mode", "none,full_prior",
            "--trials", "6", "--out", str(tmp_path / "ev")]
    assert main(args) == 0
    rep = EvalReport.load(tmp_path / "ev" / "report.json")
    assert rep.cell(prior_mode="none")["mean_f1"] == rep.cell(prior_mode="full_prior")["mean_f1"]


def test_cli_partial_failure_exits_nonzero(tiny_ckpt, tmp_path, capsys):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({"sweep": {"n_values": ["5", "12"], "samples": 30}}))
    code = main(["sweep", "--config", str(cfg), "--checkpoint", str(tiny_ckpt), "--retention", "0",
                 "--prior-mode", "full_prior", "--trials", "2", "--out", str(tmp_path / "sw")])
    assert code != 0
    assert "FAILED cell" in capsys.readouterr().err
    rep = EvalReport.load(tmp_path / "sw" / "report.json")
    assert [c["status"] for c in sorted(rep.cells, key=lambda c: c["n"])] == ["failed", "ok"]


def test_cli_train_and_resume(tmp_path):
    cfg = {
        "corpus": {"desk": {"graphs": 6, "n_range": [3, 4], "samples_per_graph": 16}},
        "model": {"n_max": 4, "d": 8, "L": 2, "heads": 2},
        "train": {"epochs": 2, "batch_size": 3, "val_graphs": 2, "val_retention": [0.0, 1.0]},
        "loss": {"k": 2},
    }
    path = tmp_path / "t.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["train", "--config", str(path), "--seed", "4", "--out", str(tmp_path / "a")]) == 0
    metrics = [json.loads(line) for line in (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()]
    assert [m["epoch"] for m in metrics] == [0, 1] and "val_f1@100" in metrics[1]
    assert main(["train", "--config", str(path), "--seed", "4", "--out", str(tmp_path / "b"),
                 "--checkpoint", str(tmp_path / "a" / "epoch_000.ckpt")]) == 0
    assert (tmp_path / "a" / "epoch_001.ckpt").read_bytes() == (tmp_path / "b" / "epoch_001.ckpt").read_bytes()
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**cfg, "model": {"n_max": 4, "d": 8, "L": 3}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "c")]) != 0
