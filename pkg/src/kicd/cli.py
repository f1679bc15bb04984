"""Command-line front end: gen-data, train, eval, sweep, ingest."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .errors import KicdError

log = logging.getLogger("kicd")


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise KicdError(f"{p}: top level must be a mapping")
    return data


def corpus_spec(cfg: dict):
    from .datagen import CorpusSpec, desk_corpus_spec

    if "desk" in cfg:
        d = dict(cfg["desk"])
        if "n_range" in d:
            d["n_range"] = tuple(d["n_range"])
        return desk_corpus_spec(**d)
    if "cells" in cfg:
        return CorpusSpec.from_dict(cfg)
    raise KicdError("corpus config needs either a 'desk' or a 'cells' section")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()] if text else None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()] if text else None


def cmd_gen_data(args) -> int:
    from .container import DatasetWriter, Record
    from .datagen import build_corpus

    cfg = load_config(args.config)
    spec = corpus_spec(cfg.get("corpus", cfg))
    out = Path(args.out)
    if out.is_dir():
        out = out / "corpus.kicd"
    out.parent.mkdir(parents=True, exist_ok=True)
    for p in (out, out.with_name(out.name + ".idx")):
        p.unlink(missing_ok=True)
    writer = DatasetWriter(out)
    for ds, dag in build_corpus(spec, args.seed):
        writer.append(Record(ds.X, dag, ds.mechanism.tag, ds.seed))
    print(f"wrote {len(writer)} records to {out}")
    return 0


def build_trainer(cfg: dict, seed: int, out: Path):
    from .container import DatasetReader
    from .datagen import build_corpus
    from .model import ModelConfig
    from .training import CurriculumSchedule, LossConfig, TrainConfig, Trainer, TrainingSet, validation_set

    mcfg = ModelConfig(**cfg.get("model", {"n_max": 8}))
    tdict = dict(cfg.get("train", {}))
    tdict.update(seed=seed, checkpoint_dir=str(out))
    if "val_retention" in tdict:
        tdict["val_retention"] = tuple(tdict["val_retention"])
    tcfg = TrainConfig(**tdict)
    sched = CurriculumSchedule.from_dict(cfg["curriculum"]) if "curriculum" in cfg else CurriculumSchedule()
    lcfg = LossConfig(**cfg.get("loss", {}))
    spec = corpus_spec(cfg.get("corpus", {"desk": {}}))
    if "data" in cfg:
        records = ((r.X, r.dag) for r in DatasetReader(cfg["data"]))
    else:
        records = ((ds.X, dag) for ds, dag in build_corpus(spec, seed))
    data = TrainingSet.from_records(records, mcfg.n_max)
    val = validation_set(spec, seed, tcfg.val_graphs, tcfg.val_retention) if tcfg.val_graphs else None
    return Trainer(data, mcfg, sched, lcfg, tcfg, val)


def cmd_train(args) -> int:
    import torch

    from .training import load_checkpoint

    torch.set_num_threads(1)  # bit-exact reruns
    cfg = load_config(args.config)
    out = Path(args.out)
    trainer = build_trainer(cfg, args.seed, out)
    if args.checkpoint:
        trainer.restore(load_checkpoint(args.checkpoint, trainer.model.cfg.n_max))
    trainer.fit()
    print(f"trained to epoch {trainer.epoch}; checkpoints in {out}")
    return 0


def sweep_spec(cfg: dict, args):
    from .harness import SweepSpec

    d = dict(cfg.get("sweep", cfg))
    if getattr(args, "retention", None):
        d["retention_grid"] = _floats(args.retention)
    if getattr(args, "prior_mode", None):
        d["prior_modes"] = _names(args.prior_mode)
    if getattr(args, "trials", None):
        d["trials"] = args.trials
    return SweepSpec.from_dict(d)


def _finish_report(report, out: Path, plots: bool) -> int:
    from .harness.plots import plot_report

    out.mkdir(parents=True, exist_ok=True)
    path = report.save(out / "report.json")
    print(f"report: {path}")
    if plots:
        for p in plot_report(report, out):
            print(f"plot: {p}")
    for note in report.notes:
        print(f"note: {note}")
    if report.failed:
        for c in report.failed:
            print(f"FAILED cell {c['mechanism']} n={c['n']} {c['prior_mode']}@{c['retention']}: {c['error']}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .container import DatasetReader
    from .datagen import standardize
    from .harness import EvalReport, TestSet, run_retention_sweep, score_model
    from .harness.sweep import resolve_model
    from .seeding import EVAL, derive_seed

    if not args.checkpoint:
        raise KicdError("eval needs --checkpoint")
    cfg = load_config(args.config)
    if not args.retention:
        args.retention = "0"
    if args.data:
        # scores a stored test set; every record must carry its true graph
        recs = [r for r in DatasetReader(args.data)]
        if any(r.dag is None for r in recs):
            raise KicdError(f"{args.data}: every record needs a ground-truth graph")
        test = TestSet([standardize(r.X) for r in recs], [r.dag for r in recs],
                       [derive_seed(EVAL, args.seed, 13, i) for i in range(len(recs))])
        model = resolve_model(args.checkpoint)
        cells = []
        for mode in _names(args.prior_mode) or ["full_prior"]:
            for rho in _floats(args.retention):
                s, f = score_model(model, test, mode, rho)
                cells.append({"mechanism": "stored:" + Path(args.data).name, "n": "mixed", "density": "stored",
                              "prior_mode": mode, "retention": rho, "status": "ok", "trials": len(s),
                              "mean_shd": float(np.mean(s)), "std_shd": float(np.std(s)),
                              "mean_f1": float(np.mean(f)), "std_f1": float(np.std(f))})
        report = EvalReport(cells, args.seed, {"data": str(args.data)})
    else:
        spec = sweep_spec(cfg, args)
        # a shared test set so that modes at the same setting are directly comparable
        spec = type(spec).from_dict({**spec.to_dict(), "paired": True})
        report = run_retention_sweep(args.checkpoint, spec, args.seed)
    for c in report.cells:
        if c["status"] == "ok":
            print(f"{c['prior_mode']}@{c['retention']:g}: F1 {c['mean_f1']:.4f}  SHD {c['mean_shd']:.3f}  "
                  f"({c['trials']} graphs)")
    return _finish_report(report, Path(args.out), plots=False)


def cmd_sweep(args) -> int:
    from .harness import run_retention_sweep

    if not args.checkpoint:
        raise KicdError("sweep needs --checkpoint")
    spec = sweep_spec(load_config(args.config), args)
    report = run_retention_sweep(args.checkpoint, spec, args.seed)
    return _finish_report(report, Path(args.out), plots=True)


def cmd_ingest(args) -> int:
    from .harness import ingest

    out = Path(args.out)
    if out.is_dir():
        out = out / (Path(args.table).stem + ".kicd")
    rec = ingest(args.table, out, prior=args.prior, truth=args.truth, seed=args.seed)
    print(json.dumps({"out": str(out), "S": rec.X.shape[0], "N": rec.X.shape[1],
                      "prior": rec.prior is not None, "truth": rec.dag is not None}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kicd", description="Knowledge-informed causal discovery")
    parser.add_argument("-v", "--verbose", action="store_true")
    # also accepted after the subcommand; SUPPRESS keeps a leading -v from being reset
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", metavar="{gen-data,train,eval,sweep,ingest}")
    sub.required = True

    def common(p, out_default):
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out_default)

    p = sub.add_parser("gen-data", parents=[verbose], help="build a synthetic corpus into a dataset container")
    common(p, "corpus.kicd")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[verbose], help="run the training loop")
    common(p, "run")
    p.add_argument("--checkpoint", help="resume from this epoch checkpoint")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (("eval", cmd_eval, "score a checkpoint at fixed prior settings"),
                                  ("sweep", cmd_sweep, "retention sweep with report and plots")):
        p = sub.add_parser(name, parents=[verbose], help=help_text)
        common(p, name)
        p.add_argument("--checkpoint")
        p.add_argument("--retention", help="comma-separated retention values")
        p.add_argument("--prior-mode", help="comma-separated: full_prior,neg_only,none,ground_truth")
        p.add_argument("--trials", type=int)
        if name == "eval":
            p.add_argument("--data", help="dataset container with ground-truth graphs")
        p.set_defaults(func=func)

    p = sub.add_parser("ingest", parents=[verbose], help="convert a CSV table into a dataset container")
    p.add_argument("table")
    p.add_argument("--prior", help="prior file in the knowledge text format")
    p.add_argument("--truth", help="ground-truth adjacency in the same text format")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (KicdError, FileNotFoundError, OSError) as exc:
        print(f"kicd {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
