"""Command-line entry point: prepare, train, generate, reconstruct, optimize, eval."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import tensor as T
from .chem.canon import write_canonical_smiles
from .chem.graph import ChemError
from .chem.smiles import parse_smiles
from .chem.vocab import Vocabulary
from .data import (DataError, RunManifest, load_prepared, parse_split, prepare, read_dataset,
                   write_prepared)
from .tensor.checkpoint import CheckpointError, atomic_write_bytes

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("molvae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    atomic_write_bytes(path, text.encode("utf-8"))


def _load_model(path):
    from .model.vae import MolVAE
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} not found")
    return MolVAE.load(path)


# ------------------------------------------------------------------ prepare

def cmd_prepare(a):
    try:
        fractions = parse_split(a.split)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = read_dataset(a.input)
    props = [p for p in (a.properties or "").split(",") if p]
    prep, report = prepare(ds, a.rep, fractions, a.seed, props)
    manifest = RunManifest("prepare", {"rep": a.rep, "split": list(fractions), "properties": props},
                           a.seed, prep.vocab.hash()).start()
    manifest.add_dataset(a.input)
    paths = write_prepared(a.out, prep)
    s = prep.stats
    print(f"{'#Molecules':<16}{s['parsed']}")
    print(f"{'#Atom Types':<16}{s['atom_types']}")
    print(f"{'#Bond Types':<16}{s['bond_types']}")
    print(f"{'Max valence':<16}{s['max_valence']}")
    print(f"{'Max #atoms':<16}{s['max_atoms']}")
    print(f"{'Splits':<16}{s['train']}/{s['valid']}/{s['test']}")
    if report.failures:
        print(f"{report.n_failed} line(s) failed to parse:", file=sys.stderr)
        for line_no, smi, msg in report.failures[:20]:
            print(f"  line {line_no}: {smi}: {msg}", file=sys.stderr)
        fail_text = "".join(f"{n}\t{smi}\t{msg}\n" for n, smi, msg in report.failures)
        fp = os.path.join(a.out, "failures.tsv")
        _write_text(fp, fail_text)
        paths.append(fp)
    manifest.finish(os.path.join(a.out, "manifest.json"), paths)
    if report.n_failed > 0.01 * max(len(ds), 1):
        print(f"error: {report.n_failed}/{len(ds)} lines failed (> 1%)", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# ------------------------------------------------------------------ train

def cmd_train(a):
    from .plotting import plot_losses
    from .training import Trainer, config_text, parse_config
    prep = load_prepared(a.data)
    text = ""
    if a.config:
        with open(a.config, encoding="utf-8") as fh:
            text = fh.read()
    overrides = {"encoder": a.encoder, "histograms": a.histograms, "lambda1": a.lambda1,
                 "lambda2": a.lambda2, "lr": a.lr, "batch_size": a.batch_size,
                 "epochs": a.epochs, "max_steps": a.max_steps, "seed": a.seed,
                 "properties": a.properties, "precision": a.precision,
                 "teacher_forcing": a.teacher_forcing}
    try:
        cfg = parse_config(text, overrides=overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_ds = prep.splits["train"]
    if a.properties is None and not _sets_key(text, "properties"):
        # default: fit the head on every property column the data carries
        cfg = dataclasses.replace(cfg, properties=list(train_ds.prop_names))
    props = None
    if cfg.properties:
        missing = [p for p in cfg.properties if p not in train_ds.prop_names]
        if missing:
            raise DataError(f"property column(s) {', '.join(missing)} not in the prepared data")
        cols = [train_ds.prop_names.index(p) for p in cfg.properties]
        props = train_ds.props[:, cols]
    os.makedirs(a.out, exist_ok=True)
    manifest = RunManifest("train", {"config": config_text(cfg)}, cfg.seed, prep.vocab.hash()).start()
    for name in ("vocab.txt", "histograms.tsv", "train.smi", "valid.smi"):
        p = os.path.join(a.data, name)
        if os.path.exists(p):
            manifest.add_dataset(p)
    trainer = Trainer(prep.vocab, prep.hist, prep.graphs("train"), cfg, props,
                      prep.graphs("valid"), a.out)
    if a.resume:
        trainer.restore(a.resume)
    _write_text(os.path.join(a.out, "config.txt"), config_text(cfg))

    def progress(row):
        if not a.quiet:
            print(f"epoch {row['epoch']} step {row['step']} total {float(row['total']):.4f} "
                  f"val_rec {float(row['val_reconstruction']):.2f}", flush=True)

    result = trainer.run(progress)
    fig = plot_losses(result.history, os.path.join(a.out, "losses.png")) if result.history else None
    _write_text(os.path.join(a.out, "BEST"), "best.ckpt\n")
    outputs = [result.best_path, result.last_path, os.path.join(a.out, "metrics.csv")]
    manifest.finish(os.path.join(a.out, "manifest.json"), [p for p in outputs + [fig] if p])
    print(f"checkpoints: {result.best_path} (best), {result.last_path} (last)")
    return EXIT_OK


def _sets_key(text, key):
    return any(line.split("#", 1)[0].split("=", 1)[0].strip() == key
               for line in text.splitlines() if "=" in line.split("#", 1)[0])


# ------------------------------------------------------------------ generate / reconstruct

def cmd_generate(a):
    from .metrics import generate
    model = _load_model(a.model)
    with T.precision(np.float32):
        graphs = generate(model, a.n, a.seed, mode=a.mode)
    text = "".join(write_canonical_smiles(g) + "\n" for g in graphs)
    _write_text(a.out, text)
    manifest = RunManifest("generate", {"n": a.n, "mode": a.mode}, a.seed, model.vocab.hash()).start()
    manifest.add_dataset(a.model)
    if a.report:
        from .metrics import TrainingIndex, score_molecules
        from .plotting import plot_report
        if not a.data:
            raise UsageError("--report needs --data to build the training index")
        prep = _check_data(a.data, model)
        index = TrainingIndex.build(prep.graphs("train"), seed=a.seed)
        rep = score_molecules(graphs, index, a.seed, a.largest_component)
        rep.config.update(samples=a.n, seed=a.seed, mode=a.mode)
        _emit_report(rep, a.report, "generation")
    manifest.finish(a.out + ".manifest.json", [a.out])
    print(f"wrote {len(graphs)} molecules to {a.out}")
    return EXIT_OK


def _check_data(data_dir, model):
    prep = load_prepared(data_dir)
    if prep.vocab.hash() != model.vocab.hash():
        raise DataError("vocabulary hash of the data differs from the checkpoint's")
    return prep


def _emit_report(rep, out_dir, title):
    from .plotting import plot_report
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "report.csv"), rep.to_csv())
    table = rep.to_table()
    _write_text(os.path.join(out_dir, "report.txt"), table)
    plot_report(rep, os.path.join(out_dir, "report.png"), title)
    print(table, end="")


def cmd_reconstruct(a):
    from .metrics import MetricReport, eval_reconstruction
    model = _load_model(a.model)
    prep = _check_data(a.data, model)
    graphs = prep.graphs(a.split)
    if a.n > len(graphs):
        print(f"warning: --n {a.n} capped at {len(graphs)} molecules", file=sys.stderr)
    res = eval_reconstruction(model, graphs, a.n, a.decodes, a.seed)
    rep = MetricReport(reconstruction=res.percent,
                       reconstruction_count=f"{res.hits}/{res.n_molecules * res.n_decodes}",
                       config={"split": a.split, "n_mol": res.n_molecules, "n_dec": a.decodes,
                               "seed": a.seed})
    line = f"reconstruction {res.percent:.2f}% ({res.hits}/{res.n_molecules * res.n_decodes})"
    print(line)
    if a.report:
        os.makedirs(a.report, exist_ok=True)
        _write_text(os.path.join(a.report, "reconstruction.csv"),
                    "metric,percent,count\n"
                    f"reconstruction,{res.percent:.4f},{res.hits}/{res.n_molecules * res.n_decodes}\n")
        _write_text(os.path.join(a.report, "reconstruction.txt"), rep.to_table())
        from .plotting import plot_report
        plot_report(rep, os.path.join(a.report, "reconstruction.png"), f"reconstruction ({a.split})")
    return EXIT_OK


# ------------------------------------------------------------------ optimize

def cmd_optimize(a):
    from .plotting import plot_trajectories
    model = _load_model(a.model)
    if a.property not in model.config.properties:
        raise DataError(f"property {a.property!r} not trained; model has "
                        f"{', '.join(model.config.properties) or 'none'}")
    if a.steps < 0:
        raise UsageError("--steps must be >= 0")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["start", "step", "smiles", "predicted"])
    trajs = []
    s_lt = model.config.s_lt
    for start in range(a.n_starts):
        rng = np.random.default_rng([a.seed, start])
        alpha0 = model.hist_dist.sample(rng).as_array()
        Z0 = rng.standard_normal((int(alpha0.sum()), s_lt)).astype(T.default_dtype())
        _, traj = model.optimize_latent(Z0, alpha0, a.property, a.steps, a.step_size)
        scores = []
        for k, (_, score, g) in enumerate(traj):
            w.writerow([start, k, write_canonical_smiles(g), f"{score:.6f}"])
            scores.append(score)
        trajs.append(scores)
    _write_text(a.out, buf.getvalue())
    fig = os.path.splitext(a.out)[0] + ".png"
    plot_trajectories(trajs, fig, f"{a.property}: {a.n_starts} starts")
    up = sum(all(b >= x for x, b in zip(t, t[1:])) for t in trajs)
    print(f"{a.n_starts} trajectories, {up} non-decreasing; wrote {a.out} and {fig}")
    return EXIT_OK


# ------------------------------------------------------------------ eval

def _read_smiles(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                out.append(s.split()[0])
    return out


def cmd_eval(a):
    from .metrics import eval_files
    if a.vocab:
        with open(a.vocab, encoding="utf-8") as fh:
            vocab = Vocabulary.from_text(fh.read())
        parse = vocab.parse
    else:
        parse = lambda s: parse_smiles(s, a.rep)  # noqa: E731
    rep = eval_files(_read_smiles(a.generated), _read_smiles(a.training), parse,
                     a.walks, a.walk_len, a.seed, a.largest_component)
    if a.report:
        _emit_report(rep, a.report, "file evaluation")
    else:
        print(rep.to_table(), end="")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="molvae", description="Molecular graph VAE toolkit.")
    p.add_argument("--version", action="version", version=f"molvae {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("prepare", help="build vocabulary, histograms and splits")
    q.add_argument("--input", required=True)
    q.add_argument("--rep", type=int, choices=(1, 2, 3), default=2)
    q.add_argument("--out", required=True)
    q.add_argument("--split", default="0.85/0.05/0.10")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--properties", default="hetero_ratio",
                   help="built-in properties computed when the input has no property columns")
    q.set_defaults(func=cmd_prepare)

    q = sub.add_parser("train", help="train a model on prepared data")
    q.add_argument("--data", required=True)
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    q.add_argument("--encoder", choices=("rgin", "gin"))
    q.add_argument("--histograms", choices=("on", "off"))
    q.add_argument("--lambda1", type=float)
    q.add_argument("--lambda2", type=float)
    q.add_argument("--lr", type=float)
    q.add_argument("--batch-size", type=int)
    q.add_argument("--epochs", type=int)
    q.add_argument("--max-steps", type=int)
    q.add_argument("--seed", type=int)
    q.add_argument("--properties")
    q.add_argument("--precision", type=int, choices=(32, 64))
    q.add_argument("--teacher-forcing", choices=("on", "off"))
    q.add_argument("--resume")
    q.add_argument("--quiet", action="store_true")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("generate", help="sample molecules from the prior")
    q.add_argument("--model", required=True)
    q.add_argument("--n", type=int, default=20000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--mode", choices=("sample", "argmax"), default="sample")
    q.add_argument("--data", help="prepared data directory (for --report)")
    q.add_argument("--report", help="directory for CSV, table and figure")
    q.add_argument("--largest-component", action="store_true")
    q.set_defaults(func=cmd_generate)

    q = sub.add_parser("reconstruct", help="reconstruction accuracy on a split")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--split", choices=("train", "valid", "test"), default="test")
    q.add_argument("--n", type=int, default=5000)
    q.add_argument("--decodes", type=int, default=20)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--report")
    q.set_defaults(func=cmd_reconstruct)

    q = sub.add_parser("optimize", help="latent gradient ascent on a property")
    q.add_argument("--model", required=True)
    q.add_argument("--property", required=True)
    q.add_argument("--steps", type=int, default=20)
    q.add_argument("--step-size", type=float, default=0.01)
    q.add_argument("--n-starts", type=int, default=10)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_optimize)

    q = sub.add_parser("eval", help="score a generated SMILES file against a training file")
    q.add_argument("--generated", required=True)
    q.add_argument("--training", required=True)
    q.add_argument("--rep", type=int, choices=(1, 2, 3), default=2)
    q.add_argument("--vocab", help="vocabulary file (fixes representation and valence table)")
    q.add_argument("--walks", type=int, default=10)
    q.add_argument("--walk-len", type=int, default=5)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--largest-component", action="store_true")
    q.add_argument("--report")
    q.set_defaults(func=cmd_eval)
    return p


def _bool_flags(a):
    for key in ("histograms", "teacher_forcing"):
        v = getattr(a, key, None)
        if v is not None:
            setattr(a, key, v == "on")


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _bool_flags(a)
    threads = os.environ.get("MOLVAE_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"molvae: error: MOLVAE_THREADS must be a positive integer, got {threads!r}",
              file=sys.stderr)
        return EXIT_USAGE
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=limit):
            return a.func(a)
    except UsageError as exc:
        print(f"molvae {a.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except T.NonFiniteError as exc:
        print(f"molvae {a.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ChemError, CheckpointError, FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"molvae {a.command}: data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
