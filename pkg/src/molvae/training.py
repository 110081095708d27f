"""Loss terms, training configuration and the training loop."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .chem.canon import write_canonical_smiles
from .model.batch import make_batch
from .model.vae import ModelConfig, MolVAE
from .tensor.checkpoint import atomic_write_bytes

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
METRICS_HEADER = ["epoch", "step", "L_a", "L_b", "L_tb", "L_lt", "L_opt", "total",
                  "val_reconstruction"]


class ClampCounter:
    """Counts log arguments that hit the LOG_EPS floor."""

    def __init__(self):
        self.hits = 0

    def log(self, p):
        self.hits += int(np.count_nonzero(p.data < LOG_EPS))
        return T.log(T.clamp_min(p, LOG_EPS))


clamps = ClampCounter()


# Every term below is a per-molecule sum divided by ``n_mols``.

def atom_loss(probs, labels, n_mols=1):
    """L_a = -sum_v log F~[v, true label]; ``probs`` (N x d_n) Tensor."""
    labels = np.asarray(labels, dtype=np.intp)
    picked = T.getitem(probs, (np.arange(len(labels)), labels))
    return -clamps.log(picked).sum() * (1.0 / n_mols)


def bond_type_loss(probs, types, adj, n_mols=1):
    """L_tb = -sum over true bonds of log E~[pair, true type]."""
    idx = np.nonzero(np.asarray(adj))[0]
    if len(idx) == 0:
        return T.Tensor(0.0)
    picked = T.getitem(probs, (idx, np.asarray(types)[idx]))
    return -clamps.log(picked).sum() * (1.0 / n_mols)


def bond_existence_loss(p, adj, n_mols=1):
    """Binary cross-entropy over unordered pairs, ``p`` (P,) Tensor."""
    if p.data.size == 0:
        return T.Tensor(0.0)
    a = np.asarray(adj, dtype=T.default_dtype())
    pos = clamps.log(p) * a
    neg = clamps.log(1.0 - p) * (1.0 - a)
    return -(pos + neg).sum() * (1.0 / n_mols)


def kl_loss(mu, var, n_mols=1):
    """-1/2 sum (1 + log var - mu^2 - var)."""
    inner = 1.0 + T.log(var) - T.square(mu) - var
    return inner.sum() * (-0.5 / n_mols)


def property_loss(pred, target, n_mols=1):
    """sum (p~ - p)^2 / 2."""
    d = pred - T.Tensor(np.asarray(target))
    return T.square(d).sum() * (0.5 / n_mols)


@dataclass
class LossBreakdown:
    L_a: float
    L_b: float
    L_tb: float
    L_lt: float
    L_opt: float
    total: float

    def row(self):
        return [self.L_a, self.L_b, self.L_tb, self.L_lt, self.L_opt, self.total]


def assemble_loss(out, batch, lambda1, lambda2, properties=()):
    """Total loss Tensor plus its float breakdown."""
    B = batch.n_mols
    la = atom_loss(T.softmax(out.atom_logits), batch.labels, B)
    lb = bond_existence_loss(out.p_exist, batch.adj, B)
    ltb = bond_type_loss(out.p_type, batch.bond_type, batch.adj, B)
    llt = kl_loss(out.mu, out.var, B)
    lopt = T.Tensor(0.0)
    for k, p in enumerate(properties):
        lopt = lopt + property_loss(out.props[p], batch.props[:, k], B)
    total = la + lb + ltb + llt * lambda1
    if properties and lambda2:
        total = total + lopt * lambda2
    parts = [float(x.item()) for x in (la, lb, ltb, llt, lopt, total)]
    return total, LossBreakdown(*parts)


# ----------------------------------------------------------------- config

@dataclass
class TrainConfig:
    lambda1: float = 0.05
    lambda2: float = 10.0
    lr: float = 0.001
    batch_size: int = 100
    epochs: int = 10
    max_steps: int = 0              # 0 = no cap
    seed: int = 0
    encoder: str = "rgin"
    histograms: bool = True
    precision: int = 32
    teacher_forcing: bool = False
    properties: list = field(default_factory=list)
    val_every: int = 1              # epochs between validation passes (0 = never)
    val_molecules: int = 200
    val_decodes: int = 1
    checkpoint_every: int = 1       # epochs between "last" checkpoints

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ValueError("lambda1 must be > 0")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")
        if self.encoder not in ("rgin", "gin"):
            raise ValueError(f"encoder must be rgin or gin, got {self.encoder!r}")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _convert(f, raw):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"{f.name}: expected on/off, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "list":
        return [x.strip() for x in raw.split(",") if x.strip()]
    return raw.strip()


def parse_config(text, base=None, overrides=None):
    """TrainConfig from ``key = value`` lines, then ``overrides`` (already typed or strings)."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = dataclasses.asdict(base) if base else {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"config line {n}: unknown key {key!r}")
        values[key] = _convert(fields[key], raw)
    for key, v in (overrides or {}).items():
        if v is None:
            continue
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _convert(fields[key], v) if isinstance(v, str) else v
    return TrainConfig(**values)


def config_text(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "on" if v else "off"
        elif isinstance(v, list):
            v = ",".join(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- loop

def property_ranges(props):
    """Column-wise [min, max] as a list of pairs."""
    props = np.asarray(props, dtype=np.float64)
    return [[float(props[:, k].min()), float(props[:, k].max())] for k in range(props.shape[1])]


def normalize_props(props, ranges):
    props = np.asarray(props, dtype=np.float64)
    out = np.empty_like(props)
    for k, (lo, hi) in enumerate(ranges):
        out[:, k] = (props[:, k] - lo) / (hi - lo) if hi > lo else 0.5
    return np.clip(out, 0.0, 1.0)


@dataclass
class TrainResult:
    model: MolVAE
    history: list                   # metrics rows (dicts)
    best_path: str | None = None
    last_path: str | None = None
    best_val: float = float("nan")


class Trainer:
    """Owns a model, its optimizer and the seeded batch schedule."""

    def __init__(self, vocab, hist_dist, train_graphs, config: TrainConfig, train_props=None,
                 val_graphs=(), out_dir=None, model=None):
        self.cfg = config
        self.dtype = np.float64 if config.precision == 64 else np.float32
        self.vocab = vocab
        self.graphs = list(train_graphs)
        if not self.graphs:
            raise ValueError("empty training split")
        self.val_graphs = list(val_graphs)
        self.out_dir = out_dir
        props = list(config.properties)
        if props and train_props is None:
            raise ValueError("property columns requested but none supplied")
        self.props = None
        ranges = {}
        if props:
            raw = np.asarray(train_props, dtype=np.float64)
            if raw.ndim != 2 or raw.shape[1] != len(props):
                raise ValueError("property matrix does not match the property list")
            rlist = property_ranges(raw)
            ranges = dict(zip(props, rlist))
            self.props = normalize_props(raw, rlist)
        if model is None:
            mc = ModelConfig(encoder=config.encoder, histograms=config.histograms,
                             properties=props, prop_ranges=ranges, seed=config.seed)
            with T.precision(self.dtype):
                model = MolVAE(vocab, mc, hist_dist)
        self.model = model
        self.opt = T.Adam(model.params, lr=config.lr)
        self.epoch = 0
        self.history = []
        self.best_val = -1.0

    # -- persistence
    def _entries(self):
        e = self.model.state_entries(self.opt)
        e["meta.epoch"] = np.array([self.epoch], dtype=np.int64)
        e["meta.best_val"] = np.array([self.best_val], dtype=np.float64)
        return e

    def save(self, path):
        from .tensor import checkpoint
        checkpoint.save(path, self._entries())

    def restore(self, path):
        from .tensor import checkpoint
        e = checkpoint.load(path)
        with T.precision(self.dtype):
            model = MolVAE.from_entries(e)
        if model.vocab.hash() != self.vocab.hash():
            raise checkpoint.CheckpointError("checkpoint vocabulary does not match the data")
        self.model = model
        self.opt = T.Adam(model.params, lr=self.cfg.lr)
        self.opt.load_state({k: v for k, v in e.items() if k.startswith("adam.") and k != "adam.step"},
                            int(e["adam.step"][0]) if "adam.step" in e else 0)
        self.epoch = int(e["meta.epoch"][0]) if "meta.epoch" in e else 0
        self.best_val = float(e["meta.best_val"][0]) if "meta.best_val" in e else -1.0
        self._load_history()

    def _load_history(self):
        path = self._path("metrics.csv")
        self.history = []
        if path and os.path.exists(path):
            with open(path, newline="") as fh:
                for row in csv.DictReader(fh):
                    if int(row["epoch"]) <= self.epoch:
                        self.history.append(row)

    def _path(self, name):
        return os.path.join(self.out_dir, name) if self.out_dir else None

    # -- steps
    def batches(self, epoch):
        rng = np.random.default_rng([self.cfg.seed, epoch, 1])
        order = rng.permutation(len(self.graphs))
        bs = self.cfg.batch_size
        for s in range(0, len(order), bs):
            yield order[s:s + bs]

    def train_step(self, idx):
        """One optimizer step on the molecules ``idx``; returns the LossBreakdown."""
        model, cfg = self.model, self.cfg
        graphs = [self.graphs[i] for i in idx]
        props = None if self.props is None else self.props[idx]
        batch = make_batch(graphs, self.vocab, props)
        rng = np.random.default_rng([cfg.seed, model.step, 2])
        with T.Tape() as tape:
            out = model.forward_train(batch, rng, teacher_forcing=cfg.teacher_forcing)
            total, parts = assemble_loss(out, batch, cfg.lambda1, cfg.lambda2, cfg.properties)
        if not np.isfinite(parts.total):
            self._dump_batch(graphs)
            raise T.NonFiniteError(f"non-finite loss at step {model.step}: {parts}")
        grads = tape.backward(total, model.params)
        try:
            self.opt.step(grads)
        except T.NonFiniteError:
            self._dump_batch(graphs)
            raise
        model.step += 1
        return parts

    def _dump_batch(self, graphs):
        path = self._path("nonfinite_batch.smi")
        if path:
            text = "".join(write_canonical_smiles(g) + "\n" for g in graphs)
            atomic_write_bytes(path, text.encode())

    def validate(self):
        from .metrics import eval_reconstruction
        graphs = self.val_graphs[: self.cfg.val_molecules]
        if not graphs:
            return float("nan")
        return eval_reconstruction(self.model, graphs, n_mol=len(graphs),
                                   n_dec=self.cfg.val_decodes, seed=self.cfg.seed).percent

    def run(self, progress=None):
        cfg = self.cfg
        best_path, last_path = self._path("best.ckpt"), self._path("last.ckpt")
        with T.precision(self.dtype):
            while self.epoch < cfg.epochs:
                if cfg.max_steps and self.model.step >= cfg.max_steps:
                    break
                rows = []
                for idx in self.batches(self.epoch):
                    if cfg.max_steps and self.model.step >= cfg.max_steps:
                        break
                    rows.append(self.train_step(idx).row())
                self.epoch += 1
                mean = np.mean(rows, axis=0) if rows else [float("nan")] * 6
                val = float("nan")
                if cfg.val_every and self.epoch % cfg.val_every == 0 and self.val_graphs:
                    val = self.validate()
                row = dict(zip(METRICS_HEADER, [self.epoch, self.model.step, *mean, val]))
                self.history.append(row)
                if progress:
                    progress(row)
                if self.out_dir:
                    self._write_metrics()
                    if np.isfinite(val) and val > self.best_val:
                        self.best_val = val
                        self.save(best_path)
                    if cfg.checkpoint_every and self.epoch % cfg.checkpoint_every == 0:
                        self.save(last_path)
            if self.out_dir:
                self.save(last_path)
                if not os.path.exists(best_path):
                    # no validation split: the final model is the selected one
                    self.save(best_path)
        return TrainResult(self.model, self.history,
                           best_path if self.out_dir else None,
                           last_path if self.out_dir else None, self.best_val)

    def _write_metrics(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in self.history:
            w.writerow([_fmt(row[k]) for k in METRICS_HEADER])
        atomic_write_bytes(self._path("metrics.csv"), buf.getvalue().encode())


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def train(vocab, hist_dist, train_graphs, config, train_props=None, val_graphs=(), out_dir=None,
          resume=None, progress=None):
    """Train a model; ``resume`` is a checkpoint path written by an earlier run."""
    trainer = Trainer(vocab, hist_dist, train_graphs, config, train_props, val_graphs, out_dir)
    if resume:
        trainer.restore(resume)
    return trainer.run(progress)
