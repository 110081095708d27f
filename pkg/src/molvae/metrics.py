"""Reconstruction, validity, novelty, uniqueness and diversity."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .chem.canon import write_canonical_smiles
from .chem.graph import ChemError, MolecularGraph, is_connected, largest_component
from .chem.substructure import sample_substructures
from .model.batch import make_batch
from .model.encoder import reparameterize

log = logging.getLogger(__name__)

DEFAULT_WALKS = 10
DEFAULT_WALK_LEN = 5
TRAIN_INDEX_SEED_OFFSET = 7919
CHUNK = 256


def valence_consistent(g: MolecularGraph) -> bool:
    sums = g.bond_sums()
    return all(s <= c for s, c in zip(sums, g.capacities)) and all(h >= 0 for h in g.hydrogens())


@dataclass
class ReconstructionResult:
    percent: float
    n_molecules: int
    n_decodes: int
    hits: int
    failures: int


def eval_reconstruction(model, graphs, n_mol=5000, n_dec=20, seed=0) -> ReconstructionResult:
    """Percentage of (molecule, decode) pairs reproducing the input exactly.

    Each decode draws a fresh Z from the posterior and decodes with the
    input's own histogram in argmax mode.
    """
    graphs = list(graphs)
    if n_mol < len(graphs):
        graphs = graphs[:n_mol]
    elif n_mol > len(graphs):
        log.warning("n_mol=%d capped at %d available molecules", n_mol, len(graphs))
    hits = fails = 0
    for s in range(0, len(graphs), CHUNK):
        chunk = graphs[s:s + CHUNK]
        batch = make_batch(chunk, model.vocab)
        targets = [write_canonical_smiles(g) for g in chunk]
        mu, var = model.encode(batch, training=False)
        for d in range(n_dec):
            rng = np.random.default_rng([seed, s, d, 3])
            Z = reparameterize(mu, var, rng).data
            try:
                out, _ = model.decode(Z, batch.hist, mode="argmax")
            except (ChemError, AssertionError) as exc:
                log.warning("decode failure: %s", exc)
                fails += len(chunk)
                continue
            for g, t in zip(out, targets):
                try:
                    hits += write_canonical_smiles(g) == t
                except ChemError:
                    fails += 1
    total = len(graphs) * n_dec
    return ReconstructionResult(100.0 * hits / total if total else float("nan"),
                                len(graphs), n_dec, hits, fails)


@dataclass
class TrainingIndex:
    smiles: set
    substructures: set
    walks: int
    walk_len: int
    seed: int

    @classmethod
    def build(cls, graphs, walks=DEFAULT_WALKS, walk_len=DEFAULT_WALK_LEN, seed=0):
        smiles, subs = set(), set()
        for k, g in enumerate(graphs):
            smiles.add(write_canonical_smiles(g))
            rng = np.random.default_rng([seed + TRAIN_INDEX_SEED_OFFSET, k])
            subs.update(sample_substructures(g, walks, walk_len, rng))
        return cls(smiles, subs, walks, walk_len, seed)


@dataclass
class MetricReport:
    n_samples: int = 0
    valid: int = 0
    valence_ok: int = 0
    connected: int = 0
    unique: int = 0
    novel: int = 0
    substructures: int = 0
    novel_substructures: int = 0
    reconstruction: float | None = None
    reconstruction_count: str = ""
    config: dict = field(default_factory=dict)

    def _pct(self, a, b):
        return 100.0 * a / b if b else 0.0

    @property
    def validity(self):
        return self._pct(self.valid, self.n_samples)

    @property
    def valence_validity(self):
        return self._pct(self.valence_ok, self.n_samples)

    @property
    def uniqueness(self):
        return self._pct(self.unique, self.valid)

    @property
    def novelty(self):
        return self._pct(self.novel, self.valid)

    @property
    def diversity(self):
        return self._pct(self.novel_substructures, self.substructures)

    def rows(self):
        rows = []
        if self.reconstruction is not None:
            rows.append(("reconstruction", self.reconstruction, self.reconstruction_count))
        rows += [
            ("validity", self.validity, f"{self.valid}/{self.n_samples}"),
            ("valence_validity", self.valence_validity, f"{self.valence_ok}/{self.n_samples}"),
            ("novelty", self.novelty, f"{self.novel}/{self.valid}"),
            ("uniqueness", self.uniqueness, f"{self.unique}/{self.valid}"),
            ("diversity", self.diversity, f"{self.novel_substructures}/{self.substructures}"),
        ]
        return rows

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "percent", "count"])
        for name, pct, count in self.rows():
            w.writerow([name, f"{pct:.4f}", count])
        for k, v in sorted(self.config.items()):
            w.writerow([f"config.{k}", "", v])
        return buf.getvalue()

    def to_table(self):
        lines = [f"{'metric':<18}{'percent':>10}  count", "-" * 42]
        for name, pct, count in self.rows():
            lines.append(f"{name:<18}{pct:>10.2f}  {count}")
        if self.config:
            lines.append("")
            lines += [f"{k} = {v}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    def as_dict(self):
        d = asdict(self)
        d.update(validity_pct=self.validity, valence_validity_pct=self.valence_validity,
                 novelty_pct=self.novelty, uniqueness_pct=self.uniqueness,
                 diversity_pct=self.diversity)
        return d


def score_molecules(graphs, index: TrainingIndex, seed=0, largest_component_only=False,
                    report=None):
    """Fill a MetricReport from decoded graphs (None entries count as invalid)."""
    rep = report or MetricReport()
    rep.n_samples += len(graphs)
    seen = set()
    for k, g in enumerate(graphs):
        if g is None or not valence_consistent(g):
            continue
        rep.valence_ok += 1
        connected = is_connected(g)
        rep.connected += connected
        if not connected:
            if not largest_component_only:
                continue
            g = largest_component(g)
        rep.valid += 1
        smi = write_canonical_smiles(g)
        if smi not in seen:
            seen.add(smi)
            rep.unique += 1
        rep.novel += smi not in index.smiles
        rng = np.random.default_rng([seed, k, 5])
        keys = sample_substructures(g, index.walks, index.walk_len, rng)
        rep.substructures += len(keys)
        rep.novel_substructures += sum(key not in index.substructures for key in keys)
    return rep


def generate(model, n, seed=0, mode="sample"):
    """n molecules from prior samples; molecule i uses the stream (seed, i)."""
    if model.hist_dist is None:
        raise ValueError("model has no histogram distribution")
    graphs = []
    s_lt = model.config.s_lt
    for s in range(0, n, CHUNK):
        idx = range(s, min(n, s + CHUNK))
        rngs = [np.random.default_rng([seed, i]) for i in idx]
        hists = [model.hist_dist.sample(r).as_array() for r in rngs]
        Z = np.concatenate([r.standard_normal((int(h.sum()), s_lt)) for r, h in zip(rngs, hists)])
        out, _ = model.decode(Z.astype(T.default_dtype()), np.array(hists), mode=mode, rngs=rngs)
        graphs.extend(out)
    return graphs


def eval_generation(model, n=20000, seed=0, index: TrainingIndex | None = None,
                    train_graphs=None, largest_component_only=False):
    """Generate ``n`` molecules and score them against the training index."""
    if index is None:
        index = TrainingIndex.build(train_graphs or [], seed=seed)
    graphs = generate(model, n, seed)
    rep = score_molecules(graphs, index, seed, largest_component_only)
    rep.config.update(samples=n, seed=seed, walks=index.walks, walk_len=index.walk_len,
                      largest_component=largest_component_only)
    return graphs, rep


def eval_files(generated_lines, training_lines, parse, walks=DEFAULT_WALKS,
               walk_len=DEFAULT_WALK_LEN, seed=0, largest_component_only=False):
    """Score SMILES lines with ``parse`` (text -> graph); failures count as invalid."""
    train = []
    for line in training_lines:
        try:
            train.append(parse(line))
        except ChemError:
            continue
    index = TrainingIndex.build(train, walks, walk_len, seed)
    graphs = []
    for line in generated_lines:
        try:
            graphs.append(parse(line))
        except ChemError:
            graphs.append(None)
    rep = score_molecules(graphs, index, seed, largest_component_only)
    rep.config.update(samples=len(graphs), seed=seed, walks=walks, walk_len=walk_len,
                      largest_component=largest_component_only)
    return rep
