"""Valence histograms, the training-set histogram distribution and vocabularies."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .graph import AtomLabel, BondType, ChemError
from .smiles import parse_smiles

VOCAB_MAGIC = "molvae-vocab v1"


@dataclass(frozen=True)
class ValenceHistogram:
    """``counts[i]`` is the number of atoms with valence ``i + 1``."""

    counts: tuple

    @property
    def nu(self):
        return len(self.counts)

    @property
    def total(self):
        return sum(self.counts)

    def as_array(self):
        return np.array(self.counts, dtype=np.int64)

    def __str__(self):
        return ",".join(map(str, self.counts))


def valence_histogram(g, nu=None):
    if nu is None:
        nu = max(g.capacities, default=0)
    counts = [0] * nu
    for v, cap in enumerate(g.capacities):
        if not 1 <= cap <= nu:
            raise ChemError(f"atom {v} has valence {cap} outside [1, {nu}]")
        counts[cap - 1] += 1
    return ValenceHistogram(tuple(counts))


@dataclass
class HistogramDistribution:
    """Empirical distribution of training-set valence histograms.

    ``entries`` maps a counts tuple to its multiplicity; the molecule size
    marginal follows from it (``m = sum(counts)``).
    """

    entries: dict = field(default_factory=dict)

    def add(self, hist):
        self.entries[hist.counts] = self.entries.get(hist.counts, 0) + 1

    @property
    def total(self):
        return sum(self.entries.values())

    @property
    def size_marginal(self):
        out = Counter()
        for counts, n in self.entries.items():
            out[sum(counts)] += n
        return dict(sorted(out.items()))

    def _table(self):
        keys = sorted(self.entries)
        weights = np.array([self.entries[k] for k in keys], dtype=np.float64)
        return keys, weights / weights.sum()

    def sample(self, rng):
        """Draw one histogram (size and valences jointly) with ``rng``."""
        if not self.entries:
            raise ValueError("empty histogram distribution")
        keys, p = self._table()
        return ValenceHistogram(keys[int(rng.choice(len(keys), p=p))])

    def sample_size(self, rng):
        sizes = self.size_marginal
        ms = list(sizes)
        p = np.array([sizes[k] for k in ms], dtype=np.float64)
        return int(ms[int(rng.choice(len(ms), p=p / p.sum()))])

    def to_text(self):
        lines = ["# count\thistogram"]
        for counts in sorted(self.entries):
            lines.append(f"{self.entries[counts]}\t{','.join(map(str, counts))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        dist = cls()
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            n, counts = line.split("\t")
            dist.entries[tuple(int(c) for c in counts.split(","))] = int(n)
        return dist


@dataclass(frozen=True)
class Vocabulary:
    representation: int
    labels: tuple
    bond_types: tuple
    nu: int
    valence_table: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_index", {lab: k for k, lab in enumerate(self.labels)})

    @property
    def d_n(self):
        return len(self.labels)

    @property
    def d_e(self):
        return len(self.bond_types)

    def index(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise ChemError(f"label {label} not in vocabulary") from None

    def capacity(self, k):
        lab = self.labels[k]
        if self.representation == 1:
            return self.valence_table[lab.element]
        return lab.total_valence

    def label_valences(self):
        return np.array([self.capacity(k) for k in range(self.d_n)], dtype=np.int64)

    def bond_weights(self):
        return np.array([bt.weight for bt in self.bond_types], dtype=np.int64)

    def parse(self, smiles):
        return parse_smiles(smiles, self.representation,
                            self.valence_table if self.representation == 1 else None)

    def to_text(self):
        lines = [VOCAB_MAGIC,
                 f"representation {self.representation}",
                 f"nu {self.nu}",
                 "bonds " + " ".join(bt.label for bt in self.bond_types)]
        if self.representation == 1:
            lines.append("valence " + " ".join(f"{e}={v}" for e, v in sorted(self.valence_table.items())))
        lines.append("---")
        lines.extend(str(lab) for lab in self.labels)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_MAGIC:
            raise ChemError("not a vocabulary file (bad header)")
        header = {}
        k = 1
        while lines[k] != "---":
            key, _, value = lines[k].partition(" ")
            header[key] = value
            k += 1
        rep = int(header["representation"])
        table = {}
        if "valence" in header and header["valence"]:
            for item in header["valence"].split():
                e, v = item.split("=")
                table[e] = int(v)
        labels = tuple(AtomLabel.parse(x, rep) for x in lines[k + 1:] if x)
        bonds = tuple(BondType.from_label(b) for b in header["bonds"].split())
        return cls(rep, labels, bonds, int(header["nu"]), table)

    def hash(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


@dataclass
class BuildReport:
    graphs: list = field(default_factory=list)   # (line number, smiles, graph)
    failures: list = field(default_factory=list)  # (line number, smiles, message)

    @property
    def n_failed(self):
        return len(self.failures)


def _enumerate(corpus):
    for k, item in enumerate(corpus, start=1):
        if isinstance(item, tuple):
            yield item
        else:
            yield k, item


def most_frequent_valences(corpus):
    """Element -> most frequent total valence (ties to the smaller valence)."""
    counts = {}
    for _, smi in _enumerate(corpus):
        try:
            g = parse_smiles(smi, 2)
        except ChemError:
            continue
        for lab in g.atoms:
            counts.setdefault(lab.element, Counter())[lab.total_valence] += 1
    return {e: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for e, c in counts.items()}


def build_vocabulary(corpus, representation):
    """Vocabulary and histogram distribution of a SMILES corpus.

    ``corpus`` yields SMILES strings or ``(line number, smiles)`` pairs.
    Unparseable lines are skipped and reported.  Returns
    ``(Vocabulary, HistogramDistribution, BuildReport)``.
    """
    items = list(_enumerate(corpus))
    if not items:
        raise ValueError("empty corpus")
    table = most_frequent_valences(items) if representation == 1 else None
    report = BuildReport()
    for line_no, smi in items:
        try:
            g = parse_smiles(smi, representation, table)
        except ChemError as exc:
            report.failures.append((line_no, smi, str(exc)))
            continue
        if g.m == 0:
            report.failures.append((line_no, smi, "empty molecule"))
            continue
        report.graphs.append((line_no, smi, g))
    if not report.graphs:
        raise ValueError(f"no parseable molecules in corpus ({report.n_failed} failures)")
    labels, bonds, nu = set(), set(), 0
    for _, _, g in report.graphs:
        labels.update(g.atoms)
        bonds.update(bt for _, _, bt in g.bonds)
        nu = max(nu, max(g.capacities))
    vocab = Vocabulary(representation,
                       tuple(sorted(labels, key=AtomLabel.sort_key)),
                       tuple(sorted(bonds)),
                       nu,
                       {e: v for e, v in table.items() if any(lab.element == e for lab in labels)}
                       if table else {})
    dist = HistogramDistribution()
    for _, _, g in report.graphs:
        dist.add(valence_histogram(g, nu))
    return vocab, dist, report
