"""Dataset files, seeded splits, prepared-data directories and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .chem.canon import canonicalize, write_canonical_smiles
from .chem.properties import compute
from .chem.vocab import HistogramDistribution, Vocabulary, build_vocabulary
from .tensor.checkpoint import atomic_write_bytes

PROPS_HEADER = "# properties:"
DEFAULT_SPLIT = (0.85, 0.05, 0.10)
SPLIT_NAMES = ("train", "valid", "test")


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    smiles: list
    props: np.ndarray | None = None     # (n x k) when property columns exist
    prop_names: list = field(default_factory=list)
    line_numbers: list = field(default_factory=list)

    def __len__(self):
        return len(self.smiles)

    def subset(self, idx):
        return Dataset([self.smiles[i] for i in idx],
                       None if self.props is None else self.props[idx],
                       list(self.prop_names),
                       [self.line_numbers[i] for i in idx])


def read_dataset(path):
    """Parse ``SMILES[\\tprop...]`` lines; ``#`` lines are comments.

    A ``# properties: a, b`` comment names the property columns.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read(), path)


def parse_dataset(text, origin="<text>"):
    smiles, rows, lines, names = [], [], [], []
    width = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.lower().startswith(PROPS_HEADER):
                names = [x.strip() for x in line[len(PROPS_HEADER):].split(",") if x.strip()]
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        vals = parts[1:]
        if width is None:
            width = len(vals)
        if len(vals) != width:
            raise DataError(f"{origin}:{n}: expected {width} property columns, found {len(vals)}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise DataError(f"{origin}:{n}: non-numeric property value") from None
        smiles.append(parts[0])
        lines.append(n)
    props = np.array(rows, dtype=np.float64) if width else None
    if width and not names:
        names = [f"prop{k + 1}" for k in range(width)]
    if width and len(names) != width:
        raise DataError(f"{origin}: header names {len(names)} properties, rows have {width}")
    return Dataset(smiles, props, names if width else [], lines)


def format_dataset(ds: Dataset):
    out = []
    if ds.prop_names:
        out.append(f"{PROPS_HEADER} {','.join(ds.prop_names)}")
    for k, s in enumerate(ds.smiles):
        if ds.props is not None:
            out.append("\t".join([s] + [repr(float(v)) for v in ds.props[k]]))
        else:
            out.append(s)
    return "\n".join(out) + "\n"


def write_dataset(path, ds):
    atomic_write_bytes(path, format_dataset(ds).encode("utf-8"))


def parse_split(text):
    try:
        parts = tuple(float(x) for x in str(text).split("/"))
    except ValueError:
        raise ValueError(f"bad split {text!r}; expected a/b/c") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-6:
        raise ValueError(f"split {text!r} must be three non-negative fractions summing to 1")
    return parts


def split_indices(n, fractions=DEFAULT_SPLIT, seed=0):
    """Seeded permutation cut into train/valid/test index arrays."""
    perm = np.random.default_rng([seed, 11]).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    n_valid = min(n_valid, n - n_train)
    return (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_valid]),
            np.sort(perm[n_train + n_valid:]))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    vocab_hash: str = ""
    datasets: dict = field(default_factory=dict)     # path -> sha256
    outputs: dict = field(default_factory=dict)
    version: str = __version__
    python: str = platform.python_version()
    numpy: str = np.__version__
    argv: list = field(default_factory=lambda: list(sys.argv))
    started: str = ""
    finished: str = ""

    def start(self):
        self.started = _now()
        return self

    def add_dataset(self, path):
        self.datasets[os.path.abspath(path)] = sha256_file(path)

    def finish(self, path, outputs=()):
        for p in outputs:
            if os.path.isfile(p):
                self.outputs[os.path.abspath(p)] = sha256_file(p)
        self.finished = _now()
        atomic_write_bytes(path, (json.dumps(asdict(self), indent=2, sort_keys=True) + "\n").encode())


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ------------------------------------------------------------- prepared directories

@dataclass
class PreparedData:
    vocab: Vocabulary
    hist: HistogramDistribution
    splits: dict                       # name -> Dataset of canonical SMILES
    stats: dict = field(default_factory=dict)

    def graphs(self, name):
        return [canonicalize(self.vocab.parse(s)) for s in self.splits[name].smiles]


def prepare(ds: Dataset, representation, fractions=DEFAULT_SPLIT, seed=0, properties=()):
    """Build vocabulary and histograms from ``ds`` and split it.

    Molecules are stored as canonical SMILES at ``representation``.  When the
    input has no property columns, the requested built-in properties are
    computed.  Returns (PreparedData, BuildReport).
    """
    vocab, dist, report = build_vocabulary(list(zip(ds.line_numbers, ds.smiles)), representation)
    row_of = {n: k for k, n in enumerate(ds.line_numbers)}
    canon, props, lines = [], [], []
    for line_no, _, g in report.graphs:
        g = canonicalize(g)
        canon.append(write_canonical_smiles(g))
        lines.append(line_no)
        if ds.props is not None:
            props.append(ds.props[row_of[line_no]])
        elif properties:
            props.append([compute(p, g) for p in properties])
    names = ds.prop_names if ds.props is not None else list(properties)
    clean = Dataset(canon, np.array(props, dtype=np.float64) if names else None, list(names), lines)
    tr, va, te = split_indices(len(clean), fractions, seed)
    splits = {"train": clean.subset(tr), "valid": clean.subset(va), "test": clean.subset(te)}
    # the histogram distribution used for generation is the training split's
    train_hist = HistogramDistribution()
    from .chem.vocab import valence_histogram
    for s in splits["train"].smiles:
        train_hist.add(valence_histogram(vocab.parse(s), vocab.nu))
    stats = {
        "molecules": len(ds),
        "parsed": len(clean),
        "failed": report.n_failed,
        "atom_types": vocab.d_n,
        "bond_types": vocab.d_e,
        "max_valence": vocab.nu,
        "max_atoms": max((sum(c) for c in dist.entries), default=0),
        "histograms": len(train_hist.entries),
        "train": len(tr), "valid": len(va), "test": len(te),
    }
    return PreparedData(vocab, train_hist, splits, stats), report


def write_prepared(out_dir, prep: PreparedData):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "vocab.txt")
    atomic_write_bytes(p, prep.vocab.to_text().encode())
    paths.append(p)
    p = os.path.join(out_dir, "histograms.tsv")
    atomic_write_bytes(p, prep.hist.to_text().encode())
    paths.append(p)
    sizes = "# atoms\tcount\n" + "".join(f"{m}\t{c}\n" for m, c in prep.hist.size_marginal.items())
    p = os.path.join(out_dir, "sizes.tsv")
    atomic_write_bytes(p, sizes.encode())
    paths.append(p)
    if prep.vocab.representation == 1:
        table = "".join(f"{e}\t{v}\n" for e, v in sorted(prep.vocab.valence_table.items()))
        p = os.path.join(out_dir, "valence_table.tsv")
        atomic_write_bytes(p, ("# element\tvalence\n" + table).encode())
        paths.append(p)
    for name in SPLIT_NAMES:
        p = os.path.join(out_dir, f"{name}.smi")
        write_dataset(p, prep.splits[name])
        paths.append(p)
    p = os.path.join(out_dir, "stats.json")
    atomic_write_bytes(p, (json.dumps(prep.stats, indent=2, sort_keys=True) + "\n").encode())
    paths.append(p)
    return paths


def load_prepared(data_dir):
    try:
        with open(os.path.join(data_dir, "vocab.txt"), encoding="utf-8") as fh:
            vocab = Vocabulary.from_text(fh.read())
        with open(os.path.join(data_dir, "histograms.tsv"), encoding="utf-8") as fh:
            hist = HistogramDistribution.from_text(fh.read())
    except FileNotFoundError as exc:
        raise DataError(f"prepared data incomplete: {exc.filename} missing") from None
    splits = {}
    for name in SPLIT_NAMES:
        path = os.path.join(data_dir, f"{name}.smi")
        splits[name] = read_dataset(path) if os.path.exists(path) else Dataset([])
    stats_path = os.path.join(data_dir, "stats.json")
    stats = json.load(open(stats_path)) if os.path.exists(stats_path) else {}
    return PreparedData(vocab, hist, splits, stats)
