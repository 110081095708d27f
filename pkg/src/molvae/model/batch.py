from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..chem.vocab import valence_histogram


@dataclass
class GraphBatch:
    """Concatenated dense view of several molecules.

    Atom rows are stacked molecule by molecule; ``pair_i``/``pair_j`` list
    every unordered atom pair (i < j) inside each molecule in row-major
    order.
    """

    graphs: list
    labels: np.ndarray      # (N,) vocabulary index per atom
    mol: np.ndarray         # (N,) molecule index per atom
    offsets: np.ndarray     # (B + 1,)
    edges: dict             # bond-type index -> (src, dst), both directions
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_mol: np.ndarray
    adj: np.ndarray         # (P,) 0/1 true adjacency per pair
    bond_type: np.ndarray   # (P,) bond-type index, -1 where unbonded
    hist: np.ndarray        # (B, nu)
    props: np.ndarray | None = None

    @property
    def n_mols(self):
        return len(self.offsets) - 1

    @property
    def n_atoms(self):
        return int(self.offsets[-1])

    @property
    def sizes(self):
        return np.diff(self.offsets)


def pair_index(sizes, offsets):
    pi, pj, pm = [], [], []
    for b, m in enumerate(sizes):
        i, j = np.triu_indices(int(m), k=1)
        pi.append(i + offsets[b])
        pj.append(j + offsets[b])
        pm.append(np.full(len(i), b))
    cat = lambda xs: np.concatenate(xs).astype(np.intp) if xs else np.zeros(0, np.intp)
    return cat(pi), cat(pj), cat(pm)


def make_batch(graphs, vocab, props=None):
    sizes = np.array([g.m for g in graphs], dtype=np.intp)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
    labels = np.array([vocab.index(a) for g in graphs for a in g.atoms], dtype=np.intp)
    mol = np.repeat(np.arange(len(graphs)), sizes)
    bt_index = {bt: k for k, bt in enumerate(vocab.bond_types)}
    src = {k: [] for k in range(vocab.d_e)}
    dst = {k: [] for k in range(vocab.d_e)}
    pi, pj, pm = pair_index(sizes, offsets)
    adj = np.zeros(len(pi), dtype=np.int8)
    btype = np.full(len(pi), -1, dtype=np.intp)
    pair_off = np.concatenate([[0], np.cumsum(sizes * (sizes - 1) // 2)])
    for b, g in enumerate(graphs):
        o = offsets[b]
        m = g.m
        for i, j, bt in g.bonds:
            k = bt_index[bt]
            src[k] += [o + i, o + j]
            dst[k] += [o + j, o + i]
            # position of (i, j) in the row-major upper-triangle listing
            p = pair_off[b] + i * m - i * (i + 1) // 2 + (j - i - 1)
            adj[p] = 1
            btype[p] = k
    edges = {k: (np.array(src[k], dtype=np.intp), np.array(dst[k], dtype=np.intp)) for k in src}
    hist = np.array([valence_histogram(g, vocab.nu).counts for g in graphs], dtype=np.float64)
    return GraphBatch(list(graphs), labels, mol, offsets, edges, pi, pj, pm, adj, btype, hist,
                      None if props is None else np.asarray(props, dtype=np.float64))

