"""Canonical atom ordering.

Atoms are first coloured by iterative neighbourhood refinement (Morgan
style) starting from (label, degree, bond orders, hydrogens).  The canonical
order is the permutation minimising the key

    (colour of each position, bond code of every pair, column by column)

where the bond code of a pair is its bond weight, or 9 when unbonded.  The
colour block forces positions to follow sorted colours, so the search only
branches inside colour classes; ties in a class are explored exhaustively
with prefix pruning.  Any two minimising permutations differ by an
automorphism, hence produce the same SMILES.
"""
from __future__ import annotations

from .smiles import write_smiles

NO_BOND = 9


def _dense_rank(keys):
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def refine_colors(g):
    """Stable colour classes as dense integer ranks (isomorphism invariant)."""
    nbrs = g.neighbors()
    hs = g.hydrogens()
    init = [(g.atoms[v].sort_key(), len(nbrs[v]), tuple(sorted(bt.weight for _, bt in nbrs[v])), hs[v])
            for v in range(g.m)]
    colors = _dense_rank(init)
    n_classes = len(set(colors))
    while True:
        sig = [(colors[v], tuple(sorted((bt.weight, colors[u]) for u, bt in nbrs[v])))
               for v in range(g.m)]
        new = _dense_rank(sig)
        k = len(set(new))
        colors = new
        if k == n_classes:
            return colors
        n_classes = k


def bond_codes(g):
    code = [[NO_BOND] * g.m for _ in range(g.m)]
    for i, j, bt in g.bonds:
        code[i][j] = code[j][i] = bt.weight
    return code


def canonical_order(g):
    """Atom indices in canonical position order."""
    m = g.m
    if m <= 1:
        return list(range(m))
    colors = refine_colors(g)
    targets = sorted(colors)
    code = bond_codes(g)
    by_color = {}
    for v in range(m):
        by_color.setdefault(colors[v], []).append(v)

    best_cols = None
    best_order = None
    order = []
    cols = []
    used = [False] * m

    def search(k):
        nonlocal best_cols, best_order
        if k == m:
            if best_cols is None or cols < best_cols:
                best_cols = list(cols)
                best_order = list(order)
            return
        cand = [v for v in by_color[targets[k]] if not used[v]]
        columns = {v: tuple(code[order[i]][v] for i in range(k)) for v in cand}
        low = min(columns.values())
        if best_cols is not None:
            prefix = cols + [low]
            if prefix > best_cols[:k + 1]:
                return
        for v in cand:
            if columns[v] != low:
                continue
            used[v] = True
            order.append(v)
            cols.append(low)
            search(k + 1)
            cols.pop()
            order.pop()
            used[v] = False

    search(0)
    return best_order


def canonical_ranks(g):
    order = canonical_order(g)
    rank = [0] * g.m
    for pos, v in enumerate(order):
        rank[v] = pos
    return rank


def write_canonical_smiles(g):
    """Deterministic SMILES, invariant under relabelling of ``g``'s atoms."""
    return write_smiles(g, canonical_ranks(g))


def canonicalize(g):
    """Relabel ``g`` so atoms appear in canonical order."""
    return g.relabel(canonical_order(g))
