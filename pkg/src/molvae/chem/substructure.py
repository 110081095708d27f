from __future__ import annotations

from .canon import write_canonical_smiles


def sample_substructures(g, count, walk_len, rng):
    """Canonical keys of ``count`` random-walk fragments of ``g``.

    Each walk starts at a uniformly drawn atom and takes up to ``walk_len``
    steps to random neighbours; the key is the canonical SMILES of the
    subgraph induced by the visited atoms.
    """
    if g.m == 0:
        return []
    nbrs = g.neighbors()
    keys = []
    for _ in range(count):
        cur = int(rng.integers(g.m))
        seen = {cur}
        for _ in range(walk_len):
            if not nbrs[cur]:
                break
            cur = nbrs[cur][int(rng.integers(len(nbrs[cur])))][0]
            seen.add(cur)
        keys.append(write_canonical_smiles(g.subgraph(seen)))
    return keys
