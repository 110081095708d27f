"""Molecular graph data model."""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class ChemError(ValueError):
    """Invalid molecule or label."""


class BondType(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3

    @property
    def weight(self):
        return int(self.value)

    @property
    def symbol(self):
        return {1: "", 2: "=", 3: "#"}[self.value]

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def from_label(cls, text):
        return cls[text.upper()]


_LABEL_RE = re.compile(r"^([A-Z][a-z]?)(?:(\d)\((-?\d+)\)(0|@@|@)?)?$")


@dataclass(frozen=True)
class AtomLabel:
    """Atom type at one of three granularities.

    representation 1: element only; 2: element, total valence, formal
    charge; 3: as 2 plus an opaque chirality token.
    """

    element: str
    total_valence: int | None = None
    formal_charge: int | None = None
    chiral_tag: str | None = None
    representation: int = 1

    def __post_init__(self):
        if self.representation not in (1, 2, 3):
            raise ChemError(f"unknown representation {self.representation}")
        if self.representation >= 2:
            if self.total_valence is None or not 1 <= self.total_valence <= 8:
                raise ChemError(f"total valence {self.total_valence} outside [1, 8] for {self.element}")
            if self.formal_charge is None:
                raise ChemError("representation >= 2 requires a formal charge")
        elif self.total_valence is not None or self.formal_charge is not None:
            raise ChemError("representation 1 labels carry only the element")
        if self.representation < 3 and self.chiral_tag is not None:
            raise ChemError("chiral tags require representation 3")

    def sort_key(self):
        return (self.element, self.total_valence or 0, self.formal_charge or 0, self.chiral_tag or "")

    def __str__(self):
        if self.representation == 1:
            return self.element
        text = f"{self.element}{self.total_valence}({self.formal_charge})"
        if self.representation == 3:
            text += self.chiral_tag or "0"
        return text

    @classmethod
    def parse(cls, text, representation):
        m = _LABEL_RE.match(text)
        if not m:
            raise ChemError(f"malformed atom label {text!r}")
        el, val, chg, tag = m.groups()
        if representation == 1:
            return cls(el)
        if val is None:
            raise ChemError(f"label {text!r} lacks valence/charge")
        if representation == 3:
            return cls(el, int(val), int(chg), None if tag in (None, "0") else tag, 3)
        return cls(el, int(val), int(chg), None, 2)


Bond = tuple  # (i, j, BondType) with i < j


@dataclass(frozen=True)
class MolecularGraph:
    """Heavy-atom graph with typed labels and bonds.

    ``capacities[v]`` is the valence of atom ``v``: the label's total valence
    for representations 2/3, the element's table valence for representation 1.
    ``implicit_h`` is filled by :func:`complete_hydrogens`.
    """

    atoms: tuple
    bonds: tuple
    capacities: tuple
    implicit_h: tuple | None = None

    def __post_init__(self):
        m = len(self.atoms)
        if len(self.capacities) != m:
            raise ChemError("one capacity per atom required")
        seen = set()
        for i, j, bt in self.bonds:
            if not (0 <= i < j < m):
                raise ChemError(f"bad bond ({i}, {j})")
            if (i, j) in seen:
                raise ChemError(f"duplicate bond ({i}, {j})")
            seen.add((i, j))
        used = self.bond_sums()
        for v in range(m):
            if used[v] > self.capacities[v]:
                raise ChemError(f"valence overflow on atom {v} ({self.atoms[v]}): "
                                f"{used[v]} > {self.capacities[v]}")

    @classmethod
    def build(cls, atoms, bonds, capacities):
        norm = sorted((min(i, j), max(i, j), BondType(bt)) for i, j, bt in bonds)
        return cls(tuple(atoms), tuple(norm), tuple(int(c) for c in capacities))

    @property
    def m(self):
        return len(self.atoms)

    def bond_sums(self):
        used = [0] * len(self.atoms)
        for i, j, bt in self.bonds:
            used[i] += bt.weight
            used[j] += bt.weight
        return used

    def neighbors(self):
        nbrs = [[] for _ in self.atoms]
        for i, j, bt in self.bonds:
            nbrs[i].append((j, bt))
            nbrs[j].append((i, bt))
        return nbrs

    def bond_between(self, i, j):
        a, b = min(i, j), max(i, j)
        for x, y, bt in self.bonds:
            if x == a and y == b:
                return bt
        return None

    def hydrogens(self):
        if self.implicit_h is not None:
            return self.implicit_h
        return tuple(c - u for c, u in zip(self.capacities, self.bond_sums()))

    def relabel(self, perm):
        """Graph with atom ``perm[k]`` moved to position ``k``."""
        inv = {old: new for new, old in enumerate(perm)}
        return MolecularGraph.build([self.atoms[p] for p in perm],
                                    [(inv[i], inv[j], bt) for i, j, bt in self.bonds],
                                    [self.capacities[p] for p in perm])

    def subgraph(self, keep):
        keep = sorted(keep)
        idx = {v: k for k, v in enumerate(keep)}
        bonds = [(idx[i], idx[j], bt) for i, j, bt in self.bonds if i in idx and j in idx]
        return MolecularGraph.build([self.atoms[v] for v in keep], bonds,
                                    [self.capacities[v] for v in keep])

    # dense views ---------------------------------------------------------
    def adjacency(self):
        a = np.zeros((self.m, self.m), dtype=np.int8)
        for i, j, _ in self.bonds:
            a[i, j] = a[j, i] = 1
        return a

    def edge_tensor(self, bond_types):
        index = {bt: k for k, bt in enumerate(bond_types)}
        e = np.zeros((self.m, self.m, len(bond_types)), dtype=np.int8)
        for i, j, bt in self.bonds:
            e[i, j, index[bt]] = e[j, i, index[bt]] = 1
        return e

    def node_matrix(self, labels):
        index = {lab: k for k, lab in enumerate(labels)}
        f = np.zeros((self.m, len(labels)), dtype=np.int8)
        for v, lab in enumerate(self.atoms):
            f[v, index[lab]] = 1
        return f


def complete_hydrogens(g):
    """Fill every atom's open valence with implicit hydrogens."""
    h = tuple(c - u for c, u in zip(g.capacities, g.bond_sums()))
    if any(x < 0 for x in h):
        raise ChemError(f"negative residual valence {h}")
    return MolecularGraph(g.atoms, g.bonds, g.capacities, h)


def components(g):
    """Connected components as sorted atom-index lists, ordered by lowest index."""
    nbrs = g.neighbors()
    seen = [False] * g.m
    comps = []
    for start in range(g.m):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for u, _ in nbrs[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


def is_connected(g):
    return g.m > 0 and len(components(g)) == 1


def largest_component(g):
    """Largest connected component; ties go to the one holding the lowest index."""
    comps = components(g)
    if not comps:
        return g
    best = max(comps, key=lambda c: (len(c), -c[0]))
    return g.subgraph(best)
