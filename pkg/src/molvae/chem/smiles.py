"""SMILES reading and writing.

Reading supports the organic subset, bracket atoms with hydrogen count,
charge and ``@``/``@@`` tags, ring closures (``1``-``9`` and ``%nn``),
branches, the bond symbols ``- = # :`` (``/`` and ``\\`` read as single)
and ``.`` separated fragments.  Aromatic (lowercase) input is kekulized by a
maximum matching over each aromatic system.  Output is always Kekulé form.
"""
from __future__ import annotations

import networkx as nx

from .graph import AtomLabel, BondType, ChemError, MolecularGraph

ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br
Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho
Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U
""".split())

# allowed valences for implicit-hydrogen atoms
ORGANIC = {"B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
           "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,)}
AROMATIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S", "se": "Se", "as": "As"}
# default valences used for representation 1 when no table is supplied
DEFAULT_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2, "F": 1, "Cl": 1, "Br": 1,
                   "I": 1, "Si": 4, "Se": 2, "As": 3}
_GROUP = {"B": 13, "C": 14, "Si": 14, "N": 15, "P": 15, "As": 15, "O": 16, "S": 16, "Se": 16}


class SmilesError(ChemError):
    def __init__(self, message, position=None):
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}")


class KekulizeError(ChemError):
    pass


class _Atom:
    __slots__ = ("element", "aromatic", "bracket", "hcount", "charge", "chiral")

    def __init__(self, element, aromatic=False, bracket=False, hcount=None, charge=0, chiral=None):
        self.element, self.aromatic, self.bracket = element, aromatic, bracket
        self.hcount, self.charge, self.chiral = hcount, charge, chiral


def _parse_bracket(text, pos):
    """Parse ``[...]`` starting at ``pos`` (the '['); return (atom, next pos)."""
    end = text.find("]", pos)
    if end < 0:
        raise SmilesError("unterminated bracket atom", pos)
    body = text[pos + 1:end]
    i = 0
    if body[:1].isdigit():
        raise SmilesError("isotopes are not supported", pos)
    if body[:1] == "*":
        raise SmilesError("unknown element '*'", pos)
    aromatic = False
    if body[:2] in AROMATIC:
        element, aromatic, i = AROMATIC[body[:2]], True, 2
    elif body[:1] in AROMATIC:
        element, aromatic, i = AROMATIC[body[:1]], True, 1
    elif body[:2] in ELEMENTS and len(body) >= 2 and body[1].islower():
        element, i = body[:2], 2
    elif body[:1] in ELEMENTS:
        element, i = body[:1], 1
    else:
        raise SmilesError(f"unknown element in [{body}]", pos)
    if element == "H":
        raise SmilesError("explicit hydrogen atoms are not supported", pos)
    chiral = None
    if body[i:i + 2] == "@@":
        chiral, i = "@@", i + 2
    elif body[i:i + 1] == "@":
        chiral, i = "@", i + 1
    if chiral and body[i:i + 1].isalpha() and body[i:i + 1] != "H":
        raise SmilesError("extended chirality classes are not supported", pos)
    hcount = 0
    if body[i:i + 1] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        hcount = int(body[i:j]) if j > i else 1
        i = j
    charge = 0
    if body[i:i + 1] in ("+", "-"):
        sign = 1 if body[i] == "+" else -1
        j = i + 1
        while j < len(body) and body[j] == body[i]:
            j += 1
        if j == i + 1 and j < len(body) and body[j].isdigit():
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * int(body[j:k])
            j = k
        else:
            charge = sign * (j - i)
        i = j
    if body[i:i + 1] == ":":
        j = i + 1
        while j < len(body) and body[j].isdigit():
            j += 1
        i = j
    if i != len(body):
        raise SmilesError(f"unexpected '{body[i:]}' in bracket atom", pos + 1 + i)
    return _Atom(element, aromatic, True, hcount, charge, chiral), end + 1


def _tokenize_graph(text):
    atoms, bonds = [], []  # bonds: (i, j, symbol or None)
    ring = {}
    branch = []
    prev = None
    bond = None
    bond_pos = None
    pos, n = 0, len(text)
    if not text:
        raise SmilesError("empty SMILES", 0)
    while pos < n:
        c = text[pos]
        atom = None
        if c == "[":
            atom, nxt = _parse_bracket(text, pos)
        elif c in "BCNOPSFI" or c in "bcnops":
            if text[pos:pos + 2] in ("Cl", "Br"):
                atom, nxt = _Atom(text[pos:pos + 2]), pos + 2
            elif c.islower():
                atom, nxt = _Atom(AROMATIC[c], aromatic=True), pos + 1
            else:
                atom, nxt = _Atom(c), pos + 1
        elif c == "(":
            if prev is None:
                raise SmilesError("branch opened before any atom", pos)
            if bond is not None:
                raise SmilesError("bond symbol before branch", pos)
            if text[pos + 1:pos + 2] == ")":
                raise SmilesError("empty branch", pos)
            branch.append(prev)
            pos += 1
            continue
        elif c == ")":
            if not branch:
                raise SmilesError("unmatched branch ')'", pos)
            if bond is not None:
                raise SmilesError("dangling bond", bond_pos)
            prev = branch.pop()
            pos += 1
            continue
        elif c in "-=#:/\\":
            if bond is not None:
                raise SmilesError("consecutive bond symbols", pos)
            if prev is None:
                raise SmilesError("bond without a preceding atom", pos)
            bond, bond_pos = c, pos
            pos += 1
            continue
        elif c == ".":
            if bond is not None:
                raise SmilesError("dangling bond", bond_pos)
            if branch:
                raise SmilesError("'.' inside a branch", pos)
            prev = None
            pos += 1
            continue
        elif c.isdigit() or c == "%":
            if prev is None:
                raise SmilesError("ring bond without a preceding atom", pos)
            if c == "%":
                digits = text[pos + 1:pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError("'%' must be followed by two digits", pos)
                num, nxt = int(digits), pos + 3
            else:
                num, nxt = int(c), pos + 1
            if num in ring:
                j, sym, open_pos = ring.pop(num)
                if j == prev:
                    raise SmilesError("ring bond to itself", pos)
                if sym is not None and bond is not None and sym != bond \
                        and not {sym, bond} <= {"-", "/", "\\"}:
                    raise SmilesError("conflicting ring-closure bond symbols", pos)
                bonds.append((j, prev, bond if bond is not None else sym, pos))
            else:
                ring[num] = (prev, bond, pos)
            bond = None
            pos = nxt
            continue
        else:
            raise SmilesError(f"unexpected character {c!r}", pos)
        atoms.append(atom)
        k = len(atoms) - 1
        if prev is not None:
            bonds.append((prev, k, bond, pos))
        bond = None
        prev = k
        pos = nxt
    if bond is not None:
        raise SmilesError("dangling bond", bond_pos)
    if branch:
        raise SmilesError("unmatched branch", n)
    if ring:
        num, (_, _, p) = next(iter(ring.items()))
        raise SmilesError(f"unmatched ring bond {num}", p)
    return atoms, bonds


def _target_valence(atom):
    if atom.bracket:
        group = _GROUP.get(atom.element)
        q = atom.charge
        if group == 13:
            return 3 - q
        if group == 14:
            return 4 - abs(q)
        if group == 15:
            return 3 + q
        if group == 16:
            return 2 + q
        return None
    return ORGANIC[atom.element][0]


def _kekulize(atoms, orders, aromatic_pairs):
    """Assign double bonds to aromatic bonds; ``orders`` maps pair -> weight (in place)."""
    ext = [0] * len(atoms)
    n_arom = [0] * len(atoms)
    for (i, j), w in orders.items():
        if (i, j) in aromatic_pairs:
            n_arom[i] += 1
            n_arom[j] += 1
        else:
            ext[i] += w
            ext[j] += w
    needy = set()
    for v, a in enumerate(atoms):
        if not a.aromatic:
            continue
        target = _target_valence(a)
        if target is None:
            raise KekulizeError(f"cannot kekulize aromatic {a.element}")
        current = ext[v] + n_arom[v] + (a.hcount or 0)
        if target - current >= 1:
            needy.add(v)
    g = nx.Graph()
    g.add_nodes_from(sorted(needy))
    g.add_edges_from(sorted(p for p in aromatic_pairs if p[0] in needy and p[1] in needy))
    matching = nx.max_weight_matching(g, maxcardinality=True)
    if 2 * len(matching) != len(needy):
        raise KekulizeError("no alternating single/double assignment for aromatic system")
    for i, j in matching:
        orders[(min(i, j), max(i, j))] = 2


def _default_h(element, used):
    for v in ORGANIC[element]:
        if v >= used:
            return v - used
    return None


def parse_smiles(text, representation=2, valence_table=None):
    """Parse SMILES into a :class:`MolecularGraph` with atoms in string order.

    For representation 1 the valence capacity of each atom comes from
    ``valence_table`` (element -> valence), falling back to the usual
    default valence of the element.
    """
    if representation not in (1, 2, 3):
        raise ValueError(f"representation must be 1, 2 or 3, got {representation}")
    text = text.strip()
    atoms, raw = _tokenize_graph(text)
    orders = {}
    aromatic_pairs = set()
    for i, j, sym, pos in raw:
        key = (min(i, j), max(i, j))
        if key in orders:
            raise SmilesError("duplicate bond between the same atoms", pos)
        if sym is None:
            arom = atoms[i].aromatic and atoms[j].aromatic
            w = 1
        elif sym == ":":
            arom, w = True, 1
        else:
            arom, w = False, {"-": 1, "/": 1, "\\": 1, "=": 2, "#": 3}[sym]
        orders[key] = w
        if arom:
            aromatic_pairs.add(key)
    if any(a.aromatic for a in atoms):
        _kekulize(atoms, orders, aromatic_pairs)
    used = [0] * len(atoms)
    for (i, j), w in orders.items():
        used[i] += w
        used[j] += w
    labels, caps = [], []
    table = valence_table if valence_table is not None else DEFAULT_VALENCE
    for v, a in enumerate(atoms):
        if a.bracket:
            h = a.hcount
        else:
            h = _default_h(a.element, used[v])
            if h is None:
                raise ChemError(f"valence overflow on {a.element} (atom {v}): {used[v]} bonds")
        total = used[v] + h
        if representation == 1:
            cap = table.get(a.element, total)
            if used[v] > cap:
                raise ChemError(f"valence overflow on {a.element} (atom {v}): {used[v]} > {cap}")
            labels.append(AtomLabel(a.element))
            caps.append(cap)
        else:
            if not 1 <= total <= 8:
                raise ChemError(f"total valence {total} of {a.element} (atom {v}) outside [1, 8]")
            tag = a.chiral if representation == 3 else None
            labels.append(AtomLabel(a.element, total, a.charge, tag, representation))
            caps.append(total)
    bonds = [(i, j, BondType(w)) for (i, j), w in orders.items()]
    return MolecularGraph.build(labels, bonds, caps)


# ------------------------------------------------------------------- writing

def _atom_token(label, used, h):
    charge = label.formal_charge or 0
    tag = label.chiral_tag
    el = label.element
    if el in ORGANIC and charge == 0 and tag is None and _default_h(el, used) == h:
        return el
    text = "[" + el + (tag or "")
    if h == 1:
        text += "H"
    elif h > 1:
        text += f"H{h}"
    if charge:
        sign = "+" if charge > 0 else "-"
        text += sign if abs(charge) == 1 else f"{sign}{abs(charge)}"
    return text + "]"


def write_smiles(g, rank=None):
    """Write ``g`` as SMILES, traversing atoms in ``rank`` order.

    Each fragment starts at its lowest-ranked atom; neighbours are visited in
    increasing rank; ring closures are numbered with the lowest free digit.
    """
    m = g.m
    if m == 0:
        return ""
    rank = list(range(m)) if rank is None else list(rank)
    nbrs = [sorted(ns, key=lambda x: rank[x[0]]) for ns in g.neighbors()]
    used = g.bond_sums()
    hs = g.hydrogens()

    # first pass: DFS tree and ring-closure edges, in output order
    visited = [False] * m
    children = [[] for _ in range(m)]
    ring_edges = []  # (opener, closer, bond)
    seen_edges = set()
    roots = []
    for start in sorted(range(m), key=lambda v: rank[v]):
        if visited[start]:
            continue
        roots.append(start)
        stack = [(start, iter(nbrs[start]))]
        visited[start] = True
        while stack:
            v, it = stack[-1]
            for u, bt in it:
                e = (min(u, v), max(u, v))
                if e in seen_edges:
                    continue
                seen_edges.add(e)
                if visited[u]:
                    ring_edges.append((u, v, bt))
                else:
                    visited[u] = True
                    children[v].append((u, bt))
                    stack.append((u, iter(nbrs[u])))
                    break
            else:
                stack.pop()

    events = [[] for _ in range(m)]  # (is_opening, partner rank, edge id)
    for k, (a, b, bt) in enumerate(ring_edges):
        events[a].append((1, rank[b], k))
        events[b].append((0, rank[a], k))

    free = list(range(1, 100))
    digit_of = {}
    out = []

    def ring_text(v):
        parts = []
        for opening, _, k in sorted(events[v]):
            if opening:
                d = free.pop(0)
                digit_of[k] = d
                sym = ring_edges[k][2].symbol
            else:
                d = digit_of.pop(k)
                free.append(d)
                free.sort()
                sym = ""
            parts.append(sym + (str(d) if d < 10 else f"%{d}"))
        return "".join(parts)

    def emit(v):
        # iterative pre-order walk: stack items are atoms or literal strings
        stack = [v]
        while stack:
            item = stack.pop()
            if isinstance(item, str):
                out.append(item)
                continue
            out.append(_atom_token(g.atoms[item], used[item], hs[item]))
            out.append(ring_text(item))
            kids = children[item]
            todo = []
            for idx, (u, bt) in enumerate(kids):
                last = idx == len(kids) - 1
                if last:
                    todo.append(bt.symbol)
                    todo.append(u)
                else:
                    todo.extend(["(" + bt.symbol, u, ")"])
            stack.extend(reversed(todo))

    for i, root in enumerate(roots):
        if i:
            out.append(".")
        emit(root)
    return "".join(out)
