"""Built-in per-molecule properties usable as optimizer targets."""
from __future__ import annotations

from .graph import components

_MASS = {"H": 1.008, "B": 10.81, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998,
         "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45, "Br": 79.904, "I": 126.904}


def hetero_ratio(g):
    """Fraction of heavy atoms that are not carbon."""
    return sum(a.element != "C" for a in g.atoms) / max(g.m, 1)


def ring_density(g):
    """Independent cycles per heavy atom."""
    return (len(g.bonds) - g.m + len(components(g))) / max(g.m, 1)


def unsaturation(g):
    """Fraction of bonds that are double or triple."""
    return sum(bt.weight > 1 for _, _, bt in g.bonds) / max(len(g.bonds), 1)


def mol_weight(g):
    heavy = sum(_MASS.get(a.element, 0.0) for a in g.atoms)
    return heavy + _MASS["H"] * sum(g.hydrogens())


PROPERTIES = {
    "hetero_ratio": hetero_ratio,
    "ring_density": ring_density,
    "unsaturation": unsaturation,
    "mol_weight": mol_weight,
}


def compute(name, g):
    try:
        fn = PROPERTIES[name]
    except KeyError:
        raise KeyError(f"unknown property {name!r}; built-ins: {', '.join(PROPERTIES)}") from None
    return float(fn(g))
