from .canon import canonical_order, canonical_ranks, canonicalize, refine_colors, write_canonical_smiles
from .graph import (AtomLabel, BondType, ChemError, MolecularGraph, complete_hydrogens, components,
                    is_connected, largest_component)
from .smiles import KekulizeError, SmilesError, parse_smiles, write_smiles
from .substructure import sample_substructures
from .vocab import (BuildReport, HistogramDistribution, ValenceHistogram, Vocabulary, build_vocabulary,
                    valence_histogram)
