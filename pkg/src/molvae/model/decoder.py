"""Histogram-conditioned atom decoding, masked edge decoding and assembly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..chem.graph import MolecularGraph, complete_hydrogens
from ..tensor.nn import MLP, BatchNorm, Linear

EDGE_THRESHOLD = 0.5


@dataclass
class AtomDecoding:
    r: T.Tensor             # post-batch-norm node features (N x s_n)
    r_raw: T.Tensor         # features fed to the type classifier
    logits: T.Tensor        # unmasked type logits (N x d_n)
    tau: np.ndarray         # chosen vocabulary index per atom
    masks: np.ndarray       # (N x d_n) labels allowed at choice time
    alpha_d: np.ndarray     # (N x nu) difference histogram seen at each step
    alpha_u: np.ndarray     # (N x nu) updated histogram after each step


class AtomDecoder:
    """Sequential atom typing conditioned on the valence histogram.

    At step t: alpha_d = alpha0 - alpha_u, e_t = tanh(K[z_t, alpha_d, alpha_u]),
    r_t = [z_t, e_t], tau_t drawn from F(r_t) restricted to labels whose
    valence still has alpha_d > 0, then alpha_u gains tau_t's valence.
    alpha0 stays fixed for every step.
    """

    def __init__(self, store, vocab, s_lt=70, s_n=120, histograms=True):
        self.vocab = vocab
        self.nu = vocab.nu
        self.histograms = histograms
        self.s_lt, self.s_n = s_lt, s_n
        self.K = Linear(store, "dec.K", s_lt + 2 * vocab.nu, s_n - s_lt)
        self.F = MLP(store, "dec.F", [s_n, s_n, vocab.d_n])
        self.bn = BatchNorm(store, "dec.bn", s_n)
        self.valence_of = vocab.label_valences() - 1  # histogram bucket per label

    def decode(self, Z, offsets, alpha0, mode="argmax", rngs=None, training=False, forced=None):
        """Decode atom types for a stacked batch of latent rows.

        ``alpha0`` is (B x nu); ``rngs`` is one Generator per molecule (sample
        mode); ``forced`` optionally fixes the chosen labels (ground-truth
        teacher forcing).
        """
        sizes = np.diff(offsets)
        B = len(sizes)
        n = int(offsets[-1])
        d_n = self.vocab.d_n
        alpha0 = np.asarray(alpha0, dtype=np.float64)
        alpha_u = np.zeros((B, self.nu))
        tau = np.zeros(n, dtype=np.intp)
        masks = np.ones((n, d_n), dtype=bool)
        ad_rows = np.zeros((n, self.nu))
        au_rows = np.zeros((n, self.nu))
        r_parts, logit_parts, order = [], [], []
        for t in range(int(sizes.max(initial=0))):
            active = np.nonzero(sizes > t)[0]
            rows = offsets[active] + t
            if self.histograms:
                a_d = alpha0[active] - alpha_u[active]
                a_u = alpha_u[active].copy()
            else:
                a_d = np.zeros((len(active), self.nu))
                a_u = np.zeros((len(active), self.nu))
            z = T.take(Z, rows)
            e = T.tanh(self.K(T.concat([z, T.Tensor(a_d), T.Tensor(a_u)], axis=1)))
            r = T.concat([z, e], axis=1)
            logits = self.F(r)
            if self.histograms:
                allowed = a_d[:, self.valence_of] > 0
            else:
                allowed = np.ones((len(active), d_n), dtype=bool)
            if not allowed.any(axis=1).all():
                raise AssertionError("no label compatible with the remaining histogram")
            if forced is not None:
                choice = np.asarray(forced)[rows]
            elif mode == "argmax":
                choice = np.argmax(np.where(allowed, logits.data, -np.inf), axis=1)
            elif mode == "sample":
                probs = T.softmax(logits, T.mask_from_bool(allowed)).data.astype(np.float64)
                choice = np.array([_draw(rngs[b], p) for b, p in zip(active, probs)], dtype=np.intp)
            else:
                raise ValueError(f"unknown decode mode {mode!r}")
            tau[rows] = choice
            masks[rows] = allowed
            ad_rows[rows] = a_d
            if self.histograms:
                alpha_u[active, self.valence_of[choice]] += 1
            au_rows[rows] = alpha_u[active]
            r_parts.append(r)
            logit_parts.append(logits)
            order.append(rows)
        if not r_parts:
            empty = T.Tensor(np.zeros((0, self.s_n)))
            return AtomDecoding(empty, empty, T.Tensor(np.zeros((0, d_n))), tau, masks, ad_rows, au_rows)
        order = np.concatenate(order)
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        r_raw = T.take(T.concat(r_parts, axis=0), inverse)
        logits = T.take(T.concat(logit_parts, axis=0), inverse)
        r = self.bn(r_raw, training)
        return AtomDecoding(r, r_raw, logits, tau, masks, ad_rows, au_rows)


def _draw(rng, p):
    p = p / p.sum()
    return int(rng.choice(len(p), p=p))


class EdgeDecoder:
    """Pairwise bond existence (C) and bond type (L) logit networks."""

    def __init__(self, store, vocab, s_n=120, s_h=70, hidden=(590, 190)):
        self.s_v = s_n + s_h
        width = 3 * self.s_v
        self.C = MLP(store, "dec.C", [width, *hidden, 1])
        self.L = MLP(store, "dec.L", [width, *hidden, vocab.d_e])

    @staticmethod
    def node_features(r, embed, tau):
        """s_v = [r_v, W(tau_v)]."""
        return T.concat([r, T.take(embed, tau)], axis=1)

    @staticmethod
    def pair_features(s, pair_i, pair_j, pair_mol, mol, n_mols):
        """phi_vu = [s_v + s_u, s_v * s_u, sum_i s_i] for every listed pair."""
        sv, su = T.take(s, pair_i), T.take(s, pair_j)
        total = T.take(T.segment_sum(s, mol, n_mols), pair_mol)
        return T.concat([sv + su, sv * su, total], axis=1)

    def logits(self, phi):
        c = self.C(phi)
        return c.reshape(c.shape[0]), self.L(phi)


def edge_features(r, tau_embed):
    """Dense (m x m x 3*dim(s)) pair features of one molecule.

    ``r`` is (m x s_n) and ``tau_embed`` (m x s_h), as arrays.
    """
    s = np.concatenate([np.asarray(r), np.asarray(tau_embed)], axis=1)
    total = s.sum(axis=0)
    m = s.shape[0]
    phi = np.empty((m, m, 3 * s.shape[1]), dtype=s.dtype)
    phi[:, :, :s.shape[1]] = s[:, None, :] + s[None, :, :]
    phi[:, :, s.shape[1]:2 * s.shape[1]] = s[:, None, :] * s[None, :, :]
    phi[:, :, 2 * s.shape[1]:] = total
    return phi


def edge_masks(remaining, weights, bonded=None):
    """Existence mask M^e (m x m) and type mask M^t (m x d_e x m).

    M^e[v, u] = 0 on the diagonal and for already bonded pairs; M^t[v, l, u]
    = 1 iff M^e[v, u] = 1 and both remaining capacities are >= we(l).
    """
    remaining = np.asarray(remaining)
    m = len(remaining)
    me = 1 - np.eye(m, dtype=np.int8)
    if bonded is not None:
        me = me * (1 - np.asarray(bonded, dtype=np.int8))
    w = np.asarray(weights)[None, :, None]
    fits = (remaining[:, None, None] >= w) & (remaining[None, None, :] >= w)
    mt = (fits & (me[:, None, :] == 1)).astype(np.int8)
    return me, mt


def edge_probabilities(c_logits, type_logits, me, mt):
    """Masked sigmoid / masked softmax of the C and L logits.

    ``c_logits`` is (m x m), ``type_logits`` (m x m x d_e); returns
    P_exist (m x m) and P_type (m x m x d_e).
    """
    c = np.asarray(c_logits, dtype=np.float64)
    ex = me * np.exp(np.minimum(c, 700.0))
    p_exist = ex / (ex + 1.0)
    allowed = np.transpose(mt, (0, 2, 1)) == 1
    logits = np.where(allowed, type_logits, -np.inf)
    top = np.max(logits, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(logits - top)
    z = e.sum(axis=-1, keepdims=True)
    p_type = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    return p_exist, p_type


@dataclass
class DecodeTrace:
    """Everything an inference decode of one molecule produced."""

    atom_logits: np.ndarray     # (m x d_n) unmasked F logits per step
    tau: np.ndarray             # (m,) chosen label indices
    atom_masks: np.ndarray      # (m x d_n) allowed labels per step
    c_logits: np.ndarray        # (m x m) existence logits, zero diagonal
    type_logits: np.ndarray     # (m x m x d_e)
    me: np.ndarray              # initial existence mask
    mt: np.ndarray              # initial type mask (m x d_e x m)
    order: list                 # placed bonds (v, u, type index) in placement order
    graph: MolecularGraph | None = None


def assemble_molecule(atoms, capacities, p_exist, type_logits, bond_types, mode="argmax",
                      rng=None, order=None):
    """Place bonds in decreasing existence probability under valence limits.

    Pairs with P_exist > 0.5 are visited from most to least probable, ties
    by (v, u).  For each, the type mask is recomputed against the remaining
    capacities; the type is the best feasible one (``argmax``) or drawn
    from the masked softmax (``sample``).  A pair with no feasible type is
    dropped.  Remaining valence becomes implicit hydrogens.  Placed bonds
    are appended to ``order`` when given.
    """
    m = len(atoms)
    remaining = np.array(capacities, dtype=np.int64)
    weights = np.array([bt.weight for bt in bond_types], dtype=np.int64)
    pe = np.asarray(p_exist, dtype=np.float64)
    tl = np.asarray(type_logits, dtype=np.float64)
    iu, ju = np.triu_indices(m, k=1)
    probs = pe[iu, ju]
    keep = probs > EDGE_THRESHOLD
    bonds = []
    for _, v, u in sorted(zip(-probs[keep], iu[keep], ju[keep])):
        feasible = (remaining[v] >= weights) & (remaining[u] >= weights)
        if not feasible.any():
            continue
        logits = np.where(feasible, tl[v, u], -np.inf)
        if mode == "argmax":
            k = int(np.argmax(logits))
        elif mode == "sample":
            e = np.exp(logits - logits.max())
            k = int(rng.choice(len(e), p=e / e.sum()))
        else:
            raise ValueError(f"unknown decode mode {mode!r}")
        remaining[v] -= weights[k]
        remaining[u] -= weights[k]
        bonds.append((int(v), int(u), bond_types[k]))
        if order is not None:
            order.append((int(v), int(u), k))
    g = MolecularGraph.build(atoms, bonds, capacities)
    return complete_hydrogens(g)


class PropertyHead:
    """O_p = sigmoid(sum_v mean_j sigmoid(Q1_p x_v)_j * tanh(Q2_p x_v)_j).

    x_v = leaky_relu(F_opt([r_v, W(tau_v)])).  The gate vector is averaged
    rather than summed: a plain sum pushes the outer sigmoid into saturation
    within a few Adam steps, after which the head stops learning.
    """

    def __init__(self, store, properties, s_v=190, hidden=120, width=64):
        self.properties = list(properties)
        self.F = Linear(store, "opt.F", s_v, hidden)
        self.Q1 = {p: Linear(store, f"opt.{p}.Q1", hidden, width) for p in self.properties}
        self.Q2 = {p: Linear(store, f"opt.{p}.Q2", hidden, width) for p in self.properties}

    def __call__(self, s, mol, n_mols, prop):
        """Per-molecule prediction (n_mols,) for property ``prop``."""
        if prop not in self.Q1:
            raise KeyError(f"unknown property {prop!r}")
        x = T.leaky_relu(self.F(s))
        gated = T.sigmoid(self.Q1[prop](x)) * T.tanh(self.Q2[prop](x))
        per_mol = T.segment_sum(gated, mol, n_mols).mean(axis=1)
        return T.sigmoid(per_mol)
