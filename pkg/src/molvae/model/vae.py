"""The assembled variational autoencoder and its checkpoint round trip."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..chem.vocab import HistogramDistribution, Vocabulary
from ..tensor import checkpoint
from ..tensor.nn import ParamStore
from .batch import GraphBatch, pair_index
from .decoder import (AtomDecoder, DecodeTrace, EdgeDecoder, PropertyHead, assemble_molecule,
                      edge_masks)
from .encoder import Encoder, reparameterize


@dataclass
class ModelConfig:
    encoder: str = "rgin"
    histograms: bool = True
    s_h: int = 70
    s_lt: int = 70
    layers: int = 5
    s_n: int = 120
    edge_hidden: tuple = (590, 190)
    head_width: int = 64
    properties: list = field(default_factory=list)
    prop_ranges: dict = field(default_factory=dict)   # name -> [min, max] over the training split
    seed: int = 0

    def to_json(self):
        d = asdict(self)
        d["edge_hidden"] = list(self.edge_hidden)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["edge_hidden"] = tuple(d["edge_hidden"])
        return cls(**d)


@dataclass
class TrainOutputs:
    mu: T.Tensor
    var: T.Tensor
    atom_logits: T.Tensor       # (N x d_n)
    tau: np.ndarray
    p_exist: T.Tensor           # (P,) over the batch's i<j pairs
    p_type: T.Tensor            # (P x d_e), masked softmax
    type_allowed: np.ndarray    # (P x d_e)
    props: dict                 # property name -> (B,) prediction


class MolVAE:
    def __init__(self, vocab: Vocabulary, config: ModelConfig | None = None,
                 hist_dist: HistogramDistribution | None = None):
        self.vocab = vocab
        self.config = config or ModelConfig()
        self.hist_dist = hist_dist
        c = self.config
        self.store = ParamStore(np.random.default_rng(c.seed))
        self.encoder = Encoder(self.store, vocab, c.encoder, c.s_h, c.s_lt, c.layers)
        self.atoms = AtomDecoder(self.store, vocab, c.s_lt, c.s_n, c.histograms)
        self.edges = EdgeDecoder(self.store, vocab, c.s_n, c.s_h, c.edge_hidden)
        self.head = PropertyHead(self.store, c.properties, c.s_n + c.s_h, c.s_n, c.head_width)
        self.capacities = vocab.label_valences()
        self.weights = vocab.bond_weights()
        self.step = 0

    @property
    def params(self):
        return self.store.params

    # ------------------------------------------------------------ training path
    def encode(self, batch: GraphBatch, training=False):
        return self.encoder.forward(batch, training)

    def node_states(self, r, tau):
        return EdgeDecoder.node_features(r, self.encoder.embed, tau)

    def type_mask(self, tau, pair_i, pair_j):
        cap = self.capacities[tau]
        w = self.weights[None, :]
        return (cap[pair_i][:, None] >= w) & (cap[pair_j][:, None] >= w)

    def forward_train(self, batch: GraphBatch, rng, teacher_forcing=False, training=True):
        """Encode, sample Z, decode with the true histograms; return what the losses need."""
        mu, var = self.encode(batch, training)
        Z = reparameterize(mu, var, rng)
        dec = self.atoms.decode(Z, batch.offsets, batch.hist, mode="argmax", training=training,
                                forced=batch.labels if teacher_forcing else None)
        s = self.node_states(dec.r, dec.tau)
        phi = self.edges.pair_features(s, batch.pair_i, batch.pair_j, batch.pair_mol,
                                       batch.mol, batch.n_mols)
        c, l = self.edges.logits(phi)
        allowed = self.type_mask(dec.tau, batch.pair_i, batch.pair_j)
        p_type = T.softmax(l, T.mask_from_bool(allowed))
        props = {p: self.head(s, batch.mol, batch.n_mols, p) for p in self.config.properties}
        return TrainOutputs(mu, var, dec.logits, dec.tau, T.sigmoid(c), p_type, allowed, props)

    # ------------------------------------------------------------ inference path
    def encode_mean(self, batch):
        mu, var = self.encode(batch, training=False)
        return mu.data, var.data

    def decode(self, Z, alpha0, mode="argmax", rngs=None, sizes=None):
        """Decode stacked latent rows into molecules.

        ``alpha0`` is (B x nu); molecule sizes default to the histogram
        totals.  Returns (graphs, traces).
        """
        alpha0 = np.atleast_2d(np.asarray(alpha0, dtype=np.float64))
        if sizes is None:
            sizes = alpha0.sum(axis=1).astype(np.intp)
        sizes = np.asarray(sizes, dtype=np.intp)
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
        Zt = Z if isinstance(Z, T.Tensor) else T.Tensor(Z)
        dec = self.atoms.decode(Zt, offsets, alpha0, mode=mode, rngs=rngs, training=False)
        s = self.node_states(dec.r, dec.tau)
        pi, pj, pm = pair_index(sizes, offsets)
        mol = np.repeat(np.arange(len(sizes)), sizes)
        if len(pi):
            phi = self.edges.pair_features(s, pi, pj, pm, mol, len(sizes))
            c, l = self.edges.logits(phi)
            c, l = c.data.astype(np.float64), l.data.astype(np.float64)
        else:
            c = np.zeros(0)
            l = np.zeros((0, self.vocab.d_e))
        graphs, traces = [], []
        pair_off = np.concatenate([[0], np.cumsum(sizes * (sizes - 1) // 2)])
        for b, m in enumerate(sizes):
            o = offsets[b]
            tau = dec.tau[o:o + m]
            iu, ju = np.triu_indices(int(m), k=1)
            cm = np.zeros((m, m))
            lm = np.zeros((m, m, self.vocab.d_e))
            sl = slice(pair_off[b], pair_off[b + 1])
            cm[iu, ju] = cm[ju, iu] = c[sl]
            lm[iu, ju] = lm[ju, iu] = l[sl]
            caps = self.capacities[tau]
            me, mt = edge_masks(caps, self.weights)
            p_exist = me / (1.0 + np.exp(-np.clip(cm, -700, 700)))
            order = []
            atoms = [self.vocab.labels[k] for k in tau]
            rng = rngs[b] if rngs is not None else None
            g = assemble_molecule(atoms, caps, p_exist, lm, self.vocab.bond_types, mode, rng, order)
            graphs.append(g)
            traces.append(DecodeTrace(dec.logits.data[o:o + m], tau, dec.masks[o:o + m], cm, lm,
                                      me, mt, order, g))
        return graphs, traces

    def predict_property(self, Z, alpha0, prop):
        """O_p for one molecule's latent rows, as a Tensor (differentiable in Z)."""
        alpha0 = np.atleast_2d(np.asarray(alpha0, dtype=np.float64))
        m = int(alpha0.sum())
        offsets = np.array([0, m], dtype=np.intp)
        Zt = Z if isinstance(Z, T.Tensor) else T.Tensor(Z)
        dec = self.atoms.decode(Zt, offsets, alpha0, mode="argmax", training=False)
        s = self.node_states(dec.r, dec.tau)
        return self.head(s, np.zeros(m, dtype=np.intp), 1, prop).reshape(())

    def optimize_latent(self, Z0, alpha0, prop, steps, step_size=0.01):
        """Gradient ascent on O_p in latent space with the histogram fixed.

        Returns (Z*, trajectory) where the trajectory lists, per iterate
        k = 0..steps, (Z_k, predicted O_p(Z_k), decoded graph).
        """
        if prop not in self.config.properties:
            raise KeyError(f"unknown property {prop!r}")
        Z = np.array(Z0, dtype=T.default_dtype())
        traj = []
        for k in range(steps + 1):
            z = T.Tensor(Z, requires_grad=True)
            with T.Tape() as tape:
                score = self.predict_property(z, alpha0, prop)
            graphs, _ = self.decode(Z, alpha0)
            traj.append((Z.copy(), float(score.item()), graphs[0]))
            if k == steps:
                break
            g = tape.backward(score, [z])[0]
            if not np.all(np.isfinite(g)):
                raise T.NonFiniteError(f"non-finite latent gradient at iterate {k}")
            Z = Z + step_size * g
        return Z, traj

    # ------------------------------------------------------------ persistence
    def state_entries(self, optimizer=None):
        e = {k: p.data for k, p in self.params.items()}
        e.update({"buf." + k: v for k, v in self.store.buffers().items()})
        e["meta.seed"] = np.array([self.config.seed], dtype=np.int64)
        e["meta.step"] = np.array([self.step], dtype=np.int64)
        e["meta.vocab_hash"] = checkpoint.encode_string(self.vocab.hash())
        e["meta.vocab"] = checkpoint.encode_string(self.vocab.to_text())
        e["meta.config"] = checkpoint.encode_string(self.config.to_json())
        if self.hist_dist is not None:
            e["meta.hist"] = checkpoint.encode_string(self.hist_dist.to_text())
        if optimizer is not None:
            e.update(optimizer.state_arrays())
            e["adam.step"] = np.array([optimizer.step_count], dtype=np.int64)
        return e

    def save(self, path, optimizer=None):
        checkpoint.save(path, self.state_entries(optimizer))

    @classmethod
    def from_entries(cls, e):
        try:
            vocab = Vocabulary.from_text(checkpoint.decode_string(e["meta.vocab"]))
            config = ModelConfig.from_json(checkpoint.decode_string(e["meta.config"]))
        except KeyError as exc:
            raise checkpoint.CheckpointError(f"checkpoint lacks {exc.args[0]}") from None
        if checkpoint.decode_string(e["meta.vocab_hash"]) != vocab.hash():
            raise checkpoint.CheckpointError("vocabulary hash mismatch inside checkpoint")
        hist = (HistogramDistribution.from_text(checkpoint.decode_string(e["meta.hist"]))
                if "meta.hist" in e else None)
        model = cls(vocab, config, hist)
        for k, p in model.params.items():
            if k not in e:
                raise checkpoint.CheckpointError(f"checkpoint lacks parameter {k}")
            if e[k].shape != p.data.shape:
                raise checkpoint.CheckpointError(f"shape mismatch for {k}")
            p.data = np.asarray(e[k], dtype=T.default_dtype()).copy()
        model.store.load_buffers({k[4:]: v for k, v in e.items() if k.startswith("buf.")})
        model.step = int(e["meta.step"][0])
        return model

    @classmethod
    def load(cls, path):
        return cls.from_entries(checkpoint.load(path))
