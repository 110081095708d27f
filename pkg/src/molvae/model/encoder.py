"""Relational GIN encoder producing per-atom Gaussian posteriors."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor.nn import MLP, Linear

LOGVAR_MAX = 2.5
LOGVAR_MIN = -10.0


class Encoder:
    """Embedding + K message-passing layers + mean/variance heads.

    ``variant="rgin"`` transforms each neighbour message with a bond-type
    specific linear layer + leaky ReLU before summation; ``"gin"`` sums the
    raw neighbour states.
    """

    def __init__(self, store, vocab, variant="rgin", s_h=70, s_lt=70, layers=5, eps=0.0):
        if variant not in ("rgin", "gin"):
            raise ValueError(f"unknown encoder variant {variant!r}")
        self.variant = variant
        self.vocab = vocab
        self.s_h, self.s_lt, self.n_layers = s_h, s_lt, layers
        self.eps = [eps] * layers
        self.embed = store.add("enc.embed", store.rng.normal(0.0, 1.0, size=(vocab.d_n, s_h)))
        self.edge = []
        self.agg = []
        for k in range(1, layers + 1):
            if variant == "rgin":
                self.edge.append({l: Linear(store, f"enc.l{k}.edge{bt.weight}", s_h, s_h)
                                  for l, bt in enumerate(vocab.bond_types)})
            self.agg.append(MLP(store, f"enc.l{k}.agg", [s_h, s_h, s_h], out_act="leaky", norm=True))
        self.mu = MLP(store, "enc.mu", [s_h, s_h, s_lt])
        self.logvar = MLP(store, "enc.logvar", [s_h, s_h, s_lt])

    def embed_nodes(self, labels):
        return T.take(self.embed, labels)

    def messages(self, k, h, batch):
        n = h.shape[0]
        total = None
        for l, (src, dst) in batch.edges.items():
            if len(src) == 0:
                continue
            if self.variant == "rgin":
                t = T.leaky_relu(self.edge[k][l](h))
                part = T.segment_sum(T.take(t, src), dst, n)
            else:
                part = T.segment_sum(T.take(h, src), dst, n)
            total = part if total is None else total + part
        return total

    def layer(self, k, h, batch, training):
        """One update: h_v <- MLP((1 + eps) h_v + sum of neighbour messages)."""
        x = h * (1.0 + self.eps[k]) if self.eps[k] else h
        msg = self.messages(k, h, batch)
        if msg is not None:
            x = x + msg
        return self.agg[k](x, training)

    def hidden(self, batch, training):
        h = self.embed_nodes(batch.labels)
        for k in range(self.n_layers):
            h = self.layer(k, h, batch, training)
        return h

    def forward(self, batch, training=False):
        """Return (mu, var), each (N x s_lt)."""
        h = self.hidden(batch, training)
        mu = self.mu(h)
        pre = T.clamp_min(T.clamp_max(self.logvar(h), LOGVAR_MAX), LOGVAR_MIN)
        return mu, T.exp(pre)


def reparameterize(mu, var, rng):
    """z = mu + sqrt(var) * eta with eta ~ N(0, I) drawn from ``rng``."""
    eta = rng.standard_normal(mu.shape)
    return mu + T.sqrt(var) * T.Tensor(eta)
