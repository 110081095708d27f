"""Small shared builders for model-level tests."""
import numpy as np

from molvae import tensor as T
from molvae.chem import AtomLabel, BondType, Vocabulary
from molvae.model import ModelConfig, MolVAE


def label(el, val, q=0):
    return AtomLabel(el, val, q, None, 2)


def toy_vocab():
    labels = (label("C", 4), label("N", 3), label("O", 2), label("F", 1))
    return Vocabulary(2, labels, tuple(BondType), 4)


def small_model(vocab, seed=0, **kw):
    cfg = dict(s_h=8, s_lt=6, layers=2, s_n=10, edge_hidden=(12, 8), head_width=5, seed=seed)
    cfg.update(kw)
    return MolVAE(vocab, ModelConfig(**cfg))


def eval_forward(model, batch):
    mu, var = model.encode(batch, training=False)
    return mu.data, var.data
