import numpy as np
import pytest

from helpers import small_model, toy_vocab
from molvae import tensor as T
from molvae.chem import Vocabulary, canonical_ranks, parse_smiles
from molvae.model import LOGVAR_MAX, ModelConfig, MolVAE, make_batch, reparameterize


@pytest.fixture
def vocab():
    return toy_vocab()


def _batch(vocab, *smiles):
    return make_batch([parse_smiles(s) for s in smiles], vocab)


def test_embedding_lookup(vocab):
    m = small_model(vocab)
    b = _batch(vocab, "CCO")
    h = m.encoder.embed_nodes(b.labels).data
    assert np.array_equal(h[0], h[1])
    assert np.array_equal(h[2], m.encoder.embed.data[vocab.index(parse_smiles("O").atoms[0])])


def test_single_label_vocabulary_rows_equal():
    vocab = Vocabulary(2, (toy_vocab().labels[0],), toy_vocab().bond_types, 4)
    m = small_model(vocab)
    h = m.encoder.embed_nodes(_batch(vocab, "CCCC").labels).data
    assert (h == h[0]).all()


def test_isolated_node_is_plain_mlp(vocab):
    m = small_model(vocab)
    b = _batch(vocab, "C.O")
    h = m.encoder.embed_nodes(b.labels)
    out = m.encoder.layer(0, h, b, training=False).data
    assert np.allclose(out, m.encoder.agg[0](h, training=False).data)


def test_rgin_with_identity_edges_equals_gin_on_single_bonds(vocab):
    rg = small_model(vocab, encoder="rgin")
    gi = small_model(vocab, encoder="gin")
    for k, p in gi.params.items():
        p.data = rg.params[k].data.copy()
    for name, p in rg.params.items():
        if ".edge" in name:
            p.data = (np.eye(p.shape[0]) if name.endswith(".W") else np.zeros(p.shape)).astype(p.data.dtype)
    b = _batch(vocab, "CC(N)CO")
    h = T.Tensor(np.abs(np.random.default_rng(0).standard_normal((b.n_atoms, 8))))
    a = rg.encoder.layer(0, h, b, training=False).data
    c = gi.encoder.layer(0, h, b, training=False).data
    assert np.allclose(a, c, atol=1e-6)


def test_variance_clamp(vocab):
    m = small_model(vocab)
    for p in m.params.values():
        p.data = p.data * 50
    _, var = m.encode(_batch(vocab, "CC(=O)O", "N#CC"), training=False)
    assert var.data.max() <= np.exp(LOGVAR_MAX) * (1 + 1e-6)
    assert var.data.min() > 0


def test_arity(vocab):
    m = small_model(vocab)
    mu, var = m.encode(_batch(vocab, "CCO", "C"), training=False)
    assert mu.shape == (4, 6) and var.shape == (4, 6)


def test_isomorphic_graphs_same_posteriors(vocab):
    m = small_model(vocab)
    g1, g2 = parse_smiles("OCC(N)C"), parse_smiles("CC(N)CO")
    mu1, _ = m.encode(make_batch([g1], vocab))
    mu2, _ = m.encode(make_batch([g2], vocab))
    r1, r2 = canonical_ranks(g1), canonical_ranks(g2)
    a = mu1.data[np.argsort(r1)]
    b = mu2.data[np.argsort(r2)]
    assert np.allclose(a, b, atol=1e-5)


def test_reparameterize_floor_and_determinism():
    mu = T.Tensor(np.arange(6.0).reshape(2, 3))
    var = T.Tensor(np.full((2, 3), np.exp(-10.0)))
    z = reparameterize(mu, var, np.random.default_rng(0)).data
    assert np.allclose(z, mu.data, atol=0.05)
    z2 = reparameterize(mu, var, np.random.default_rng(0)).data
    assert np.array_equal(z, z2)


def test_reparameterize_monte_carlo_mean():
    n = 100_000
    mu = T.Tensor(np.full((n, 1), 0.7))
    var = T.Tensor(np.full((n, 1), 2.0))
    z = reparameterize(mu, var, np.random.default_rng(5)).data.astype(np.float64)
    se = np.sqrt(2.0 / n)
    assert abs(z.mean() - 0.7) < 3 * se


def test_gradient_reaches_embedding(vocab):
    from molvae.training import assemble_loss
    m = small_model(vocab)
    b = _batch(vocab, "CCO", "CN")
    with T.Tape() as tape:
        out = m.forward_train(b, np.random.default_rng(0))
        loss, _ = assemble_loss(out, b, 0.05, 0.0)
    g = tape.backward(loss, {"e": m.encoder.embed})["e"]
    used = np.unique(b.labels)
    assert all(np.abs(g[k]).sum() > 0 for k in used)


def test_unknown_variant(vocab):
    with pytest.raises(ValueError):
        MolVAE(vocab, ModelConfig(encoder="rgcn"))
