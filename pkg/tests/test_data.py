import os

import numpy as np
import pytest

from molvae.data import (DataError, Dataset, format_dataset, load_prepared, parse_dataset,
                         parse_split, prepare, split_indices, write_prepared)


def test_parse_dataset_with_header_and_comments():
    ds = parse_dataset("# properties: a, b\n# note\nCCO\t1.0\t2\n\nCN\t3\t4.5\n")
    assert ds.smiles == ["CCO", "CN"] and ds.prop_names == ["a", "b"]
    assert ds.props.tolist() == [[1.0, 2.0], [3.0, 4.5]] and ds.line_numbers == [3, 5]
    again = parse_dataset(format_dataset(ds))
    assert again.smiles == ds.smiles and np.array_equal(again.props, ds.props)


def test_parse_dataset_errors():
    with pytest.raises(DataError):
        parse_dataset("CCO\t1\nCN\n")
    with pytest.raises(DataError):
        parse_dataset("CCO\tx\n")
    assert parse_dataset("CCO\nCN\n").props is None


def test_split_parsing():
    assert parse_split("0.85/0.05/0.10") == (0.85, 0.05, 0.10)
    for bad in ["0.5/0.5/0.5", "1/0", "a/b/c", "-0.1/0.6/0.5"]:
        with pytest.raises(ValueError):
            parse_split(bad)


def test_split_indices_deterministic_and_disjoint():
    a = split_indices(1000, seed=3)
    b = split_indices(1000, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert [len(x) for x in a] == [850, 50, 100]
    assert len(set(np.concatenate(a))) == 1000
    assert not np.array_equal(a[0], split_indices(1000, seed=4)[0])


def test_prepare_round_trip(tmp_path, qm9_smiles):
    ds = Dataset(qm9_smiles[:200] + ["C("], None, [], list(range(1, 202)))
    prep, report = prepare(ds, 2, seed=1, properties=["hetero_ratio"])
    assert report.n_failed == 1
    assert prep.stats["parsed"] == 200 and prep.stats["train"] == 170
    assert prep.splits["train"].prop_names == ["hetero_ratio"]
    write_prepared(str(tmp_path), prep)
    back = load_prepared(str(tmp_path))
    assert back.vocab.hash() == prep.vocab.hash()
    assert back.splits["test"].smiles == prep.splits["test"].smiles
    assert back.hist.total == prep.stats["train"]
    g = back.graphs("train")[0]
    assert g.m > 0


def test_load_prepared_missing(tmp_path):
    with pytest.raises(DataError):
        load_prepared(str(tmp_path))
