import os

import numpy as np
import pytest

from molvae.chem import build_vocabulary, canonicalize

DATA = os.path.join(os.path.dirname(__file__), "data")


def read_smiles(name, limit=None):
    out = []
    with open(os.path.join(DATA, name)) as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                out.append(s.split()[0])
    return out[:limit] if limit else out


@pytest.fixture(scope="session")
def qm9_smiles():
    return read_smiles("qm9_like.smi")


@pytest.fixture(scope="session")
def zinc_smiles():
    return read_smiles("zinc_like.smi")


@pytest.fixture(scope="session")
def small_corpus(qm9_smiles):
    """Vocabulary, histogram distribution and canonical graphs of 200 molecules."""
    vocab, dist, report = build_vocabulary(qm9_smiles[:200], 2)
    graphs = [canonicalize(g) for _, _, g in report.graphs]
    return vocab, dist, graphs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = {}


def record(number, title, passed, detail):
    """Register one acceptance-criterion outcome for the end-of-run summary."""
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {title} - {detail}")
