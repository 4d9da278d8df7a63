import numpy as np
import pytest

from guidednest import kernels
from guidednest.corpus import CROSS_SECTIONAL, corpus_from_records, phenotype_map_from_pairs

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    prev = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture
def tiny_corpus():
    """Two documents, three ICD codes, two RX codes."""
    records = [
        ("d1", "ICD", "250.00", 1), ("d1", "ICD", "401.9", 1), ("d1", "RX", "metformin", 2),
        ("d2", "ICD", "401.9", 1), ("d2", "ICD", "428.0", 1), ("d2", "RX", "lisinopril", 1),
        ("d2", "RX", "metformin", 1),
    ]
    return corpus_from_records(records, CROSS_SECTIONAL)


@pytest.fixture
def tiny_map(tiny_corpus):
    pairs = [("250.00", "250"), ("401.9", "401"), ("428.0", "428")]
    return phenotype_map_from_pairs(pairs, tiny_corpus.icd_vocab)


def tv(p, q, axis=-1):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=axis)
