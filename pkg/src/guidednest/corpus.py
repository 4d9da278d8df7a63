"""Multi-modal coded documents, vocabularies and phenotype maps.

Corpus files are UTF-8 TSV with a header line::

    doc_id  modality  code  count

Phenotype map files are ``icd_code  phenotype_id`` and metadata files are
``doc_id  age_min  age_max  label`` (label ``0``, ``1`` or ``-``).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AmbiguityError,
    EmptyInputError,
    GuidedNestError,
    ParameterError,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

CROSS_SECTIONAL = "cross_sectional"
LONGITUDINAL = "longitudinal"
REGIMES = (CROSS_SECTIONAL, LONGITUDINAL)

_REGIME_ALIASES = {"cross": CROSS_SECTIONAL, "long": LONGITUDINAL}


def normalize_regime(regime: str) -> str:
    regime = _REGIME_ALIASES.get(regime, regime)
    if regime not in REGIMES:
        raise ParameterError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    return regime


class Vocabulary:
    """Dense, frozen code index for one modality."""

    def __init__(self, modality_id: int, entries: Sequence[str]):
        self.modality_id = modality_id
        self.entries = list(entries)
        self.index = {code: i for i, code in enumerate(self.entries)}
        if len(self.index) != len(self.entries):
            raise SchemaError(f"duplicate codes in vocabulary of modality {modality_id}")

    @property
    def size(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.modality_id == other.modality_id and self.entries == other.entries

    def __repr__(self) -> str:
        return f"Vocabulary(modality_id={self.modality_id}, size={self.size})"


@dataclass
class Document:
    """One patient record: per modality, unique word ids and their counts."""

    doc_id: str
    words: list[np.ndarray]
    counts: list[np.ndarray]

    def n_tokens(self, t: int) -> int:
        return int(self.counts[t].sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Document):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and len(self.words) == len(other.words)
            and all(np.array_equal(a, b) for a, b in zip(self.words, other.words))
            and all(np.array_equal(a, b) for a, b in zip(self.counts, other.counts))
        )


@dataclass(frozen=True)
class DocMeta:
    age_min: float | None = None
    age_max: float | None = None
    label: int | None = None


@dataclass
class Corpus:
    documents: list[Document]
    vocabularies: list[Vocabulary]
    modalities: list[str]
    icd_modality_id: int = 0
    regime: str = CROSS_SECTIONAL
    metadata: dict[str, DocMeta] = field(default_factory=dict)

    @property
    def D(self) -> int:
        return len(self.documents)

    @property
    def T(self) -> int:
        return len(self.modalities)

    @property
    def icd_vocab(self) -> Vocabulary:
        return self.vocabularies[self.icd_modality_id]

    @property
    def doc_ids(self) -> list[str]:
        return [doc.doc_id for doc in self.documents]

    def nonicd_modalities(self) -> list[int]:
        return [t for t in range(self.T) if t != self.icd_modality_id]

    def modality_id(self, label: str) -> int:
        try:
            return self.modalities.index(label)
        except ValueError:
            raise SchemaError(f"unknown modality label {label!r}") from None

    def total_count(self) -> int:
        return sum(int(c.sum()) for doc in self.documents for c in doc.counts)

    def subset(self, indices: Iterable[int]) -> Corpus:
        """Corpus restricted to the given documents, sharing vocabularies."""
        docs = [self.documents[i] for i in indices]
        meta = {d.doc_id: self.metadata[d.doc_id] for d in docs if d.doc_id in self.metadata}
        return Corpus(docs, self.vocabularies, list(self.modalities),
                      self.icd_modality_id, self.regime, meta)

    def drop_modalities(self, keep: Sequence[int]) -> Corpus:
        """Corpus with only the listed modalities (the ICD modality must be kept)."""
        keep = list(keep)
        if self.icd_modality_id not in keep:
            raise SchemaError("the ICD modality cannot be dropped")
        docs = [Document(d.doc_id, [d.words[t] for t in keep], [d.counts[t] for t in keep])
                for d in self.documents]
        vocabs = [Vocabulary(i, self.vocabularies[t].entries) for i, t in enumerate(keep)]
        return Corpus(docs, vocabs, [self.modalities[t] for t in keep],
                      keep.index(self.icd_modality_id), self.regime, dict(self.metadata))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.modalities == other.modalities
            and self.icd_modality_id == other.icd_modality_id
            and self.regime == other.regime
            and self.vocabularies == other.vocabularies
            and self.documents == other.documents
        )


@dataclass
class PhenotypeMap:
    """Many-to-one grouping of ICD word ids into ``K`` phenotype concepts."""

    phenotypes: list[str]
    icd_to_phenotype: dict[int, int]
    skipped: int = 0

    @property
    def K(self) -> int:
        return len(self.phenotypes)

    def lookup_array(self, W: int) -> np.ndarray:
        """Dense array of phenotype index per ICD word id, ``-1`` if unmapped."""
        out = np.full(W, -1, dtype=np.int64)
        for w, k in self.icd_to_phenotype.items():
            out[w] = k
        return out

    def report(self) -> str:
        return f"{self.K} phenotypes, {len(self.icd_to_phenotype)} codes mapped, {self.skipped} code{'s' if self.skipped != 1 else ''} skipped"


def map_icd_token(w: int, pmap: PhenotypeMap) -> int | None:
    return pmap.icd_to_phenotype.get(w)


def _read_rows(path: Path, arity: int, what: str):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{what} file {path} is empty (header required)")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != arity:
                raise ParseError(
                    f"{path}:{lineno}: expected {arity} tab-separated fields, got {len(row)}",
                    lineno,
                )
            yield lineno, row


def load_corpus(
    path,
    regime: str = CROSS_SECTIONAL,
    modalities: Sequence[str] | None = None,
    icd_label: str = "ICD",
) -> Corpus:
    """Load a corpus TSV.

    Documents are ordered by first appearance of their ``doc_id``.
    Vocabularies are built by scanning documents in that order and, within a
    document, its codes in order of first appearance; this keeps
    serialize-then-reload an exact round trip.  Duplicate rows are merged by
    summing counts; cross-sectional ICD counts are clamped to 1.

    Parameters
    ----------
    modalities : sequence of str, optional
        Allowed modality labels.  Any other label is a schema error.  When
        omitted every label is accepted.
    icd_label : str
        Label of the guiding ICD modality; it always gets modality id 0.
    """
    regime = normalize_regime(regime)
    allowed = None if modalities is None else set(modalities)
    if allowed is not None and icd_label not in allowed:
        raise SchemaError(f"declared modalities {sorted(allowed)} do not include {icd_label!r}")

    # doc_id -> modality label -> code -> count (dicts keep insertion order)
    docs: dict[str, dict[str, dict[str, int]]] = {}
    for lineno, (doc_id, label, code, raw) in _read_rows(path, 4, "corpus"):
        if allowed is not None and label not in allowed:
            raise SchemaError(f"{path}:{lineno}: unknown modality label {label!r}")
        try:
            count = int(raw)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: count {raw!r} is not an integer", lineno) from None
        if count <= 0:
            raise ParseError(f"{path}:{lineno}: count must be positive, got {count}", lineno)
        per_mod = docs.setdefault(doc_id, {}).setdefault(label, {})
        per_mod[code] = per_mod.get(code, 0) + count
    if not docs:
        raise EmptyInputError(f"corpus {path} contains no records")
    return _build_corpus(docs, regime, icd_label)


def _build_corpus(docs: dict[str, dict[str, dict[str, int]]], regime: str, icd_label: str) -> Corpus:
    labels = [icd_label]
    for per_doc in docs.values():
        for label in per_doc:
            if label not in labels:
                labels.append(label)
    if not any(icd_label in per_doc for per_doc in docs.values()):
        raise SchemaError(f"corpus has no {icd_label!r} records")
    lab_index = {label: t for t, label in enumerate(labels)}
    vocab_maps: list[dict[str, int]] = [{} for _ in labels]
    documents = []
    for doc_id, per_doc in docs.items():
        words = [[] for _ in labels]
        counts = [[] for _ in labels]
        for label, codes in per_doc.items():
            t = lab_index[label]
            vm = vocab_maps[t]
            for code, c in codes.items():
                w = vm.setdefault(code, len(vm))
                if regime == CROSS_SECTIONAL and t == 0:
                    c = 1
                words[t].append(w)
                counts[t].append(c)
        documents.append(Document(
            doc_id,
            [np.asarray(w, dtype=np.int64) for w in words],
            [np.asarray(c, dtype=np.int64) for c in counts],
        ))
    vocabs = [Vocabulary(t, list(vm)) for t, vm in enumerate(vocab_maps)]
    return Corpus(documents, vocabs, labels, 0, regime)


def corpus_from_records(records: Iterable[tuple[str, str, str, int]], regime: str = CROSS_SECTIONAL,
                        icd_label: str = "ICD") -> Corpus:
    """Build a corpus from in-memory ``(doc_id, modality, code, count)`` tuples."""
    regime = normalize_regime(regime)
    docs: dict[str, dict[str, dict[str, int]]] = {}
    for doc_id, label, code, count in records:
        if count <= 0:
            raise ParseError(f"non-positive count for ({doc_id}, {label}, {code})")
        per_mod = docs.setdefault(doc_id, {}).setdefault(label, {})
        per_mod[code] = per_mod.get(code, 0) + int(count)
    if not docs:
        raise EmptyInputError("no records")
    return _build_corpus(docs, regime, icd_label)


def iter_records(corpus: Corpus):
    for doc in corpus.documents:
        for t, label in enumerate(corpus.modalities):
            entries = corpus.vocabularies[t].entries
            for w, c in zip(doc.words[t], doc.counts[t]):
                yield doc.doc_id, label, entries[w], int(c)


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("doc_id\tmodality\tcode\tcount\n")
        for doc_id, label, code, count in iter_records(corpus):
            fh.write(f"{doc_id}\t{label}\t{code}\t{count}\n")


def load_phenotype_map(path, vocab: Vocabulary) -> PhenotypeMap:
    """Group ICD codes of ``vocab`` into phenotypes, sorted by phenotype id.

    Codes absent from the vocabulary are skipped and counted.  Phenotypes
    with no code in the vocabulary are dropped.
    """
    assignment: dict[str, str] = {}
    for lineno, (code, phen) in _read_rows(path, 2, "phenotype map"):
        prev = assignment.get(code)
        if prev is not None and prev != phen:
            raise AmbiguityError(
                f"{path}:{lineno}: ICD code {code!r} maps to both {prev!r} and {phen!r}", code)
        assignment[code] = phen
    return phenotype_map_from_pairs(assignment.items(), vocab)


def phenotype_map_from_pairs(pairs: Iterable[tuple[str, str]], vocab: Vocabulary) -> PhenotypeMap:
    assignment: dict[str, str] = {}
    for code, phen in pairs:
        prev = assignment.get(code)
        if prev is not None and prev != phen:
            raise AmbiguityError(f"ICD code {code!r} maps to both {prev!r} and {phen!r}", code)
        assignment[code] = phen
    kept = {code: phen for code, phen in assignment.items() if code in vocab.index}
    skipped = len(assignment) - len(kept)
    if not kept:
        raise GuidedNestError("no phenotype map code occurs in the ICD vocabulary; no guided topics possible")
    phenotypes = sorted(set(kept.values()))
    k_of = {p: k for k, p in enumerate(phenotypes)}
    icd_to_phenotype = {vocab.index[code]: k_of[phen] for code, phen in kept.items()}
    icd_to_phenotype = dict(sorted(icd_to_phenotype.items()))
    pmap = PhenotypeMap(phenotypes, icd_to_phenotype, skipped)
    logger.info("phenotype map: %s", pmap.report())
    return pmap


def save_phenotype_map(pmap: PhenotypeMap, vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("icd_code\tphenotype_id\n")
        for w, k in pmap.icd_to_phenotype.items():
            fh.write(f"{vocab.entries[w]}\t{pmap.phenotypes[k]}\n")


def load_metadata(path) -> dict[str, DocMeta]:
    def num(x):
        return None if x in ("-", "") else float(x)

    meta = {}
    for lineno, (doc_id, amin, amax, label) in _read_rows(path, 4, "metadata"):
        try:
            lo, hi = num(amin), num(amax)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: ages must be numeric or '-'", lineno) from None
        if lo is not None and hi is not None and lo > hi:
            raise ParseError(f"{path}:{lineno}: age_min {lo} exceeds age_max {hi}", lineno)
        if label in ("-", ""):
            lab = None
        elif label in ("0", "1"):
            lab = int(label)
        else:
            raise ParseError(f"{path}:{lineno}: label must be 0, 1 or '-', got {label!r}", lineno)
        meta[doc_id] = DocMeta(lo, hi, lab)
    return meta


def save_metadata(meta: dict[str, DocMeta], path) -> None:
    def fmt(x):
        if x is None:
            return "-"
        return str(int(x)) if float(x).is_integer() else repr(float(x))

    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("doc_id\tage_min\tage_max\tlabel\n")
        for doc_id, m in meta.items():
            fh.write(f"{doc_id}\t{fmt(m.age_min)}\t{fmt(m.age_max)}\t{'-' if m.label is None else m.label}\n")


def align_to_vocabularies(corpus: Corpus, modalities: Sequence[str],
                          vocabularies: Sequence[Vocabulary]) -> tuple[Corpus, np.ndarray]:
    """Re-index ``corpus`` onto frozen training vocabularies.

    Codes missing from the training vocabulary are dropped.  Returns the
    aligned corpus and a per-document array of dropped token counts.
    """
    for label in corpus.modalities:
        if label not in modalities:
            raise SchemaError(f"modality {label!r} is not part of the trained model")
    if corpus.modalities[corpus.icd_modality_id] != modalities[0]:
        raise SchemaError("ICD modality label differs from the trained model")
    src_of = {label: t for t, label in enumerate(corpus.modalities)}
    dropped = np.zeros(corpus.D, dtype=np.int64)
    docs = []
    for i, doc in enumerate(corpus.documents):
        words, counts = [], []
        for t, label in enumerate(modalities):
            s = src_of.get(label)
            if s is None:
                words.append(np.zeros(0, dtype=np.int64))
                counts.append(np.zeros(0, dtype=np.int64))
                continue
            src_entries = corpus.vocabularies[s].entries
            index = vocabularies[t].index
            ws, cs = [], []
            for w, c in zip(doc.words[s], doc.counts[s]):
                tw = index.get(src_entries[w])
                if tw is None:
                    dropped[i] += c
                else:
                    ws.append(tw)
                    cs.append(c)
            words.append(np.asarray(ws, dtype=np.int64))
            counts.append(np.asarray(cs, dtype=np.int64))
        docs.append(Document(doc.doc_id, words, counts))
    vocabs = [Vocabulary(t, v.entries) for t, v in enumerate(vocabularies)]
    aligned = Corpus(docs, vocabs, list(modalities), 0, corpus.regime, dict(corpus.metadata))
    return aligned, dropped


def phenotype_counts(corpus: Corpus, pmap: PhenotypeMap) -> np.ndarray:
    """``D x K`` matrix of ICD token counts per phenotype."""
    lookup = pmap.lookup_array(corpus.icd_vocab.size)
    out = np.zeros((corpus.D, pmap.K), dtype=np.int64)
    t = corpus.icd_modality_id
    for d, doc in enumerate(corpus.documents):
        ks = lookup[doc.words[t]]
        mask = ks >= 0
        np.add.at(out[d], ks[mask], doc.counts[t][mask])
    return out
