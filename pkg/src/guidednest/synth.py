"""Synthetic corpora drawn from the guided nested generative process.

Every subtopic of phenotype ``k`` puts ``anchor_mass`` on its own anchor ICD
code; the anchors of ``k`` form its phenotype map entry, so guided priors can
be built from the generated data.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import (
    CROSS_SECTIONAL,
    Corpus,
    DocMeta,
    PhenotypeMap,
    corpus_from_records,
    normalize_regime,
    phenotype_map_from_pairs,
    save_corpus,
    save_metadata,
    save_phenotype_map,
)
from .errors import ParameterError
from .rng import SYNTH, stream


@dataclass
class PlantedModel:
    K: int
    M: int
    modalities: list[str]
    phi_true: list[np.ndarray]
    anchors: np.ndarray
    doc_lengths: list[tuple[str, float]]
    seed: int
    alpha_gen: np.ndarray | None = None
    pheno_per_doc: tuple[float, ...] = (0.5, 0.3, 0.2)
    active_alpha: float = 0.3
    background_alpha: float = 0.001

    @property
    def KM(self) -> int:
        return self.K * self.M

    @property
    def T(self) -> int:
        return len(self.modalities)

    def code(self, t: int, w: int) -> str:
        return f"{self.modalities[t][0]}{w:04d}"

    @staticmethod
    def phenotype_id(k: int) -> str:
        return f"P{k:03d}"


def planted_model(K: int = 10, M: int = 3, vocab_sizes: Sequence[int] = (300, 200),
                  modalities: Sequence[str] = ("ICD", "RX"), anchor_mass: float = 0.3,
                  concentration: float = 0.05, doc_lengths: Sequence[tuple[str, float]] | None = None,
                  seed: int = 0) -> PlantedModel:
    """Random column-stochastic topics with one anchor ICD code per subtopic."""
    if K < 1 or M < 1:
        raise ParameterError("K and M must be positive")
    if len(vocab_sizes) != len(modalities):
        raise ParameterError("one vocabulary size per modality is required")
    KM = K * M
    if vocab_sizes[0] < KM:
        raise ParameterError(f"ICD vocabulary must hold at least K*M={KM} anchor codes")
    if not 0.0 <= anchor_mass <= 1.0:
        raise ParameterError("anchor_mass must lie in [0, 1]")
    rng = stream(seed, SYNTH, 0)
    phi = []
    anchors = np.arange(KM, dtype=np.int64).reshape(K, M)
    for t, W in enumerate(vocab_sizes):
        if t == 0:
            rest = W - KM
            col = np.zeros((W, KM))
            col[anchors.ravel(), np.arange(KM)] = anchor_mass
            if rest > 0:
                col[KM:] = (1.0 - anchor_mass) * rng.dirichlet(np.full(rest, concentration), size=KM).T
            else:
                col[anchors.ravel(), np.arange(KM)] = 1.0
        else:
            col = rng.dirichlet(np.full(W, concentration), size=KM).T
        phi.append(col / col.sum(axis=0))
    if doc_lengths is None:
        doc_lengths = [("poisson", 15.0)] + [("poisson", 20.0)] * (len(modalities) - 1)
    return PlantedModel(K, M, list(modalities), phi, anchors, list(doc_lengths), seed)


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    pmap: PhenotypeMap
    planted: PlantedModel
    theta_true: np.ndarray
    z_true: list[np.ndarray]
    alpha_gen: np.ndarray

    def phi_true_aligned(self, t: int) -> np.ndarray:
        """Planted topic-word matrix with rows reordered to the corpus vocabulary."""
        rows = [int(code[1:]) for code in self.corpus.vocabularies[t].entries]
        src = self.planted.modalities.index(self.corpus.modalities[t])
        return self.planted.phi_true[src][rows]


def _draw_index(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def _doc_length(law, rng) -> int:
    kind, value = law
    if kind == "fixed":
        return int(value)
    if kind == "poisson":
        return int(rng.poisson(value))
    raise ParameterError(f"unknown document length law {kind!r}")


def default_alpha_gen(pm: PlantedModel, D: int) -> np.ndarray:
    rng = stream(pm.seed, SYNTH, 1)
    alpha = np.full((D, pm.KM), pm.background_alpha)
    sizes = rng.choice(np.arange(1, len(pm.pheno_per_doc) + 1), size=D, p=pm.pheno_per_doc)
    for d in range(D):
        ks = rng.choice(pm.K, size=min(int(sizes[d]), pm.K), replace=False)
        for k in ks:
            alpha[d, k * pm.M:(k + 1) * pm.M] = pm.active_alpha
    return alpha


def generate_corpus(pm: PlantedModel, D: int, regime: str = CROSS_SECTIONAL,
                    label_phenotype: int | None = 0) -> SyntheticCorpus:
    """Sample ``D`` documents; deterministic given the planted model's seed.

    Each document draws from its own substream.  In the cross-sectional
    regime repeated ICD codes in a document collapse to one token that keeps
    the first occurrence's subtopic.  Documents receive random age ranges
    and, when ``label_phenotype`` is set, a label drawn with probability
    ``0.05 + 0.9 * theta mass on that phenotype``.
    """
    if D < 1:
        raise ParameterError("D must be >= 1")
    regime = normalize_regime(regime)
    alpha_gen = pm.alpha_gen if pm.alpha_gen is not None else default_alpha_gen(pm, D)
    if alpha_gen.shape != (D, pm.KM) or np.any(alpha_gen.sum(axis=1) <= 0):
        raise ParameterError("alpha_gen must be D x KM with positive row mass")
    cdfs = [np.cumsum(p, axis=0).T.copy() for p in pm.phi_true]
    theta = np.empty((D, pm.KM))
    records = []
    z_parts: list[list[np.ndarray]] = [[] for _ in range(pm.T)]
    meta = {}
    for d in range(D):
        rng = stream(pm.seed, SYNTH, 2, d)
        th = rng.dirichlet(alpha_gen[d])
        theta[d] = th
        doc_id = f"d{d:06d}"
        cdf_theta = np.cumsum(th)[None, :]
        for t in range(pm.T):
            n = _doc_length(pm.doc_lengths[t], rng)
            if t == 0:
                n = max(n, 1)
            z = _draw_index(np.repeat(cdf_theta, n, axis=0), rng.random(n))
            x = _draw_index(cdfs[t][z], rng.random(n))
            groups: dict[int, list[int]] = {}
            for xi, zi in zip(x.tolist(), z.tolist()):
                groups.setdefault(xi, []).append(zi)
            zs = []
            for w, zl in groups.items():
                if t == 0 and regime == CROSS_SECTIONAL:
                    zl = zl[:1]
                records.append((doc_id, pm.modalities[t], pm.code(t, w), len(zl)))
                zs.extend(zl)
            z_parts[t].append(np.asarray(zs, dtype=np.int64))
        age_min = int(rng.integers(1, 81))
        age_max = age_min + int(rng.integers(0, 21))
        label = None
        if label_phenotype is not None:
            mass = th[label_phenotype * pm.M:(label_phenotype + 1) * pm.M].sum()
            label = int(rng.random() < 0.05 + 0.9 * mass)
        meta[doc_id] = DocMeta(age_min, age_max, label)
    corpus = corpus_from_records(records, regime, icd_label=pm.modalities[0])
    corpus.metadata = meta
    pairs = [(pm.code(0, int(pm.anchors[k, m])), pm.phenotype_id(k))
             for k in range(pm.K) for m in range(pm.M)]
    pmap = phenotype_map_from_pairs(pairs, corpus.icd_vocab)
    # ground truth follows the corpus modality order
    z_true = [np.concatenate(z_parts[pm.modalities.index(label)]) for label in corpus.modalities]
    return SyntheticCorpus(corpus, pmap, pm, theta, z_true, alpha_gen)


@dataclass
class RecoveryScore:
    cosines: np.ndarray
    mean: float
    matching: np.ndarray


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    return (a.T @ b) / np.outer(np.where(na > 0, na, 1.0), np.where(nb > 0, nb, 1.0))


def recovery_score(phi_est: np.ndarray, phi_true: np.ndarray, K: int, M: int) -> RecoveryScore:
    """Column cosines after matching subtopics within each phenotype block.

    ``matching[j]`` is the estimated column paired with true column ``j``.
    """
    if phi_est.shape != phi_true.shape or phi_est.shape[1] != K * M:
        raise ParameterError(f"shape mismatch: {phi_est.shape} vs {phi_true.shape} for K*M={K * M}")
    cos = np.empty(K * M)
    matching = np.empty(K * M, dtype=np.int64)
    for k in range(K):
        block = slice(k * M, (k + 1) * M)
        c = _cosine_matrix(phi_true[:, block], phi_est[:, block])
        rows, cols = linear_sum_assignment(-c)
        cos[k * M + rows] = c[rows, cols]
        matching[k * M + rows] = k * M + cols
    return RecoveryScore(cos, float(cos.mean()), matching)


def write_bundle(synth: SyntheticCorpus, out_dir) -> list[Path]:
    """Write corpus, map, metadata and the ground-truth TSVs; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, pm = synth.corpus, synth.planted
    paths = [out / "corpus.tsv", out / "map.tsv", out / "meta.tsv"]
    save_corpus(corpus, paths[0])
    save_phenotype_map(synth.pmap, corpus.icd_vocab, paths[1])
    save_metadata(corpus.metadata, paths[2])
    labels = [f"{pm.phenotype_id(k)}-{m}" for k in range(pm.K) for m in range(pm.M)]
    for t, label in enumerate(pm.modalities):
        p = out / f"phi_true_{label}.tsv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write("code\t" + "\t".join(labels) + "\n")
            for w in range(pm.phi_true[t].shape[0]):
                fh.write(pm.code(t, w) + "\t" + "\t".join(repr(float(v)) for v in pm.phi_true[t][w]) + "\n")
        paths.append(p)
    p = out / "theta_true.tsv"
    with open(p, "w", encoding="utf-8", newline="") as fh:
        fh.write("doc_id\t" + "\t".join(labels) + "\n")
        for doc_id, row in zip(corpus.doc_ids, synth.theta_true):
            fh.write(doc_id + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")
    paths.append(p)
    p = out / "z_true.tsv"
    with open(p, "w", encoding="utf-8", newline="") as fh:
        fh.write("doc_id\tmodality\tcode\tsubtopic\n")
        for t, label in enumerate(corpus.modalities):
            entries = corpus.vocabularies[t].entries
            pos = 0
            for doc in corpus.documents:
                for w, c in zip(doc.words[t], doc.counts[t]):
                    for _ in range(int(c)):
                        fh.write(f"{doc.doc_id}\t{label}\t{entries[w]}\t{labels[synth.z_true[t][pos]]}\n")
                        pos += 1
    paths.append(p)
    return paths
