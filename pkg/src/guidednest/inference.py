"""Topic estimates and fold-in of unseen documents against frozen topics."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import Corpus, PhenotypeMap
from .errors import ParameterError
from .estimators import (
    PER_MODALITY,
    POOLED,
    estimate_phi,
    estimate_theta,
    theta_from_counts,
)
from .rng import FOLD_IN, stream
from .sampler import ModelState, converged, initial_assignments

FOLD_IN_TOL = 0.1

__all__ = [
    "PER_MODALITY",
    "POOLED",
    "FoldInResult",
    "TopicEstimates",
    "estimate_phi",
    "estimate_theta",
    "estimates_from_state",
    "fold_in",
    "fold_in_document",
]


@dataclass
class TopicEstimates:
    phi: list[np.ndarray]
    theta: np.ndarray
    provenance: str


def estimates_from_state(state: ModelState, mode: str = POOLED) -> TopicEstimates:
    phi = [estimate_phi(state, t) for t in range(state.T)]
    return TopicEstimates(phi, estimate_theta(state, None, mode), "from_training_state")


@dataclass
class DocFoldIn:
    theta: np.ndarray
    trace: list[float]
    iterations: int
    converged: bool
    empty: bool = False


@dataclass
class FoldInResult:
    theta: np.ndarray
    traces: list[list[float]]
    iterations: np.ndarray
    converged: np.ndarray
    empty: np.ndarray
    estimates: TopicEstimates | None = None


def _doc_loglik(theta_d, phi, words_by_t):
    total = 0.0
    for t, words in enumerate(words_by_t):
        if words.shape[0]:
            total += float(np.log(phi[t][words] @ theta_d).sum())
    return total


def fold_in_document(phi: list[np.ndarray], alpha_d: np.ndarray, words_by_t: list[np.ndarray],
                     z_by_t: list[np.ndarray], eta: float, icd: int, rng: np.random.Generator,
                     tol: float = FOLD_IN_TOL, max_iters: int = 500) -> DocFoldIn:
    """Gibbs-sample one document's subtopics with ``phi`` held fixed.

    Each iteration resamples the ICD tokens, then every non-ICD modality,
    updates the pooled mixture and stops once the document log likelihood
    changes by less than ``tol``.
    """
    KM = alpha_d.shape[0]
    alpha_d = np.ascontiguousarray(alpha_d, dtype=np.float64)
    if sum(w.shape[0] for w in words_by_t) == 0:
        return DocFoldIn(theta_from_counts(alpha_d, np.zeros(KM)), [], 0, True, empty=True)
    z_by_t = [np.ascontiguousarray(z, dtype=np.int64).copy() for z in z_by_t]
    n_icd = np.bincount(z_by_t[icd], minlength=KM).astype(np.int64)
    n_nonicd = np.zeros(KM, dtype=np.int64)
    order = [icd] + [t for t in range(len(words_by_t)) if t != icd]
    for t in order[1:]:
        n_nonicd += np.bincount(z_by_t[t], minlength=KM)
    prev = _doc_loglik(theta_from_counts(alpha_d, n_icd + n_nonicd), phi, words_by_t)
    trace = [prev]
    done = False
    it = 0
    while it < max_iters:
        it += 1
        for t in order:
            words = words_by_t[t]
            if words.shape[0] == 0:
                continue
            target = n_icd if t == icd else n_nonicd
            kernels.foldin_sweep(words, z_by_t[t], rng.random(words.shape[0]), phi[t], alpha_d,
                                 target, n_icd, n_nonicd, eta)
        theta = theta_from_counts(alpha_d, n_icd + n_nonicd)
        cur = _doc_loglik(theta, phi, words_by_t)
        trace.append(cur)
        if converged(prev, cur, tol):
            done = True
            break
        prev = cur
    return DocFoldIn(theta_from_counts(alpha_d, n_icd + n_nonicd), trace, it, done)


def fold_in(phi: list[np.ndarray], eta: float, corpus: Corpus, pmap: PhenotypeMap, alpha: np.ndarray,
            M: int, seed: int, tol: float = FOLD_IN_TOL, max_iters: int = 500,
            threads: int = 1) -> FoldInResult:
    """Infer document-topic mixtures for ``corpus`` (already on the model's vocabularies)."""
    KM = pmap.K * M
    if alpha.shape != (corpus.D, KM):
        raise ParameterError(f"alpha has shape {alpha.shape}, expected ({corpus.D}, {KM})")
    for t, p in enumerate(phi):
        if p.shape != (corpus.vocabularies[t].size, KM):
            raise ParameterError(f"phi of modality {t} does not match the corpus vocabulary")
    phi = [np.ascontiguousarray(p, dtype=np.float64) for p in phi]
    z0 = initial_assignments(corpus, pmap, M, seed)
    words = [[np.repeat(doc.words[t], doc.counts[t]).astype(np.int64) for t in range(corpus.T)]
             for doc in corpus.documents]
    offsets = [np.concatenate([[0], np.cumsum([w[t].shape[0] for w in words])]) for t in range(corpus.T)]

    def run(d):
        zs = [z0[t][offsets[t][d]:offsets[t][d + 1]] for t in range(corpus.T)]
        return fold_in_document(phi, alpha[d], words[d], zs, eta, corpus.icd_modality_id,
                                stream(seed, FOLD_IN, d), tol, max_iters)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(corpus.D)))
    else:
        results = [run(d) for d in range(corpus.D)]
    theta = np.vstack([r.theta for r in results]) if results else np.zeros((0, KM))
    out = FoldInResult(
        theta,
        [r.trace for r in results],
        np.array([r.iterations for r in results], dtype=np.int64),
        np.array([r.converged for r in results], dtype=bool),
        np.array([r.empty for r in results], dtype=bool),
    )
    out.estimates = TopicEstimates(phi, theta, "from_fold_in")
    return out
