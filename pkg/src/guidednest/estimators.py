"""Point estimates of topic-word and document-topic distributions, and log likelihoods."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateDocumentError, ParameterError

PER_MODALITY = "per_modality"
POOLED = "pooled"

_CHUNK = 1 << 16


def phi_from_counts(n_wk: np.ndarray, beta: float) -> np.ndarray:
    W = n_wk.shape[0]
    return (beta + n_wk) / (W * beta + n_wk.sum(axis=0))


def theta_from_counts(alpha: np.ndarray, n_dk: np.ndarray) -> np.ndarray:
    mass = alpha + n_dk
    total = mass.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        bad = np.flatnonzero(np.atleast_1d(total.squeeze(-1) <= 0))
        raise DegenerateDocumentError(f"zero prior and count mass for document(s) {bad[:10].tolist()}")
    return mass / total


def estimate_phi(state, t: int) -> np.ndarray:
    """``W x KM`` matrix of smoothed topic-word probabilities for modality ``t``."""
    return phi_from_counts(state.n_wk[t], state.beta)


def doc_topic_counts(state, mode: str = POOLED, t: int | None = None) -> np.ndarray:
    if mode == PER_MODALITY:
        return state.doc_topic_counts(state.icd if t is None else t)
    if mode == POOLED:
        return state.n_dk_icd + state.n_dk_nonicd
    raise ParameterError(f"unknown theta mode {mode!r}")


def estimate_theta(state, d: int | None = None, mode: str = POOLED, t: int | None = None) -> np.ndarray:
    """Document-topic mixture row ``d`` (or the full matrix when ``d`` is None).

    ``per_modality`` uses the counts of modality ``t`` only (ICD by default);
    ``pooled`` sums counts over all modalities without the eta discount.
    """
    n = doc_topic_counts(state, mode, t)
    if d is None:
        return theta_from_counts(state.alpha, n)
    return theta_from_counts(state.alpha[d], n[d])


def token_loglik(theta: np.ndarray, phi: np.ndarray, slot_doc: np.ndarray, words: np.ndarray) -> float:
    """Sum over token slots of ``log sum_k theta[d, k] * phi[w, k]``."""
    total = 0.0
    for lo in range(0, words.shape[0], _CHUNK):
        sd = slot_doc[lo:lo + _CHUNK]
        ws = words[lo:lo + _CHUNK]
        p = np.einsum("ij,ij->i", theta[sd], phi[ws])
        total += float(np.log(p).sum())
    return total


def log_likelihood_modality(state, t: int, mode: str = PER_MODALITY) -> float:
    tok = state.tokens[t]
    if tok.words.shape[0] == 0:
        return 0.0
    theta = estimate_theta(state, None, mode, t)
    return token_loglik(theta, estimate_phi(state, t), tok.slot_doc, tok.words)


def joint_log_likelihood(state) -> float:
    """Sum over modalities with the pooled mixture shared by all of them."""
    theta = estimate_theta(state, None, POOLED)
    total = 0.0
    for t, tok in enumerate(state.tokens):
        if tok.words.shape[0]:
            total += token_loglik(theta, estimate_phi(state, t), tok.slot_doc, tok.words)
    return total
