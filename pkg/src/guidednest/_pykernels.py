"""Pure-Python reference kernels.

Arithmetic is ordered exactly like the compiled kernels so both backends
produce bit-identical assignments from the same uniforms.
"""
import numpy as np

from .errors import ConsistencyError, DegenerateDocumentError


def _draw(weights, u):
    cum = np.cumsum(weights)
    total = cum[-1]
    if not total > 0.0:
        return -1
    k = int(np.searchsorted(cum, u * total, side="right"))
    if k >= weights.shape[0]:
        k = int(np.flatnonzero(weights > 0.0)[-1])
    return k


def sweep(doc_ptr, words, z, u, alpha, n_target, n_icd, n_nonicd, eta, n_wk, n_k, beta, w_beta):
    """One collapsed-Gibbs pass over every token slot of one modality, in place."""
    D = doc_ptr.shape[0] - 1
    for d in range(D):
        lo, hi = doc_ptr[d], doc_ptr[d + 1]
        if lo == hi:
            continue
        a = alpha[d]
        ni = n_icd[d]
        nn = n_nonicd[d]
        nt = n_target[d]
        for i in range(lo, hi):
            w = words[i]
            k = z[i]
            nt[k] -= 1
            n_wk[w, k] -= 1
            n_k[k] -= 1
            if nt[k] < 0 or n_wk[w, k] < 0 or n_k[k] < 0:
                raise ConsistencyError(f"count underflow at document {d}, slot {i}")
            weights = (a + ni + eta * nn) * ((beta + n_wk[w]) / (w_beta + n_k))
            k = _draw(weights, u[i])
            if k < 0:
                nt[z[i]] += 1
                n_wk[w, z[i]] += 1
                n_k[z[i]] += 1
                raise DegenerateDocumentError(f"document {d} has no prior mass and no counts")
            z[i] = k
            nt[k] += 1
            n_wk[w, k] += 1
            n_k[k] += 1


def foldin_sweep(words, z, u, phi, alpha_d, n_target, n_icd, n_nonicd, eta):
    """One pass over a single document's tokens with frozen topic-word probabilities."""
    for i in range(words.shape[0]):
        w = words[i]
        n_target[z[i]] -= 1
        weights = (alpha_d + n_icd + eta * n_nonicd) * phi[w]
        k = _draw(weights, u[i])
        if k < 0:
            n_target[z[i]] += 1
            raise DegenerateDocumentError("document has no prior mass and no counts")
        z[i] = k
        n_target[k] += 1
