# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled collapsed-Gibbs kernels; see _pykernels for the reference semantics."""
import numpy as np
from libc.stdlib cimport free, malloc

from .errors import ConsistencyError, DegenerateDocumentError

ctypedef long long i64


cdef inline Py_ssize_t _draw(const double* weights, double* cum, Py_ssize_t KM, double u) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    cdef double target
    for k in range(KM):
        acc = acc + weights[k]
        cum[k] = acc
    if not acc > 0.0:
        return -1
    target = u * acc
    for k in range(KM):
        if cum[k] > target:
            return k
    k = KM - 1
    while k > 0 and not weights[k] > 0.0:
        k -= 1
    return k


def sweep(const i64[::1] doc_ptr, const i64[::1] words, i64[::1] z, const double[::1] u,
          const double[:, ::1] alpha, i64[:, ::1] n_target, const i64[:, ::1] n_icd,
          const i64[:, ::1] n_nonicd, double eta, i64[:, ::1] n_wk, i64[::1] n_k,
          double beta, double w_beta):
    cdef Py_ssize_t D = doc_ptr.shape[0] - 1
    cdef Py_ssize_t KM = n_k.shape[0]
    cdef Py_ssize_t d, i, j, w, k
    cdef int status = 0
    cdef Py_ssize_t bad_d = -1, bad_i = -1
    cdef double* weights = <double*> malloc(2 * KM * sizeof(double))
    if weights == NULL:
        raise MemoryError()
    cdef double* cum = weights + KM
    with nogil:
        for d in range(D):
            for i in range(doc_ptr[d], doc_ptr[d + 1]):
                w = words[i]
                k = z[i]
                n_target[d, k] -= 1
                n_wk[w, k] -= 1
                n_k[k] -= 1
                if n_target[d, k] < 0 or n_wk[w, k] < 0 or n_k[k] < 0:
                    status = 2
                    bad_d = d
                    bad_i = i
                    break
                for j in range(KM):
                    weights[j] = ((alpha[d, j] + <double> n_icd[d, j]) + eta * <double> n_nonicd[d, j]) \
                        * ((beta + <double> n_wk[w, j]) / (w_beta + <double> n_k[j]))
                k = _draw(weights, cum, KM, u[i])
                if k < 0:
                    k = z[i]
                    n_target[d, k] += 1
                    n_wk[w, k] += 1
                    n_k[k] += 1
                    status = 1
                    bad_d = d
                    break
                z[i] = k
                n_target[d, k] += 1
                n_wk[w, k] += 1
                n_k[k] += 1
            if status != 0:
                break
    free(weights)
    if status == 1:
        raise DegenerateDocumentError(f"document {bad_d} has no prior mass and no counts")
    if status == 2:
        raise ConsistencyError(f"count underflow at document {bad_d}, slot {bad_i}")


def foldin_sweep(const i64[::1] words, i64[::1] z, const double[::1] u, const double[:, ::1] phi,
                 const double[::1] alpha_d, i64[::1] n_target, const i64[::1] n_icd,
                 const i64[::1] n_nonicd, double eta):
    cdef Py_ssize_t KM = n_target.shape[0]
    cdef Py_ssize_t i, j, w, k
    cdef int status = 0
    cdef double* weights = <double*> malloc(2 * KM * sizeof(double))
    if weights == NULL:
        raise MemoryError()
    cdef double* cum = weights + KM
    with nogil:
        for i in range(words.shape[0]):
            w = words[i]
            n_target[z[i]] -= 1
            for j in range(KM):
                weights[j] = ((alpha_d[j] + <double> n_icd[j]) + eta * <double> n_nonicd[j]) * phi[w, j]
            k = _draw(weights, cum, KM, u[i])
            if k < 0:
                n_target[z[i]] += 1
                status = 1
                break
            z[i] = k
            n_target[k] += 1
    free(weights)
    if status == 1:
        raise DegenerateDocumentError("document has no prior mass and no counts")
