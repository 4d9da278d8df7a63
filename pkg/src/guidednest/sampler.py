"""Collapsed Gibbs sampling over nested phenotype subtopics.

Document-side weights use the discounted aggregate
``n_icd + eta * n_nonicd``; word-side statistics are kept per modality.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .corpus import CROSS_SECTIONAL, LONGITUDINAL, Corpus, PhenotypeMap
from .errors import ConsistencyError, DegenerateDocumentError, ParameterError
from .estimators import joint_log_likelihood, log_likelihood_modality, POOLED
from .rng import INIT, SWEEP, stream

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    M: int = 3
    eta: float = 0.4
    beta: float = 0.01
    seed: int = 0
    max_iters: int = 500
    likelihood_tol: float = 0.1
    schedule: str = CROSS_SECTIONAL

    def __post_init__(self):
        if self.M < 1:
            raise ParameterError(f"M must be >= 1, got {self.M}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if not self.likelihood_tol > 0:
            raise ParameterError("likelihood_tol must be positive")
        if self.schedule not in (CROSS_SECTIONAL, LONGITUDINAL):
            raise ParameterError(f"unknown schedule {self.schedule!r}")


@dataclass
class TokenTable:
    """Token slots of one modality in CSR layout; counts are expanded to one slot each."""

    doc_ptr: np.ndarray
    words: np.ndarray
    slot_doc: np.ndarray

    @classmethod
    def from_corpus(cls, corpus: Corpus, t: int) -> TokenTable:
        lengths = np.zeros(corpus.D, dtype=np.int64)
        parts = []
        for d, doc in enumerate(corpus.documents):
            slots = np.repeat(doc.words[t], doc.counts[t])
            lengths[d] = slots.shape[0]
            parts.append(slots)
        doc_ptr = np.zeros(corpus.D + 1, dtype=np.int64)
        np.cumsum(lengths, out=doc_ptr[1:])
        words = np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, np.int64)
        slot_doc = np.repeat(np.arange(corpus.D, dtype=np.int64), lengths)
        return cls(doc_ptr, np.ascontiguousarray(words), slot_doc)

    @property
    def n_slots(self) -> int:
        return int(self.words.shape[0])

    def doc_slice(self, d: int) -> slice:
        return slice(int(self.doc_ptr[d]), int(self.doc_ptr[d + 1]))


class ModelState:
    """Assignments ``z`` and the sufficient statistics derived from them."""

    def __init__(self, tokens: list[TokenTable], W: list[int], alpha: np.ndarray, K: int, M: int,
                 beta: float, eta: float, z: list[np.ndarray], icd: int = 0):
        self.tokens = tokens
        self.W = list(W)
        self.alpha = np.ascontiguousarray(alpha, dtype=np.float64)
        self.K = K
        self.M = M
        self.beta = float(beta)
        self.eta = float(eta)
        self.icd = icd
        self.z = [np.ascontiguousarray(zt, dtype=np.int64) for zt in z]
        D = self.alpha.shape[0]
        if self.alpha.shape != (D, self.KM):
            raise ParameterError(f"alpha has shape {self.alpha.shape}, expected ({D}, {self.KM})")
        for zt in self.z:
            if zt.size and (zt.min() < 0 or zt.max() >= self.KM):
                raise ParameterError("assignment out of range")
        self.n_wk = [self._word_counts(t) for t in range(self.T)]
        self.n_k = [nw.sum(axis=0) for nw in self.n_wk]
        self.n_dk_icd = self.doc_topic_counts(icd)
        self.n_dk_nonicd = np.zeros((D, self.KM), dtype=np.int64)
        for t in self.nonicd:
            self.n_dk_nonicd += self.doc_topic_counts(t)

    @classmethod
    def from_corpus(cls, corpus: Corpus, alpha, K: int, M: int, beta: float, eta: float,
                    z: list[np.ndarray]) -> ModelState:
        tokens = [TokenTable.from_corpus(corpus, t) for t in range(corpus.T)]
        return cls(tokens, [v.size for v in corpus.vocabularies], alpha, K, M, beta, eta, z,
                   corpus.icd_modality_id)

    @property
    def KM(self) -> int:
        return self.K * self.M

    @property
    def T(self) -> int:
        return len(self.tokens)

    @property
    def D(self) -> int:
        return self.alpha.shape[0]

    @property
    def nonicd(self) -> list[int]:
        return [t for t in range(self.T) if t != self.icd]

    @property
    def n_doc_topic_agg(self) -> np.ndarray:
        return self.n_dk_icd + self.eta * self.n_dk_nonicd

    def _word_counts(self, t: int) -> np.ndarray:
        flat = np.bincount(self.tokens[t].words * self.KM + self.z[t], minlength=self.W[t] * self.KM)
        return flat.reshape(self.W[t], self.KM).astype(np.int64)

    def doc_topic_counts(self, t: int) -> np.ndarray:
        """``D x KM`` counts of modality ``t`` alone, recomputed from assignments."""
        flat = np.bincount(self.tokens[t].slot_doc * self.KM + self.z[t], minlength=self.D * self.KM)
        return flat.reshape(self.D, self.KM).astype(np.int64)

    def _doc_target(self, t: int) -> np.ndarray:
        return self.n_dk_icd if t == self.icd else self.n_dk_nonicd

    def remove(self, t: int, i: int) -> int:
        """Take slot ``i`` of modality ``t`` out of the counts; returns its old topic."""
        d = int(self.tokens[t].slot_doc[i])
        w = int(self.tokens[t].words[i])
        k = int(self.z[t][i])
        target = self._doc_target(t)
        if target[d, k] <= 0 or self.n_wk[t][w, k] <= 0 or self.n_k[t][k] <= 0:
            raise ConsistencyError(f"count underflow removing slot {i} of modality {t}")
        target[d, k] -= 1
        self.n_wk[t][w, k] -= 1
        self.n_k[t][k] -= 1
        return k

    def add(self, t: int, i: int, k: int) -> None:
        if not 0 <= k < self.KM:
            raise ParameterError(f"subtopic {k} out of range")
        d = int(self.tokens[t].slot_doc[i])
        w = int(self.tokens[t].words[i])
        self.z[t][i] = k
        self._doc_target(t)[d, k] += 1
        self.n_wk[t][w, k] += 1
        self.n_k[t][k] += 1

    def check_invariants(self) -> None:
        """Raise ConsistencyError unless all statistics match a recount from ``z``."""
        for t in range(self.T):
            if not np.array_equal(self.n_wk[t], self._word_counts(t)):
                raise ConsistencyError(f"word-topic counts of modality {t} disagree with z")
            if not np.array_equal(self.n_k[t], self.n_wk[t].sum(axis=0)):
                raise ConsistencyError(f"topic totals of modality {t} disagree with word-topic counts")
            lengths = np.diff(self.tokens[t].doc_ptr)
            if not np.array_equal(self.doc_topic_counts(t).sum(axis=1), lengths):
                raise ConsistencyError(f"document lengths of modality {t} not conserved")
        if not np.array_equal(self.n_dk_icd, self.doc_topic_counts(self.icd)):
            raise ConsistencyError("ICD document-topic counts disagree with z")
        nonicd = np.zeros_like(self.n_dk_nonicd)
        for t in self.nonicd:
            nonicd += self.doc_topic_counts(t)
        if not np.array_equal(self.n_dk_nonicd, nonicd):
            raise ConsistencyError("non-ICD document-topic counts disagree with z")
        if not np.array_equal(self.n_doc_topic_agg, self.n_dk_icd + self.eta * self.n_dk_nonicd):
            raise ConsistencyError("aggregate identity violated")
        for t in range(self.T):
            if not np.array_equal(self.n_wk[t].sum(axis=0), self.doc_topic_counts(t).sum(axis=0)):
                raise ConsistencyError(f"modality {t}: word-side and document-side totals differ")

    def copy(self) -> ModelState:
        new = object.__new__(ModelState)
        new.__dict__.update(self.__dict__)
        new.alpha = self.alpha.copy()
        new.z = [zt.copy() for zt in self.z]
        new.n_wk = [a.copy() for a in self.n_wk]
        new.n_k = [a.copy() for a in self.n_k]
        new.n_dk_icd = self.n_dk_icd.copy()
        new.n_dk_nonicd = self.n_dk_nonicd.copy()
        return new


def remove_token(state: ModelState, t: int, i: int) -> int:
    return state.remove(t, i)


def add_token(state: ModelState, t: int, i: int, k: int) -> None:
    state.add(t, i, k)


def gibbs_conditional(state: ModelState, d: int, t: int, w: int) -> np.ndarray:
    """Normalized subtopic distribution for a token of word ``w`` in document ``d``.

    The token must already be excluded from the counts.
    """
    doc = state.alpha[d] + state.n_dk_icd[d] + state.eta * state.n_dk_nonicd[d]
    if not doc.sum() > 0:
        raise DegenerateDocumentError(f"document {d} has no prior mass and no counts")
    word = (state.beta + state.n_wk[t][w]) / (state.W[t] * state.beta + state.n_k[t])
    p = doc * word
    return p / p.sum()


def gibbs_conditional_icd(state: ModelState, d: int, w: int) -> np.ndarray:
    return gibbs_conditional(state, d, state.icd, w)


def gibbs_conditional_nonicd(state: ModelState, d: int, t: int, w: int) -> np.ndarray:
    if t == state.icd:
        raise ParameterError("modality is the ICD modality")
    return gibbs_conditional(state, d, t, w)


def sweep_modality(state: ModelState, t: int, rng: np.random.Generator) -> None:
    """Resample every slot of modality ``t`` in document order, in place."""
    tok = state.tokens[t]
    u = rng.random(tok.n_slots)
    kernels.sweep(tok.doc_ptr, tok.words, state.z[t], u, state.alpha, state._doc_target(t),
                  state.n_dk_icd, state.n_dk_nonicd, state.eta, state.n_wk[t], state.n_k[t],
                  state.beta, state.W[t] * state.beta)


def initial_assignments(corpus: Corpus, pmap: PhenotypeMap, M: int, seed: int) -> list[np.ndarray]:
    """Starting subtopics aligned with the guided prior.

    Mapped ICD tokens take a random subtopic of their phenotype.  Unmapped ICD
    tokens and non-ICD tokens take a random subtopic among the phenotypes the
    document observes, or any subtopic when it observes none.
    """
    K = pmap.K
    icd = corpus.icd_modality_id
    lookup = pmap.lookup_array(corpus.icd_vocab.size)
    sub = np.arange(M)
    z = []
    observed = []
    for doc in corpus.documents:
        ks = np.unique(lookup[doc.words[icd]])
        ks = ks[ks >= 0]
        observed.append((ks[:, None] * M + sub).ravel() if ks.size else np.arange(K * M))
    for t in range(corpus.T):
        tok = TokenTable.from_corpus(corpus, t)
        u = stream(seed, INIT, t).random(tok.n_slots)
        zt = np.empty(tok.n_slots, dtype=np.int64)
        for d in range(corpus.D):
            s = tok.doc_slice(d)
            if s.start == s.stop:
                continue
            cands = observed[d]
            pick = cands[np.minimum((u[s] * cands.size).astype(np.int64), cands.size - 1)]
            if t == icd:
                k = lookup[tok.words[s]]
                mapped = k >= 0
                m = np.minimum((u[s] * M).astype(np.int64), M - 1)
                pick = np.where(mapped, k * M + m, pick)
            zt[s] = pick
        z.append(zt)
    return z


def initialize_state(corpus: Corpus, pmap: PhenotypeMap, alpha: np.ndarray, config: TrainConfig) -> ModelState:
    z = initial_assignments(corpus, pmap, config.M, config.seed)
    return ModelState.from_corpus(corpus, alpha, pmap.K, config.M, config.beta, config.eta, z)


@dataclass
class LikelihoodTrace:
    """Per-iteration log likelihoods keyed by stage (a modality label or ``joint``)."""

    entries: list[tuple[int, str, float]] = field(default_factory=list)
    initial: dict[str, float] = field(default_factory=dict)
    converged: dict[str, bool] = field(default_factory=dict)

    def values(self, stage: str) -> list[float]:
        return [v for _, s, v in self.entries if s == stage]

    def iterations(self, stage: str) -> int:
        return len(self.values(stage))

    def record(self, it: int, stage: str, value: float) -> None:
        if not math.isfinite(value):
            raise ConsistencyError(f"non-finite log likelihood at iteration {it} ({stage})")
        self.entries.append((it, stage, value))

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("iter\tmodality\tloglik\n")
            for it, stage, v in self.entries:
                fh.write(f"{it}\t{stage}\t{v!r}\n")


def converged(prev: float, cur: float, tol: float) -> bool:
    return abs(cur - prev) < tol


SweepCallback = Callable[[ModelState, str, int], None]


def _run_stage(state, t, label, config, trace, rng, callback):
    prev = log_likelihood_modality(state, t)
    trace.initial[label] = prev
    trace.converged[label] = False
    for it in range(1, config.max_iters + 1):
        sweep_modality(state, t, rng)
        if callback is not None:
            callback(state, label, it)
        cur = log_likelihood_modality(state, t)
        trace.record(it, label, cur)
        if converged(prev, cur, config.likelihood_tol):
            trace.converged[label] = True
            break
        prev = cur
    if not trace.converged[label]:
        logger.warning("stage %s did not converge in %d iterations", label, config.max_iters)


def train_cross_sectional(corpus: Corpus, pmap: PhenotypeMap, alpha: np.ndarray, config: TrainConfig,
                          callback: SweepCallback | None = None) -> tuple[ModelState, LikelihoodTrace]:
    """ICD sweeps until convergence, then each non-ICD modality with ICD assignments frozen."""
    if corpus.regime != CROSS_SECTIONAL:
        raise ParameterError("train_cross_sectional needs a cross-sectional corpus")
    state = initialize_state(corpus, pmap, alpha, config)
    trace = LikelihoodTrace()
    for t in [state.icd] + state.nonicd:
        if state.tokens[t].n_slots == 0:
            continue
        _run_stage(state, t, corpus.modalities[t], config, trace, stream(config.seed, SWEEP, t), callback)
    return state, trace


def train_longitudinal(corpus: Corpus, pmap: PhenotypeMap, alpha: np.ndarray, config: TrainConfig,
                       callback: SweepCallback | None = None) -> tuple[ModelState, LikelihoodTrace]:
    """Alternate sweeps over all modalities each iteration until the joint likelihood settles."""
    if corpus.regime != LONGITUDINAL:
        raise ParameterError("train_longitudinal needs a longitudinal corpus")
    state = initialize_state(corpus, pmap, alpha, config)
    order = [state.icd] + state.nonicd
    rngs = {t: stream(config.seed, SWEEP, t) for t in order}
    trace = LikelihoodTrace()
    prev = joint_log_likelihood(state)
    trace.initial["joint"] = prev
    trace.converged["joint"] = False
    for it in range(1, config.max_iters + 1):
        for t in order:
            if state.tokens[t].n_slots:
                sweep_modality(state, t, rngs[t])
        if callback is not None:
            callback(state, "joint", it)
        for t in order:
            trace.record(it, corpus.modalities[t], log_likelihood_modality(state, t, POOLED))
        cur = joint_log_likelihood(state)
        trace.record(it, "joint", cur)
        if converged(prev, cur, config.likelihood_tol):
            trace.converged["joint"] = True
            break
        prev = cur
    if not trace.converged["joint"]:
        logger.warning("joint likelihood did not converge in %d iterations", config.max_iters)
    return state, trace


def train(corpus: Corpus, pmap: PhenotypeMap, alpha: np.ndarray, config: TrainConfig,
          callback: SweepCallback | None = None) -> tuple[ModelState, LikelihoodTrace]:
    if config.schedule == LONGITUDINAL:
        return train_longitudinal(corpus, pmap, alpha, config, callback)
    return train_cross_sectional(corpus, pmap, alpha, config, callback)
