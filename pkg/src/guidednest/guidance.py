"""Per-document asymmetric Dirichlet priors over the ``K x M`` subtopics.

Subtopic ``m`` of phenotype ``k`` lives at flat index ``k * M + m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import gammaln, logsumexp

from .corpus import Corpus, PhenotypeMap, phenotype_counts
from .errors import (
    ConfigurationError,
    DegenerateFitError,
    InsufficientDataError,
    ParameterError,
)
from .rng import ALPHA_NOISE, stream

OBSERVED_PRIOR = 0.9
NOISE_LOW = 0.001
NOISE_HIGH = 0.01
RESPONSIBILITY_FLOOR = 1e-6
SIGMA_MIN = 0.05
# Gamma(shape, rate) prior on the background Poisson rate
LAMBDA_SHAPE = 2.0
LAMBDA_RATE = 1.0


def observed_phenotypes(corpus: Corpus, pmap: PhenotypeMap) -> np.ndarray:
    """Boolean ``D x K`` matrix: document observes an ICD code of phenotype k."""
    return phenotype_counts(corpus, pmap) > 0


def init_alpha_cross_sectional(corpus: Corpus, pmap: PhenotypeMap, M: int, seed: int) -> np.ndarray:
    """Prior of 0.9 on every subtopic of an observed phenotype, U[0.001, 0.01] noise elsewhere."""
    if M < 1:
        raise ParameterError(f"M must be >= 1, got {M}")
    rng = stream(seed, ALPHA_NOISE)
    alpha = rng.uniform(NOISE_LOW, NOISE_HIGH, size=(corpus.D, pmap.K * M))
    observed = np.repeat(observed_phenotypes(corpus, pmap), M, axis=1)
    alpha[observed] = OBSERVED_PRIOR
    return alpha


def _log_poisson(c: np.ndarray, lam: float) -> np.ndarray:
    return c * math.log(lam) - lam - gammaln(c + 1.0)


def _log_lognormal_discrete(c: np.ndarray, mu: float, sigma: float, c_max: int) -> np.ndarray:
    """Log-normal density on positive integers, renormalized over ``1..c_max``."""
    def log_g(x):
        lx = np.log(x)
        return -0.5 * ((lx - mu) / sigma) ** 2 - lx - math.log(sigma) - 0.5 * math.log(2 * math.pi)

    support = np.arange(1, c_max + 1, dtype=np.float64)
    return log_g(c) - logsumexp(log_g(support))


def mixture_objective(c: np.ndarray, lam: float, mu: float, sigma: float, pi: float, c_max: int) -> float:
    """Log posterior (up to a constant) of the mixture on positive counts ``c``."""
    c = np.asarray(c, dtype=np.float64)
    log_el = math.log(pi) + _log_lognormal_discrete(c, mu, sigma, c_max)
    log_bg = math.log1p(-pi) + _log_poisson(c, lam)
    loglik = float(np.logaddexp(log_el, log_bg).sum())
    log_prior = (LAMBDA_SHAPE - 1.0) * math.log(lam) - LAMBDA_RATE * lam
    return loglik + log_prior


@dataclass
class MixtureFit:
    """Two-component fit: Poisson background vs discretized log-normal elevated counts."""

    k: int
    lam: float
    mu: float
    sigma: float
    pi: float
    c_max: int
    responsibilities: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    param_trace: list[tuple[float, float, float, float]] = field(default_factory=list)
    converged: bool = False
    fallback: bool = False
    median_positive: float = 0.0

    def responsibility(self, counts) -> np.ndarray:
        """P(elevated | count) under the fitted parameters; zero counts get 0."""
        c = np.asarray(counts, dtype=np.float64)
        out = np.zeros(c.shape, dtype=np.float64)
        pos = c > 0
        if not pos.any():
            return out
        if self.fallback:
            out[pos] = np.minimum(1.0, c[pos] / (1.0 + self.median_positive))
            return out
        cp = c[pos]
        log_el = math.log(self.pi) + _log_lognormal_discrete(cp, self.mu, self.sigma, self.c_max)
        log_bg = math.log1p(-self.pi) + _log_poisson(cp, self.lam)
        out[pos] = np.exp(log_el - np.logaddexp(log_el, log_bg))
        return out


def fallback_fit(k: int, counts) -> MixtureFit:
    c = np.asarray(counts, dtype=np.int64)
    pos = c[c > 0]
    median = float(np.median(pos)) if pos.size else 0.0
    fit = MixtureFit(k, math.nan, math.nan, math.nan, math.nan, int(pos.max()) if pos.size else 0,
                     np.zeros(c.shape), fallback=True, median_positive=median)
    fit.responsibilities = fit.responsibility(c)
    return fit


def fit_count_mixture(counts, max_iters: int = 200, tol: float = 1e-8, k: int = 0) -> MixtureFit:
    """MAP-EM for a Poisson / log-normal mixture over the positive counts.

    The (mu, sigma) update is a generalized M-step: the weighted log-moment
    estimate and a bounded quasi-Newton refinement are accepted only if they
    improve the weighted objective, so the log posterior never decreases.

    Raises
    ------
    InsufficientDataError
        Fewer than two positive counts.
    DegenerateFitError
        All positive counts identical.
    """
    c_all = np.asarray(counts, dtype=np.int64)
    if (c_all < 0).any():
        raise ParameterError("counts must be nonnegative")
    pos_mask = c_all > 0
    c = c_all[pos_mask].astype(np.float64)
    if c.size < 2:
        raise InsufficientDataError(f"phenotype {k}: need at least 2 positive counts, got {c.size}")
    if np.all(c == c[0]):
        raise DegenerateFitError(f"phenotype {k}: all positive counts equal {int(c[0])}")
    c_max = int(c.max())
    logc = np.log(c)

    lam = max(float(np.quantile(c, 0.25)), 0.5)
    mu = float(np.log(np.quantile(c, 0.9)))
    sigma = max(float(logc.std()) / 2.0, 0.1)
    pi = 0.5

    def el_term(mu_, sigma_, r):
        return float(np.dot(r, _log_lognormal_discrete(c, mu_, sigma_, c_max)))

    trace = [mixture_objective(c, lam, mu, sigma, pi, c_max)]
    params = [(lam, mu, sigma, pi)]
    converged = False
    for _ in range(max_iters):
        # E-step
        log_el = math.log(pi) + _log_lognormal_discrete(c, mu, sigma, c_max)
        log_bg = math.log1p(-pi) + _log_poisson(c, lam)
        r = np.exp(log_el - np.logaddexp(log_el, log_bg))
        s = 1.0 - r
        # M-step
        pi = float(np.clip(r.mean(), 1e-6, 1 - 1e-6))
        lam = (float(np.dot(s, c)) + LAMBDA_SHAPE - 1.0) / (float(s.sum()) + LAMBDA_RATE)
        lam = max(lam, 1e-8)
        best = (el_term(mu, sigma, r), mu, sigma)
        if r.sum() > 0:
            m_hat = float(np.dot(r, logc) / r.sum())
            s_hat = max(math.sqrt(float(np.dot(r, (logc - m_hat) ** 2) / r.sum())), SIGMA_MIN)
            cand = el_term(m_hat, s_hat, r)
            if cand > best[0]:
                best = (cand, m_hat, s_hat)
            res = optimize.minimize(
                lambda p: -el_term(p[0], p[1], r), x0=[best[1], best[2]],
                method="L-BFGS-B", bounds=[(None, None), (SIGMA_MIN, None)],
            )
            if res.success or np.isfinite(res.fun):
                cand = -float(res.fun)
                if cand > best[0]:
                    best = (cand, float(res.x[0]), float(res.x[1]))
        _, mu, sigma = best
        obj = mixture_objective(c, lam, mu, sigma, pi, c_max)
        improvement = obj - trace[-1]
        trace.append(obj)
        params.append((lam, mu, sigma, pi))
        if abs(improvement) < tol:
            converged = True
            break

    fit = MixtureFit(k, lam, mu, sigma, pi, c_max, np.zeros(c_all.shape), trace, params, converged)
    if not np.isfinite(mu) or not np.isfinite(lam):
        raise DegenerateFitError(f"phenotype {k}: EM produced non-finite parameters")
    fit.responsibilities = fit.responsibility(c_all)
    return fit


def fit_phenotype_mixtures(corpus: Corpus, pmap: PhenotypeMap, max_iters: int = 200,
                           tol: float = 1e-8) -> list[MixtureFit]:
    """One mixture per phenotype over its per-document ICD counts, with fallback on failure."""
    counts = phenotype_counts(corpus, pmap)
    fits = []
    for k in range(pmap.K):
        try:
            fits.append(fit_count_mixture(counts[:, k], max_iters=max_iters, tol=tol, k=k))
        except (InsufficientDataError, DegenerateFitError):
            fits.append(fallback_fit(k, counts[:, k]))
    return fits


def init_alpha_longitudinal(corpus: Corpus, pmap: PhenotypeMap, fits, M: int) -> np.ndarray:
    """Broadcast each observed phenotype's responsibility to its M subtopics; zero elsewhere.

    A document with no observed phenotype gets ``1e-6`` on every subtopic so
    its Dirichlet stays proper.
    """
    if M < 1:
        raise ParameterError(f"M must be >= 1, got {M}")
    if not isinstance(fits, dict):
        fits = {f.k: f for f in fits}
    counts = phenotype_counts(corpus, pmap)
    r = np.zeros(counts.shape, dtype=np.float64)
    for k in range(pmap.K):
        col = counts[:, k]
        if not (col > 0).any():
            continue
        fit = fits.get(k)
        if fit is None:
            raise ConfigurationError(f"no mixture fit for observed phenotype {pmap.phenotypes[k]!r}")
        r[:, k] = fit.responsibility(col)
    observed = counts > 0
    r[observed] = np.maximum(r[observed], RESPONSIBILITY_FLOOR)
    r[~observed.any(axis=1)] = RESPONSIBILITY_FLOOR
    return np.repeat(r, M, axis=1)


def fits_to_tsv(fits: list[MixtureFit], pmap: PhenotypeMap, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("phenotype\tlambda\tmu\tsigma\tpi\n")
        for f in fits:
            fh.write(f"{pmap.phenotypes[f.k]}\t{f.lam!r}\t{f.mu!r}\t{f.sigma!r}\t{f.pi!r}\n")


def fit_to_dict(f: MixtureFit) -> dict:
    return {
        "k": f.k, "lambda": f.lam, "mu": f.mu, "sigma": f.sigma, "pi": f.pi,
        "c_max": f.c_max, "fallback": f.fallback, "median_positive": f.median_positive,
        "converged": f.converged,
    }


def fit_from_dict(d: dict) -> MixtureFit:
    if d["fallback"]:
        fit = MixtureFit(d["k"], math.nan, math.nan, math.nan, math.nan, d["c_max"],
                         np.zeros(0), fallback=True, median_positive=d["median_positive"])
    else:
        fit = MixtureFit(d["k"], d["lambda"], d["mu"], d["sigma"], d["pi"], d["c_max"],
                         np.zeros(0), converged=d["converged"])
    return fit


__all__ = [
    "MixtureFit",
    "fallback_fit",
    "fit_count_mixture",
    "fit_phenotype_mixtures",
    "init_alpha_cross_sectional",
    "init_alpha_longitudinal",
    "mixture_objective",
    "observed_phenotypes",
]
