import numpy as np
import pytest

from guidednest import guidance
from guidednest.corpus import align_to_vocabularies, corpus_from_records, phenotype_map_from_pairs
from guidednest.errors import DegenerateDocumentError, ParameterError
from guidednest.estimators import estimate_phi, estimate_theta, phi_from_counts, theta_from_counts
from guidednest.inference import estimates_from_state, fold_in, fold_in_document
from guidednest.rng import stream
from guidednest.sampler import ModelState, TrainConfig, train
from guidednest.synth import generate_corpus, planted_model


def test_phi_formula_examples():
    np.testing.assert_allclose(phi_from_counts(np.zeros((4, 3), np.int64), 0.1), np.full((4, 3), 0.25))
    phi = phi_from_counts(np.array([[3], [1]]), 0.5)
    np.testing.assert_allclose(phi[:, 0], [0.7, 0.3], rtol=0, atol=1e-15)
    rng = np.random.default_rng(0)
    cols = phi_from_counts(rng.integers(0, 20, (30, 8)), 0.01).sum(axis=0)
    np.testing.assert_allclose(cols, 1.0, atol=1e-12)


def test_theta_formula_examples():
    np.testing.assert_allclose(theta_from_counts(np.ones(4), np.zeros(4)), np.full(4, 0.25))
    alpha = np.array([0.9, 0.9, 0.001, 0.001])
    got = theta_from_counts(alpha, np.array([3, 0, 0, 0]))
    expected = np.array([3.9, 0.9, 0.001, 0.001]) / 4.802
    np.testing.assert_allclose(got, expected, rtol=1e-15)
    with pytest.raises(DegenerateDocumentError):
        theta_from_counts(np.zeros(3), np.zeros(3))


def test_theta_modes():
    c = corpus_from_records([("d", "ICD", "a", 1), ("d", "RX", "m", 1), ("d", "RX", "n", 1)])
    state = ModelState.from_corpus(c, np.array([[1.0, 1.0]]), 2, 1, 0.01, 0.4, [np.array([0]), np.array([1, 1])])
    np.testing.assert_allclose(estimate_theta(state, 0, "pooled"), [2 / 5, 3 / 5])
    np.testing.assert_allclose(estimate_theta(state, 0, "per_modality", 0), [2 / 3, 1 / 3])
    np.testing.assert_allclose(estimate_theta(state, 0, "per_modality", 1), [1 / 4, 3 / 4])
    with pytest.raises(ParameterError):
        estimate_theta(state, 0, "mean")
    est = estimates_from_state(state)
    assert est.provenance == "from_training_state"


def trained(seed=2, D=150):
    pm = planted_model(K=4, M=2, vocab_sizes=(40, 30), seed=seed)
    sc = generate_corpus(pm, D)
    alpha = guidance.init_alpha_cross_sectional(sc.corpus, sc.pmap, 2, seed)
    state, _ = train(sc.corpus, sc.pmap, alpha, TrainConfig(M=2, seed=seed, max_iters=150))
    return sc, alpha, state


def test_fold_in_leaves_phi_untouched_and_is_deterministic(backend):
    sc, alpha, state = trained()
    phi = [estimate_phi(state, t) for t in range(state.T)]
    before = [p.copy() for p in phi]
    a = fold_in(phi, 0.4, sc.corpus, sc.pmap, alpha, 2, seed=3)
    b = fold_in(phi, 0.4, sc.corpus, sc.pmap, alpha, 2, seed=3, threads=4)
    for p, q in zip(phi, before):
        assert np.array_equal(p, q)
    assert np.array_equal(a.theta, b.theta)
    assert a.theta.shape == (sc.corpus.D, 8)
    np.testing.assert_allclose(a.theta.sum(axis=1), 1.0, atol=1e-12)
    assert a.estimates.provenance == "from_fold_in"


def test_fold_in_traces_stop_at_threshold():
    sc, alpha, state = trained()
    phi = [estimate_phi(state, t) for t in range(state.T)]
    res = fold_in(phi, 0.4, sc.corpus, sc.pmap, alpha, 2, seed=1)
    for trace, done, iters in zip(res.traces, res.converged, res.iterations):
        steps = np.abs(np.diff(trace))
        assert len(steps) == iters
        if done:
            assert steps[-1] < 0.1 and np.all(steps[:-1] >= 0.1)


def test_fold_in_likelihood_improves_on_average():
    sc, alpha, state = trained()
    phi = [estimate_phi(state, t) for t in range(state.T)]
    gains = []
    for s in range(5):
        res = fold_in(phi, 0.4, sc.corpus, sc.pmap, alpha, 2, seed=s)
        gains.append(np.mean([tr[-1] - tr[1] for tr in res.traces if len(tr) > 1]))
    assert np.mean(gains) >= 0


def test_single_topic_fold_in_stops_after_one_iteration():
    phi = [np.full((3, 1), 1 / 3)]
    res = fold_in_document(phi, np.array([0.5]), [np.array([0, 2, 1])], [np.zeros(3, np.int64)],
                           0.4, 0, stream(0, 4))
    assert res.theta.tolist() == [1.0]
    assert res.iterations == 1 and res.converged


def test_empty_document_returns_normalized_prior():
    phi = [np.full((3, 2), 1 / 3), np.full((2, 2), 0.5)]
    res = fold_in_document(phi, np.array([0.9, 0.3]), [np.zeros(0, np.int64)] * 2,
                           [np.zeros(0, np.int64)] * 2, 0.4, 0, stream(0, 4))
    assert res.empty
    np.testing.assert_allclose(res.theta, [0.75, 0.25])


def test_unseen_evidence_keeps_noise_prior():
    train_c = corpus_from_records([("a", "ICD", "x", 1), ("a", "ICD", "u", 1), ("b", "ICD", "y", 1)])
    pmap = phenotype_map_from_pairs([("x", "P"), ("y", "Q")], train_c.icd_vocab)
    rng = np.random.default_rng(0)
    phi = [rng.dirichlet(np.ones(3), size=4).T.copy()]
    raw = corpus_from_records([("n", "ICD", "new1", 1), ("n", "ICD", "new2", 1)])
    new, dropped = align_to_vocabularies(raw, train_c.modalities, train_c.vocabularies)
    assert dropped.tolist() == [2]
    alpha = guidance.init_alpha_cross_sectional(new, pmap, 2, 0)
    assert np.all(alpha < 0.9)
    res = fold_in(phi, 0.4, new, pmap, alpha, 2, seed=0)
    assert res.empty.tolist() == [True]
    np.testing.assert_allclose(res.theta[0], alpha[0] / alpha[0].sum())
    assert res.theta.max() < 0.9


def test_fold_in_shape_checks():
    sc, alpha, state = trained(D=40)
    phi = [estimate_phi(state, t) for t in range(state.T)]
    with pytest.raises(ParameterError):
        fold_in(phi, 0.4, sc.corpus, sc.pmap, alpha[:, :4], 2, seed=0)
    with pytest.raises(ParameterError):
        fold_in([phi[0][:-1], phi[1]], 0.4, sc.corpus, sc.pmap, alpha, 2, seed=0)
