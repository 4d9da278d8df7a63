import struct

import numpy as np
import pytest

from guidednest import checkpoint, guidance
from guidednest.corpus import LONGITUDINAL
from guidednest.errors import CheckpointError
from guidednest.estimators import estimate_phi
from guidednest.sampler import TrainConfig, train
from guidednest.synth import generate_corpus, planted_model


def make(regime="cross_sectional"):
    pm = planted_model(K=3, M=2, vocab_sizes=(20, 15), seed=6)
    sc = generate_corpus(pm, 60, regime)
    if regime == LONGITUDINAL:
        fits = guidance.fit_phenotype_mixtures(sc.corpus, sc.pmap)
        alpha = guidance.init_alpha_longitudinal(sc.corpus, sc.pmap, fits, 2)
    else:
        fits = []
        alpha = guidance.init_alpha_cross_sectional(sc.corpus, sc.pmap, 2, 1)
    cfg = TrainConfig(M=2, seed=1, max_iters=40, schedule=regime)
    state, trace = train(sc.corpus, sc.pmap, alpha, cfg)
    return sc, state, checkpoint.from_training(state, sc.corpus, sc.pmap, cfg, regime, fits, trace)


@pytest.mark.parametrize("regime", ["cross_sectional", LONGITUDINAL])
def test_round_trip_is_exact(tmp_path, regime):
    sc, state, ck = make(regime)
    path = tmp_path / "m.ckpt"
    checkpoint.save(ck, path)
    back = checkpoint.load(path)
    for t in range(state.T):
        assert np.array_equal(back.phi(t), estimate_phi(state, t))
    assert checkpoint.dumps(back) == path.read_bytes()
    assert back.column_labels() == [f"{p}-{m}" for p in sc.pmap.phenotypes for m in range(2)]
    pmap = back.phenotype_map()
    assert pmap.icd_to_phenotype == sc.pmap.icd_to_phenotype
    for f, g in zip(back.mixture_fits(), guidance.fit_phenotype_mixtures(sc.corpus, sc.pmap)
                    if regime == LONGITUDINAL else []):
        np.testing.assert_array_equal(f.responsibility(np.arange(6)), g.responsibility(np.arange(6)))


def test_header_layout_and_version_check(tmp_path):
    _, _, ck = make()
    data = checkpoint.dumps(ck)
    assert data[:6] == b"MXNEST"
    assert struct.unpack("<HI", data[6:12]) == (checkpoint.FORMAT_VERSION, 1 + ck.T)
    # a wrong version is rejected even when the sections that follow are garbage
    bumped = data[:6] + struct.pack("<H", 99) + b"\xff" * 8
    with pytest.raises(CheckpointError, match="version 99"):
        checkpoint.loads(bumped)
    with pytest.raises(CheckpointError):
        checkpoint.loads(b"NOTCKP" + data[6:])
    with pytest.raises(CheckpointError):
        checkpoint.loads(data[:-5])
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "absent.ckpt")


def test_subtopic_labels_single_subtopic():
    assert checkpoint.subtopic_labels(["250.2", "571.5"], 1) == ["250.2-0", "571.5-0"]
