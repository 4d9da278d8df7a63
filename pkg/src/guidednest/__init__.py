"""Guided nested topic modelling of multi-modal coded health records."""
from .corpus import (
    CROSS_SECTIONAL,
    LONGITUDINAL,
    Corpus,
    Document,
    PhenotypeMap,
    Vocabulary,
    load_corpus,
    load_metadata,
    load_phenotype_map,
)
from .guidance import fit_count_mixture, init_alpha_cross_sectional, init_alpha_longitudinal
from .inference import fold_in
from .kernels import get_backend, set_backend
from .sampler import ModelState, TrainConfig, train, train_cross_sectional, train_longitudinal
from .synth import generate_corpus, planted_model, recovery_score

__version__ = "0.1.0"

__all__ = [
    "CROSS_SECTIONAL", "LONGITUDINAL", "Corpus", "Document", "PhenotypeMap", "Vocabulary",
    "load_corpus", "load_metadata", "load_phenotype_map", "fit_count_mixture",
    "init_alpha_cross_sectional", "init_alpha_longitudinal", "fold_in", "get_backend", "set_backend",
    "ModelState", "TrainConfig", "train", "train_cross_sectional", "train_longitudinal",
    "generate_corpus", "planted_model", "recovery_score",
]
