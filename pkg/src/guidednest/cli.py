"""Command-line entry points: train, infer, simulate, prevalence, evaltopk."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analytics, checkpoint, guidance, synth, tsvio
from .corpus import (
    CROSS_SECTIONAL,
    LONGITUDINAL,
    align_to_vocabularies,
    load_corpus,
    load_metadata,
    load_phenotype_map,
    normalize_regime,
    phenotype_counts,
)
from .errors import CompatibilityError, GuidedNestError, SchemaError
from .estimators import estimate_phi, estimate_theta
from .inference import FOLD_IN_TOL, fold_in
from .sampler import TrainConfig, train

logger = logging.getLogger("guidednest")

def _eta(value: str) -> float:
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"eta must lie in [0, 1], got {value}")
    return x


def _positive_int(value: str) -> int:
    x = int(value)
    if x < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return x


def _positive_float(value: str) -> float:
    x = float(value)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return x


def parse_ages(text: str) -> list[float]:
    """``lo:hi`` or ``lo:hi:step`` (inclusive), or a comma-separated list."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad age range {text!r}")
        lo, hi = parts[:2]
        step = parts[2] if len(parts) == 3 else 1.0
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad age range {text!r}")
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + i * step for i in range(n)]
    return [float(p) for p in text.split(",") if p]


def _int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _fmt_age(a: float) -> str:
    return str(int(a)) if float(a).is_integer() else repr(float(a))


class _Outputs:
    """Tracks files written by a command so a failure leaves none behind."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.written.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)


def cmd_train(args) -> int:
    regime = normalize_regime(args.regime)
    modalities = args.modalities.split(",") if args.modalities else None
    corpus = load_corpus(args.corpus, regime, modalities=modalities, icd_label=args.icd_label)
    if args.meta:
        corpus.metadata = load_metadata(args.meta)
    pmap = load_phenotype_map(args.map, corpus.icd_vocab)
    logger.info("corpus: D=%d, modalities=%s; map: %s", corpus.D, corpus.modalities, pmap.report())
    config = TrainConfig(M=args.M, eta=args.eta, beta=args.beta, seed=args.seed, max_iters=args.iters,
                         likelihood_tol=args.tol, schedule=regime)
    fits = []
    if regime == CROSS_SECTIONAL:
        alpha = guidance.init_alpha_cross_sectional(corpus, pmap, args.M, args.seed)
    else:
        fits = guidance.fit_phenotype_mixtures(corpus, pmap)
        alpha = guidance.init_alpha_longitudinal(corpus, pmap, fits, args.M)
    state, trace = train(corpus, pmap, alpha, config)
    ckpt = checkpoint.from_training(state, corpus, pmap, config, regime, fits, trace)
    labels = ckpt.column_labels()

    out = _Outputs(args.out_dir)
    out.dir.mkdir(parents=True, exist_ok=True)
    try:
        checkpoint.save(ckpt, out.path("model.ckpt"))
        tsvio.write_matrix(out.path("theta.tsv"), "doc_id", corpus.doc_ids, labels, estimate_theta(state))
        for t, label in enumerate(corpus.modalities):
            tsvio.write_matrix(out.path(f"phi_{label}.tsv"), "code", corpus.vocabularies[t].entries,
                               labels, estimate_phi(state, t))
        trace.to_tsv(out.path("loglik.tsv"))
        if fits:
            guidance.fits_to_tsv(fits, pmap, out.path("fits.tsv"))
    except BaseException:
        out.cleanup()
        raise
    for stage, ok in trace.converged.items():
        if not ok:
            print(f"warning: {stage} did not converge within {args.iters} iterations", file=sys.stderr)
    print(f"trained K={pmap.K} M={args.M} on D={corpus.D}; outputs in {out.dir}")
    return 0


def cmd_infer(args) -> int:
    ckpt = checkpoint.load(args.checkpoint)
    modalities = ckpt.modalities
    raw = load_corpus(args.corpus, ckpt.regime, icd_label=modalities[0])
    try:
        corpus, dropped = align_to_vocabularies(raw, modalities, ckpt.vocabulary_objects())
    except SchemaError as exc:
        raise CompatibilityError(str(exc)) from None
    total = raw.total_count()
    frac = dropped.sum() / total if total else 0.0
    print(f"dropped {100 * frac:.0f}% of tokens ({int(dropped.sum())} of {total}) with codes unseen in training")
    pmap = ckpt.phenotype_map()
    seed = ckpt.seed if args.seed is None else args.seed
    if ckpt.alpha_mode == LONGITUDINAL:
        alpha = guidance.init_alpha_longitudinal(corpus, pmap, ckpt.mixture_fits(), ckpt.M)
    else:
        alpha = guidance.init_alpha_cross_sectional(corpus, pmap, ckpt.M, seed)
    phi = [ckpt.phi(t) for t in range(ckpt.T)]
    result = fold_in(phi, ckpt.eta, corpus, pmap, alpha, ckpt.M, seed, tol=args.tol,
                     max_iters=args.iters, threads=args.threads)
    out = Path(args.out) if args.out else Path(args.out_dir) / "theta.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        tsvio.write_matrix(out, "doc_id", corpus.doc_ids, ckpt.column_labels(), result.theta)
    except BaseException:
        out.unlink(missing_ok=True)
        raise
    if result.empty.any():
        print(f"{int(result.empty.sum())} document(s) had no known tokens; their mixture is the normalized prior")
    print(f"inferred mixtures for {corpus.D} documents -> {out}")
    return 0


def cmd_simulate(args) -> int:
    vocab = [args.W_icd] + list(args.W_other)
    if len(args.W_other) == 1:
        labels = ["ICD", "RX"]
    else:
        labels = ["ICD"] + [f"X{i + 1}" for i in range(len(args.W_other))]
    pm = synth.planted_model(args.K, args.M, vocab, labels, anchor_mass=args.anchor_mass, seed=args.seed)
    sc = synth.generate_corpus(pm, args.D, normalize_regime(args.regime))
    paths = synth.write_bundle(sc, args.out_dir)
    print(f"wrote {len(paths)} files to {args.out_dir}")
    return 0


def cmd_prevalence(args) -> int:
    ids, columns, theta = tsvio.read_matrix(args.theta)
    meta = load_metadata(args.meta)
    ages = analytics.ages_array(meta, ids)
    grid = args.ages
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("subtopic\tage\trho\trho_rel\n")
        for j, col in enumerate(columns):
            curve = analytics.prevalence_curve(theta, ages, grid, j)
            for a, r, rr in zip(curve.ages, curve.rho, curve.rho_rel):
                fh.write(f"{col}\t{_fmt_age(a)}\t{float(r)!r}\t{float(rr)!r}\n")
    if args.corpus and args.map:
        corpus = load_corpus(args.corpus, normalize_regime(args.regime))
        pmap = load_phenotype_map(args.map, corpus.icd_vocab)
        counts = phenotype_counts(corpus, pmap)
        b_ages = analytics.ages_array(meta, corpus.doc_ids)
        out = Path(args.out).with_name(Path(args.out).stem + "_baseline.tsv")
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write("phenotype\tage\trho\trho_rel\n")
            for k, phen in enumerate(pmap.phenotypes):
                curve = analytics.prevalence_curve(counts, b_ages, grid, k)
                for a, r, rr in zip(curve.ages, curve.rho, curve.rho_rel):
                    fh.write(f"{phen}\t{_fmt_age(a)}\t{float(r)!r}\t{float(rr)!r}\n")
    print(f"wrote prevalence curves to {args.out}")
    return 0


def cmd_evaltopk(args) -> int:
    ids, columns, scores = tsvio.read_matrix(args.scores)
    col = columns.index(args.column) if args.column else 0
    labels = tsvio.read_labels(args.labels)
    keep = [i for i, d in enumerate(ids) if d in labels]
    if not keep:
        raise SchemaError("no scored document has a label")
    doc_ids = [ids[i] for i in keep]
    result = analytics.topk_precision(scores[keep, col], [labels[d] for d in doc_ids], args.k, doc_ids)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("K\tprecision\n")
        for k in args.k:
            fh.write(f"{k}\t{result.precision_at[k]!r}\n")
        fh.write(f"auroc\t{result.auroc!r}\n")
    print(f"AUROC {result.auroc:.4f}; precision " +
          ", ".join(f"@{k}={result.precision_at[k]:.3f}" for k in args.k))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidednest", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the guided nested topic model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--meta")
    p.add_argument("--regime", choices=["cross", "long"], default="cross")
    p.add_argument("--M", type=_positive_int, default=3)
    p.add_argument("--eta", type=_eta, default=0.4)
    p.add_argument("--beta", type=_positive_float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=_positive_int, default=500)
    p.add_argument("--tol", type=_positive_float, default=0.1)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--modalities", help="comma-separated allowed modality labels")
    p.add_argument("--icd-label", default="ICD")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="fold in new documents against a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    dest = p.add_mutually_exclusive_group(required=True)
    dest.add_argument("--out", help="theta TSV path")
    dest.add_argument("--out-dir", help="directory receiving theta.tsv")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=_positive_int, default=500)
    p.add_argument("--tol", type=_positive_float, default=FOLD_IN_TOL)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="sample a synthetic corpus with ground truth")
    p.add_argument("--K", type=_positive_int, default=10)
    p.add_argument("--M", type=_positive_int, default=3)
    p.add_argument("--D", type=_positive_int, default=2000)
    p.add_argument("--W-icd", dest="W_icd", type=_positive_int, default=300)
    p.add_argument("--W-other", dest="W_other", type=_int_list, default=[200])
    p.add_argument("--anchor-mass", type=float, default=0.3)
    p.add_argument("--regime", choices=["cross", "long"], default="cross")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prevalence", help="age-stratified prevalence of each subtopic")
    p.add_argument("--theta", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--ages", type=parse_ages, default=parse_ages("1:100"))
    p.add_argument("--corpus", help="with --map, also write count-based baseline curves")
    p.add_argument("--map")
    p.add_argument("--regime", choices=["cross", "long"], default="cross")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prevalence)

    p = sub.add_parser("evaltopk", help="top-K precision and AUROC of a score column")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=_int_list, default=[50, 100, 160])
    p.add_argument("--column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaltopk)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GuidedNestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
