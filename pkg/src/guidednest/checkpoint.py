"""Binary model checkpoints.

Layout (little-endian)::

    b"MXNEST" | u16 version | u32 section count
    per section: u16 name length | name | u8 kind | u64 payload length | payload

Kinds: 0 = UTF-8 JSON, 1 = int64 array, 2 = float64 array.  Array payloads
are ``u8 ndim | ndim x u64 shape | data``.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import PhenotypeMap, Vocabulary
from .errors import CheckpointError
from .estimators import phi_from_counts
from .guidance import MixtureFit, fit_from_dict, fit_to_dict

MAGIC = b"MXNEST"
FORMAT_VERSION = 1

_JSON, _I64, _F64 = 0, 1, 2


@dataclass
class Checkpoint:
    K: int
    M: int
    beta: float
    eta: float
    regime: str
    phenotypes: list[str]
    modalities: list[str]
    vocabularies: list[list[str]]
    icd_to_phenotype: dict[str, int]
    n_word_topic: list[np.ndarray]
    seed: int
    alpha_mode: str
    fits: list[dict] = field(default_factory=list)
    trace: list[list] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @property
    def T(self) -> int:
        return len(self.modalities)

    def phi(self, t: int) -> np.ndarray:
        return phi_from_counts(self.n_word_topic[t], self.beta)

    def vocabulary_objects(self) -> list[Vocabulary]:
        return [Vocabulary(t, v) for t, v in enumerate(self.vocabularies)]

    def phenotype_map(self) -> PhenotypeMap:
        index = {code: w for w, code in enumerate(self.vocabularies[0])}
        return PhenotypeMap(list(self.phenotypes),
                            {index[c]: k for c, k in self.icd_to_phenotype.items()})

    def mixture_fits(self) -> list[MixtureFit]:
        return [fit_from_dict(d) for d in self.fits]

    def column_labels(self) -> list[str]:
        return subtopic_labels(self.phenotypes, self.M)

    def _meta(self) -> dict:
        return {
            "K": self.K, "M": self.M, "T": self.T, "beta": self.beta, "eta": self.eta,
            "regime": self.regime, "phenotypes": self.phenotypes, "modalities": self.modalities,
            "vocabularies": self.vocabularies, "icd_to_phenotype": self.icd_to_phenotype,
            "seed": self.seed, "alpha_mode": self.alpha_mode, "fits": self.fits, "trace": self.trace,
        }


def subtopic_labels(phenotypes, M: int) -> list[str]:
    return [f"{p}-{m}" for p in phenotypes for m in range(M)]


def from_training(state, corpus, pmap: PhenotypeMap, config, alpha_mode: str, fits=None, trace=None) -> Checkpoint:
    icd_entries = corpus.icd_vocab.entries
    return Checkpoint(
        K=pmap.K, M=config.M, beta=config.beta, eta=config.eta, regime=corpus.regime,
        phenotypes=list(pmap.phenotypes), modalities=list(corpus.modalities),
        vocabularies=[list(v.entries) for v in corpus.vocabularies],
        icd_to_phenotype={icd_entries[w]: k for w, k in pmap.icd_to_phenotype.items()},
        n_word_topic=[a.copy() for a in state.n_wk], seed=int(config.seed), alpha_mode=alpha_mode,
        fits=[fit_to_dict(f) for f in (fits or [])],
        trace=[[it, s, v] for it, s, v in trace.entries] if trace is not None else [],
    )


def _section(buf, name: str, kind: int, payload: bytes) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BQ", kind, len(payload)))
    buf.write(payload)


def _array_payload(a: np.ndarray) -> tuple[int, bytes]:
    if a.dtype.kind in "iu":
        kind, data = _I64, np.ascontiguousarray(a, dtype="<i8")
    else:
        kind, data = _F64, np.ascontiguousarray(a, dtype="<f8")
    head = struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return kind, head + data.tobytes()


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", ckpt.format_version, 1 + ckpt.T))
    meta = json.dumps(ckpt._meta(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    _section(buf, "meta", _JSON, meta)
    for t, a in enumerate(ckpt.n_word_topic):
        _section(buf, f"n_word_topic/{t}", *_array_payload(a))
    return buf.getvalue()


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def _read(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def loads(data: bytes) -> Checkpoint:
    buf = io.BytesIO(data)
    if _read(buf, len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, n_sections = struct.unpack("<HI", _read(buf, 6))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    sections = {}
    for _ in range(n_sections):
        (name_len,) = struct.unpack("<H", _read(buf, 2))
        name = _read(buf, name_len).decode("utf-8")
        kind, length = struct.unpack("<BQ", _read(buf, 9))
        payload = _read(buf, length)
        if kind == _JSON:
            sections[name] = json.loads(payload.decode("utf-8"))
        elif kind in (_I64, _F64):
            ndim = payload[0]
            shape = struct.unpack(f"<{ndim}Q", payload[1:1 + 8 * ndim])
            dtype = "<i8" if kind == _I64 else "<f8"
            arr = np.frombuffer(payload[1 + 8 * ndim:], dtype=dtype).reshape(shape)
            sections[name] = arr.astype(np.int64 if kind == _I64 else np.float64)
        else:
            raise CheckpointError(f"unknown section kind {kind} for {name!r}")
    if "meta" not in sections:
        raise CheckpointError("checkpoint has no meta section")
    meta = sections["meta"]
    n_wk = []
    for t in range(meta["T"]):
        key = f"n_word_topic/{t}"
        if key not in sections:
            raise CheckpointError(f"missing section {key!r}")
        n_wk.append(sections[key])
    return Checkpoint(
        K=meta["K"], M=meta["M"], beta=meta["beta"], eta=meta["eta"], regime=meta["regime"],
        phenotypes=meta["phenotypes"], modalities=meta["modalities"],
        vocabularies=meta["vocabularies"], icd_to_phenotype=meta["icd_to_phenotype"],
        n_word_topic=n_wk, seed=meta["seed"], alpha_mode=meta["alpha_mode"],
        fits=meta["fits"], trace=meta["trace"], format_version=version,
    )


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
