"""Dataset ingestion (LIBSVM text format), row normalization, synthetic problems.

Parsing is strict: every line is ``label idx:val idx:val ...`` with 1-based,
strictly usable feature indices and labels mappable to +-1 (0/1 or +-1).
Malformed input raises ``ValueError`` carrying the offending line number.
Gzip-compressed files are accepted by ``.gz`` extension sniffing.
"""

from __future__ import annotations

import gzip
import io
import logging
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .objectives import LogisticObjective, QuadraticObjective

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Sparse row-major samples with +-1 labels."""

    features: sp.csr_matrix
    labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("label count does not match the sample count")
        bad = np.setdiff1d(np.unique(self.labels), [-1.0, 1.0])
        if bad.size:
            raise ValueError(f"labels must be +-1, found {bad.tolist()}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def row_norms(self) -> np.ndarray:
        sq = np.asarray(self.features.multiply(self.features).sum(axis=1)).ravel()
        return np.sqrt(sq)


def _map_label(token: str, lineno: int) -> float:
    try:
        raw = float(token)
    except ValueError:
        raise ValueError(f"line {lineno}: label {token!r} is not numeric") from None
    if raw == 1.0:
        return 1.0
    if raw in (-1.0, 0.0):
        return -1.0
    raise ValueError(f"line {lineno}: non-binary label {token!r}")


def parse_libsvm(source, n_features: int | None = None) -> Dataset:
    """Parse LIBSVM-formatted text into a Dataset.

    ``source`` may be a path, a text stream, or a literal string with newlines.
    Feature dimension is inferred from the maximal index unless ``n_features``
    is given (needed when separate splits must share a dimension).
    """
    close_after = False
    if hasattr(source, "read"):
        stream = source
    elif isinstance(source, os.PathLike) or (
        isinstance(source, str) and "\n" not in source and os.path.exists(source)
    ):
        path = os.fspath(source)
        stream = (
            gzip.open(path, "rt") if path.endswith(".gz") else open(path, "r")
        )
        close_after = True
    else:
        stream = io.StringIO(str(source))

    labels: list[float] = []
    data: list[float] = []
    indices: list[int] = []
    indptr: list[int] = [0]
    max_index = -1
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            labels.append(_map_label(tokens[0], lineno))
            seen: set[int] = set()
            for tok in tokens[1:]:
                try:
                    idx_s, val_s = tok.split(":")
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ValueError(
                        f"line {lineno}: malformed feature token {tok!r}"
                    ) from None
                if idx < 1:
                    raise ValueError(f"line {lineno}: index {idx} is not 1-based")
                if idx - 1 in seen:
                    raise ValueError(f"line {lineno}: duplicate feature index {idx}")
                seen.add(idx - 1)
                indices.append(idx - 1)
                data.append(val)
                max_index = max(max_index, idx - 1)
            indptr.append(len(indices))
    finally:
        if close_after:
            stream.close()

    if not labels:
        raise ValueError("no samples found in input")
    d = max_index + 1 if n_features is None else int(n_features)
    if max_index >= d:
        raise ValueError(
            f"feature index {max_index + 1} exceeds declared dimension {d}"
        )
    features = sp.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int32), np.array(indptr)),
        shape=(len(labels), d),
    )
    return Dataset(features=features, labels=np.array(labels))


def serialize_libsvm(ds: Dataset, stream=None) -> str | None:
    """Write a Dataset back to LIBSVM text; values use shortest round-trip repr."""
    own = stream is None
    out = io.StringIO() if own else stream
    csr = ds.features.copy()
    csr.sort_indices()
    for row in range(ds.n_samples):
        parts = [f"{int(ds.labels[row]):+d}"]
        start, stop = csr.indptr[row], csr.indptr[row + 1]
        for k in range(start, stop):
            parts.append(f"{csr.indices[k] + 1}:{float(csr.data[k])!r}")
        out.write(" ".join(parts) + "\n")
    if own:
        return out.getvalue()
    return None


def normalize_rows(ds: Dataset) -> Dataset:
    """Scale every nonzero row to unit Euclidean norm; zero rows stay zero."""
    norms = ds.row_norms()
    n_zero = int(np.sum(norms == 0.0))
    if n_zero:
        logger.warning("normalize_rows: %d zero rows left unscaled", n_zero)
    scale = np.where(norms > 0.0, norms, 1.0)
    scaled = sp.diags(1.0 / scale) @ ds.features
    return Dataset(features=sp.csr_matrix(scaled), labels=ds.labels.copy())


def synth_logistic_dataset(n: int, d: int, seed: int) -> Dataset:
    """Gaussian samples, unit-normalized rows, random +-1 labels."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, d))
    labels = rng.choice([-1.0, 1.0], size=n)
    ds = Dataset(features=sp.csr_matrix(raw), labels=labels)
    return normalize_rows(ds)


def synth_problem(
    kind: str,
    d: int,
    n: int = 0,
    spectrum=None,
    mu: float = 1e-4,
    seed: int = 0,
    rotate: bool = True,
):
    """Build a synthetic objective.

    quadratic: ``spectrum`` is either a (lo, hi) pair expanded to a linear
    eigenvalue ramp or an explicit length-d eigenvalue array; ``rotate``
    conjugates by a seeded random orthogonal matrix.
    logistic: ``n`` Gaussian samples in dimension d, normalized, with
    regularization ``mu``.
    """
    if kind == "quadratic":
        if spectrum is None:
            raise ValueError("quadratic synthesis requires a spectrum")
        spectrum = np.asarray(spectrum, dtype=float)
        if spectrum.size == 2 and d != 2:
            eigs = np.linspace(spectrum[0], spectrum[1], d)
        elif spectrum.size == d:
            eigs = spectrum
        else:
            raise ValueError("spectrum must be (lo, hi) or length d")
        if np.min(eigs) <= 0:
            raise ValueError("spectrum must be strictly positive")
        if rotate:
            rng = np.random.default_rng(seed)
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            return QuadraticObjective(q @ np.diag(eigs) @ q.T)
        return QuadraticObjective(eigs)
    if kind == "logistic":
        if n < 1:
            raise ValueError("logistic synthesis requires n >= 1")
        ds = synth_logistic_dataset(n, d, seed)
        return LogisticObjective(ds, reg_mu=mu)
    raise ValueError(f"unknown synthetic problem kind {kind!r}")
