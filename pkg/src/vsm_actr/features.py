"""Holistic-trace feature pipeline.

Trace lines are embedded per line by a provider (a deterministic built-in
test embedder, or an external process speaking the line-delimited JSON
protocol), the pooled spectrum picks the component count covering a variance
threshold (the ranked-explanatory-effects rule), and a covariance
eigen-decomposition projects everything down. Ragged per-run matrices are
padded with column-mean imputation; a Wilks' lambda check quantifies how
strongly line categories separate in the reduced space.

Provider protocol (newline-delimited JSON over a byte stream):

    request   {"id": ..., "texts": ["...", ...]}
    response  {"id": ..., "dim": D, "vectors": [[...], ...]}
    error     {"id": ..., "error": "..."}
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import (
    AllZeroVariance,
    DimensionMismatch,
    MixedDims,
    ProviderUnavailable,
    RankDeficient,
    SingularScatter,
)


# ---------------------------------------------------------------------------
# embedding providers
# ---------------------------------------------------------------------------


class EmbeddingProvider(Protocol):
    provider_id: str
    model_id: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Per-line embeddings with provenance."""

    values: np.ndarray  # rows x dim
    provider_id: str
    model_id: str

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])


class TestEmbedder:
    """Deterministic stand-in embedder: hashed-token vectors on the unit sphere.

    Each whitespace token maps to a seeded pseudo-random direction derived
    from its hash; a line's embedding is the normalized sum (plus a sentinel
    so empty lines stay well-defined). Identical text always embeds
    identically, with no external dependency.
    """

    __test__ = False  # not a pytest class, despite the name
    provider_id = "test"

    def __init__(self, dim: int = 64, seed: int = 7):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.model_id = f"hashed-tokens-{dim}d-seed{seed}"
        self._cache: Dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng((self.seed, int.from_bytes(digest, "big")))
            vec = rng.standard_normal(self.dim)
            self._cache[token] = vec
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=float)
        for i, text in enumerate(texts):
            acc = self._token_vector("⊥").copy()  # sentinel keeps norms nonzero
            for token in text.split():
                acc += self._token_vector(token)
            out[i] = acc / np.linalg.norm(acc)
        return out


class BridgeProvider:
    """Client for an external embedding process over stdin/stdout.

    ``endpoint`` is the command line to spawn. One request is in flight at a
    time; any transport or protocol failure raises ProviderUnavailable.
    """

    provider_id = "bridge"

    def __init__(self, endpoint: str, kind: Optional[str] = None):
        self.endpoint = endpoint
        self.kind = kind
        self.model_id = endpoint
        self._proc: Optional[subprocess.Popen] = None
        self._next_id = 0

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    shlex.split(self.endpoint),
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                )
            except OSError as exc:
                raise ProviderUnavailable(f"cannot start bridge {self.endpoint!r}: {exc}") from exc
        return self._proc

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        proc = self._ensure_started()
        self._next_id += 1
        request: dict = {"id": self._next_id, "texts": list(texts)}
        if self.kind:
            request["kind"] = self.kind
        try:
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise ProviderUnavailable(f"bridge transport failed: {exc}") from exc
        if not line:
            raise ProviderUnavailable("bridge closed the stream")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProviderUnavailable(f"bridge sent invalid JSON: {line!r}") from exc
        if response.get("id") != request["id"]:
            raise ProviderUnavailable(
                f"bridge answered id {response.get('id')!r} to request {request['id']}"
            )
        if "error" in response:
            raise ProviderUnavailable(f"bridge error: {response['error']}")
        vectors = np.asarray(response["vectors"], dtype=float)
        if vectors.ndim != 2 or vectors.shape != (len(texts), int(response["dim"])):
            raise DimensionMismatch(
                f"bridge returned shape {vectors.shape}, expected ({len(texts)}, {response['dim']})"
            )
        if "model" in response:
            self.model_id = response["model"]
        return vectors

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc = None

    def __enter__(self) -> "BridgeProvider":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def embed_lines(provider: EmbeddingProvider, lines: Sequence[str]) -> EmbeddingMatrix:
    """Embed one vector per line; rows follow line order."""
    if not lines:
        raise ValueError("lines must be non-empty")
    values = provider.embed(lines)
    if values.shape[0] != len(lines):
        raise DimensionMismatch(f"provider returned {values.shape[0]} rows for {len(lines)} lines")
    if not np.all(np.isfinite(values)):
        raise DimensionMismatch("provider returned non-finite values")
    return EmbeddingMatrix(values=values, provider_id=provider.provider_id, model_id=provider.model_id)


# ---------------------------------------------------------------------------
# spectrum / component selection / reduction
# ---------------------------------------------------------------------------


def pca_spectrum(matrix: np.ndarray) -> np.ndarray:
    """Eigenvalues (descending) of the column-centered sample covariance."""
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigenvalues = np.linalg.eigvalsh(cov)[::-1]
    return np.clip(eigenvalues, 0.0, None)


def sree_component_count(eigenvalues: Sequence[float], threshold: float = 0.70) -> int:
    """Smallest N whose top-N eigenvalues cover >= threshold of total variance."""
    evs = np.asarray(eigenvalues, dtype=float)
    if evs.size == 0 or np.any(evs < 0):
        raise ValueError("eigenvalues must be a non-empty, non-negative sequence")
    if np.any(np.diff(evs) > 1e-12):
        raise ValueError("eigenvalues must be non-increasing")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    total = evs.sum()
    if total == 0.0:
        raise AllZeroVariance("all eigenvalues are zero")
    cumulative = np.cumsum(evs) / total
    return int(np.searchsorted(cumulative, threshold - 1e-12) + 1)


@dataclass(frozen=True)
class ReducedEmbedding:
    """Scores on the top-N principal components plus the full spectrum."""

    scores: np.ndarray              # rows x N
    component_loadings: np.ndarray  # dim x N
    explained_variance_ratio: np.ndarray  # N entries of the full ratio vector
    spectrum_ratio: np.ndarray      # ratios over ALL eigenvalues (sums to 1)
    mean: np.ndarray                # column mean removed before projection

    @property
    def rows(self) -> int:
        return int(self.scores.shape[0])

    @property
    def n_components(self) -> int:
        return int(self.scores.shape[1])

    def reconstruct(self) -> np.ndarray:
        return self.scores @ self.component_loadings.T + self.mean


def pca_reduce(matrix: np.ndarray, n_components: int) -> ReducedEmbedding:
    """Project onto the top-N eigenvectors of the sample covariance.

    Sign convention: each component's largest-magnitude loading is positive.
    N beyond the effective rank raises RankDeficient.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    rows, dim = x.shape
    if not 1 <= n_components <= min(rows - 1, dim):
        raise ValueError(f"n_components must be in [1, {min(rows - 1, dim)}], got {n_components}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (rows - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]
    rank = int(np.sum(eigenvalues > max(eigenvalues[0], 1e-300) * 1e-10))
    if n_components > rank:
        raise RankDeficient(f"requested {n_components} components but rank is {rank}")
    loadings = eigenvectors[:, :n_components].copy()
    for j in range(n_components):
        peak = np.argmax(np.abs(loadings[:, j]))
        if loadings[peak, j] < 0:
            loadings[:, j] = -loadings[:, j]
    total = eigenvalues.sum()
    ratios = eigenvalues / total if total > 0 else eigenvalues
    return ReducedEmbedding(
        scores=centered @ loadings,
        component_loadings=loadings,
        explained_variance_ratio=ratios[:n_components].copy(),
        spectrum_ratio=ratios,
        mean=mean,
    )


def reduce_to_threshold(matrix: np.ndarray, threshold: float = 0.70) -> ReducedEmbedding:
    """Pick N by the variance-coverage rule, then reduce."""
    return pca_reduce(matrix, sree_component_count(pca_spectrum(matrix), threshold))


# ---------------------------------------------------------------------------
# ragged handling and concatenation
# ---------------------------------------------------------------------------


def pad_and_impute(matrices: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Pad row counts to the longest matrix, filling with that matrix's column means.

    Returns (tensor, mask): tensor is k x max_rows x dim, mask is True where a
    cell holds original data.
    """
    if not matrices:
        raise ValueError("need at least one matrix")
    arrays = [np.asarray(m, dtype=float) for m in matrices]
    if any(a.ndim != 2 or a.shape[0] < 1 for a in arrays):
        raise ValueError("every matrix needs at least one row")
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise MixedDims(f"column dims differ: {sorted(dims)}")
    dim = dims.pop()
    max_rows = max(a.shape[0] for a in arrays)
    tensor = np.empty((len(arrays), max_rows, dim), dtype=float)
    mask = np.zeros((len(arrays), max_rows), dtype=bool)
    for i, a in enumerate(arrays):
        tensor[i, : a.shape[0]] = a
        tensor[i, a.shape[0]:] = a.mean(axis=0)
        mask[i, : a.shape[0]] = True
    return tensor, mask


def flatten_and_concat(reduced, llm_vec: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Row-major flatten of the reduced scores, followed by the LM vector.

    ``reduced`` is a ReducedEmbedding or a plain score matrix. The optional
    normalization rescales each part to unit norm before concatenating
    (a guard against scale mismatch between the two sources).
    """
    scores = reduced.scores if isinstance(reduced, ReducedEmbedding) else np.asarray(reduced, dtype=float)
    flat = scores.ravel(order="C")
    vec = np.asarray(llm_vec, dtype=float).ravel()
    if normalize:
        if flat.size and np.linalg.norm(flat) > 0:
            flat = flat / np.linalg.norm(flat)
        if vec.size and np.linalg.norm(vec) > 0:
            vec = vec / np.linalg.norm(vec)
    return np.concatenate([flat, vec])


# ---------------------------------------------------------------------------
# group-effect check
# ---------------------------------------------------------------------------


def wilks_lambda(groups: Sequence[Tuple[str, np.ndarray]]) -> Tuple[float, float, int]:
    """Wilks' lambda det(E)/det(E+H) with Bartlett's chi-square approximation.

    E is the pooled within-group scatter, H the between-group scatter. Returns
    (lambda, chi2, degrees of freedom); lambda near 0 means the grouping
    explains nearly all the variance.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    arrays = [(label, np.asarray(rows, dtype=float)) for label, rows in groups]
    if any(a.ndim != 2 or a.shape[0] < 2 for _, a in arrays):
        raise ValueError("every group needs at least 2 rows")
    dims = {a.shape[1] for _, a in arrays}
    if len(dims) != 1:
        raise MixedDims(f"group dims differ: {sorted(dims)}")
    p = dims.pop()
    g = len(arrays)
    n = sum(a.shape[0] for _, a in arrays)
    if n <= p + g:
        raise ValueError(f"need more rows than dims + groups ({n} <= {p + g})")

    grand = np.vstack([a for _, a in arrays]).mean(axis=0)
    e = np.zeros((p, p))
    h = np.zeros((p, p))
    for _, a in arrays:
        mean = a.mean(axis=0)
        centered = a - mean
        e += centered.T @ centered
        offset = (mean - grand)[:, None]
        h += a.shape[0] * (offset @ offset.T)

    sign_e, logdet_e = np.linalg.slogdet(e)
    sign_t, logdet_t = np.linalg.slogdet(e + h)
    if sign_e <= 0 or sign_t <= 0:
        raise SingularScatter("scatter matrix is singular or indefinite")
    lam = float(np.exp(logdet_e - logdet_t))
    chi2 = float(-(n - 1 - (p + g) / 2.0) * np.log(lam))
    dof = p * (g - 1)
    return lam, chi2, dof


# ---------------------------------------------------------------------------
# matrix files
# ---------------------------------------------------------------------------

_MATRIX_FORMAT = "vsm-matrix/1"


def save_matrix(path, values: np.ndarray, header: Optional[dict] = None) -> None:
    """Write a matrix as a JSON header line plus full-precision text rows."""
    values = np.asarray(values, dtype=float)
    meta = {"format": _MATRIX_FORMAT, "rows": int(values.shape[0]), "dim": int(values.shape[1])}
    meta.update(header or {})
    with open(path, "w") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for row in values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_matrix(path) -> Tuple[np.ndarray, dict]:
    with open(path) as fh:
        meta = json.loads(fh.readline())
        if meta.get("format") != _MATRIX_FORMAT:
            raise ValueError(f"{path}: not a matrix file")
        rows = [np.array([float(tok) for tok in line.split()]) for line in fh if line.strip()]
    values = np.vstack(rows) if rows else np.empty((0, meta["dim"]))
    if values.shape != (meta["rows"], meta["dim"]):
        raise ValueError(f"{path}: expected {(meta['rows'], meta['dim'])}, got {values.shape}")
    return values, meta


def save_reduced(path, reduced: ReducedEmbedding, header: Optional[dict] = None) -> None:
    meta = {
        "n_components": reduced.n_components,
        "explained_variance_ratio": [float(v) for v in reduced.explained_variance_ratio],
        "spectrum_ratio": [float(v) for v in reduced.spectrum_ratio],
        "mean": [float(v) for v in reduced.mean],
        "loadings": [[float(v) for v in row] for row in reduced.component_loadings],
    }
    meta.update(header or {})
    save_matrix(path, reduced.scores, meta)


def load_reduced(path) -> Tuple[ReducedEmbedding, dict]:
    scores, meta = load_matrix(path)
    reduced = ReducedEmbedding(
        scores=scores,
        component_loadings=np.asarray(meta["loadings"], dtype=float),
        explained_variance_ratio=np.asarray(meta["explained_variance_ratio"], dtype=float),
        spectrum_ratio=np.asarray(meta["spectrum_ratio"], dtype=float),
        mean=np.asarray(meta["mean"], dtype=float),
    )
    return reduced, meta
