"""Embedding tensors on the unit sphere: container, sampling and the MVE file format.

Random streams
--------------
Every sampler draws from numpy's Philox4x64-10 counter-based generator.  Each
instance ``i`` gets its own stream keyed by ``(seed, i)`` with the first
counter word set to a per-sampler domain tag, so instance ``i`` of a batch is
the same whatever ``m`` is and blocks of instances can be generated
independently.  Philox output is specified bit-for-bit by numpy and does not
depend on the platform.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadHeader,
    InvalidShape,
    NegativeConcentration,
    NonFinite,
    NotUnitNorm,
    ShapeMismatch,
    ZeroRow,
)

ZERO_NORM = 1e-12
UNIT_TOL = 1e-6
_IDEMPOTENT_TOL = 1e-13

_DOMAIN_UNIFORM = 1
_DOMAIN_MULTIVIEW = 2
_DOMAIN_MISC = 3
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class ViewBatch:
    """M instances x N views x d dimensions of float64 embeddings."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InvalidShape(f"expected a non-empty (M, N, d) tensor, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFinite("batch contains NaN or infinite entries")
        arr = np.array(arr, dtype=np.float64, order="C", copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    @property
    def rows(self) -> np.ndarray:
        """The (M*N, d) matrix, instance-major then view-major."""
        return self.data.reshape(-1, self.d)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.data, axis=-1)

    def is_unit(self, tol: float = UNIT_TOL) -> bool:
        return bool(np.all(np.abs(self.norms() - 1.0) <= tol))

    def require_unit(self, tol: float = UNIT_TOL) -> None:
        if not self.is_unit(tol):
            worst = float(np.max(np.abs(self.norms() - 1.0)))
            raise NotUnitNorm(f"rows must have unit norm (worst deviation {worst:.3e})")

    def __eq__(self, other):
        if not isinstance(other, ViewBatch):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class SamplerConfig:
    m: int
    n: int
    d: int
    concentration: float = 1.0
    seed: int = 0


def _check_counts(m: int, n: int, d: int) -> None:
    for name, value in (("m", m), ("n", n), ("d", d)):
        if int(value) != value or value < 1:
            raise InvalidShape(f"{name} must be a positive integer, got {value!r}")


def instance_stream(seed: int, instance: int, domain: int = _DOMAIN_MISC) -> np.random.Generator:
    """Independent Philox stream for one instance of one sampler."""
    key = np.array([int(seed) & _U64, int(instance) & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=[int(domain), 0, 0, 0]))


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale every vector along the last axis to unit length."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFinite("cannot normalize NaN or infinite entries")
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= ZERO_NORM):
        raise ZeroRow("cannot normalize a row with norm <= 1e-12")
    # rows already unit to rounding are passed through untouched: keeps normalize idempotent bit-for-bit
    return np.where(np.abs(norms - 1.0) <= _IDEMPOTENT_TOL, x, x / norms)


def normalize(batch: ViewBatch | np.ndarray) -> ViewBatch:
    data = batch.data if isinstance(batch, ViewBatch) else batch
    return ViewBatch(normalize_rows(data))


def sample_uniform_sphere(m: int, n: int, d: int, seed: int) -> ViewBatch:
    """m*n i.i.d. points uniform on S^{d-1} (normalized standard Gaussians)."""
    _check_counts(m, n, d)
    out = np.empty((m, n, d))
    for i in range(m):
        out[i] = instance_stream(seed, i, _DOMAIN_UNIFORM).standard_normal((n, d))
    return normalize(out)


def sample_multiview(cfg: SamplerConfig) -> ViewBatch:
    """Views = normalize(anchor + noise / sqrt(concentration)), anchor uniform on the sphere.

    ``concentration == 0`` drops the anchor entirely, so views are independent
    uniform points.
    """
    _check_counts(cfg.m, cfg.n, cfg.d)
    c = float(cfg.concentration)
    if not np.isfinite(c):
        raise NonFinite("concentration must be finite")
    if c < 0:
        raise NegativeConcentration(f"concentration must be >= 0, got {c}")
    out = np.empty((cfg.m, cfg.n, cfg.d))
    for i in range(cfg.m):
        rng = instance_stream(cfg.seed, i, _DOMAIN_MULTIVIEW)
        anchor = rng.standard_normal(cfg.d)
        anchor /= np.linalg.norm(anchor)
        noise = rng.standard_normal((cfg.n, cfg.d))
        out[i] = noise if c == 0.0 else anchor + noise / np.sqrt(c)
    return normalize(out)


# --- MVE v1 text format -------------------------------------------------------

MVE_MAGIC = "mve1"


def format_batch(batch: ViewBatch) -> str:
    lines = [f"{MVE_MAGIC} {batch.m} {batch.n} {batch.d}"]
    for row in batch.rows:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    return "\n".join(lines) + "\n"


def parse_batch(text: str) -> ViewBatch:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise BadHeader("empty input")
    header = lines[0].split(" ")
    if len(header) != 4 or header[0] != MVE_MAGIC:
        raise BadHeader(f"expected 'mve1 M N d', got {lines[0]!r}")
    try:
        m, n, d = (int(tok) for tok in header[1:])
    except ValueError as exc:
        raise BadHeader(f"non-integer dimension in header {lines[0]!r}") from exc
    if min(m, n, d) < 1:
        raise BadHeader(f"dimensions must be positive, got {m} {n} {d}")
    body = lines[1:]
    if len(body) != m * n:
        raise ShapeMismatch(f"expected {m * n} rows, found {len(body)}")
    data = np.empty((m * n, d))
    for k, line in enumerate(body):
        fields = line.split(" ")
        if len(fields) != d:
            raise ShapeMismatch(f"row {k + 1}: expected {d} fields, found {len(fields)}")
        try:
            data[k] = [float(tok) for tok in fields]
        except ValueError as exc:
            raise ShapeMismatch(f"row {k + 1}: unparseable number") from exc
        if not np.all(np.isfinite(data[k])):
            raise NonFinite(f"row {k + 1} contains a non-finite value")
    return ViewBatch(data.reshape(m, n, d))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_batch(batch: ViewBatch, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_batch(batch))


def read_batch(path: str | os.PathLike) -> ViewBatch:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_batch(fh.read())
