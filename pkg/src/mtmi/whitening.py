"""Background statistics and the whitening / de-whitening transforms.

The whitener is ``P = E^{-1/2} U^T`` where ``U`` holds the eigenvectors of
the background covariance (columns, descending eigenvalue order) and ``E``
the eigenvalues, floored at ``eigenvalue_floor``. A sample is whitened as
``P (x - mu_b)``; a target signature is whitened as ``P s`` with no mean
subtraction.
"""

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .data import format_float
from .errors import DegenerateInstanceError, DimensionMismatchError, ParseError, ValidationError

__all__ = [
    "BackgroundSource",
    "BackgroundStats",
    "DEFAULT_RELATIVE_FLOOR",
    "estimate_background",
    "stats_from_samples",
    "whiten",
    "whiten_normalize",
    "dewhiten_signature",
    "save_stats",
    "load_stats",
]

DEFAULT_RELATIVE_FLOOR = 1e-8


class BackgroundSource(enum.Enum):
    NEGATIVE_BAGS = "neg"
    ALL_INSTANCES = "all"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"neg": cls.NEGATIVE_BAGS, "negative": cls.NEGATIVE_BAGS,
                   "negativebagsonly": cls.NEGATIVE_BAGS,
                   "all": cls.ALL_INSTANCES, "allinstances": cls.ALL_INSTANCES}
        try:
            return aliases[str(value).strip().lower().replace("_", "")]
        except KeyError:
            raise ValueError(f"unknown background source {value!r} (use 'neg' or 'all')") from None


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _canonical_signs(vectors):
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True, eq=False)
class BackgroundStats:
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    eigenvalue_floor: float
    n_clamped: int = 0
    n_samples: int = 0
    rank_deficient: bool = False

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        evals = np.asarray(self.eigenvalues, dtype=np.float64)
        evecs = np.asarray(self.eigenvectors, dtype=np.float64)
        d = mean.shape[0]
        if mean.ndim != 1 or evals.shape != (d,) or evecs.shape != (d, d):
            raise ValidationError("inconsistent background statistic shapes")
        if not self.eigenvalue_floor > 0:
            raise ValidationError("eigenvalue floor must be positive")
        if np.any(evals < self.eigenvalue_floor):
            raise ValidationError("eigenvalues must not fall below the floor")
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "eigenvalues", _readonly(evals))
        object.__setattr__(self, "eigenvectors", _readonly(evecs))
        object.__setattr__(self, "eigenvalue_floor", float(self.eigenvalue_floor))
        root = np.sqrt(evals)
        object.__setattr__(self, "whitener", _readonly(evecs.T / root[:, None]))
        object.__setattr__(self, "dewhitener", _readonly(evecs * root[None, :]))

    @property
    def dim(self):
        return self.mean.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim), np.eye(dim), DEFAULT_RELATIVE_FLOOR)

    def whiten_many(self, X):
        """Whiten the rows of ``X``: returns ``(X - mu_b) P^T``."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise DimensionMismatchError(f"expected dimensionality {self.dim}, got {X.shape[-1]}")
        return (X - self.mean) @ self.whitener.T

    def whiten_signatures(self, S):
        """Whiten target signatures (rows of ``S``) without mean subtraction."""
        S = np.asarray(S, dtype=np.float64)
        if S.shape[-1] != self.dim:
            raise DimensionMismatchError(f"expected dimensionality {self.dim}, got {S.shape[-1]}")
        return S @ self.whitener.T


def stats_from_samples(samples, relative_floor=DEFAULT_RELATIVE_FLOOR):
    """Estimate background statistics from an (n, D) sample matrix."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("samples must be a 2-D array")
    n, d = X.shape
    if n < 2:
        raise ValidationError(f"need at least 2 background instances, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("background samples contain non-finite values")
    mean = X.mean(axis=0)
    centred = X - mean
    cov = centred.T @ centred / (n - 1)
    if not np.all(np.isfinite(cov)):
        raise ValidationError("background covariance overflows")
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[::-1]
    evecs = _canonical_signs(evecs[:, ::-1])
    top = max(float(evals[0]), 0.0)
    floor = relative_floor * top if top > 0 else relative_floor
    n_clamped = int(np.sum(evals < floor))
    evals = np.maximum(evals, floor)
    return BackgroundStats(mean, evals, evecs, floor, n_clamped=n_clamped,
                           n_samples=n, rank_deficient=n < d + 1)


def estimate_background(collection, source=BackgroundSource.NEGATIVE_BAGS,
                        relative_floor=DEFAULT_RELATIVE_FLOOR):
    source = BackgroundSource.parse(source)
    if source is BackgroundSource.NEGATIVE_BAGS:
        bags = collection.negative_bags
        if not bags:
            raise ValidationError("no negative bags to estimate the background from")
    else:
        bags = collection.bags
    return stats_from_samples(np.vstack([b.instances for b in bags]), relative_floor)


def whiten(x, stats):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (stats.dim,):
        raise DimensionMismatchError(f"expected a vector of length {stats.dim}, got shape {x.shape}")
    return stats.whitener @ (x - stats.mean)


def normalize_rows(W, location=None):
    norms = np.linalg.norm(W, axis=-1, keepdims=True)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms.ravel() == 0)[0])
        where = location(bad) if callable(location) else bad
        raise DegenerateInstanceError("instance equals the background mean; "
                                      "its whitened norm is zero", where)
    return W / norms


def whiten_normalize(x, stats):
    w = whiten(x, stats)
    norm = np.linalg.norm(w)
    if norm == 0:
        raise DegenerateInstanceError("instance equals the background mean; its whitened norm is zero")
    return w / norm


def dewhiten_signature(s_hat, stats):
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s_hat.shape != (stats.dim,):
        raise DimensionMismatchError(f"expected a vector of length {stats.dim}, got shape {s_hat.shape}")
    if not np.any(s_hat):
        raise DegenerateInstanceError("cannot de-whiten a zero signature")
    t = stats.dewhitener @ s_hat
    return t / np.linalg.norm(t)


# Stats CSV: header "row,c1..cD"; rows "mean", "eigenvalue" (floored),
# "floor" (the floor repeated in every column), then "u1".."uD" where
# row "uk" is the k-th eigenvector.
def save_stats(stats, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = stats.dim
    w.writerow(["row"] + [f"c{i + 1}" for i in range(d)])
    w.writerow(["mean"] + [format_float(v) for v in stats.mean])
    w.writerow(["eigenvalue"] + [format_float(v) for v in stats.eigenvalues])
    w.writerow(["floor"] + [format_float(stats.eigenvalue_floor)] * d)
    for k in range(d):
        w.writerow([f"u{k + 1}"] + [format_float(v) for v in stats.eigenvectors[:, k]])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_stats(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "row":
        raise ParseError("not a background statistics file", 1, path)
    d = len(rows[0]) - 1
    if len(rows) != d + 4:
        raise ParseError(f"expected {d + 4} lines for dimensionality {d}, found {len(rows)}", None, path)
    expected = ["mean", "eigenvalue", "floor"] + [f"u{k + 1}" for k in range(d)]
    table = []
    for lineno, (row, name) in enumerate(zip(rows[1:], expected), start=2):
        if row[0] != name or len(row) != d + 1:
            raise ParseError(f"expected row {name!r} with {d} values at line {lineno}", lineno, path)
        try:
            table.append([float(v) for v in row[1:]])
        except ValueError:
            raise ParseError(f"malformed value at line {lineno}", lineno, path) from None
    table = np.array(table)
    return BackgroundStats(table[0], table[1], table[3:].T, table[2, 0])
