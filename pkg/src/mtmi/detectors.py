"""ACE and SMF detection statistics.

Both statistics are dot products in whitened coordinates between the unit
whitened signature ``P s / ||P s||`` and the whitened, mean-subtracted
sample ``P (x - mu_b)``. ACE additionally normalizes the sample, making it
the cosine of the angle between the two.
"""

import csv
import enum
import io

import numpy as np

from .data import format_float
from .errors import DegenerateInstanceError, DimensionMismatchError, ParseError, ValidationError
from .whitening import normalize_rows

__all__ = [
    "DetectorKind",
    "Fusion",
    "detect",
    "detect_many",
    "detect_dictionary",
    "detect_batch",
    "save_scores",
    "load_scores",
]


class DetectorKind(enum.Enum):
    ACE = "ace"
    SMF = "smf"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown detector {value!r} (use 'ace' or 'smf')") from None


class Fusion(enum.Enum):
    MAX = "max"
    MEAN = "mean"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown fusion rule {value!r} (use 'max' or 'mean')") from None


def _unit_whitened_signatures(S, stats):
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    Ws = stats.whiten_signatures(S)
    norms = np.linalg.norm(Ws, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInstanceError("target signature has zero whitened norm")
    return Ws / norms


def detect_many(X, S, stats, kind, location=None):
    """Score every row of ``X`` against every row of ``S``; returns (n, K)."""
    kind = DetectorKind.parse(kind)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Wx = stats.whiten_many(X)
    if kind is DetectorKind.ACE:
        Wx = normalize_rows(Wx, location)
    return Wx @ _unit_whitened_signatures(S, stats).T


def detect(x, s, stats, kind):
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x.shape != (stats.dim,) or s.shape != (stats.dim,):
        raise DimensionMismatchError(
            f"instance {x.shape} and signature {s.shape} must both have length {stats.dim}")
    return float(detect_many(x[None, :], s[None, :], stats, kind)[0, 0])


def _signatures_of(dictionary):
    sigs = getattr(dictionary, "output_signatures", dictionary)
    sigs = np.atleast_2d(np.asarray(sigs, dtype=np.float64))
    if sigs.shape[0] == 0 or sigs.size == 0:
        raise ValidationError("target dictionary is empty")
    return sigs


def _fuse(scores, fusion):
    fusion = Fusion.parse(fusion)
    if fusion is Fusion.MAX:
        return scores.max(axis=1)
    return scores.mean(axis=1)


def detect_dictionary(x, dictionary, stats, kind, fusion=Fusion.MAX):
    """Fused detection statistic of ``x`` against every dictionary signature.

    ``dictionary`` is a :class:`~mtmi.learner.TargetDictionary` or an array
    of signatures (one per row) in the original spectral space.
    """
    sigs = _signatures_of(dictionary)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (stats.dim,):
        raise DimensionMismatchError(f"instance must have length {stats.dim}")
    return float(_fuse(detect_many(x[None, :], sigs, stats, kind), fusion)[0])


def detect_batch(collection, dictionary, stats, kind, fusion=Fusion.MAX):
    """Score every instance of ``collection``; returns [(bag_id, index, score)]."""
    sigs = _signatures_of(dictionary)
    if collection.dim != stats.dim or sigs.shape[1] != stats.dim:
        raise DimensionMismatchError(
            f"bags (D={collection.dim}), dictionary (D={sigs.shape[1]}) and "
            f"background statistics (D={stats.dim}) disagree")
    out = []
    for bag in collection.bags:
        def where(i, bag=bag):
            return f"bag {bag.id}, instance {i}"
        fused = _fuse(detect_many(bag.instances, sigs, stats, kind, location=where), fusion)
        out.extend((bag.id, i, float(v)) for i, v in enumerate(fused))
    return out


def save_scores(scores, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bag_id", "instance_index", "score"])
    for bag_id, idx, score in scores:
        w.writerow([bag_id, idx, format_float(score)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_scores(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["bag_id", "instance_index", "score"]:
        raise ParseError("header must be 'bag_id,instance_index,score'", 1, path)
    return [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:] if r]
