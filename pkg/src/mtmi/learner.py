"""Multi-target multiple-instance dictionary learning (MTMI-ACE / MTMI-SMF).

All optimization happens in whitened coordinates. For ACE every instance
is whitened and scaled to unit norm; for SMF instances are only whitened.
Signatures are unit vectors in the same space, so every detection
statistic reduces to a dot product.

The objective maximized over the dictionary ``S = [s_1 .. s_K]`` is::

    M+  = 1/N+ * sum_j max_k  x*_{j,k} . s_k
    M-  = 1/K  * sum_k  m . s_k,      m = 1/N- sum_j 1/N_j- sum_i x_i
    Mu  = alpha / C(K, 2) * sum_{k<l} s_k . s_l       (0 when K == 1)
    J   = M+ - M- - Mu

where ``x*_{j,k}`` is the instance of positive bag ``j`` scoring highest
against ``s_k``.
"""

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .data import format_float
from .detectors import DetectorKind
from .errors import DegenerateUpdateError, ParseError, ValidationError
from .whitening import (BackgroundSource, DEFAULT_RELATIVE_FLOOR, dewhiten_signature,
                        estimate_background, normalize_rows)

__all__ = [
    "LearnerConfig",
    "TargetDictionary",
    "PreparedData",
    "Representatives",
    "TrainingTrace",
    "kmeans",
    "prepare",
    "objective",
    "init_greedy",
    "select_representatives",
    "compute_indicators",
    "update_signature",
    "update_all",
    "prune",
    "train",
    "save_dictionary",
    "load_dictionary",
    "save_trace",
]


@dataclass
class LearnerConfig:
    initial_targets: int = 1
    uniqueness_weight: float = 0.0
    kmeans_clusters: int = None
    kmeans_max_iter: int = 100
    max_iter: int = 1000
    detector: DetectorKind = DetectorKind.ACE
    seed: int = 0
    background_source: BackgroundSource = BackgroundSource.NEGATIVE_BAGS
    eigenvalue_floor: float = DEFAULT_RELATIVE_FLOOR
    signature_tol: float = 1e-12

    def __post_init__(self):
        self.detector = DetectorKind.parse(self.detector)
        self.background_source = BackgroundSource.parse(self.background_source)
        if int(self.initial_targets) != self.initial_targets or self.initial_targets < 1:
            raise ValidationError("initial_targets must be a positive integer")
        if not self.uniqueness_weight >= 0:
            raise ValidationError("uniqueness_weight must be non-negative")
        if self.kmeans_clusters is not None:
            if self.kmeans_clusters < 1:
                raise ValidationError("kmeans_clusters must be a positive integer")
            if self.kmeans_clusters < self.initial_targets:
                raise ValidationError(
                    f"kmeans_clusters ({self.kmeans_clusters}) must be >= initial_targets "
                    f"({self.initial_targets})")
        if self.max_iter < 1 or self.kmeans_max_iter < 1:
            raise ValidationError("iteration limits must be >= 1")
        if not self.eigenvalue_floor > 0:
            raise ValidationError("eigenvalue_floor must be positive")
        if not 0 <= self.signature_tol < math.inf:
            raise ValidationError("signature_tol must be finite and non-negative")
        self.initial_targets = int(self.initial_targets)
        self.uniqueness_weight = float(self.uniqueness_weight)

    def resolved_clusters(self, n_positive_instances):
        if self.kmeans_clusters is not None:
            c = self.kmeans_clusters
        else:
            c = min(2 * self.initial_targets, n_positive_instances)
        if c > n_positive_instances:
            raise ValidationError(
                f"{c} clusters requested but positive bags hold only {n_positive_instances} instances")
        if c < self.initial_targets:
            raise ValidationError(
                f"cannot initialize {self.initial_targets} targets from {c} cluster centres")
        return c

    def items(self):
        """(key, value) pairs with enums reduced to their string values."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append((f.name, v.value if hasattr(v, "value") else v))
        return out


@dataclass(frozen=True, eq=False)
class TargetDictionary:
    whitened_signatures: np.ndarray
    output_signatures: np.ndarray
    stats: object = None

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.whitened_signatures, dtype=np.float64))
        O = np.atleast_2d(np.asarray(self.output_signatures, dtype=np.float64))
        if W.shape != O.shape or W.shape[0] < 1:
            raise ValidationError("dictionary must hold at least one signature in both spaces")
        for a in (W, O):
            a.setflags(write=False)
        object.__setattr__(self, "whitened_signatures", W)
        object.__setattr__(self, "output_signatures", O)

    @property
    def count(self):
        return self.whitened_signatures.shape[0]

    def __len__(self):
        return self.count

    @classmethod
    def from_whitened(cls, whitened, stats):
        whitened = np.atleast_2d(whitened)
        out = np.array([dewhiten_signature(s, stats) for s in whitened])
        return cls(whitened, out, stats)


@dataclass(frozen=True, eq=False)
class PreparedData:
    """Whitened training data.

    ``positive`` holds one (n_j, D) array per positive bag;
    ``negative_mean`` is the bag-balanced mean of the negative instances.
    """

    positive: tuple
    positive_ids: tuple
    negative: tuple
    negative_mean: np.ndarray
    detector: DetectorKind

    @property
    def dim(self):
        return self.negative_mean.shape[0]

    @property
    def n_positive(self):
        return len(self.positive)

    def positive_instances(self):
        return np.vstack(self.positive)


@dataclass(frozen=True, eq=False)
class Representatives:
    """Selected instance per (positive bag, signature).

    ``index[j, k]`` is the row within bag ``j``; ``vectors[j, k]`` the
    instance itself; ``scores[j, k]`` its dot product with ``s_k``.
    """

    index: np.ndarray
    vectors: np.ndarray
    scores: np.ndarray


@dataclass
class TrainingTrace:
    objective: list = field(default_factory=list)
    num_targets: list = field(default_factory=list)
    stop_reason: str = None
    initial_whitened: np.ndarray = None
    kmeans_clusters: int = None
    cycle_at: int = None
    degenerate_updates: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.objective)


# ---------------------------------------------------------------------------
# K-Means

def _sq_dist(X, centers):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points, n_clusters, seed=0, max_iter=100):
    """Lloyd's K-Means with farthest-point seeding.

    The first centre is a point drawn with ``seed``; each further centre is
    the point farthest from those already chosen (lowest index on ties).
    Returns the centres sorted lexicographically.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n_clusters < 1:
        raise ValidationError("need at least one cluster")
    if n < n_clusters:
        raise ValidationError(f"{n} points cannot form {n_clusters} clusters")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    mind = _sq_dist(X, X[chosen])[:, 0]
    for _ in range(1, n_clusters):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, _sq_dist(X, X[nxt:nxt + 1])[:, 0])
    centers = X[chosen].copy()

    labels = None
    for _ in range(max_iter):
        new_labels = np.argmin(_sq_dist(X, centers), axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=n_clusters)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]

    order = np.lexsort(centers.T[::-1])
    return centers[order]


# ---------------------------------------------------------------------------
# Data preparation and the objective

def prepare(collection, stats, detector):
    detector = DetectorKind.parse(detector)

    def transform(bag):
        W = stats.whiten_many(bag.instances)
        if detector is DetectorKind.ACE:
            W = normalize_rows(W, lambda i: f"bag {bag.id}, instance {i}")
        return W

    pos = tuple(transform(b) for b in collection.positive_bags)
    neg = tuple(transform(b) for b in collection.negative_bags)
    if neg:
        neg_mean = np.mean(np.array([b.mean(axis=0) for b in neg]), axis=0)
    else:
        neg_mean = np.zeros(stats.dim)
    return PreparedData(pos, tuple(b.id for b in collection.positive_bags), neg, neg_mean, detector)


def _uniqueness(S, alpha):
    K = S.shape[0]
    if K < 2 or alpha == 0:
        return 0.0
    G = S @ S.T
    pair_sum = (G.sum() - np.trace(G)) / 2.0
    return alpha * pair_sum / math.comb(K, 2)


def _objective_from_scores(rep_scores, S, negative_mean, alpha):
    m_plus = float(np.mean(np.max(rep_scores, axis=1)))
    m_minus = float(np.mean(S @ negative_mean))
    return m_plus - m_minus - _uniqueness(S, alpha)


def objective(signatures, data, alpha, reps=None):
    """Objective value of a whitened dictionary.

    ``reps`` defaults to the optimal representatives for ``signatures``.
    """
    S = np.atleast_2d(np.asarray(signatures, dtype=np.float64))
    if S.shape[0] == 0:
        raise ValidationError("dictionary is empty")
    if reps is None:
        reps = select_representatives(S, data)
    return _objective_from_scores(reps.scores, S, data.negative_mean, alpha)


# ---------------------------------------------------------------------------
# Algorithm steps

def select_representatives(signatures, data):
    S = np.atleast_2d(signatures)
    J, K = data.n_positive, S.shape[0]
    index = np.empty((J, K), dtype=np.intp)
    vectors = np.empty((J, K, S.shape[1]))
    scores = np.empty((J, K))
    for j, bag in enumerate(data.positive):
        bag_scores = bag @ S.T
        best = np.argmax(bag_scores, axis=0)
        index[j] = best
        vectors[j] = bag[best]
        scores[j] = bag_scores[best, np.arange(K)]
    return Representatives(index, vectors, scores)


def compute_indicators(rep_scores):
    """One-hot assignment of each positive bag to its best-explaining signature.

    A bag goes to the signature whose representative scores strictly
    highest; exact ties go to the lowest signature index.
    """
    rep_scores = np.atleast_2d(rep_scores)
    J, K = rep_scores.shape
    delta = np.zeros((J, K), dtype=bool)
    delta[np.arange(J), np.argmax(rep_scores, axis=1)] = True
    return delta


def update_signature(k, signatures, reps, indicators, negative_mean, alpha):
    """Closed-form maximizer of the Lagrangian for signature ``k``.

    Other signatures are held at their values in ``signatures``.
    """
    S = np.atleast_2d(signatures)
    K = S.shape[0]
    assigned = np.asarray(indicators)[:, k]
    n_assigned = int(assigned.sum())
    t = -np.asarray(negative_mean, dtype=np.float64).copy()
    if n_assigned:
        t += reps.vectors[assigned, k].sum(axis=0) / n_assigned
    if K > 1 and alpha != 0:
        others = S.sum(axis=0) - S[k]
        t -= alpha / (K - 1) * others
    norm = np.linalg.norm(t)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateUpdateError(f"update for signature {k} has zero norm")
    return t / norm


def update_all(signatures, reps, indicators, negative_mean, alpha, degenerate=None):
    """Update every signature from the same starting dictionary.

    A signature with no assigned bag, or whose update is degenerate, keeps
    its previous value; degenerate indices are appended to ``degenerate``.
    """
    S = np.atleast_2d(signatures)
    out = S.copy()
    for k in range(S.shape[0]):
        if not np.any(indicators[:, k]):
            continue
        try:
            out[k] = update_signature(k, S, reps, indicators, negative_mean, alpha)
        except DegenerateUpdateError:
            if degenerate is not None:
                degenerate.append(k)
    return out


def prune(signatures, indicators, ids=None):
    """Drop signatures that no positive bag is assigned to.

    Returns ``(signatures, indicators, keep_mask)``; the last remaining
    signature is never removed.
    """
    S = np.atleast_2d(signatures)
    keep = np.asarray(indicators).any(axis=0)
    if not keep.any():
        keep = np.zeros_like(keep)
        keep[0] = True
    return S[keep], np.asarray(indicators)[:, keep], keep


def init_greedy(data, config, centers=None):
    """Greedy dictionary initialization from K-Means centres.

    K-Means runs over all positive-bag instances (already whitened, and
    normalized for ACE). Each step adds the unused unit-normalized centre
    that maximizes the objective together with those already chosen.
    Returns ``(initial signatures, unit candidates)``.
    """
    if centers is None:
        pts = data.positive_instances()
        C = config.resolved_clusters(pts.shape[0])
        centers = kmeans(pts, C, seed=config.seed, max_iter=config.kmeans_max_iter)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    K = config.initial_targets
    if centers.shape[0] < K:
        raise ValidationError(f"{centers.shape[0]} cluster centres cannot initialize {K} targets")
    norms = np.linalg.norm(centers, axis=1)
    if np.any(norms == 0):
        raise ValidationError("a cluster centre lies at the origin and cannot be normalized")
    cand = centers / norms[:, None]

    # best[j, c]: score of the representative of bag j for candidate c
    best = np.array([np.max(bag @ cand.T, axis=0) for bag in data.positive])
    neg = cand @ data.negative_mean
    alpha = config.uniqueness_weight

    chosen = []
    for _ in range(K):
        best_val, best_c = -np.inf, None
        for c in range(cand.shape[0]):
            if c in chosen:
                continue
            idx = chosen + [c]
            val = _objective_from_scores(best[:, idx], cand[idx], data.negative_mean, alpha)
            if val > best_val:
                best_val, best_c = val, c
        chosen.append(best_c)
    return cand[chosen].copy(), cand


def _state_key(ids, reps, indicators):
    return (tuple(ids), reps.index.tobytes(), np.packbits(indicators).tobytes(), indicators.shape)


def train(collection, config=None, stats=None):
    """Learn a target dictionary from labelled bags.

    Returns ``(TargetDictionary, TrainingTrace)``. Iteration stops once the
    representatives and bag assignments repeat between consecutive
    iterations and no signature moves by more than ``signature_tol``, or
    after ``max_iter`` iterations.
    """
    config = config or LearnerConfig()
    collection.require_trainable()
    if stats is None:
        stats = estimate_background(collection, config.background_source, config.eigenvalue_floor)
    data = prepare(collection, stats, config.detector)
    S, _ = init_greedy(data, config)
    trace = TrainingTrace(initial_whitened=S.copy())
    trace.kmeans_clusters = config.resolved_clusters(data.positive_instances().shape[0])

    alpha = config.uniqueness_weight
    ids = list(range(S.shape[0]))
    prev_key = None
    seen = {}
    for it in range(1, config.max_iter + 1):
        reps = select_representatives(S, data)
        delta = compute_indicators(reps.scores)
        S, delta, keep = prune(S, delta)
        if not keep.all():
            reps = Representatives(reps.index[:, keep], reps.vectors[:, keep], reps.scores[:, keep])
            ids = [i for i, kept in zip(ids, keep) if kept]
        trace.objective.append(_objective_from_scores(reps.scores, S, data.negative_mean, alpha))
        trace.num_targets.append(S.shape[0])

        degenerate = []
        S_new = update_all(S, reps, delta, data.negative_mean, alpha, degenerate)
        if degenerate:
            trace.degenerate_updates.append((it, [ids[k] for k in degenerate]))

        key = _state_key(ids, reps, delta)
        moved = float(np.max(np.abs(S_new - S)))
        S = S_new
        if key == prev_key and moved <= config.signature_tol:
            trace.stop_reason = "converged"
            break
        digest = hashlib.sha1(repr(key).encode()).hexdigest()
        if digest in seen and seen[digest] < it - 1 and trace.cycle_at is None:
            trace.cycle_at = it
        seen[digest] = it
        prev_key = key
    else:
        trace.stop_reason = "max_iter"

    return TargetDictionary.from_whitened(S, stats), trace


# ---------------------------------------------------------------------------
# Files

def _write_signatures(path, signatures):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = signatures.shape[1]
    w.writerow(["target_index"] + [f"b{i + 1}" for i in range(d)])
    for k, s in enumerate(signatures):
        w.writerow([k] + [format_float(v) for v in s])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def save_dictionary(dictionary, path, whitened_path=None):
    _write_signatures(path, dictionary.output_signatures)
    if whitened_path is not None:
        _write_signatures(whitened_path, dictionary.whitened_signatures)


def load_dictionary(path):
    """Read a dictionary CSV; returns a (K, D) array of signatures."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "target_index":
        raise ParseError("header must be 'target_index,b1,...,bD'", 1, path)
    d = len(rows[0]) - 1
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 1:
            raise ParseError(f"inconsistent dimensionality at line {lineno}", lineno, path)
        try:
            out.append([float(v) for v in row[1:]])
        except ValueError:
            raise ParseError(f"malformed value at line {lineno}", lineno, path) from None
    if not out:
        raise ParseError("dictionary file has no signatures", None, path)
    return np.array(out)


def save_trace(trace, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "objective", "num_targets", "stop_reason"])
    n = trace.iterations
    for i, (obj, k) in enumerate(zip(trace.objective, trace.num_targets), start=1):
        w.writerow([i, format_float(obj), k, trace.stop_reason if i == n else ""])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
