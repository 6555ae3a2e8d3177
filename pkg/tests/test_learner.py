import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import planted_collection, random_collection
from oracles import (balanced_negative_mean, brute_objective, lagrangian_part, mi_loop,
                     projected_fd_gradient, whiten_bags)
from mtmi.data import Bag, BagCollection
from mtmi.errors import DegenerateUpdateError, ValidationError
from mtmi.learner import (LearnerConfig, PreparedData, Representatives, TargetDictionary,
                          compute_indicators, init_greedy, kmeans, load_dictionary, objective,
                          prepare, prune, save_dictionary, save_trace, select_representatives, train,
                          update_all, update_signature)
from mtmi.detectors import DetectorKind
from mtmi.whitening import BackgroundStats, estimate_background


def unit_rows(rng, K, D):
    S = rng.normal(size=(K, D))
    return S / np.linalg.norm(S, axis=1, keepdims=True)


def toy_data(pos, neg_mean, detector="smf"):
    pos = tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in pos)
    return PreparedData(pos, tuple(range(1, len(pos) + 1)), (), np.asarray(neg_mean, dtype=float),
                        DetectorKind.parse(detector))


# --- configuration -------------------------------------------------------

def test_config_defaults_and_validation():
    cfg = LearnerConfig()
    assert cfg.initial_targets == 1 and cfg.uniqueness_weight == 0.0
    assert cfg.resolved_clusters(100) == 2
    assert LearnerConfig(initial_targets=4).resolved_clusters(100) == 8
    assert LearnerConfig(initial_targets=4).resolved_clusters(5) == 5
    with pytest.raises(ValidationError):
        LearnerConfig(initial_targets=4).resolved_clusters(3)
    with pytest.raises(ValidationError):
        LearnerConfig(initial_targets=0)
    with pytest.raises(ValidationError):
        LearnerConfig(uniqueness_weight=-1)
    with pytest.raises(ValidationError):
        LearnerConfig(initial_targets=3, kmeans_clusters=2)


# --- K-Means -------------------------------------------------------------

def test_kmeans_one_point_per_cluster(rng):
    X = rng.normal(size=(6, 3))
    C = kmeans(X, 6)
    np.testing.assert_array_equal(C, X[np.lexsort(X.T[::-1])])


def test_kmeans_single_cluster_is_mean(rng):
    X = rng.normal(size=(30, 4))
    np.testing.assert_allclose(kmeans(X, 1)[0], X.mean(0))


def test_kmeans_two_blobs(rng):
    X = np.vstack([rng.normal(size=(100, 2)) * 0.1 + [5, 5], rng.normal(size=(100, 2)) * 0.1 - 5])
    C = kmeans(X, 2, seed=3)
    np.testing.assert_allclose(C, [[-5, -5], [5, 5]], atol=0.1)


def test_kmeans_deterministic_and_errors(rng):
    X = rng.normal(size=(50, 3))
    assert kmeans(X, 4, seed=9).tobytes() == kmeans(X, 4, seed=9).tobytes()
    with pytest.raises(ValidationError):
        kmeans(X[:2], 3)


# --- objective -----------------------------------------------------------

def test_objective_hand_examples():
    data = toy_data([[[1.0, 0.0]]], [0.0, 0.0])
    assert objective([[1.0, 0.0]], data, 0.0) == 1.0
    data = toy_data([[[1.0, 0.0]]], [1.0, 0.0])
    assert objective([[1.0, 0.0]], data, 0.0) == 0.0
    # two orthogonal signatures add no uniqueness penalty; parallel ones cost alpha
    data = toy_data([[[1.0, 0.0]], [[0.0, 1.0]]], [0.0, 0.0])
    assert objective([[1.0, 0.0], [0.0, 1.0]], data, 5.0) == pytest.approx(1.0)
    assert objective([[1.0, 0.0], [1.0, 0.0]], data, 0.5) == pytest.approx(0.5 - 0.5)


def test_objective_matches_brute_force(rng):
    for _ in range(30):
        D = int(rng.integers(2, 7))
        K = int(rng.integers(1, 5))
        pos = [rng.normal(size=(int(rng.integers(1, 5)), D)) for _ in range(int(rng.integers(1, 5)))]
        m = rng.normal(size=D)
        S = unit_rows(rng, K, D)
        alpha = float(rng.uniform(0, 2))
        got = objective(S, toy_data(pos, m), alpha)
        assert got == pytest.approx(brute_objective(S, pos, m, alpha), abs=1e-12)


def test_objective_with_given_representatives(rng):
    pos = [rng.normal(size=(4, 3)) for _ in range(3)]
    data = toy_data(pos, np.zeros(3))
    S = unit_rows(rng, 2, 3)
    reps = select_representatives(S, data)
    assert objective(S, data, 0.3, reps) == objective(S, data, 0.3)


# --- representatives and indicators -------------------------------------

def test_representatives_match_argmax(rng):
    pos = [rng.normal(size=(int(rng.integers(1, 8)), 4)) for _ in range(5)]
    S = unit_rows(rng, 3, 4)
    reps = select_representatives(S, toy_data(pos, np.zeros(4)))
    for j, bag in enumerate(pos):
        for k in range(3):
            scores = [float(x @ S[k]) for x in bag]
            i = scores.index(max(scores))
            assert reps.index[j, k] == i
            np.testing.assert_array_equal(reps.vectors[j, k], bag[i])
            assert reps.scores[j, k] == pytest.approx(scores[i], abs=1e-15)


def test_representative_tie_takes_first():
    reps = select_representatives([[1.0, 0.0]], toy_data([[[1.0, 0.0], [1.0, 0.0]]], [0.0, 0.0]))
    assert reps.index[0, 0] == 0


def test_indicators():
    np.testing.assert_array_equal(compute_indicators([[0.9, 0.2]]), [[True, False]])
    np.testing.assert_array_equal(compute_indicators([[0.5, 0.5]]), [[True, False]])
    np.testing.assert_array_equal(compute_indicators([[0.1, 0.2, 0.3], [0.9, -1, 0]]),
                                  [[False, False, True], [True, False, False]])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_indicators_one_hot(J, K, seed):
    scores = np.round(np.random.default_rng(seed).normal(size=(J, K)), 1)
    delta = compute_indicators(scores)
    assert np.all(delta.sum(axis=1) == 1)
    for j in range(J):
        k = int(np.flatnonzero(delta[j])[0])
        assert scores[j, k] == scores[j].max()
        assert np.all(scores[j, :k] < scores[j, k])


# --- update --------------------------------------------------------------

def _reps_for(S, pos):
    return select_representatives(S, toy_data(pos, np.zeros(np.asarray(S).shape[1])))


def test_update_hand_example():
    pos = [[[1.0, 0.0]]]
    S = np.array([[1.0, 0.0]])
    reps = _reps_for(S, pos)
    s = update_signature(0, S, reps, np.array([[True]]), [0.0, 1.0], 0.0)
    np.testing.assert_allclose(s, np.array([1.0, -1.0]) / np.sqrt(2))


def test_update_uniqueness_pushes_apart():
    pos = [[[1.0, 0.0]], [[0.0, 1.0]]]
    S = np.array([[1.0, 0.0], [0.0, 1.0]])
    reps = _reps_for(S, pos)
    delta = compute_indicators(reps.scores)
    s = update_signature(0, S, reps, delta, [0.0, 0.0], 1.0)
    np.testing.assert_allclose(s, np.array([1.0, -1.0]) / np.sqrt(2))


def test_update_degenerate():
    pos = [[[1.0, 0.0]]]
    S = np.array([[1.0, 0.0]])
    reps = _reps_for(S, pos)
    with pytest.raises(DegenerateUpdateError):
        update_signature(0, S, reps, np.array([[True]]), [1.0, 0.0], 0.0)
    log = []
    out = update_all(S, reps, np.array([[True]]), np.array([1.0, 0.0]), 0.0, log)
    assert log == [0]
    np.testing.assert_array_equal(out, S)


def random_state(rng):
    D = int(rng.integers(2, 8))
    K = int(rng.integers(1, 5))
    pos = [rng.normal(size=(int(rng.integers(1, 6)), D)) for _ in range(int(rng.integers(K, K + 5)))]
    S = unit_rows(rng, K, D)
    reps = _reps_for(S, pos)
    delta = compute_indicators(reps.scores)
    return S, reps, delta, rng.normal(size=D) * 0.3, float(rng.uniform(0, 2))


def test_update_is_stationary(rng):
    checked = 0
    for _ in range(40):
        S, reps, delta, m, alpha = random_state(rng)
        for k in np.flatnonzero(delta.any(axis=0)):
            s = update_signature(k, S, reps, delta, m, alpha)
            assert abs(np.linalg.norm(s) - 1) <= 1e-10
            assert np.max(np.abs(projected_fd_gradient(s, k, S, reps, delta, m, alpha))) <= 1e-5
            # It is the constrained maximizer, not a minimizer.
            assert lagrangian_part(s, k, S, reps, delta, m, alpha) >= lagrangian_part(
                -s, k, S, reps, delta, m, alpha)
            checked += 1
    assert checked >= 40


# --- pruning -------------------------------------------------------------

def test_prune():
    S = np.eye(3)
    delta = np.array([[True, False, False], [False, False, True]])
    S2, d2, keep = prune(S, delta)
    np.testing.assert_array_equal(S2, S[[0, 2]])
    np.testing.assert_array_equal(d2, delta[:, [0, 2]])
    np.testing.assert_array_equal(keep, [True, False, True])
    S3, _, keep = prune(S, np.zeros((2, 3), dtype=bool))
    assert S3.shape == (1, 3) and keep.sum() == 1


# --- initialization ------------------------------------------------------

def test_greedy_k1_is_exhaustive(rng):
    pos = [rng.normal(size=(5, 3)) for _ in range(4)]
    data = toy_data(pos, rng.normal(size=3) * 0.2)
    centers = rng.normal(size=(6, 3))
    init, cand = init_greedy(data, LearnerConfig(), centers=centers)
    best = max(range(6), key=lambda c: brute_objective(cand[[c]], pos, data.negative_mean, 0.0))
    np.testing.assert_array_equal(init[0], cand[best])
    np.testing.assert_allclose(np.linalg.norm(cand, axis=1), 1.0)


def test_greedy_picks_distinct_blobs(rng):
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    pos = [rng.normal(size=(3, 3)) * 0.01 + (a if j % 2 else b) for j in range(6)]
    data = toy_data(pos, np.zeros(3))
    init, _ = init_greedy(data, LearnerConfig(initial_targets=2, uniqueness_weight=0.5, kmeans_clusters=2))
    assert abs(init[0] @ init[1]) < 0.1


def test_greedy_k_equals_c_takes_all(rng):
    pos = [rng.normal(size=(4, 3)) for _ in range(3)]
    data = toy_data(pos, np.zeros(3))
    centers = rng.normal(size=(3, 3))
    init, cand = init_greedy(data, LearnerConfig(initial_targets=3), centers=centers)
    assert sorted(map(tuple, init)) == sorted(map(tuple, cand))


# --- training ------------------------------------------------------------

def test_train_basic_properties(rng):
    c = random_collection(rng, n_pos=4, n_neg=4, dim=4, min_size=3, max_size=8, offset=1.0)
    cfg = LearnerConfig(initial_targets=3, uniqueness_weight=0.5)
    d1, t1 = train(c, cfg)
    d2, t2 = train(c, cfg)
    assert d1.whitened_signatures.tobytes() == d2.whitened_signatures.tobytes()
    assert d1.output_signatures.tobytes() == d2.output_signatures.tobytes()
    assert t1.objective == t2.objective
    np.testing.assert_allclose(np.linalg.norm(d1.whitened_signatures, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(d1.output_signatures, axis=1), 1.0, atol=1e-12)
    assert all(a >= b for a, b in zip(t1.num_targets, t1.num_targets[1:]))
    assert t1.num_targets[-1] == d1.count
    assert t1.stop_reason in ("converged", "max_iter")


def test_train_fixed_point(rng):
    for seed in range(5):
        c = random_collection(np.random.default_rng(seed), n_pos=4, n_neg=3, dim=3, min_size=2,
                              max_size=6, offset=1.0)
        cfg = LearnerConfig(initial_targets=2, uniqueness_weight=0.3)
        d, tr = train(c, cfg)
        if tr.stop_reason != "converged":
            continue
        data = prepare(c, estimate_background(c), cfg.detector)
        S = d.whitened_signatures
        reps = select_representatives(S, data)
        delta = compute_indicators(reps.scores)
        assert delta.any(axis=0).all()
        again = update_all(S, reps, delta, data.negative_mean, cfg.uniqueness_weight)
        np.testing.assert_allclose(again, S, atol=1e-12)


def test_train_single_target_monotone():
    for seed in range(5):
        c = random_collection(np.random.default_rng(seed), n_pos=5, n_neg=4, dim=4, min_size=3,
                              max_size=9, offset=0.5)
        for det in ("ace", "smf"):
            _, tr = train(c, LearnerConfig(detector=det, seed=seed))
            assert all(b >= a - 1e-12 for a, b in zip(tr.objective, tr.objective[1:]))


def test_train_matches_mi_loop():
    for seed in range(5):
        c = random_collection(np.random.default_rng(seed), n_pos=3, n_neg=2, dim=5, min_size=2, max_size=5)
        stats = estimate_background(c, "all")
        for det in ("ace", "smf"):
            d, tr = train(c, LearnerConfig(detector=det, background_source="all"), stats=stats)
            wb = whiten_bags(c, stats, det == "ace")
            pos = [np.array(rows) for label, rows in wb.values() if label == 1]
            s = mi_loop(tr.initial_whitened[0], pos, balanced_negative_mean(wb))
            np.testing.assert_allclose(d.whitened_signatures[0], s, atol=1e-10)


def test_train_recovers_plant():
    c, plant = planted_collection(0)
    stats = estimate_background(c)
    d, _ = train(c, LearnerConfig(), stats=stats)
    wp = stats.whitener @ plant
    assert abs(d.whitened_signatures[0] @ wp) / np.linalg.norm(wp) >= 0.99


def test_train_requires_both_labels(rng):
    c = BagCollection((Bag(1, 1, rng.normal(size=(3, 2))),))
    with pytest.raises(ValidationError):
        train(c)


def test_max_iter_stop(rng):
    c = random_collection(rng, n_pos=4, n_neg=3, dim=3, min_size=3, max_size=6)
    _, tr = train(c, LearnerConfig(max_iter=1))
    assert tr.iterations == 1
    assert tr.stop_reason in ("max_iter", "converged")


def test_dictionary_files(tmp_path, rng):
    stats = BackgroundStats.identity(3)
    d = TargetDictionary.from_whitened(unit_rows(rng, 2, 3), stats)
    save_dictionary(d, tmp_path / "d.csv", tmp_path / "w.csv")
    np.testing.assert_array_equal(load_dictionary(tmp_path / "d.csv"), d.output_signatures)
    np.testing.assert_array_equal(load_dictionary(tmp_path / "w.csv"), d.whitened_signatures)
    assert (tmp_path / "d.csv").read_text().startswith("target_index,b1,b2,b3\n0,")


def test_trace_file(tmp_path, rng):
    c = random_collection(rng, n_pos=3, n_neg=3, dim=3, min_size=2)
    _, tr = train(c)
    save_trace(tr, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective,num_targets,stop_reason"
    assert len(lines) == tr.iterations + 1
    assert lines[-1].endswith("," + tr.stop_reason)
    assert all(l.endswith(",") for l in lines[1:-1])
