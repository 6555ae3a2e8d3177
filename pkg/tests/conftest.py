import numpy as np
import pytest

from mtmi.data import Bag, BagCollection

ACCEPTANCE_LINES = []


def random_collection(rng, n_pos=3, n_neg=3, dim=5, min_size=1, max_size=6, offset=0.0):
    bags = []
    for j in range(n_pos + n_neg):
        size = int(rng.integers(min_size, max_size + 1))
        label = 1 if j < n_pos else 0
        X = rng.normal(size=(size, dim)) + (offset if label else 0.0)
        bags.append(Bag(j + 1, label, X))
    return BagCollection(tuple(bags))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
    if detail:
        line += f" -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def planted_collection(seed, dim=10, n_pos=10, n_neg=20, bag_size=50, n_planted=5, strength=8.0):
    """Gaussian background bags; each positive bag gets ``n_planted`` instances shifted along a hidden unit direction.

    Returns ``(collection, plant)`` where ``plant`` is the direction in the
    original (unwhitened) space.
    """
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim)) / np.sqrt(dim) + np.eye(dim)
    mu = rng.normal(size=dim)
    plant = rng.normal(size=dim)
    plant /= np.linalg.norm(plant)
    bags = []
    for j in range(n_pos + n_neg):
        X = rng.normal(size=(bag_size, dim)) @ A.T + mu
        if j < n_pos:
            rows = rng.choice(bag_size, n_planted, replace=False)
            X[rows] += strength * plant * np.linalg.norm(A, 2)
        bags.append(Bag(j + 1, 1 if j < n_pos else 0, X))
    return BagCollection(tuple(bags)), plant
