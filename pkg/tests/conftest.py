import itertools

import numpy as np
import pytest


def balanced_by_itertools(n):
    """Independent enumeration: every n/2-subset of treated subjects."""
    out = []
    for treated in itertools.combinations(range(n), n // 2):
        w = -np.ones(n)
        w[list(treated)] = 1
        out.append(w)
    return np.array(out)


def outer_average(W, probs=None):
    W = np.asarray(W, dtype=float)
    if probs is None:
        probs = np.full(len(W), 1.0 / len(W))
    total = np.zeros((W.shape[1], W.shape[1]))
    for w, p in zip(W, probs):
        total += p * np.outer(w, w)
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
