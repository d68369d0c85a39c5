import itertools

import numpy as np
import pytest

from core.graph_core import build_graph, generate_sbm
from models import SbmSpec


def make_graph(n, edges, sensitive, features=None, labels=None, seed=0):
    """Graph over ``n`` nodes; random features unless given."""
    if features is None:
        features = np.random.default_rng(seed).normal(size=(n, 3))
    g, _, _ = build_graph(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), features, sensitive, labels)
    return g


def random_graph(n, p, seed, n_features=4):
    gen = np.random.default_rng(seed)
    pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64).reshape(-1, 2)
    edges = pairs[gen.random(len(pairs)) < p]
    sensitive = gen.integers(0, 2, size=n)
    features = gen.normal(size=(n, n_features))
    labels = gen.integers(0, 2, size=n)
    return make_graph(n, edges, sensitive, features, labels)


@pytest.fixture
def triangle():
    def _make(sensitive):
        return make_graph(3, [(0, 1), (1, 2), (0, 2)], sensitive)
    return _make


@pytest.fixture
def path_graph():
    return make_graph(3, [(0, 1), (1, 2)], [0, 0, 0])


@pytest.fixture
def small_sbm():
    spec = SbmSpec(nodes_per_block=(30, 30), p_within=0.3, p_between=0.05,
                   n_features=8, n_biased_features=2)
    return generate_sbm(spec, seed=7)


@pytest.fixture
def desk_sbm_spec():
    return SbmSpec(nodes_per_block=(200, 200), p_within=0.9, p_between=0.1,
                   n_features=20, n_biased_features=2)
