import numpy as np
import pytest

from grade_gcl import SbmConfig, generate_sbm, graph_from_edges


def random_graph(seed, n=10, num_features=6, edge_prob=0.3):
    """Erdos-Renyi-ish fixture with standard normal features."""
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_prob]
    features = rng.standard_normal((n, num_features))
    graph, _ = graph_from_edges(n, edges, features)
    return graph


def dense_transition(neighbor_arrays, n):
    """Dense self-looped row-normalized aggregation matrix (test oracle)."""
    mat = np.zeros((n, n))
    for i, nbrs in enumerate(neighbor_arrays):
        mat[i, i] = 1.0
        for j in nbrs:
            mat[i, int(j)] = 1.0
        mat[i] /= mat[i].sum()
    return mat


@pytest.fixture(scope="session")
def sbm_fixture():
    """Mid-size two-community graph used across trainer/augment tests."""
    return generate_sbm(SbmConfig(num_nodes=100, num_communities=2, p_in=0.15,
                                  p_out=0.02, feature_noise=0.2, num_features=8, seed=3))


@pytest.fixture(scope="session")
def separated_sbm():
    """Small well-separated fixture for the concentration probe."""
    return generate_sbm(SbmConfig(num_nodes=24, num_communities=2, p_in=0.6,
                                  p_out=0.05, feature_noise=0.05, num_features=8, seed=5))
