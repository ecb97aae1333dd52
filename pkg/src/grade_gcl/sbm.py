"""Two-or-more-block stochastic block model with noisy one-hot features.

Desk-scale stand-in for the citation/co-purchase benchmarks: community
structure in the topology, community identity in the features, labels for
probing. Node features are the community's unit basis vector plus isotropic
Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import Graph, graph_from_edges
from .seeding import substream


@dataclass(frozen=True)
class SbmConfig:
    num_nodes: int = 300
    num_communities: int = 2
    p_in: float = 0.1
    p_out: float = 0.01
    feature_noise: float = 0.3
    num_features: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.num_communities < 2:
            raise ConfigError("need at least 2 communities")
        if not (0.0 <= self.p_out <= self.p_in <= 1.0):
            raise ConfigError("require 0 <= p_out <= p_in <= 1")
        if self.num_communities > self.num_features:
            raise ConfigError("need num_features >= num_communities for distinct feature means")
        if self.feature_noise < 0.0:
            raise ConfigError("feature_noise must be >= 0")
        if self.num_nodes < self.num_communities:
            raise ConfigError("need at least one node per community")


def community_sizes(num_nodes: int, num_communities: int) -> list[int]:
    sizes = [num_nodes // num_communities] * num_communities
    for i in range(num_nodes % num_communities):
        sizes[i] += 1
    return sizes


def generate_sbm(cfg: SbmConfig) -> Graph:
    """Sample a labeled SBM graph.

    Each intra-community pair connects with p_in, each inter pair with
    p_out; nodes left isolated get one random same-community edge so every
    node participates in propagation.
    """
    rng = substream(cfg.seed, "sbm")
    n = cfg.num_nodes
    labels = np.repeat(
        np.arange(cfg.num_communities),
        community_sizes(n, cfg.num_communities),
    )

    same = labels[:, None] == labels[None, :]
    prob = np.where(same, cfg.p_in, cfg.p_out)
    draws = rng.random((n, n))
    upper = np.triu(draws < prob, k=1)
    srcs, dsts = np.nonzero(upper)
    edges = list(zip(srcs.tolist(), dsts.tolist()))

    degree = np.zeros(n, dtype=np.int64)
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    for i in np.flatnonzero(degree == 0):
        peers = np.flatnonzero((labels == labels[i]) & (np.arange(n) != i))
        if peers.size == 0:
            peers = np.flatnonzero(np.arange(n) != i)
        j = int(rng.choice(peers))
        edges.append((int(i), j))
        degree[i] += 1
        degree[j] += 1

    features = np.zeros((n, cfg.num_features))
    features[np.arange(n), labels] = 1.0
    features += cfg.feature_noise * rng.standard_normal((n, cfg.num_features))

    graph, _ = graph_from_edges(n, edges, features, labels)
    return graph
