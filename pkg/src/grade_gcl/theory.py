"""Empirical probe of the concentration/scatter account of contrastive
structural fairness, on graphs small enough to measure it.

The augmentation model here is the uniform one: a node's neighborhood is
replaced by an m-subset of the other nodes, every subset equally likely.
Against that model the probe estimates, for a single-layer encoder with
L2-normalized outputs (radius 1):

* the fraction of nodes whose augmented representations spread further than
  epsilon (the complement of the epsilon-close set), plus the Markov-style
  upper bound on that fraction;
* per-community concentration certificates: the largest subset whose
  pairwise minimum augmented pre-transformation distance stays below
  gamma * sqrt(B / m), grown greedily from the community medoid;
* community centers of augmented representations, the nearest-center
  assignment error, and the scatter condition linking the two.

Everything is measured, never proven: the Lipschitz constant is replaced by
its empirical maximum over sampled pairs, and greedy subset growth only
lower-bounds the achievable mass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConfigError, UsageError
from .graph import Graph, NeighborList
from .model import ModelParams
from .seeding import substream

_LOG_FLOAT_MAX = math.log(np.finfo(np.float64).max)


@dataclass(frozen=True)
class TheoryConfig:
    """Probe settings. The encoder is always single-layer here."""

    epsilon: float = 0.5
    m: int = 1
    pairs_per_node: int = 200
    gamma_grid: tuple = (0.25, 0.5, 0.75, 1.0)
    enumeration_limit: int = 100   # enumerate all augmentations when C(N-1,m) <= this

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ConfigError("epsilon must be positive")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.pairs_per_node < 1:
            raise ConfigError("pairs_per_node must be >= 1")
        if not self.gamma_grid or any(not (0.0 < g <= 1.0) for g in self.gamma_grid):
            raise ConfigError("gamma_grid values must lie in (0,1]")


def sample_uniform_augmentation(graph: Graph, node: int, m: int, rng) -> NeighborList:
    """Uniformly random m-subset of the other nodes as a replacement neighborhood."""
    n = graph.num_nodes
    if not 1 <= m <= n - 1:
        raise ConfigError(f"m must lie in [1, {n - 1}], got {m}")
    candidates = np.delete(np.arange(n), node)
    members = np.sort(rng.choice(candidates, size=m, replace=False))
    return NeighborList(node, members)


def enumerate_uniform_augmentations(graph: Graph, node: int, m: int):
    """All C(N-1, m) replacement neighborhoods of one node, sorted."""
    candidates = [j for j in range(graph.num_nodes) if j != node]
    return [np.array(c, dtype=np.int64) for c in combinations(candidates, m)]


def augmented_pre_row(graph: Graph, node: int, members) -> np.ndarray:
    """Self-looped mean of feature rows over {node} ∪ members."""
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        return graph.features[node].copy()
    return (graph.features[node] + graph.features[members].sum(axis=0)) / (members.size + 1.0)


def representations(pre_rows, params: ModelParams) -> np.ndarray:
    """Single-layer encoder + row normalization; zero rows stay zero."""
    if params.layers != 1:
        raise UsageError("the probe requires a single-layer encoder")
    h = np.maximum(np.asarray(pre_rows) @ params.W1, 0.0)
    norms = np.linalg.norm(h, axis=1)
    zero = norms < 1e-12
    safe = np.where(zero, 1.0, norms)
    out = h / safe[:, None]
    out[zero] = 0.0
    return out


@dataclass
class EpsilonSpread:
    """Output of estimate_R_eps."""

    r_eps_hat: float
    max_pair_dist: np.ndarray   # per node, largest observed pair distance
    mean_pair_dist: float
    thm_bound: float            # C(N-1,m)^2 / eps * mean pair distance
    exhaustive: bool

    def r_at(self, epsilon: float) -> float:
        """Membership fraction re-evaluated at another epsilon (same samples)."""
        return float(np.mean(self.max_pair_dist > epsilon))


def _bound_value(num_subsets: int, mean_dist: float, epsilon: float) -> float:
    if mean_dist <= 0.0:
        return 0.0
    log_bound = 2.0 * math.log(num_subsets) + math.log(mean_dist) - math.log(epsilon)
    return math.inf if log_bound > _LOG_FLOAT_MAX else math.exp(log_bound)


def estimate_R_eps(graph: Graph, params: ModelParams, cfg: TheoryConfig, rng,
                   exhaustive: bool | None = None) -> EpsilonSpread:
    """Fraction of nodes whose augmented representations spread beyond epsilon.

    A node leaves the epsilon-close set as soon as any observed pair of its
    augmented representations lies further apart than epsilon. With
    ``exhaustive`` (automatic when the sampling budget covers all ordered
    pairs) every augmentation pair is checked, making membership exact.
    Also returns the product-of-counts Markov bound on that fraction,
    evaluated in log space and reported as +inf on overflow.
    """
    n = graph.num_nodes
    if cfg.m > n - 1:
        raise ConfigError(f"m={cfg.m} exceeds N-1={n - 1}")
    num_subsets = math.comb(n - 1, cfg.m)
    if exhaustive is None:
        exhaustive = cfg.pairs_per_node >= num_subsets ** 2

    max_dists = np.zeros(n)
    mean_dists = np.zeros(n)
    for i in range(n):
        if exhaustive:
            rows = np.stack([augmented_pre_row(graph, i, mem)
                             for mem in enumerate_uniform_augmentations(graph, i, cfg.m)])
            reps = representations(rows, params)
            if reps.shape[0] == 1:
                max_dists[i] = 0.0
                mean_dists[i] = 0.0
            else:
                dists = pdist(reps)
                max_dists[i] = dists.max()
                # mean over ordered pairs, coincident pairs included
                mean_dists[i] = 2.0 * dists.sum() / (reps.shape[0] ** 2)
        else:
            first = np.stack([
                augmented_pre_row(graph, i, sample_uniform_augmentation(graph, i, cfg.m, rng).members)
                for _ in range(cfg.pairs_per_node)
            ])
            second = np.stack([
                augmented_pre_row(graph, i, sample_uniform_augmentation(graph, i, cfg.m, rng).members)
                for _ in range(cfg.pairs_per_node)
            ])
            d = np.linalg.norm(
                representations(first, params) - representations(second, params), axis=1
            )
            max_dists[i] = d.max()
            mean_dists[i] = d.mean()

    mean_overall = float(mean_dists.mean())
    return EpsilonSpread(
        r_eps_hat=float(np.mean(max_dists > cfg.epsilon)),
        max_pair_dist=max_dists,
        mean_pair_dist=mean_overall,
        thm_bound=_bound_value(num_subsets, mean_overall, cfg.epsilon),
        exhaustive=exhaustive,
    )


@dataclass
class AugmentationMeasurement:
    """Output of measure_augmentation_params."""

    alpha_hat: np.ndarray        # per community, at gamma_used
    gamma_used: float
    d_min_hat: np.ndarray        # per community (= m under subset replacement)
    core_sets: list              # per community, node indices of the certified subset
    alpha_by_gamma: dict         # gamma -> per-community alpha array
    sampled_members: list        # per node, (n_i, m) sampled/enumerated subsets
    pre_rows: list               # per node, (n_i, B) pre-transformation rows
    d_T: dict                    # community -> within-community distance matrix
    communities: list            # per community, node indices
    exhaustive: bool


def _community_distance_matrix(idx, pre_rows):
    """Pairwise min cross-augmentation distance inside one community."""
    counts = [pre_rows[i].shape[0] for i in idx]
    stacked = np.concatenate([pre_rows[i] for i in idx], axis=0)
    full = squareform(pdist(stacked))
    bounds = np.cumsum([0] + counts)
    c = len(idx)
    out = np.zeros((c, c))
    for a in range(c):
        for b in range(a + 1, c):
            block = full[bounds[a]:bounds[a + 1], bounds[b]:bounds[b + 1]]
            out[a, b] = out[b, a] = block.min()
    return out


def _greedy_core(dmat: np.ndarray, radius: float):
    """Grow a bounded-diameter subset from the medoid; returns member positions."""
    order_scores = dmat.sum(axis=1)
    medoid = int(np.argmin(order_scores))
    members = [medoid]
    for cand in np.argsort(dmat[medoid], kind="stable"):
        cand = int(cand)
        if cand == medoid:
            continue
        if np.all(dmat[cand, members] <= radius):
            members.append(cand)
    return sorted(members)


def measure_augmentation_params(graph: Graph, cfg: TheoryConfig, rng) -> AugmentationMeasurement:
    """Concentration certificate per community from (sampled) augmentation distances.

    The pairwise augmentation distance is the minimum distance between the
    two nodes' augmented pre-transformation rows, exact when all
    augmentations are enumerated, otherwise a sampled upper estimate. For
    each gamma in the grid a subset of bounded diameter gamma*sqrt(B/m) is
    grown greedily from the community medoid; the recorded gamma is the
    smallest one maximizing the mean subset mass.
    """
    if graph.labels is None:
        raise UsageError("community measurement requires labels")
    n = graph.num_nodes
    num_subsets = math.comb(n - 1, cfg.m)
    exhaustive = num_subsets <= cfg.enumeration_limit
    per_node = num_subsets if exhaustive else max(2, math.isqrt(cfg.pairs_per_node))

    sampled_members = []
    pre_rows = []
    for i in range(n):
        if exhaustive:
            subsets = enumerate_uniform_augmentations(graph, i, cfg.m)
        else:
            subsets = [sample_uniform_augmentation(graph, i, cfg.m, rng).members
                       for _ in range(per_node)]
        sampled_members.append(subsets)
        pre_rows.append(np.stack([augmented_pre_row(graph, i, mem) for mem in subsets]))

    k_count = graph.num_classes
    communities = [np.flatnonzero(graph.labels == k) for k in range(k_count)]
    dmats = {k: _community_distance_matrix(communities[k], pre_rows) for k in range(k_count)}

    base_radius = math.sqrt(graph.num_features / cfg.m)
    alpha_by_gamma = {}
    cores_by_gamma = {}
    for gamma in cfg.gamma_grid:
        alphas = np.zeros(k_count)
        cores = []
        for k in range(k_count):
            idx = communities[k]
            positions = _greedy_core(dmats[k], gamma * base_radius)
            cores.append(idx[positions])
            alphas[k] = len(positions) / idx.size
        alpha_by_gamma[float(gamma)] = alphas
        cores_by_gamma[float(gamma)] = cores

    means = {g: a.mean() for g, a in alpha_by_gamma.items()}
    best = max(means.values())
    gamma_used = min(g for g, v in means.items() if v == best)
    return AugmentationMeasurement(
        alpha_hat=alpha_by_gamma[gamma_used],
        gamma_used=gamma_used,
        d_min_hat=np.full(k_count, cfg.m, dtype=np.int64),
        core_sets=cores_by_gamma[gamma_used],
        alpha_by_gamma=alpha_by_gamma,
        sampled_members=sampled_members,
        pre_rows=pre_rows,
        d_T=dmats,
        communities=communities,
        exhaustive=exhaustive,
    )


@dataclass
class IndicatorResult:
    mu: np.ndarray               # (K, d) centers of augmented representations
    mu_dots: np.ndarray          # (K, K) pairwise center dot products
    assignments: np.ndarray
    err_ff: float
    rho: np.ndarray              # per community
    rho_max: float
    delta_mu: float
    scatter_condition_holds: np.ndarray   # (K, K) bool, diagonal vacuously True
    lemma_bound: float           # (1 - alpha) + R_eps
    err_within_bound: bool
    core_premise_holds: bool     # certified-core, eps-close nodes all assigned right


def community_indicator(embeddings, labels, core_sets, aug_reps, *, alpha, gamma,
                        d_min, r_eps, epsilon, lipschitz, feature_dim,
                        in_eps_set=None) -> IndicatorResult:
    """Nearest-center community assignment and the measured scatter condition.

    Centers average each member's augmented representations (per-node mean
    first, so every node weighs equally). Assignment error is compared
    against the (1 - alpha) + R_eps bound, and the center dot products
    against the scatter threshold built from the measured quantities, with
    the unit normalization radius. When the epsilon-close membership mask is
    given, the report also states whether every certified-core epsilon-close
    node was assigned correctly (the premise of the error bound).
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k_count = int(labels.max()) + 1
    if k_count < 2:
        raise UsageError("need at least two communities")

    node_means = np.stack([reps.mean(axis=0) for reps in aug_reps])
    mu = np.stack([node_means[labels == k].mean(axis=0) for k in range(k_count)])
    assignments = np.argmin(cdist(embeddings, mu), axis=1)
    err_ff = float(np.mean(assignments != labels))

    core_premise = True
    if in_eps_set is not None:
        for nodes in core_sets:
            for i in nodes:
                if in_eps_set[i] and assignments[i] != labels[i]:
                    core_premise = False

    p = np.array([(labels == k).mean() for k in range(k_count)])
    d_min = np.asarray(d_min, dtype=np.float64)
    rho = (
        2.0 * (1.0 - alpha)
        + 2.0 * r_eps / p
        + alpha * (lipschitz * gamma * math.sqrt(feature_dim) / np.sqrt(d_min) + 2.0 * epsilon)
    )
    rho_max = float(rho.max())
    delta_mu = float(1.0 - np.min(np.sum(mu * mu, axis=1)))
    threshold = 1.0 - rho_max - math.sqrt(2.0 * rho_max) - delta_mu / 2.0
    mu_dots = mu @ mu.T
    holds = mu_dots < threshold
    np.fill_diagonal(holds, True)

    lemma_bound = (1.0 - alpha) + r_eps
    return IndicatorResult(
        mu=mu,
        mu_dots=mu_dots,
        assignments=assignments,
        err_ff=err_ff,
        rho=rho,
        rho_max=rho_max,
        delta_mu=delta_mu,
        scatter_condition_holds=holds,
        lemma_bound=lemma_bound,
        err_within_bound=err_ff <= lemma_bound,
        core_premise_holds=core_premise,
    )


def _lipschitz_proxy(meas: AugmentationMeasurement, aug_reps) -> float:
    """Max observed ratio of representation distance to pre-transformation distance."""
    best = 0.0
    for idx in meas.communities:
        pre = np.concatenate([meas.pre_rows[i] for i in idx], axis=0)
        rep = np.concatenate([aug_reps[i] for i in idx], axis=0)
        pre_d = pdist(pre)
        rep_d = pdist(rep)
        valid = pre_d > 1e-12
        if np.any(valid):
            best = max(best, float((rep_d[valid] / pre_d[valid]).max()))
    return best


@dataclass
class TheoryReport:
    epsilon: float
    m: int
    pairs_per_node: int
    r_eps_hat: float
    mean_pair_dist: float
    thm_bound: float
    alpha_hat: list
    alpha_used: float
    gamma_used: float
    alpha_by_gamma: list         # [{"gamma": g, "alphas": [...]}] sorted by gamma
    d_min_hat: list
    lipschitz_hat: float
    mu: list
    mu_dots: list
    delta_mu: float
    rho: list
    rho_max: float
    err_ff: float
    lemma_bound: float
    err_within_bound: bool
    core_premise_holds: bool
    scatter_condition_holds: list
    intra_var: float
    inter_var: float
    exhaustive_pairs: bool
    exhaustive_distances: bool

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def representation_variances(embeddings, labels):
    """(within-community, between-community) variance of representation rows."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k_count = int(labels.max()) + 1
    centers = np.stack([embeddings[labels == k].mean(axis=0) for k in range(k_count)])
    intra = float(
        np.mean([
            np.mean(np.sum((embeddings[labels == k] - centers[k]) ** 2, axis=1))
            for k in range(k_count)
        ])
    )
    if k_count > 1:
        inter = float(np.mean([np.sum((centers[a] - centers[b]) ** 2)
                               for a in range(k_count) for b in range(a + 1, k_count)]))
    else:
        inter = 0.0
    return intra, inter


def run_theory_probe(graph: Graph, params: ModelParams, cfg: TheoryConfig, seed: int) -> TheoryReport:
    """Full probe: spread estimate, concentration certificate, indicator error."""
    if graph.labels is None:
        raise UsageError("theory probe requires labels")
    rng = substream(seed, "theory")

    spread = estimate_R_eps(graph, params, cfg, rng)
    meas = measure_augmentation_params(graph, cfg, rng)
    aug_reps = [representations(rows, params) for rows in meas.pre_rows]
    lipschitz = _lipschitz_proxy(meas, aug_reps)

    emb = representations(graph.transition() @ graph.features, params)
    alpha_used = float(meas.alpha_hat.min())
    indicator = community_indicator(
        emb,
        graph.labels,
        meas.core_sets,
        aug_reps,
        alpha=alpha_used,
        gamma=meas.gamma_used,
        d_min=meas.d_min_hat,
        r_eps=spread.r_eps_hat,
        epsilon=cfg.epsilon,
        lipschitz=lipschitz,
        feature_dim=graph.num_features,
        in_eps_set=spread.max_pair_dist <= cfg.epsilon,
    )
    intra, inter = representation_variances(emb, graph.labels)

    return TheoryReport(
        epsilon=cfg.epsilon,
        m=cfg.m,
        pairs_per_node=cfg.pairs_per_node,
        r_eps_hat=spread.r_eps_hat,
        mean_pair_dist=spread.mean_pair_dist,
        thm_bound=spread.thm_bound,
        alpha_hat=[float(a) for a in meas.alpha_hat],
        alpha_used=alpha_used,
        gamma_used=float(meas.gamma_used),
        alpha_by_gamma=[
            {"gamma": g, "alphas": [float(a) for a in meas.alpha_by_gamma[g]]}
            for g in sorted(meas.alpha_by_gamma)
        ],
        d_min_hat=[int(d) for d in meas.d_min_hat],
        lipschitz_hat=lipschitz,
        mu=indicator.mu.tolist(),
        mu_dots=indicator.mu_dots.tolist(),
        delta_mu=indicator.delta_mu,
        rho=[float(r) for r in indicator.rho],
        rho_max=indicator.rho_max,
        err_ff=indicator.err_ff,
        lemma_bound=indicator.lemma_bound,
        err_within_bound=bool(indicator.err_within_bound),
        core_premise_holds=bool(indicator.core_premise_holds),
        scatter_condition_holds=indicator.scatter_condition_holds.tolist(),
        intra_var=intra,
        inter_var=inter,
        exhaustive_pairs=spread.exhaustive,
        exhaustive_distances=meas.exhaustive,
    )
