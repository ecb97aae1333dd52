"""Symmetric two-view contrastive objective and its exact gradients.

For anchor i in view one, the positive is row i of view two; negatives are
every other row of both views. The critic is the dot product of the
(already normalized) projections scaled by a temperature. All log-sum-exp
computations are max-shifted so small temperatures stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ConfigError("temperature must be positive")


def _direction_terms(Z, Zp, tau):
    """Per-row log-ratio terms and softmax weights for anchors in Z.

    Returns (losses, W, V): losses[i] = l(Z_i, Zp_i); W holds the softmax
    weights of the cross-view similarities (full rows, diagonal = positive
    pair); V the weights of the intra-view negatives (zero diagonal).
    """
    cross = (Z @ Zp.T) / tau
    intra = (Z @ Z.T) / tau
    np.fill_diagonal(intra, -np.inf)
    shift = np.maximum(cross.max(axis=1), intra.max(axis=1))
    ecross = np.exp(cross - shift[:, None])
    eintra = np.exp(intra - shift[:, None])
    denom = ecross.sum(axis=1) + eintra.sum(axis=1)
    losses = np.diagonal(cross) - shift - np.log(denom)
    W = ecross / denom[:, None]
    V = eintra / denom[:, None]
    return losses, W, V


def pairwise_loss(Z, Zp, i: int, tau: float) -> float:
    """Log-ratio loss of the positive pair (Z_i, Zp_i); always <= 0."""
    Z = np.asarray(Z, dtype=np.float64)
    Zp = np.asarray(Zp, dtype=np.float64)
    cross = (Z[i] @ Zp.T) / tau
    intra = (Z[i] @ Z.T) / tau
    intra[i] = -np.inf
    shift = max(cross.max(), intra.max())
    denom = np.exp(cross - shift).sum() + np.exp(intra - shift).sum()
    return float(cross[i] - shift - np.log(denom))


def total_objective(Z, Zp, tau: float):
    """Average pairwise loss over both directions plus exact gradients.

    Returns (J, dJ/dZ, dJ/dZp). J <= 0; the trainer maximizes J by
    descending on -J.
    """
    Z = np.asarray(Z, dtype=np.float64)
    Zp = np.asarray(Zp, dtype=np.float64)
    n = Z.shape[0]
    l1, W1, V1 = _direction_terms(Z, Zp, tau)
    l2, W2, V2 = _direction_terms(Zp, Z, tau)
    J = float((l1.sum() + l2.sum()) / (2.0 * n))

    scale = 1.0 / (2.0 * n * tau)
    eye = np.eye(n)
    grad_Z = scale * ((eye - W1) @ Zp + (eye - W2).T @ Zp - (V1 + V1.T) @ Z)
    grad_Zp = scale * ((eye - W2) @ Z + (eye - W1).T @ Z - (V2 + V2.T) @ Zp)
    return J, grad_Z, grad_Zp
