"""Linear-probe evaluation with degree-fairness metrics.

Frozen embeddings go through a multinomial logistic regression trained by
full-batch gradient descent; test accuracy is then broken down by node
degree. Group mean is the unweighted mean of per-degree accuracies, bias is
their population variance, and an unweighted least-squares line of accuracy
against degree summarizes the trend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError, ValidationError
from .graph import Graph
from .seeding import substream

SEMI_SUPERVISED = "semi_supervised"
SUPERVISED = "supervised"
TRAIN_PER_CLASS = 20


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    test_idx: np.ndarray
    scheme: str
    seed: int
    max_test_degree: int = 50


def make_split(graph: Graph, scheme: str, seed: int, test_size: int = 1000) -> Split:
    """Reproducible train/test split with degree-capped test nodes.

    Test nodes are sampled among nodes of degree < 50; on graphs with fewer
    than 3000 nodes the test size shrinks to floor(N/3). Semi-supervised
    training keeps exactly 20 labeled nodes per class; supervised training
    keeps every non-test node.
    """
    if graph.labels is None:
        raise ValidationError("split requires labels")
    if scheme not in (SEMI_SUPERVISED, SUPERVISED):
        raise UsageError(f"unknown split scheme {scheme!r}")
    n = graph.num_nodes
    size = test_size if n >= 3000 else min(test_size, n // 3)
    max_test_degree = 50
    eligible = np.flatnonzero(graph.degrees < max_test_degree)
    if eligible.size < size:
        raise ValidationError(
            f"only {eligible.size} nodes with degree < {max_test_degree}, need {size} for testing"
        )
    rng = substream(seed, "split")
    test_idx = np.sort(rng.choice(eligible, size=size, replace=False))
    in_test = np.zeros(n, dtype=bool)
    in_test[test_idx] = True

    if scheme == SUPERVISED:
        train_idx = np.flatnonzero(~in_test)
    else:
        picks = []
        for klass in range(graph.num_classes):
            pool = np.flatnonzero((graph.labels == klass) & ~in_test)
            if pool.size < TRAIN_PER_CLASS:
                raise ValidationError(
                    f"class {klass} has only {pool.size} non-test nodes, need {TRAIN_PER_CLASS}"
                )
            picks.append(rng.choice(pool, size=TRAIN_PER_CLASS, replace=False))
        train_idx = np.sort(np.concatenate(picks))
    return Split(train_idx, test_idx, scheme, seed)


@dataclass
class ProbeParams:
    weight: np.ndarray   # (embed_dim, num_classes)
    bias: np.ndarray     # (num_classes,)
    loss_history: list = field(default_factory=list)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def probe_loss(weight, bias, x, y, l2):
    """Mean cross-entropy plus (l2/2)*||W||^2; the quantity the probe descends."""
    logits = x @ weight + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -log_probs[np.arange(len(y)), y].mean()
    return ce + 0.5 * l2 * float(np.sum(weight * weight))


def train_probe(embeddings, labels, split: Split, num_classes=None,
                l2: float = 1e-4, iterations: int = 500, lr: float = 0.5) -> ProbeParams:
    """Fit the logistic probe on the split's training nodes.

    Zero-initialized full-batch gradient descent for a fixed number of
    iterations; whenever a step would increase the loss it is reverted and
    the step size halves. The per-iteration loss trace is kept on the
    returned ProbeParams.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    x = embeddings[split.train_idx]
    y = labels[split.train_idx]
    n, d = x.shape
    weight = np.zeros((d, num_classes))
    bias = np.zeros(num_classes)

    current = probe_loss(weight, bias, x, y, l2)
    history = [current]
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    for _ in range(iterations):
        probs = _softmax(x @ weight + bias)
        delta = (probs - onehot) / n
        g_w = x.T @ delta + l2 * weight
        g_b = delta.sum(axis=0)
        cand_w = weight - lr * g_w
        cand_b = bias - lr * g_b
        cand_loss = probe_loss(cand_w, cand_b, x, y, l2)
        if cand_loss > current:
            lr *= 0.5
        else:
            weight, bias, current = cand_w, cand_b, cand_loss
        history.append(current)
    return ProbeParams(weight, bias, history)


def predict(probe: ProbeParams, embeddings) -> np.ndarray:
    """Most probable class per row (ties resolve to the smallest class)."""
    return np.argmax(np.asarray(embeddings) @ probe.weight + probe.bias, axis=1)


@dataclass
class FairnessReport:
    per_degree: dict            # degree -> (avg accuracy, group size)
    g_mean: float
    bias: float
    slope: float
    intercept: float
    micro_f1: float
    macro_f1: float
    bias_paper_scale: float     # bias on the percent-squared-like scale (x 1e4)
    absent_classes: list

    def to_dict(self) -> dict:
        return {
            "per_degree": [
                {"degree": int(k), "avg_acc": float(a), "count": int(c)}
                for k, (a, c) in sorted(self.per_degree.items())
            ],
            "g_mean": self.g_mean,
            "bias": self.bias,
            "bias_paper_scale": self.bias_paper_scale,
            "slope": self.slope,
            "intercept": self.intercept,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "absent_classes": self.absent_classes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def plot_data(self) -> str:
        """degree<TAB>avg_acc<TAB>count lines for external plotting."""
        lines = [f"{int(k)}\t{a!r}\t{int(c)}" for k, (a, c) in sorted(self.per_degree.items())]
        return "\n".join(lines) + ("\n" if lines else "")


def degree_group_accuracy(degrees, correct) -> dict:
    """Map degree value -> (mean correctness, group size) over the given nodes."""
    degrees = np.asarray(degrees)
    correct = np.asarray(correct, dtype=np.float64)
    groups = {}
    for k in np.unique(degrees):
        mask = degrees == k
        groups[int(k)] = (float(correct[mask].mean()), int(mask.sum()))
    return groups


def group_summary(per_degree: dict):
    """(g_mean, bias, slope, intercept) from a per-degree accuracy table.

    Unweighted statistics over degree groups; bias is the population
    variance. With a single group the regression line is flat at its value.
    """
    ks = np.array(sorted(per_degree), dtype=np.float64)
    accs = np.array([per_degree[int(k)][0] for k in ks])
    g_mean = float(accs.mean())
    bias = float(np.mean((accs - accs.mean()) ** 2))
    if ks.size > 1 and np.ptp(ks) > 0:
        kc = ks - ks.mean()
        slope = float((kc * (accs - accs.mean())).sum() / (kc * kc).sum())
        intercept = float(accs.mean() - slope * ks.mean())
    else:
        slope, intercept = 0.0, g_mean
    return g_mean, bias, slope, intercept


def f1_scores(y_true, y_pred, num_classes):
    """(micro_f1, macro_f1, absent_classes) from a confusion count pass.

    Macro averages over all classes; classes with no true and no predicted
    instance contribute an F1 of 0 and are reported as absent.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    micro = float((y_true == y_pred).mean())
    f1s = []
    absent = []
    for k in range(num_classes):
        tp = int(np.sum((y_pred == k) & (y_true == k)))
        fp = int(np.sum((y_pred == k) & (y_true != k)))
        fn = int(np.sum((y_pred != k) & (y_true == k)))
        if tp + fn == 0:
            absent.append(k)
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom else 0.0)
    return micro, float(np.mean(f1s)), absent


def fairness_report(probe: ProbeParams, embeddings, labels, split: Split,
                    graph: Graph) -> FairnessReport:
    """Evaluate the probe on the split's test nodes, grouped by degree."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = predict(probe, np.asarray(embeddings)[split.test_idx])
    truth = labels[split.test_idx]
    correct = (preds == truth).astype(np.float64)
    per_degree = degree_group_accuracy(graph.degrees[split.test_idx], correct)
    g_mean, bias, slope, intercept = group_summary(per_degree)
    num_classes = max(graph.num_classes, int(labels.max()) + 1)
    micro, macro, absent = f1_scores(truth, preds, num_classes)
    return FairnessReport(
        per_degree=per_degree,
        g_mean=g_mean,
        bias=bias,
        slope=slope,
        intercept=intercept,
        micro_f1=micro,
        macro_f1=macro,
        bias_paper_scale=bias * 1e4,
        absent_classes=absent,
    )
