"""Degree-bias-aware graph contrastive learning.

Library surface: sparse graphs with mean propagation (graph), degree-split
view generation (augment), a small GCN encoder with exact gradients
(model), the two-view contrastive objective (objective), the training loop
(trainer), linear-probe fairness evaluation (evaluation), the
concentration/scatter probe (theory), and a synthetic block-model generator
(sbm). The ``gradegcl`` CLI wires these into end-to-end runs.
"""

__version__ = "0.1.0"

from .augment import (
    AugmentConfig,
    AugmentedView,
    SimilarityMatrix,
    augment_head,
    augment_tail,
    build_similarity,
    identity_view,
    interpolate_neighbor_distribution,
    make_view,
    mask_features,
    propagate_view,
)
from .evaluation import (
    FairnessReport,
    ProbeParams,
    Split,
    fairness_report,
    make_split,
    train_probe,
)
from .graph import (
    Graph,
    NeighborList,
    degree_distribution,
    graph_from_edges,
    load_graph,
    propagate,
    save_graph,
)
from .model import (
    ModelParams,
    backward,
    encode,
    init_params,
    load_checkpoint,
    project_normalize,
    save_checkpoint,
)
from .objective import ContrastiveConfig, pairwise_loss, total_objective
from .sbm import SbmConfig, generate_sbm
from .theory import (
    TheoryConfig,
    TheoryReport,
    community_indicator,
    estimate_R_eps,
    measure_augmentation_params,
    run_theory_probe,
    sample_uniform_augmentation,
)
from .trainer import TrainConfig, TrainLog, embed, train
