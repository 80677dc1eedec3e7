"""Condition-invariant place recognition from short frame sequences.

Composes per-frame feature vectors into sequence descriptors (grouping,
fusion, recurrent), trains the learnable composers with a triplet loss and
retrieves places by exhaustive nearest-neighbor search.
"""

__version__ = "0.1.0"

from .core import (
    FeatureFrame,
    FeatureStore,
    PlaceConvention,
    QuerySequence,
    Traversal,
    load_feature_store,
    same_place,
    write_store,
)
from .composers import (
    FusionParams,
    LstmParams,
    LstmState,
    compose_fusion,
    compose_grouping,
    compose_recurrent,
    make_pipeline,
    step_recurrent,
)
from .train import TrainConfig, Triplet, sample_triplet, train_composer, wl_loss, wl_loss_grad
from .retrieval import PlaceIndex, bench_search, build_index, query_nn
from .synth import WorldConfig, generate_world, perturb_reverse, perturb_speed
from .evaluate import condition_matrix, evaluate, run_experiment_suite
