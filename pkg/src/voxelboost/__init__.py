"""Valence decoding toolkit: ReliefF voxel selection, boosted decision
stumps, leakage-safe cross-validation, permutation tests, and feature
stability maps."""

from .dataset import (
    BrainMask,
    DataError,
    DatasetBundle,
    Label,
    LabeledScan,
    SyntheticSpec,
    VolumeGrid,
    compact_blob,
    generate_synthetic,
    grid_and_mask_for,
    load_dataset,
    save_dataset,
    split_block_level,
    split_participant_level,
)
from .ensemble import (
    BoostConfig,
    Ensemble,
    Member,
    TrainReport,
    decision_value,
    load_model,
    member_weight_from_error,
    predict,
    save_model,
    train_ensemble,
)
from .evaluation import (
    ConfusionMatrix,
    CorrelationResult,
    CvReport,
    PermutationReport,
    PipelineConfig,
    Scheme,
    correlate_behavior,
    fit_pipeline,
    permutation_test,
    permute_block_labels,
    run_cv,
)
from .relieff import (
    CandidateSet,
    FeatureScores,
    ReliefFConfig,
    score_features,
    select_top,
)
from .stability import (
    ClusterMask,
    ScalarMap,
    VoxelHistogram,
    fwhm_to_sigma_voxels,
    remove_small_clusters,
    selection_histogram,
    smooth_map,
    superimpose,
    threshold_top,
)
from .stump import Stump, StumpFit, predict_stump, train_stump

__version__ = "0.1.0"
