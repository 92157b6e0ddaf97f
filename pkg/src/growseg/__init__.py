"""growseg: classifier-driven region growing for image segmentation.

Segmentations grow outward from random seed pixels: a pluggable
neighborhood classifier scores the 3x3 surroundings of every frontier
pixel, votes are averaged per pixel, and pixels above a tuned threshold
join the mask and the next frontier. The package bundles the growing
engine, a dense-threshold baseline, a trainable reference classifier with
its full training pipeline, synthetic vessel-like test data, and the
evaluation metrics (Dice, Jaccard, mean symmetric surface distance).
"""

from .classify import (
    ClassifierConfig,
    ClassifierModel,
    FeatureSpec,
    ModelClassifier,
    NeighborhoodPrediction,
    OracleClassifier,
    ProbmapClassifier,
    batch_features,
    classify_batch,
    feature_extract,
    load_model,
    new_model,
    predict_model,
    save_model,
)
from .dataset import DatasetSplit, Triple, collect_stems, load_dataset, save_triple, split_dataset
from .grow import (
    GrowConfig,
    GrowResult,
    VoteAccumulator,
    dense_threshold_segment,
    grow_region,
    sample_seeds,
)
from .imgio import (
    FormatError,
    as_image,
    as_mask,
    extract_tile,
    load_image,
    load_mask,
    pad_for_tiles,
    read_pmap,
    save_image,
    save_mask,
    write_pmap,
)
from .metrics import (
    ComponentLabeling,
    MetricReport,
    TuningError,
    default_threshold_grid,
    dice,
    distance_field,
    evaluate,
    jaccard,
    label_components,
    largest_component,
    mssd,
    squared_distance_field,
    tune_threshold,
)
from .synth import SynthParams, generate_synthetic
from .train import (
    EpochStats,
    TrainConfig,
    TrainSample,
    TrainingError,
    augment_tile,
    balanced_sample,
    boundary_weight_map,
    count_map,
    fit,
    loss_and_grad,
    neighborhood_count,
    photometric_adjust,
    pretrain_sample,
    weighted_cross_entropy,
)

__version__ = "0.1.0"
