"""Multi-object tracking toolkit.

Track-oriented hypothesis-tree association with pluggable signature
comparators (kalman-filter kinematics, a learned latent-state
predictor, pixel and embedding appearance models), score fusion,
synthetic scenario generation, and expected-average-overlap evaluation.
"""

__version__ = "0.1.0"

from .checkpoint import (
    checkpoint_kind,
    load_checkpoint,
    load_deepekf_checkpoint,
    load_siamese_checkpoint,
    save_checkpoint,
)
from .comparators import (
    DeepEkfComparator,
    EkfComparator,
    SiameseComparator,
    SsdComparator,
    default_normalizers,
)
from .config import (
    PRESET_NAMES,
    RunConfig,
    load_run_config,
    preset_run_config,
    save_run_config,
)
from .core import (
    BoundingBox,
    BranchView,
    Chip,
    ComparatorScore,
    Detection,
    PlatformMeta,
    SignatureComparator,
    Tracklet,
    chip_to_gray,
    iou,
    resize_chip,
)
from .deepekf import (
    DeepEkfConfig,
    DeepEkfModel,
    TrainItem,
    decode_with_attention,
    dekf_affinity,
    dekf_gradient_check,
    dekf_train_step,
    encode_measurement,
    encode_sequence,
    encode_step,
    featurize,
)
from .evaluation import (
    AUID,
    OUID,
    EaoResult,
    EvaluationReport,
    IdMapping,
    SummaryMetrics,
    TrackRecord,
    eao,
    evaluate,
    kde_interval,
    map_ids,
    match_events,
    overlap_curve,
    summary_metrics,
)
from .fusion import FusionConfig, NormalizerSpec, fuse, fused_log_score, normalize
from .greedy import GreedyTracker
from .io_formats import (
    load_assignments,
    load_detections,
    load_tracks,
    write_assignments,
    write_detections,
    write_tracks,
)
from .kinematic import (
    KinematicState,
    NoiseConfig,
    chi2_gate_threshold,
    kf_gate,
    kf_init,
    kf_likelihood,
    kf_predict,
    kf_update,
)
from .mht import Assignment, FrameResult, MhtConfig, MhtTracker
from .mwis import MwisSolution, solve_mwis
from .pipeline import (
    TrackingRun,
    build_tracker,
    run_eval,
    run_tracking,
    train_deepekf,
    train_siamese,
)
from .scenario import (
    ObjectSpec,
    Scenario,
    ScenarioSpec,
    generate_scenario,
    preset_spec,
    render_chip,
    runners_spec,
    walkers_spec,
)
from .visual import (
    SiameseConfig,
    SiameseModel,
    attention_maps,
    contrastive_train_step,
    embed,
    embedding_distance,
    evaluate_reid,
    siamese_gradient_check,
    ssd_distance,
)

__all__ = [
    "__version__",
    "AUID",
    "Assignment",
    "BoundingBox",
    "BranchView",
    "Chip",
    "ComparatorScore",
    "DeepEkfComparator",
    "DeepEkfConfig",
    "DeepEkfModel",
    "Detection",
    "EaoResult",
    "EkfComparator",
    "EvaluationReport",
    "FrameResult",
    "FusionConfig",
    "GreedyTracker",
    "IdMapping",
    "KinematicState",
    "MhtConfig",
    "MhtTracker",
    "NoiseConfig",
    "NormalizerSpec",
    "OUID",
    "ObjectSpec",
    "PRESET_NAMES",
    "PlatformMeta",
    "RunConfig",
    "Scenario",
    "ScenarioSpec",
    "SiameseComparator",
    "SiameseConfig",
    "SiameseModel",
    "SignatureComparator",
    "SsdComparator",
    "SummaryMetrics",
    "TrackRecord",
    "TrackingRun",
    "Tracklet",
    "TrainItem",
    "attention_maps",
    "build_tracker",
    "checkpoint_kind",
    "chi2_gate_threshold",
    "chip_to_gray",
    "contrastive_train_step",
    "decode_with_attention",
    "default_normalizers",
    "dekf_affinity",
    "dekf_gradient_check",
    "dekf_train_step",
    "eao",
    "embed",
    "embedding_distance",
    "encode_measurement",
    "encode_sequence",
    "encode_step",
    "evaluate",
    "evaluate_reid",
    "featurize",
    "fuse",
    "fused_log_score",
    "generate_scenario",
    "iou",
    "kde_interval",
    "kf_gate",
    "kf_init",
    "kf_likelihood",
    "kf_predict",
    "kf_update",
    "load_assignments",
    "load_checkpoint",
    "load_deepekf_checkpoint",
    "load_detections",
    "load_run_config",
    "load_siamese_checkpoint",
    "load_tracks",
    "map_ids",
    "match_events",
    "MwisSolution",
    "solve_mwis",
    "normalize",
    "overlap_curve",
    "preset_run_config",
    "preset_spec",
    "render_chip",
    "resize_chip",
    "run_eval",
    "run_tracking",
    "runners_spec",
    "save_checkpoint",
    "save_run_config",
    "siamese_gradient_check",
    "ssd_distance",
    "summary_metrics",
    "train_deepekf",
    "train_siamese",
    "walkers_spec",
    "write_assignments",
    "write_detections",
    "write_tracks",
]
