"""Active learning for object detection with robustness-aware acquisition.

The library scores unlabeled images by combining prediction uncertainty
(entropy) with prediction robustness under horizontal flip (symmetric-KL
inconsistency between matched detections), selects a labeling budget per
cycle, pseudo-labels confident detections, and evaluates with VOC-style
mAP@0.5. A seeded synthetic detector makes the whole loop runnable and
reproducible without any network training.

Typical entry points:

- :func:`aldet.acquisition.unified_score` / :func:`select_for_labeling`
- :func:`aldet.pseudo_label.extract_pseudo_labels`
- :func:`aldet.pool.run_cycles` with a :class:`aldet.sim_detector.SyntheticDetector`
- the ``aldet`` command line (score/select/pseudolabel/simulate/eval/...)
"""

from .acquisition import (
    AcquisitionConfig,
    AcquisitionScore,
    entropy,
    image_entropy,
    image_inconsistency,
    select_for_labeling,
    sym_kl,
    unified_score,
)
from .boxes import (
    BoxCorner,
    BoxEncoded,
    ClassDist,
    Detection,
    ImagePrediction,
    decode_box,
    encode_box,
    hflip,
    image_anchor,
    iou,
    nms,
)
from .dataset import Dataset, ImageRecord, make_synthetic_dataset
from .evaluation import EvalResult, average_precision, map50, winrate_matrix, winrate_table
from .losses import (
    GroundTruthAssignment,
    consistency_class_loss,
    consistency_loc_loss,
    multibox_conf_loss,
    pl_multibox_conf_loss,
    smooth_l1_loc_loss,
    total_loss,
)
from .matching import MatchedPair, MatchResult, match_predictions
from .pool import (
    CycleReport,
    Pool,
    RunConfig,
    balanced_batches,
    commit_selection,
    init_pool,
    run_cycles,
    score_pool,
    with_pseudo,
)
from .pseudo_label import (
    GroundTruthObject,
    PseudoLabel,
    audit_pl_correctness,
    extract_pseudo_labels,
    extract_topk_per_class,
)
from .sim_detector import (
    DetectorInterface,
    StaticPredictions,
    SyntheticDetector,
    SyntheticDetectorConfig,
)

__version__ = "0.1.0"
