"""Labeled/unlabeled pool management and the active-learning cycle loop.

A dataset is partitioned into a labeled set L and an unlabeled pool U; each
cycle scores U, moves a budget of images into L, regenerates pseudo-labels
over the remaining pool, and evaluates the detector on a held-out test set.
Pseudo-labels are regenerated from scratch every cycle by the detector
trained in that cycle; they are never accumulated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .acquisition import (
    SCORE_STRATEGIES,
    AcquisitionConfig,
    AcquisitionScore,
    select_for_labeling,
    unified_score,
)
from .boxes import nms
from .dataset import Dataset
from .evaluation import INTERPOLATIONS, EvalResult, map50
from .pseudo_label import (
    PseudoLabel,
    audit_pl_correctness,
    extract_pseudo_labels,
    extract_topk_per_class,
)

__all__ = [
    "Pool",
    "init_pool",
    "commit_selection",
    "with_pseudo",
    "balanced_batches",
    "BATCH_MODES",
    "RunConfig",
    "CycleReport",
    "score_pool",
    "run_cycles",
]

BATCH_MODES = ("balanced_half", "balanced_quarter", "random")
SELECTION_STRATEGIES = ("random",) + SCORE_STRATEGIES
PL_STRATEGIES = ("threshold", "topk")


@dataclass(frozen=True)
class Pool:
    """Partition of the dataset ids into labeled and unlabeled, plus the
    pseudo-labels currently attached to unlabeled images."""

    labeled: frozenset[str]
    unlabeled: frozenset[str]
    pseudo: Mapping[str, tuple[PseudoLabel, ...]] = field(default_factory=dict)
    cycle: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labeled", frozenset(self.labeled))
        object.__setattr__(self, "unlabeled", frozenset(self.unlabeled))
        object.__setattr__(
            self, "pseudo", {k: tuple(v) for k, v in sorted(self.pseudo.items())}
        )
        if self.cycle < 0:
            raise ValueError("cycle must be non-negative")
        overlap = self.labeled & self.unlabeled
        if overlap:
            raise ValueError(f"labeled and unlabeled overlap: {sorted(overlap)[:5]}")
        stray = set(self.pseudo) - self.unlabeled
        if stray:
            raise ValueError(f"pseudo-labels attached to non-pool images: {sorted(stray)[:5]}")

    @property
    def all_ids(self) -> frozenset[str]:
        return self.labeled | self.unlabeled

    @property
    def n_pseudo_labels(self) -> int:
        return sum(len(v) for v in self.pseudo.values())


def init_pool(dataset_ids: Iterable[str], initial_budget: int, seed) -> Pool:
    """Seeded uniform initial labeling: ``initial_budget`` ids into L, rest into U."""
    ids = sorted(dataset_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate dataset ids")
    if not (0 <= initial_budget <= len(ids)):
        raise ValueError(f"initial budget {initial_budget} exceeds dataset size {len(ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    labeled = frozenset(ids[k] for k in order[:initial_budget])
    unlabeled = frozenset(ids) - labeled
    return Pool(labeled, unlabeled, {}, cycle=0)


def commit_selection(pool: Pool, selected: Sequence[str]) -> Pool:
    """Move the selected ids from U to L, drop their pseudo-labels, bump the cycle."""
    sel = set(selected)
    if len(sel) != len(list(selected)):
        raise ValueError("selection contains duplicate ids")
    bad = sel - pool.unlabeled
    if bad:
        raise ValueError(f"already labeled or unknown: {sorted(bad)[:5]}")
    pseudo = {k: v for k, v in pool.pseudo.items() if k not in sel}
    return Pool(pool.labeled | sel, pool.unlabeled - sel, pseudo, pool.cycle + 1)


def with_pseudo(pool: Pool, pseudo: Mapping[str, Sequence[PseudoLabel]]) -> Pool:
    """Replace the pool's pseudo-labels (regeneration, not accumulation)."""
    cleaned = {k: tuple(v) for k, v in pseudo.items() if v}
    return Pool(pool.labeled, pool.unlabeled, cleaned, pool.cycle)


def _reshuffling_queue(items: list[str], rng: np.random.Generator) -> Iterator[str]:
    while True:
        order = rng.permutation(len(items))
        for k in order:
            yield items[k]


def balanced_batches(
    pool: Pool, batch_size: int, seed, mode: str = "balanced_half"
) -> Iterator[list[str]]:
    """Endless stream of mini-batch id lists; slice as many as needed.

    balanced_half puts batch_size/2 labeled + batch_size/2 unlabeled ids in
    every batch, balanced_quarter puts batch_size/4 labeled, and random draws
    uniformly from the whole pool. Each partition is reshuffled whenever a
    pass over it completes.
    """
    if batch_size <= 0 or batch_size % 2 != 0:
        raise ValueError(f"batch_size must be a positive even number, got {batch_size}")
    if mode not in BATCH_MODES:
        raise ValueError(f"mode must be one of {BATCH_MODES}, got {mode!r}")

    labeled = sorted(pool.labeled)
    unlabeled = sorted(pool.unlabeled)
    rng = np.random.default_rng(seed)

    if mode == "random":
        everything = sorted(pool.all_ids)
        if not everything:
            raise ValueError("empty pool")
        queue = _reshuffling_queue(everything, rng)
        while True:
            yield [next(queue) for _ in range(batch_size)]

    if not labeled or not unlabeled:
        raise ValueError("balanced modes need both labeled and unlabeled images")
    if mode == "balanced_quarter":
        if batch_size % 4 != 0:
            raise ValueError("balanced_quarter needs batch_size divisible by 4")
        n_lab = batch_size // 4
    else:
        n_lab = batch_size // 2

    lab_queue = _reshuffling_queue(labeled, rng)
    unl_queue = _reshuffling_queue(unlabeled, rng)
    while True:
        batch = [next(lab_queue) for _ in range(n_lab)]
        batch.extend(next(unl_queue) for _ in range(batch_size - n_lab))
        yield batch


@dataclass(frozen=True)
class RunConfig:
    """Protocol parameters for one active-learning experiment."""

    cycles: int
    budget_per_cycle: int
    strategy: str = "unified"
    tau: float = 0.99
    pl_enabled: bool = True
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    seed: int = 0
    interpolation: str = "eleven_point"
    pl_strategy: str = "threshold"
    pl_topk_fraction: float = 0.2

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError("need at least one cycle")
        if self.budget_per_cycle < 0:
            raise ValueError("budget_per_cycle must be non-negative")
        if self.strategy not in SELECTION_STRATEGIES:
            raise ValueError(f"strategy must be one of {SELECTION_STRATEGIES}, got {self.strategy!r}")
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.pl_strategy not in PL_STRATEGIES:
            raise ValueError(f"pl_strategy must be one of {PL_STRATEGIES}")
        if not (0.0 < self.pl_topk_fraction <= 1.0):
            raise ValueError("pl_topk_fraction must be in (0, 1]")


@dataclass(frozen=True)
class CycleReport:
    """Everything recorded about one cycle of the protocol."""

    cycle: int
    selected: tuple[str, ...]
    scores: tuple[AcquisitionScore, ...]
    n_labeled: int
    pl_count: int
    pl_ratio: float
    pl_correctness: float
    per_class_ap: dict[int, float]
    map50: float
    map50_pre_update: float
    pseudo_labels: tuple[PseudoLabel, ...] = ()


def score_pool(pool: Pool, detector, cfg: AcquisitionConfig) -> list[AcquisitionScore]:
    """Acquisition scores for every unlabeled image, in ascending id order."""
    out = []
    for image_id in sorted(pool.unlabeled):
        orig = detector.predict(image_id, flipped=False)
        flip = detector.predict(image_id, flipped=True)
        out.append(unified_score(orig, flip, cfg))
    return out


def _regen_pseudo(pool: Pool, detector, cfg: RunConfig) -> dict[str, tuple[PseudoLabel, ...]]:
    preds = []
    for image_id in sorted(pool.unlabeled):
        pred = detector.predict(image_id, flipped=False)
        preds.append(
            pred.with_detections(
                nms(pred.detections, cfg.acquisition.nms_iou, cfg.acquisition.nms_score_floor)
            )
        )
    if cfg.pl_strategy == "threshold":
        labels = [pl for pred in preds for pl in extract_pseudo_labels(pred, cfg.tau)]
    else:
        labels = extract_topk_per_class(preds, cfg.pl_topk_fraction)

    grouped: dict[str, list[PseudoLabel]] = {}
    for pl in labels:
        grouped.setdefault(pl.image_id, []).append(pl)
    return {k: tuple(v) for k, v in grouped.items()}


def _evaluate(detector, test_data: Dataset, cfg: RunConfig) -> EvalResult:
    dets = []
    for img in test_data.images:
        pred = detector.predict(img.image_id, flipped=False)
        for det in nms(pred.detections, cfg.acquisition.nms_iou, cfg.acquisition.nms_score_floor):
            dets.append((det, img.image_id))
    return map50(
        dets,
        test_data.all_objects(),
        interpolation=cfg.interpolation,
        class_ids=range(1, test_data.n_classes + 1),
    )


def run_cycles(
    pool: Pool,
    detector,
    cfg: RunConfig,
    train_data: Dataset,
    test_data: Dataset,
) -> list[CycleReport]:
    """Run the full protocol: cycle 0 trains on the initial labeled set only,
    cycles 1..T score, select, commit, retrain, re-pseudo-label, evaluate.

    Fully deterministic given the pool seed, the detector's seed, and the
    config; repeated runs produce identical reports.
    """
    if pool.all_ids != frozenset(train_data.image_ids):
        raise ValueError("pool ids do not match the training dataset")

    train_gt = train_data.all_objects()

    def make_report(cycle, selected, scores, map_pre: float) -> CycleReport:
        result = _evaluate(detector, test_data, cfg)
        n_pl = pool.n_pseudo_labels
        n_manual = sum(len(train_data[i].objects) for i in pool.labeled)
        denom = n_pl + n_manual
        pls = [pl for v in pool.pseudo.values() for pl in v]
        return CycleReport(
            cycle=cycle,
            selected=tuple(selected),
            scores=tuple(scores),
            n_labeled=len(pool.labeled),
            pl_count=n_pl,
            pl_ratio=n_pl / denom if denom else 0.0,
            pl_correctness=audit_pl_correctness(pls, train_gt),
            per_class_ap=result.per_class_ap,
            map50=result.map50,
            map50_pre_update=map_pre,
            pseudo_labels=tuple(pls),
        )

    reports: list[CycleReport] = []

    map_pre = _evaluate(detector, test_data, cfg).map50
    detector = detector.update(pool)
    if cfg.pl_enabled:
        pool = with_pseudo(pool, _regen_pseudo(pool, detector, cfg))
    reports.append(make_report(0, (), (), map_pre))

    for t in range(1, cfg.cycles + 1):
        scores = score_pool(pool, detector, cfg.acquisition)
        selected = select_for_labeling(
            scores, cfg.budget_per_cycle, cfg.strategy, seed=(cfg.seed, t)
        )
        pool = commit_selection(pool, selected)
        map_pre = _evaluate(detector, test_data, cfg).map50
        detector = detector.update(pool)
        if cfg.pl_enabled:
            pool = with_pseudo(pool, _regen_pseudo(pool, detector, cfg))
        else:
            pool = with_pseudo(pool, {})
        reports.append(make_report(t, selected, scores, map_pre))

    return reports
