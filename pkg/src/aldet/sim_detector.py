"""Detector contract plus a seeded synthetic detector.

The synthetic detector turns ground-truth annotations into realistic-looking
predictions: jittered boxes, temperature-controlled confidences, seeded class
confusions, and a per-class flip-robustness knob that decides whether the
flipped image's distributions are reused or resampled. Ground truth is only
visible inside this module; everything downstream sees ImagePrediction values
only.

Low per-class accuracy combined with a low temperature produces confidently
wrong predictions: low entropy but, under low flip robustness, high
inconsistency. That is the regime in which uncertainty-only acquisition fails
and the robustness signal matters.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .boxes import (
    BoxCorner,
    ClassDist,
    Detection,
    ImagePrediction,
    encode_box,
    image_anchor,
)
from .dataset import Dataset

if TYPE_CHECKING:
    from .pool import Pool

__all__ = [
    "DetectorInterface",
    "SyntheticDetectorConfig",
    "SyntheticDetector",
    "StaticPredictions",
]

_MIN_BOX = 1.0  # floor on predicted box side length, keeps encodings valid


class DetectorInterface(ABC):
    """What the active-learning loop needs from a detector.

    ``predict`` must be deterministic given (detector state, image_id,
    flipped), and ``predict(id, flipped=True)`` returns detections in the
    flipped coordinate frame. ``update`` consumes a pool snapshot and returns
    the detector state after retraining.
    """

    @abstractmethod
    def predict(self, image_id: str, flipped: bool = False) -> ImagePrediction: ...

    @abstractmethod
    def update(self, pool: "Pool") -> "DetectorInterface": ...


def _per_class(value, n_classes: int, name: str) -> np.ndarray:
    """Broadcast a scalar or {class_id: value} mapping to an array indexed 1..K."""
    arr = np.zeros(n_classes + 1)
    if isinstance(value, Mapping):
        missing = set(range(1, n_classes + 1)) - set(value)
        extra = set(value) - set(range(1, n_classes + 1))
        if missing or extra:
            raise ValueError(f"{name} mapping must cover classes 1..{n_classes} exactly")
        for k, v in value.items():
            arr[k] = float(v)
    else:
        arr[1:] = float(value)
    if arr[1:].min() < 0.0 or arr[1:].max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class SyntheticDetectorConfig:
    """Generative knobs of the synthetic detector.

    accuracy: probability that a ground-truth object's predicted distribution
        peaks on the true class (scalar or per-class mapping).
    flip_robustness: probability that the flipped image reuses the original
        distribution instead of resampling it.
    temperature: softmax temperature; low values give confident peaks.
    skill_gain_per_labeled: accuracy added per newly labeled image containing
        a class; flip robustness rises by the same amount.
    skill_gain_per_pseudo: accuracy added per pseudo-labeled image of a class
        at each update (pseudo-labels are regenerated every cycle).
    """

    n_classes: int
    accuracy: float | Mapping[int, float] = 0.8
    flip_robustness: float | Mapping[int, float] = 0.9
    temperature: float = 0.15
    logit_noise: float = 0.1
    box_noise: float = 0.05
    fp_rate: float = 0.0
    skill_gain_per_labeled: float = 0.0
    skill_gain_per_pseudo: float = 0.0
    accuracy_ceiling: float = 0.97
    robustness_ceiling: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("need at least one foreground class")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        for name in ("logit_noise", "box_noise", "fp_rate", "skill_gain_per_labeled", "skill_gain_per_pseudo"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        _per_class(self.accuracy, self.n_classes, "accuracy")
        _per_class(self.flip_robustness, self.n_classes, "flip_robustness")


def _mix64(*values: int) -> int:
    """Stable 64-bit mix (splitmix64 finalizer chain) for stream keys."""
    h = 0x9E3779B97F4A7C15
    for v in values:
        h = (h + (v & 0xFFFFFFFFFFFFFFFF)) & 0xFFFFFFFFFFFFFFFF
        h = ((h ^ (h >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        h = ((h ^ (h >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        h = h ^ (h >> 31)
    return h


def _id_key(image_id: str) -> int:
    digest = hashlib.blake2b(image_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SyntheticDetector(DetectorInterface):
    """Deterministic prediction generator over a dataset's annotations."""

    def __init__(self, config: SyntheticDetectorConfig, dataset: Dataset):
        if dataset.n_classes != config.n_classes:
            raise ValueError(
                f"config has {config.n_classes} classes, dataset has {dataset.n_classes}"
            )
        self._config = config
        self._dataset = dataset
        self._accuracy = _per_class(config.accuracy, config.n_classes, "accuracy")
        self._robustness = _per_class(config.flip_robustness, config.n_classes, "flip_robustness")
        self._version = 0
        self._seen_labeled: frozenset[str] = frozenset()
        self._id_keys: dict[str, int] = {}

    # -- introspection used by tests and reports ---------------------------

    @property
    def config(self) -> SyntheticDetectorConfig:
        return self._config

    @property
    def version(self) -> int:
        return self._version

    def class_accuracy(self, class_id: int) -> float:
        return float(self._accuracy[class_id])

    def class_robustness(self, class_id: int) -> float:
        return float(self._robustness[class_id])

    # -- prediction ---------------------------------------------------------

    def _stream(self, image_id: str, tag: int) -> np.random.Generator:
        key = self._id_keys.get(image_id)
        if key is None:
            key = _id_key(image_id)
            self._id_keys[image_id] = key
        k1 = _mix64(self._config.seed, self._version)
        k2 = _mix64(key, tag)
        return np.random.Generator(np.random.Philox(key=np.array([k1, k2], dtype=np.uint64)))

    def _jittered_box(self, rng, gt_box: BoxCorner, width: int, height: int) -> BoxCorner:
        s = self._config.box_noise
        noise = rng.normal(0.0, 1.0, 4)
        bw, bh = gt_box.width, gt_box.height
        x0 = gt_box.xmin + noise[0] * s * bw
        y0 = gt_box.ymin + noise[1] * s * bh
        x1 = gt_box.xmax + noise[2] * s * bw
        y1 = gt_box.ymax + noise[3] * s * bh
        x0, x1 = min(x0, x1), max(x0, x1)
        y0, y1 = min(y0, y1), max(y0, y1)
        x0, x1 = max(0.0, x0), min(float(width), x1)
        y0, y1 = max(0.0, y0), min(float(height), y1)
        if x1 - x0 < _MIN_BOX:
            x0 = max(0.0, min(x0, width - _MIN_BOX))
            x1 = x0 + _MIN_BOX
        if y1 - y0 < _MIN_BOX:
            y0 = max(0.0, min(y0, height - _MIN_BOX))
            y1 = y0 + _MIN_BOX
        return BoxCorner(x0, y0, x1, y1)

    def _draw_dist(self, rng, true_class: int) -> ClassDist:
        k = self._config.n_classes
        u = rng.uniform()
        confusion_step = int(rng.integers(0, max(k - 1, 1)))
        if u < self._accuracy[true_class]:
            peak = true_class
        else:
            # uniform over the other foreground classes (or the class itself when K=1)
            peak = 1 + (true_class - 1 + 1 + confusion_step) % k if k > 1 else 1
        logits = rng.normal(0.0, self._config.logit_noise, k + 1)
        logits[peak] += 1.0 / self._config.temperature
        e = np.exp(logits - logits.max())
        return ClassDist(e / e.sum())

    def _false_positives(self, rng, width: int, height: int, anchor: BoxCorner) -> list[Detection]:
        if self._config.fp_rate <= 0.0:
            return []
        out = []
        for _ in range(int(rng.poisson(self._config.fp_rate))):
            bw = rng.uniform(_MIN_BOX * 10, 0.5 * width)
            bh = rng.uniform(_MIN_BOX * 10, 0.5 * height)
            x0 = rng.uniform(0.0, width - bw)
            y0 = rng.uniform(0.0, height - bh)
            box = BoxCorner(float(x0), float(y0), float(x0 + bw), float(y0 + bh))
            cls = int(rng.integers(1, self._config.n_classes + 1))
            dist = self._draw_dist(rng, cls)
            out.append(Detection(box, encode_box(box, anchor), dist))
        return out

    def predict(self, image_id: str, flipped: bool = False) -> ImagePrediction:
        rec = self._dataset[image_id]
        anchor = image_anchor(rec.width, rec.height)
        rng = self._stream(image_id, 0)

        originals: list[tuple[BoxCorner, ClassDist, int]] = []
        for obj in rec.objects:
            box = self._jittered_box(rng, obj.box_corner, rec.width, rec.height)
            dist = self._draw_dist(rng, obj.class_id)
            originals.append((box, dist, obj.class_id))

        if not flipped:
            dets = [Detection(box, encode_box(box, anchor), dist) for box, dist, _ in originals]
            dets.extend(self._false_positives(rng, rec.width, rec.height, anchor))
            return ImagePrediction(image_id, rec.width, rec.height, tuple(dets))

        frng = self._stream(image_id, 1)
        dets = []
        for (orig_box, orig_dist, cls), obj in zip(originals, rec.objects):
            g = obj.box_corner
            mirrored_gt = BoxCorner(rec.width - g.xmax, g.ymin, rec.width - g.xmin, g.ymax)
            box = self._jittered_box(frng, mirrored_gt, rec.width, rec.height)
            reuse = frng.uniform() < self._robustness[cls]
            resampled = self._draw_dist(frng, cls)  # drawn either way, fixed stream layout
            dist = orig_dist if reuse else resampled
            dets.append(Detection(box, encode_box(box, anchor), dist))
        dets.extend(self._false_positives(frng, rec.width, rec.height, anchor))
        return ImagePrediction(image_id, rec.width, rec.height, tuple(dets))

    # -- retraining stand-in -------------------------------------------------

    def update(self, pool: "Pool") -> "SyntheticDetector":
        """Per-class skill bump from newly labeled and pseudo-labeled images.

        Returns a new detector; the current one keeps serving its predictions.
        """
        cfg = self._config
        acc = self._accuracy.copy()
        rob = self._robustness.copy()

        new_ids = sorted(set(pool.labeled) - self._seen_labeled)
        for image_id in new_ids:
            classes = {obj.class_id for obj in self._dataset[image_id].objects}
            for c in classes:
                acc[c] += cfg.skill_gain_per_labeled
                rob[c] += cfg.skill_gain_per_labeled

        if cfg.skill_gain_per_pseudo > 0.0:
            for image_id in sorted(pool.pseudo):
                classes = {pl.class_id for pl in pool.pseudo[image_id]}
                for c in classes:
                    acc[c] += cfg.skill_gain_per_pseudo
                    rob[c] += cfg.skill_gain_per_pseudo

        np.clip(acc, 0.0, cfg.accuracy_ceiling, out=acc)
        np.clip(rob, 0.0, cfg.robustness_ceiling, out=rob)

        out = SyntheticDetector.__new__(SyntheticDetector)
        out._config = cfg
        out._dataset = self._dataset
        out._accuracy = acc
        out._robustness = rob
        out._version = self._version + 1
        out._seen_labeled = frozenset(pool.labeled)
        out._id_keys = self._id_keys
        return out


class StaticPredictions(DetectorInterface):
    """Detector backed by externally produced predictions (e.g. JSONL import)."""

    def __init__(self, predictions: Mapping[tuple[str, bool], ImagePrediction]):
        self._predictions = dict(predictions)

    def predict(self, image_id: str, flipped: bool = False) -> ImagePrediction:
        try:
            return self._predictions[(image_id, flipped)]
        except KeyError:
            kind = "flipped" if flipped else "original"
            raise ValueError(f"missing {kind} prediction for image {image_id!r}") from None

    def update(self, pool: "Pool") -> "StaticPredictions":
        return self
