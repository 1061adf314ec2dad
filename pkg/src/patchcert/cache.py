"""Memoizing, pass-counting wrapper around a pure classifier.

Two masked-image queries hit the same memo entry exactly when their mask
lists render the same image, via :func:`patchcert.masks.canonical_combo_key`.
``scheduled_evaluations`` counts every query; ``unique_evaluations`` counts
actual forward passes through the wrapped classifier.
"""

from __future__ import annotations

import threading

import numpy as np

from .masks import MaskRect, apply_masks, canonical_combo_key
from .models import Classifier


class CachedClassifier:
    """Thread-safe prediction cache keyed by (image id, canonical mask combo)."""

    def __init__(self, classifier: Classifier):
        self.inner = classifier
        self._images: dict[object, np.ndarray] = {}
        self._memo: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        self.scheduled_evaluations = 0
        self.unique_evaluations = 0

    @property
    def class_count(self) -> int:
        return self.inner.class_count

    def register(self, image: np.ndarray, image_id: object | None = None) -> object:
        """Store an image and return its id (auto-assigned ints by default)."""
        with self._lock:
            if image_id is None:
                image_id = len(self._images)
            if image_id in self._images:
                raise ValueError(f"image id {image_id!r} already registered")
            self._images[image_id] = np.asarray(image, dtype=np.float64)
        return image_id

    def image(self, image_id: object) -> np.ndarray:
        try:
            return self._images[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None

    def predict(self, image_id: object, masks: list[MaskRect] | tuple[MaskRect, ...],
                fill: float = 0.0) -> np.ndarray:
        return self.predict_many(image_id, [list(masks)], fill=fill)[0]

    def predict_many(self, image_id: object,
                     combos: list[list[MaskRect]] | list[tuple[MaskRect, ...]],
                     fill: float = 0.0) -> list[np.ndarray]:
        """Predictions for several mask combos of one image, one batched pass.

        Memo misses are deduplicated within the call, so repeated combos of
        equal canonical key cost a single forward pass.
        """
        with self._lock:
            image = self.image(image_id)
            keys = [(image_id, canonical_combo_key(c, fill)) for c in combos]
            self.scheduled_evaluations += len(combos)
            missing: dict[tuple, list[MaskRect]] = {}
            for key, combo in zip(keys, combos):
                if key not in self._memo and key not in missing:
                    missing[key] = list(combo)
            if missing:
                stack = np.stack([
                    apply_masks(image, combo, fill=fill) for combo in missing.values()
                ])
                probs = self.inner.predict_batch(stack)
                for key, row in zip(missing, probs):
                    self._memo[key] = row
                self.unique_evaluations += len(missing)
            return [self._memo[key] for key in keys]

    def counters(self) -> tuple[int, int]:
        with self._lock:
            return self.scheduled_evaluations, self.unique_evaluations


def cached_predict(cache: CachedClassifier, image_id: object,
                   masks: list[MaskRect], fill: float = 0.0) -> np.ndarray:
    """Functional alias for :meth:`CachedClassifier.predict`."""
    return cache.predict(image_id, masks, fill=fill)
