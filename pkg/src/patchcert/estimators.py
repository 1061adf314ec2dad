"""Scikit-learn style estimators wrapping the functional core.

``MlpClassifier`` is a plain image classifier whose ``fit`` runs the
mask-augmented SGD loop; ``DoubleMaskingClassifier`` wraps any fitted
classifier (or trains one) and serves defended predictions plus per-image
certification.  Both follow the get_params/set_params contract so they
compose with sklearn tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .data import LabeledDataset
from .defense import EvaluationReport, certify, double_masking_infer, evaluate
from .cache import CachedClassifier
from .masks import build_mask_set, patch_side_from_fraction
from .models import mlp_init
from .training import TrainConfig, train
from .validation import as_image_stack, as_labels


class MlpClassifier(BaseEstimator, ClassifierMixin):
    """Small MLP image classifier with worst-case-mask training augmentation.

    Parameters mirror :class:`patchcert.training.TrainConfig`; ``strategy``
    selects the augmentation ("none", "random", "rand3", "rand6", "rand",
    "saliency", "greedy3", "greedy6", "multisize", "grid3", "grid6").
    """

    def __init__(self, hidden=64, epochs=10, lr=0.01, momentum=0.9,
                 batch_size=16, strategy="none", patch_fraction=0.03,
                 patch_side=None, fill=0.0, cutout_side=None, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.strategy = strategy
        self.patch_fraction = patch_fraction
        self.patch_side = patch_side
        self.fill = fill
        self.cutout_side = cutout_side
        self.seed = seed

    def _resolved_patch_side(self, width, height):
        if self.patch_side is not None:
            return int(self.patch_side)
        return patch_side_from_fraction(width, height, self.patch_fraction)

    def fit(self, X, y):
        X = as_image_stack(X)
        y = as_labels(y, len(X))
        n, height, width, channels = X.shape
        classes = int(y.max()) + 1 if len(y) else 1
        dataset = LabeledDataset(images=X, labels=y, class_count=classes)
        cfg = TrainConfig(
            epochs=self.epochs, lr=self.lr, momentum=self.momentum,
            batch_size=self.batch_size, seed=self.seed, strategy=self.strategy,
            patch_side=self._resolved_patch_side(width, height),
            fill=self.fill, cutout_side=self.cutout_side,
        )
        model = mlp_init(height, width, channels, hidden=self.hidden,
                         classes=classes, seed=self.seed)
        result = train(model, dataset, cfg)
        self.model_ = result.model
        self.train_log_ = result.epochs
        self.classes_ = np.arange(classes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def predict_proba(self, X):
        self._check_fitted()
        return self.model_.predict_batch(as_image_stack(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class DoubleMaskingClassifier(BaseEstimator, ClassifierMixin):
    """Certified patch defense around a base classifier.

    ``predict`` runs double-masking inference; ``certify`` checks the
    two-mask certification condition against given labels.  ``base`` may be
    a pre-fitted :class:`MlpClassifier` (or anything exposing ``model_``
    with the classifier protocol); when unfitted, ``fit`` trains it.
    """

    def __init__(self, base=None, k=3, patch_fraction=0.03, patch_side=None,
                 fill=0.0, threads=1):
        self.base = base
        self.k = k
        self.patch_fraction = patch_fraction
        self.patch_side = patch_side
        self.fill = fill
        self.threads = threads

    def _core_classifier(self):
        est = self.base_
        return est.model_ if hasattr(est, "model_") else est

    def _mask_set(self, height, width):
        if height != width:
            raise ValueError(
                f"mask sets assume square images, got {height}x{width}"
            )
        p = self.patch_side
        if p is None:
            p = patch_side_from_fraction(width, height, self.patch_fraction)
        return build_mask_set(height, int(p), self.k)

    def fit(self, X, y):
        X = as_image_stack(X)
        y = as_labels(y, len(X))
        self.base_ = self.base if self.base is not None else MlpClassifier()
        if not hasattr(self.base_, "model_"):
            self.base_.fit(X, y)
        self.mask_set_ = self._mask_set(X.shape[1], X.shape[2])
        self.classes_ = np.arange(self._core_classifier().class_count)
        return self

    def _check_fitted(self):
        if not hasattr(self, "base_"):
            raise NotFittedError("call fit before predict")

    def predict(self, X):
        self._check_fitted()
        X = as_image_stack(X)
        core = self._core_classifier()
        out = np.empty(len(X), dtype=np.int64)
        for i, image in enumerate(X):
            cache = CachedClassifier(core)
            image_id = cache.register(image)
            out[i] = double_masking_infer(cache, image_id, self.mask_set_,
                                          fill=self.fill).label
        return out

    def certify(self, X, y):
        self._check_fitted()
        X = as_image_stack(X)
        y = as_labels(y, len(X))
        core = self._core_classifier()
        flags = np.zeros(len(X), dtype=bool)
        for i, image in enumerate(X):
            cache = CachedClassifier(core)
            image_id = cache.register(image)
            flags[i] = certify(cache, image_id, int(y[i]), self.mask_set_,
                               fill=self.fill).certified
        return flags

    def evaluate(self, X, y) -> EvaluationReport:
        self._check_fitted()
        X = as_image_stack(X)
        y = as_labels(y, len(X))
        return evaluate(list(X), list(y), self._core_classifier(),
                        self.mask_set_, fill=self.fill, threads=self.threads)
