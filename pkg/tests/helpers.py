"""Deterministic toy classifiers and numeric oracles for the test suite."""

import hashlib

import numpy as np

from patchcert.models import Classifier, cross_entropy, mlp_forward


def numeric_gradients(model, image, label, step=1e-4):
    """Central finite differences of the loss w.r.t. every parameter and pixel."""
    out = {}
    for name in ("w1", "b1", "w2", "b2"):
        base = getattr(model, name)
        grad = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = cross_entropy(mlp_forward(model, image), label)
            flat[i] = keep - step
            down = cross_entropy(mlp_forward(model, image), label)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * step)
        out[name] = grad
    pix = image.reshape(-1)
    gimg = np.zeros_like(pix)
    for i in range(pix.size):
        keep = pix[i]
        pix[i] = keep + step
        up = cross_entropy(mlp_forward(model, image), label)
        pix[i] = keep - step
        down = cross_entropy(mlp_forward(model, image), label)
        pix[i] = keep
        gimg[i] = (up - down) / (2 * step)
    out["image"] = gimg.reshape(image.shape)
    return out


def max_rel_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom))


class ConstantClassifier(Classifier):
    """Always returns the same probability vector."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.class_count = len(self.probs)

    def predict_batch(self, images):
        images = np.asarray(images)
        return np.tile(self.probs, (images.shape[0], 1))


class HashClassifier(Classifier):
    """Pseudo-random but pure classifier keyed on exact pixel content."""

    def __init__(self, class_count=4, salt=0):
        self.class_count = class_count
        self.salt = salt

    def _one(self, image):
        digest = hashlib.blake2b(
            np.ascontiguousarray(image, dtype=np.float64).tobytes()
            + str(self.salt).encode(),
            digest_size=8,
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        raw = rng.random(self.class_count) + 1e-3
        return raw / raw.sum()

    def predict_batch(self, images):
        images = np.asarray(images)
        return np.stack([self._one(img) for img in images])


class TableClassifier(Classifier):
    """Looks the prediction up by image bytes; unknown images get a default.

    ``table`` maps image bytes to a label; predictions are one-hot.
    """

    def __init__(self, class_count, table, default_label=0):
        self.class_count = class_count
        self.table = table
        self.default_label = default_label

    @staticmethod
    def key(image):
        return np.ascontiguousarray(image, dtype=np.float64).tobytes()

    def _one(self, image):
        label = self.table.get(self.key(image), self.default_label)
        probs = np.zeros(self.class_count)
        probs[label] = 1.0
        return probs

    def predict_batch(self, images):
        images = np.asarray(images)
        return np.stack([self._one(img) for img in images])
