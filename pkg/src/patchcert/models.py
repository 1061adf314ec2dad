"""Pure classifier contract, cross-entropy loss, and a small softmax MLP.

Every prediction funnels through one fixed-shape matrix multiply
(:data:`PREDICT_CHUNK` rows, zero-padded), because BLAS results differ at the
bit level across batch shapes.  With the fixed shape, a prediction depends
only on the pixel values of its own image, so identical masked images yield
bit-identical probability vectors no matter which code path asked for them.
The defense's certification and replay guarantees rely on this.
"""

from __future__ import annotations

import abc
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PREDICT_CHUNK = 64
PROB_CLAMP = 1e-12
MAGIC = b"PCMLP1"


class Classifier(abc.ABC):
    """Deterministic, side-effect-free image classifier."""

    class_count: int

    @abc.abstractmethod
    def predict_batch(self, images: np.ndarray) -> np.ndarray:
        """Probabilities for a stack of images, shape (B, class_count)."""

    def predict(self, image: np.ndarray) -> np.ndarray:
        return self.predict_batch(np.asarray(image)[None, ...])[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Negative natural log of the true-class probability, clamped at 1e-12."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(float(probs[label]), PROB_CLAMP)))


@dataclass
class MlpModel(Classifier):
    """One-hidden-layer ReLU MLP with softmax output over flattened pixels.

    Weights are float64 in memory.  ``w1`` is (hidden, H*W*C), ``w2`` is
    (classes, hidden); biases match their layer widths.
    """

    height: int
    width: int
    channels: int
    hidden: int
    classes: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        d = self.height * self.width * self.channels
        if self.w1.shape != (self.hidden, d):
            raise ValueError(f"w1 shape {self.w1.shape} != ({self.hidden}, {d})")
        if self.b1.shape != (self.hidden,):
            raise ValueError(f"b1 shape {self.b1.shape} != ({self.hidden},)")
        if self.w2.shape != (self.classes, self.hidden):
            raise ValueError(f"w2 shape {self.w2.shape} != ({self.classes}, {self.hidden})")
        if self.b2.shape != (self.classes,):
            raise ValueError(f"b2 shape {self.b2.shape} != ({self.classes},)")
        for name in ("w1", "b1", "w2", "b2"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")

    @property
    def class_count(self) -> int:  # type: ignore[override]
        return self.classes

    @property
    def input_dim(self) -> int:
        return self.height * self.width * self.channels

    def copy(self) -> "MlpModel":
        return MlpModel(
            height=self.height, width=self.width, channels=self.channels,
            hidden=self.hidden, classes=self.classes,
            w1=self.w1.copy(), b1=self.b1.copy(),
            w2=self.w2.copy(), b2=self.b2.copy(),
        )

    def _flatten(self, images: np.ndarray) -> np.ndarray:
        images = np.ascontiguousarray(images, dtype=np.float64)
        expected = (self.height, self.width, self.channels)
        if images.shape[1:] == expected[:2] and self.channels == 1 and images.ndim == 3:
            pass  # (B, H, W) accepted for single-channel models
        elif images.shape[1:] != expected:
            raise ValueError(f"image shape {images.shape[1:]} != model input {expected}")
        return images.reshape(images.shape[0], self.input_dim)

    def predict_batch(self, images: np.ndarray) -> np.ndarray:
        # Every dgemm runs at exactly (PREDICT_CHUNK, input_dim): full chunks
        # as contiguous row views, the tail zero-padded.  Fixed shape makes a
        # row's result a pure function of its pixel content (verified by the
        # batch-invariance tests), which the defense's bit-level guarantees
        # depend on.
        flat = self._flatten(images)
        b = flat.shape[0]
        out = np.empty((b, self.classes), dtype=np.float64)
        w1_t, w2_t = self.w1.T, self.w2.T
        tail_buf = None
        for lo in range(0, b, PREDICT_CHUNK):
            hi = min(lo + PREDICT_CHUNK, b)
            if hi - lo == PREDICT_CHUNK:
                block = flat[lo:hi]
            else:
                if tail_buf is None:
                    tail_buf = np.zeros((PREDICT_CHUNK, self.input_dim), dtype=np.float64)
                tail_buf[: hi - lo] = flat[lo:hi]
                tail_buf[hi - lo :] = 0.0
                block = tail_buf
            hidden = np.maximum(block @ w1_t + self.b1, 0.0)
            logits = hidden @ w2_t + self.b2
            out[lo:hi] = softmax(logits[: hi - lo])
        return out


def mlp_init(height: int, width: int, channels: int = 1, hidden: int = 64,
             classes: int = 4, seed: int = 0) -> MlpModel:
    """Seeded Glorot-uniform initialization; biases start at zero."""
    rng = np.random.default_rng(seed)
    d = height * width * channels

    def glorot(fan_out, fan_in):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    return MlpModel(
        height=height, width=width, channels=channels, hidden=hidden, classes=classes,
        w1=glorot(hidden, d), b1=np.zeros(hidden),
        w2=glorot(classes, hidden), b2=np.zeros(classes),
    )


def mlp_forward(model: MlpModel, image: np.ndarray) -> np.ndarray:
    """Probability vector for one image, via the canonical batched path."""
    return model.predict(image)


@dataclass
class MlpGradients:
    """Gradients of cross_entropy(mlp_forward(model, image), label)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    image: np.ndarray
    loss: float


def mlp_backward(model: MlpModel, image: np.ndarray, label: int) -> MlpGradients:
    """Exact gradients w.r.t. all parameters and the input pixels.

    When the true-class probability sits at the cross-entropy clamp the loss
    is locally constant, so all gradients are zero there.
    """
    if not 0 <= label < model.classes:
        raise ValueError(f"label {label} out of range for {model.classes} classes")
    image = np.asarray(image, dtype=np.float64)
    x = image.reshape(-1)
    if x.shape[0] != model.input_dim:
        raise ValueError(f"image size {x.shape[0]} != model input {model.input_dim}")

    z1 = model.w1 @ x + model.b1
    h = np.maximum(z1, 0.0)
    probs = softmax(model.w2 @ h + model.b2)
    loss = cross_entropy(probs, label)

    if float(probs[label]) < PROB_CLAMP:
        zero = MlpGradients(
            w1=np.zeros_like(model.w1), b1=np.zeros_like(model.b1),
            w2=np.zeros_like(model.w2), b2=np.zeros_like(model.b2),
            image=np.zeros_like(image), loss=loss,
        )
        return zero

    dlogits = probs.copy()
    dlogits[label] -= 1.0
    dw2 = np.outer(dlogits, h)
    db2 = dlogits
    dh = model.w2.T @ dlogits
    dz1 = dh * (z1 > 0.0)
    dw1 = np.outer(dz1, x)
    db1 = dz1
    dx = model.w1.T @ dz1
    return MlpGradients(w1=dw1, b1=db1, w2=dw2, b2=db2,
                        image=dx.reshape(image.shape), loss=loss)


def saliency_from_gradient(model: MlpModel, image: np.ndarray, label: int) -> np.ndarray:
    """Per-pixel saliency: absolute input gradient, summed over channels."""
    grad = mlp_backward(model, image, label).image
    sal = np.abs(grad)
    if sal.ndim == 3:
        sal = sal.sum(axis=2)
    return sal


def save_model(model: MlpModel, path: str | Path) -> None:
    """Binary checkpoint: magic, u32 dims, float32 parameter arrays."""
    parts = [MAGIC, struct.pack(
        "<5I", model.height, model.width, model.channels, model.hidden, model.classes
    )]
    for arr in (model.w1, model.b1, model.w2, model.b2):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> MlpModel:
    """Read a checkpoint written by :func:`save_model` (exact float32 embed)."""
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"bad model magic in {path}")
    off = len(MAGIC)
    height, width, channels, hidden, classes = struct.unpack_from("<5I", blob, off)
    off += struct.calcsize("<5I")
    d = height * width * channels
    arrays = []
    for shape in ((hidden, d), (hidden,), (classes, hidden), (classes,)):
        count = int(np.prod(shape))
        need = count * 4
        if off + need > len(blob):
            raise ValueError(f"model file truncated at byte {off}: {path}")
        arrays.append(
            np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            .astype(np.float64).reshape(shape)
        )
        off += need
    if off != len(blob):
        raise ValueError(f"model file has {len(blob) - off} trailing bytes: {path}")
    w1, b1, w2, b2 = arrays
    return MlpModel(height=height, width=width, channels=channels, hidden=hidden,
                    classes=classes, w1=w1, b1=b1, w2=w2, b2=b2)
