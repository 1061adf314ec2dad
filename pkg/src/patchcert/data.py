"""Datasets: a synthetic multi-cue classification task and a CIFAR-10 loader.

The synthetic task places several copies of a class-specific binary template
on a low-noise background, so that a pair of masks usually occludes some but
not all of the evidence.  That redundancy is what makes mask-invariance
trainable at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR_RECORD_BYTES = 3073


class DatasetFormatError(ValueError):
    """Malformed dataset file; ``offset`` points at the offending byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledDataset:
    """Images (N, H, W, C) in [0, 1] with integer labels below class_count."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )
        if len(self.labels) and int(self.labels.max()) >= self.class_count:
            raise ValueError(
                f"label {int(self.labels.max())} outside {self.class_count} classes"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices], self.class_count)

    def split(self, first: int) -> tuple["LabeledDataset", "LabeledDataset"]:
        return self.subset(np.arange(first)), self.subset(np.arange(first, len(self)))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic cue dataset.

    With ``grid`` unset, cues land at uniform random non-overlapping
    positions.  Setting ``grid`` restricts cue corners to a lattice with
    that step, which keeps the task learnable by a small MLP (cue detectors
    per lattice slot) while preserving the redundant-evidence structure.
    """

    side: int = 32
    classes: int = 4
    cues: int = 3
    cue_side: int = 6
    noise: float = 0.1
    seed: int = 0
    grid: int | None = None

    def __post_init__(self):
        if self.cue_side >= self.side:
            raise ValueError("cue side must be smaller than the image side")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise amplitude must lie in [0, 1]")
        if self.grid is not None:
            if self.grid < self.cue_side:
                raise ValueError("lattice step must be at least the cue side")
            slots = len(range(0, self.side - self.cue_side + 1, self.grid)) ** 2
            if slots < self.cues:
                raise ValueError(f"lattice offers {slots} slots for {self.cues} cues")


def class_template(label: int, side: int) -> np.ndarray:
    """Fixed binary pattern for a class: 1.0 where the pattern is set, 0.5 elsewhere."""
    idx = np.arange(side)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    if label == 0:
        bits = ii % 2 == 0
    elif label == 1:
        bits = jj % 2 == 0
    elif label == 2:
        bits = np.abs(ii - jj) <= 1
    elif label == 3:
        bits = (ii == 0) | (jj == 0) | (ii == side - 1) | (jj == side - 1)
    else:
        bits = np.random.default_rng(label).random((side, side)) > 0.5
    return np.where(bits, 1.0, 0.5)


_PLACEMENT_TRIES = 200


def generate_synth(spec: SynthSpec, count: int, return_layout: bool = False):
    """Deterministic synthetic dataset; labels assigned round-robin.

    With ``return_layout`` also returns the per-image cue top-left corners,
    for geometric assertions.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(spec.seed)
    templates = [class_template(c, spec.cue_side) for c in range(spec.classes)]
    images = np.empty((count, spec.side, spec.side, 1), dtype=np.float64)
    labels = np.array([i % spec.classes for i in range(count)], dtype=np.int64)
    layouts: list[list[tuple[int, int]]] = []

    hi = spec.side - spec.cue_side
    slots = None
    if spec.grid is not None:
        axis = range(0, hi + 1, spec.grid)
        slots = [(y, x) for y in axis for x in axis]
    for i in range(count):
        img = rng.uniform(0.0, spec.noise, size=(spec.side, spec.side, 1))
        placed: list[tuple[int, int]] = []
        if slots is not None:
            chosen = rng.choice(len(slots), size=spec.cues, replace=False)
            placed = [slots[int(s)] for s in chosen]
        else:
            for _ in range(spec.cues):
                for attempt in range(_PLACEMENT_TRIES):
                    y = int(rng.integers(0, hi + 1))
                    x = int(rng.integers(0, hi + 1))
                    if all(
                        abs(y - py) >= spec.cue_side or abs(x - px) >= spec.cue_side
                        for py, px in placed
                    ):
                        placed.append((y, x))
                        break
                else:
                    raise RuntimeError(
                        f"could not place {spec.cues} non-overlapping cues "
                        f"after {_PLACEMENT_TRIES} tries (image {i})"
                    )
        for y, x in placed:
            img[y : y + spec.cue_side, x : x + spec.cue_side, 0] = templates[labels[i]]
        images[i] = img
        layouts.append(placed)
    dataset = LabeledDataset(images=images, labels=labels, class_count=spec.classes)
    return (dataset, layouts) if return_layout else dataset


def load_cifar10_binary(path: str | Path) -> LabeledDataset:
    """Parse the standard CIFAR-10 binary layout into float images in [0, 1].

    Each 3073-byte record is a label byte followed by 32x32 pixels stored
    channel-planar (R then G then B), row-major.  Pixels map to v / 255.
    """
    blob = Path(path).read_bytes()
    if len(blob) % CIFAR_RECORD_BYTES != 0:
        offset = (len(blob) // CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES
        raise DatasetFormatError(
            f"file length {len(blob)} is not a multiple of {CIFAR_RECORD_BYTES}",
            offset=offset,
        )
    records = len(blob) // CIFAR_RECORD_BYTES
    images = np.empty((records, 32, 32, 3), dtype=np.float64)
    labels = np.empty(records, dtype=np.int64)
    raw = np.frombuffer(blob, dtype=np.uint8)
    for r in range(records):
        start = r * CIFAR_RECORD_BYTES
        label = int(raw[start])
        if label > 9:
            raise DatasetFormatError(f"label byte {label} exceeds 9", offset=start)
        labels[r] = label
        planes = raw[start + 1 : start + CIFAR_RECORD_BYTES].reshape(3, 32, 32)
        images[r] = planes.transpose(1, 2, 0) / 255.0
    return LabeledDataset(images=images, labels=labels, class_count=10)
