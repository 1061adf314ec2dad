"""Independent brute-force verifiers for the defense's guarantees.

Nothing here shares selection logic with the strategy implementations: the
worst-pair search below re-derives the grid maximization from scratch so the
two can be cross-checked, and the attack simulator exercises the full
defended-inference path over every patch location and a content dictionary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .cache import CachedClassifier
from .defense import double_masking_infer
from .masks import MaskRect, MaskSet, apply_masks, build_mask_set, covering_witness
from .models import Classifier, cross_entropy

STANDARD_COVERING_CONFIGS = ((224, 39, 3), (224, 39, 6), (32, 5, 3), (32, 5, 6))


def build_patch_dictionary(patch_side: int, channels: int = 1,
                           random_fills: int = 8, seed: int = 0
                           ) -> list[tuple[str, np.ndarray]]:
    """Named patch contents: zeros, ones, checkerboard, and seeded noise."""
    if patch_side < 1:
        raise ValueError("patch side must be at least 1")
    shape = (patch_side, patch_side, channels)
    ii, jj = np.meshgrid(np.arange(patch_side), np.arange(patch_side), indexing="ij")
    checker = ((ii + jj) % 2).astype(np.float64)[..., None] * np.ones(channels)
    fills: list[tuple[str, np.ndarray]] = [
        ("zeros", np.zeros(shape)),
        ("ones", np.ones(shape)),
        ("checker", checker),
    ]
    for r in range(random_fills):
        rng = np.random.default_rng(seed + r)
        fills.append((f"rand{r}", rng.random(shape)))
    return fills


def exhaustive_worst_pair(image: np.ndarray, label: int, classifier: Classifier,
                          mask_set: MaskSet, fill: float = 0.0
                          ) -> tuple[tuple[int, int], float, int]:
    """Re-derive the worst-loss unordered mask pair by direct enumeration.

    Runs one uncached forward per combination (diagonal included) and keeps
    the lexicographically smallest argmax.  Returns (pair, loss, passes).
    """
    best_pair = (0, 0)
    best_loss = -np.inf
    passes = 0
    for i, j in combinations_with_replacement(range(len(mask_set)), 2):
        rects = [mask_set.masks[i]] if i == j else [mask_set.masks[i], mask_set.masks[j]]
        probs = classifier.predict(apply_masks(image, rects, fill=fill))
        passes += 1
        loss = cross_entropy(probs, label)
        if loss > best_loss:
            best_loss = loss
            best_pair = (i, j)
    return best_pair, best_loss, passes


@dataclass
class AttackViolation:
    patch_x: int
    patch_y: int
    fill_name: str
    defended_label: int
    true_label: int


@dataclass
class AttackReport:
    violations: list[AttackViolation]
    variants_checked: int
    covered_prediction_mismatches: int
    locations: int
    fills: int

    @property
    def sound(self) -> bool:
        return not self.violations and self.covered_prediction_mismatches == 0


def _patched_variants(image: np.ndarray, fill_content: np.ndarray,
                      p: int) -> np.ndarray:
    """All (n-p+1)^2 copies of ``image`` with the patch pasted at each location."""
    n = image.shape[0]
    span = n - p + 1
    out = np.repeat(image[None, ...], span * span, axis=0)
    v = 0
    for ty in range(span):
        for tx in range(span):
            out[v, ty : ty + p, tx : tx + p, :] = fill_content
            v += 1
    return out


def attack_simulate(image: np.ndarray, label: int, classifier: Classifier,
                    mask_set: MaskSet, patch_side: int,
                    dictionary: list[tuple[str, np.ndarray]],
                    fill: float = 0.0, fast: bool = True) -> AttackReport:
    """Run defended inference on every (location, fill) patched variant.

    Reports each variant whose defended prediction differs from ``label``,
    and counts bitwise mismatches between predictions on patched and clean
    masked copies wherever a mask fully covers the patch (there must be
    none: masking is content-independent).

    The fast path batches the unanimous-first-round case, which is
    bit-identical to per-variant inference because the classifier's chunked
    forward makes predictions depend only on the masked image content.
    """
    n = mask_set.n
    if image.shape[0] != n or image.shape[1] != n:
        raise ValueError(f"image {image.shape} does not match mask set side {n}")
    if patch_side > n:
        raise ValueError(f"patch side {patch_side} exceeds image side {n}")
    span = n - patch_side + 1
    masks = mask_set.masks
    k2 = len(masks)

    clean_probs = classifier.predict_batch(
        np.stack([apply_masks(image, [m], fill=fill) for m in masks])
    )

    # covers[v, m]: mask m fully contains the patch at variant v's location
    covers = np.zeros((span * span, k2), dtype=bool)
    v = 0
    for ty in range(span):
        for tx in range(span):
            for mi, rect in enumerate(masks):
                covers[v, mi] = rect.contains_patch(tx, ty, patch_side)
            v += 1

    violations: list[AttackViolation] = []
    mismatches = 0
    variants = 0

    for fill_name, content in dictionary:
        if fast:
            batch = _patched_variants(image, content, patch_side)
            probs_per_mask = []
            for rect in masks:
                # mask in place, then restore the window: much cheaper than
                # copying the whole variant stack per mask
                window = (slice(None), slice(rect.y0, rect.y1),
                          slice(rect.x0, rect.x1), slice(None))
                saved = batch[window].copy()
                batch[window] = fill
                probs_per_mask.append(classifier.predict_batch(batch))
                batch[window] = saved
            # (V, k2, classes)
            all_probs = np.stack(probs_per_mask, axis=1)
            one_labels = np.argmax(all_probs, axis=2)
            unanimous = (one_labels == one_labels[:, :1]).all(axis=1)

            for vi in range(span * span):
                variants += 1
                for mi in range(k2):
                    if covers[vi, mi] and not np.array_equal(
                        all_probs[vi, mi], clean_probs[mi]
                    ):
                        mismatches += 1
                if unanimous[vi]:
                    defended = int(one_labels[vi, 0])
                else:
                    cache = CachedClassifier(classifier)
                    image_id = cache.register(batch[vi])
                    defended = double_masking_infer(cache, image_id, mask_set,
                                                    fill=fill).label
                if defended != label:
                    violations.append(AttackViolation(
                        patch_x=vi % span, patch_y=vi // span,
                        fill_name=fill_name, defended_label=defended,
                        true_label=label,
                    ))
        else:
            for ty in range(span):
                for tx in range(span):
                    variants += 1
                    patched = image.copy()
                    patched[ty : ty + patch_side, tx : tx + patch_side, :] = content
                    cache = CachedClassifier(classifier)
                    image_id = cache.register(patched)
                    vi = ty * span + tx
                    one_probs = cache.predict_many(
                        image_id, [[m] for m in masks], fill=fill
                    )
                    for mi in range(k2):
                        if covers[vi, mi] and not np.array_equal(
                            one_probs[mi], clean_probs[mi]
                        ):
                            mismatches += 1
                    defended = double_masking_infer(cache, image_id, mask_set,
                                                    fill=fill).label
                    if defended != label:
                        violations.append(AttackViolation(
                            patch_x=tx, patch_y=ty, fill_name=fill_name,
                            defended_label=defended, true_label=label,
                        ))

    violations.sort(key=lambda w: (w.patch_y, w.patch_x, w.fill_name))
    return AttackReport(
        violations=violations, variants_checked=variants,
        covered_prediction_mismatches=mismatches,
        locations=span * span, fills=len(dictionary),
    )


@dataclass
class MutationCheckResult:
    passed: bool
    details: list[str] = field(default_factory=list)


def covering_mutation_check(
    configs: tuple[tuple[int, int, int], ...] = STANDARD_COVERING_CONFIGS
) -> MutationCheckResult:
    """Negative/positive control for the covering verifier.

    For each configuration the unmodified set must cover, shrinking every
    mask by one pixel must break coverage, and growing every mask by one
    pixel (clamped to the image) must keep it.
    """
    details = []
    passed = True
    for n, p, k in configs:
        ms = build_mask_set(n, p, k)
        if covering_witness(ms.masks, n, p) is not None:
            passed = False
            details.append(f"(n={n}, p={p}, k={k}): unmodified set fails covering")
            continue
        shrunk = [MaskRect(r.x0, r.y0, r.w - 1, r.h - 1) for r in ms.masks]
        if covering_witness(shrunk, n, p) is None:
            passed = False
            details.append(f"(n={n}, p={p}, k={k}): shrunken masks still cover")
        grown = []
        for r in ms.masks:
            side = min(r.w + 1, n)
            grown.append(MaskRect(min(r.x0, n - side), min(r.y0, n - side), side, side))
        if covering_witness(grown, n, p) is not None:
            passed = False
            details.append(f"(n={n}, p={p}, k={k}): enlarged masks fail covering")
    return MutationCheckResult(passed=passed, details=details)
