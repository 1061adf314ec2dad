"""Double-masking defended inference, two-mask certification, and metrics.

Inference cases:

* I   - every one-mask prediction agrees: return the agreed label.
* II  - exactly one disagreeing (minority) mask has unanimous two-mask
        predictions: return that mask's label.
* III - otherwise: return the majority one-mask label.

An image certifies for its true label when every two-mask combination
(unordered, diagonal included) predicts that label; a certified image's
defended prediction is then provably correct under any single in-budget
patch, because some mask always erases the patch entirely.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cache import CachedClassifier
from .masks import MaskSet
from .models import Classifier

CASE_ONE = "I"
CASE_TWO = "II"
CASE_THREE = "III"


@dataclass
class InferenceResult:
    label: int
    case: str
    one_mask_labels: tuple[int, ...]
    unanimous_disagreers: int


@dataclass
class CertificationResult:
    certified: bool
    label: int
    combos_evaluated: int
    witness: tuple[int, int] | None


def _majority(labels: list[int], class_count: int) -> int:
    counts = np.bincount(labels, minlength=class_count)
    return int(np.argmax(counts))  # first max: smallest class id wins ties


def double_masking_infer(cache: CachedClassifier, image_id,
                         mask_set: MaskSet, fill: float = 0.0) -> InferenceResult:
    """Defended prediction by the two-round masking procedure."""
    masks = mask_set.masks
    one_probs = cache.predict_many(image_id, [[m] for m in masks], fill=fill)
    one_labels = [int(np.argmax(p)) for p in one_probs]

    if all(lbl == one_labels[0] for lbl in one_labels):
        return InferenceResult(one_labels[0], CASE_ONE, tuple(one_labels), 0)

    majority = _majority(one_labels, cache.class_count)
    unanimous: list[int] = []
    for m1, lbl in enumerate(one_labels):
        if lbl == majority:
            continue
        two_probs = cache.predict_many(
            image_id, [[masks[m1], m2] for m2 in masks], fill=fill
        )
        two_labels = [int(np.argmax(p)) for p in two_probs]
        if all(t == two_labels[0] for t in two_labels):
            unanimous.append(two_labels[0])

    if len(unanimous) == 1:
        return InferenceResult(unanimous[0], CASE_TWO, tuple(one_labels), 1)
    return InferenceResult(majority, CASE_THREE, tuple(one_labels), len(unanimous))


def certify(cache: CachedClassifier, image_id, label: int, mask_set: MaskSet,
            fill: float = 0.0, early_exit: bool = True) -> CertificationResult:
    """Check every unordered two-mask combination against the true label.

    With ``early_exit`` the scan stops at the first failing group of
    combinations; the reported witness is the lexicographically smallest
    failing pair either way.  ``combos_evaluated`` counts scheduled combos.
    """
    masks = mask_set.masks
    k2 = len(masks)
    evaluated = 0
    witness = None
    for i in range(k2):
        combos = [[masks[i], masks[j]] for j in range(i, k2)]
        probs = cache.predict_many(image_id, combos, fill=fill)
        evaluated += len(combos)
        for offset, p in enumerate(probs):
            if int(np.argmax(p)) != label:
                witness = (i, i + offset)
                break
        if witness is not None:
            if early_exit:
                return CertificationResult(False, label, evaluated, witness)
            break
    if witness is not None:
        # full-enumeration mode still visits every combination for accounting
        for i2 in range(witness[0] + 1, k2):
            combos = [[masks[i2], masks[j]] for j in range(i2, k2)]
            cache.predict_many(image_id, combos, fill=fill)
            evaluated += len(combos)
        return CertificationResult(False, label, evaluated, witness)
    return CertificationResult(True, label, evaluated, None)


@dataclass
class EvaluationReport:
    clean_accuracy: float
    certified_robust_accuracy: float
    cases: dict[str, int]
    unique_passes: int
    inferences: list[InferenceResult]
    certifications: list[CertificationResult]
    per_image_unique: list[int]


def evaluate(images: list[np.ndarray], labels: list[int], classifier: Classifier,
             mask_set: MaskSet, fill: float = 0.0, threads: int = 1,
             early_exit: bool = True) -> EvaluationReport:
    """Clean and certified accuracy of the defense over a labeled dataset.

    Every image gets a fresh cache, so per-image pass counts do not depend
    on dataset order or thread count.  Raises if the soundness relation
    (certified implies correct defended prediction) is ever violated.
    """
    if len(images) == 0:
        raise ValueError("evaluation dataset is empty")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")

    def one(idx: int):
        cache = CachedClassifier(classifier)
        image_id = cache.register(images[idx])
        inf = double_masking_infer(cache, image_id, mask_set, fill=fill)
        cert = certify(cache, image_id, int(labels[idx]), mask_set,
                       fill=fill, early_exit=early_exit)
        _, unique = cache.counters()
        return inf, cert, unique

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(images))))
    else:
        rows = [one(i) for i in range(len(images))]

    inferences = [r[0] for r in rows]
    certifications = [r[1] for r in rows]
    per_image_unique = [r[2] for r in rows]
    unique_total = sum(per_image_unique)

    clean_hits = 0
    cert_hits = 0
    cases = {CASE_ONE: 0, CASE_TWO: 0, CASE_THREE: 0}
    for inf, cert, y in zip(inferences, certifications, labels):
        cases[inf.case] += 1
        correct = inf.label == int(y)
        clean_hits += correct
        cert_hits += cert.certified
        if cert.certified and not correct:
            raise AssertionError(
                f"certified image defended incorrectly: got {inf.label}, want {int(y)}"
            )

    clean_acc = clean_hits / len(images)
    cert_acc = cert_hits / len(images)
    if cert_acc > clean_acc:
        raise AssertionError(
            f"certified accuracy {cert_acc} exceeds clean accuracy {clean_acc}"
        )
    return EvaluationReport(
        clean_accuracy=clean_acc, certified_robust_accuracy=cert_acc,
        cases=cases, unique_passes=unique_total,
        inferences=inferences, certifications=certifications,
        per_image_unique=per_image_unique,
    )
