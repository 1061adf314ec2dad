"""Train-time mask selection strategies.

All strategies return a :class:`StrategyOutcome` holding one or two augmented
images, the masks that produced them, and exact forward-pass accounting.
Ties on equal loss always resolve to the smallest mask id (lexicographic for
pairs), so every strategy is reproducible bit-for-bit under a fixed seed and
classifier.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cache import CachedClassifier
from .masks import MaskRect, MaskSet, NestingMap, apply_masks, clip_rect
from .models import cross_entropy


@dataclass
class StrategyOutcome:
    """Augmented images with their mask provenance and pass counts.

    ``losses[i]`` is the cross-entropy the strategy measured when committing
    to image i's masks (None for strategies that never query the classifier).
    The two-round coarse-to-fine strategy reports its round-2 selection
    losses, since it never evaluates its first output combination directly.
    """

    name: str
    images: list[np.ndarray]
    mask_lists: list[list[MaskRect]]
    mask_ids: list[list[int] | None]
    losses: list[float | None]
    scheduled_evaluations: int = 0
    unique_evaluations: int = 0
    extras: dict = field(default_factory=dict)


def _argmax_first(losses: list[float]) -> int:
    """Index of the maximum, first occurrence winning ties.

    Entries are scanned in ascending index order, which makes the reduction
    order-independent: the winner is the smallest index among the maxima.
    """
    best = 0
    for i in range(1, len(losses)):
        if losses[i] > losses[best]:
            best = i
    return best


def _losses(cache: CachedClassifier, image_id, label: int,
            combos: list[list[MaskRect]], fill: float) -> list[float]:
    probs = cache.predict_many(image_id, combos, fill=fill)
    return [cross_entropy(p, label) for p in probs]


def random_cutout(image: np.ndarray, rng: np.random.Generator,
                  side: int | None = None, count: int = 2,
                  fill: float = 0.0) -> StrategyOutcome:
    """Classic random cutout: ``count`` square masks at uniform random centers.

    Mask centers may fall near the border, in which case the square is
    clipped to the image.  The default side scales the reference 128-on-224
    ratio to this image.  Costs zero classifier evaluations.
    """
    height, width = image.shape[0], image.shape[1]
    if side is None:
        side = round(128 / 224 * height)
    if side < 1:
        raise ValueError(f"cutout side must be at least 1, got {side}")
    rects = []
    for _ in range(count):
        cx = int(rng.integers(0, width))
        cy = int(rng.integers(0, height))
        rect = clip_rect(cx - side // 2, cy - side // 2, side, side, width, height)
        if rect is not None:
            rects.append(rect)
    return StrategyOutcome(
        name="random", images=[apply_masks(image, rects, fill=fill)],
        mask_lists=[rects], mask_ids=[None], losses=[None],
    )


def rand_cert(image: np.ndarray, rng: np.random.Generator,
              sets: list[MaskSet] | tuple[MaskSet, ...],
              fill: float = 0.0) -> StrategyOutcome:
    """Two masks sampled uniformly (with replacement) from each given set.

    One augmented image per mask set: passing both the coarse and fine sets
    yields two images and thereby doubles the batch contribution.
    """
    if not sets:
        raise ValueError("rand_cert needs at least one mask set")
    images, mask_lists, mask_ids = [], [], []
    for ms in sets:
        ids = [int(rng.integers(0, len(ms))) for _ in range(2)]
        rects = [ms.masks[i] for i in ids]
        images.append(apply_masks(image, rects, fill=fill))
        mask_lists.append(rects)
        mask_ids.append(ids)
    return StrategyOutcome(
        name="rand_cert", images=images, mask_lists=mask_lists,
        mask_ids=mask_ids, losses=[None] * len(images),
    )


def saliency_cutout(image: np.ndarray, saliency: np.ndarray, mask_set: MaskSet,
                    fill: float = 0.0) -> StrategyOutcome:
    """Mask the two most salient grid cells, greedily over two rounds.

    Round 1 picks the mask with the largest saliency mass inside it; the
    saliency under that mask is then zeroed and round 2 picks the best of
    the remaining masks.  Zero classifier evaluations.
    """
    height, width = image.shape[0], image.shape[1]
    if saliency.shape != (height, width):
        raise ValueError(f"saliency shape {saliency.shape} != image plane ({height}, {width})")

    def mass(sal, rect):
        return float(sal[rect.y0 : rect.y1, rect.x0 : rect.x1].sum())

    first = _argmax_first([mass(saliency, r) for r in mask_set.masks])
    remaining = saliency.copy()
    r1 = mask_set.masks[first]
    remaining[r1.y0 : r1.y1, r1.x0 : r1.x1] = 0.0
    candidates = [i for i in range(len(mask_set)) if i != first]
    second = candidates[_argmax_first([mass(remaining, mask_set.masks[i]) for i in candidates])]
    rects = [mask_set.masks[first], mask_set.masks[second]]
    return StrategyOutcome(
        name="saliency", images=[apply_masks(image, rects, fill=fill)],
        mask_lists=[rects], mask_ids=[[first, second]], losses=[None],
    )


def greedy_cutout(cache: CachedClassifier, image_id, label: int, mask_set: MaskSet,
                  fill: float = 0.0) -> StrategyOutcome:
    """Two-round greedy approximation of the worst-case mask pair.

    Round 1 evaluates every one-mask image and keeps the highest-loss mask;
    round 2 evaluates that mask paired with every other mask.  Exactly
    2*k^2 - 1 unique passes on a fresh cache.
    """
    k2 = len(mask_set)
    sched0, uniq0 = cache.counters()
    image = cache.image(image_id)

    one_losses = _losses(cache, image_id, label, [[m] for m in mask_set.masks], fill)
    first = _argmax_first(one_losses)
    r1 = mask_set.masks[first]

    if k2 == 1:
        warnings.warn(
            "greedy cutout on a single-mask set degenerates to one mask",
            RuntimeWarning, stacklevel=2,
        )
        sched1, uniq1 = cache.counters()
        return StrategyOutcome(
            name="greedy", images=[apply_masks(image, [r1], fill=fill)],
            mask_lists=[[r1]], mask_ids=[[first]], losses=[one_losses[first]],
            scheduled_evaluations=sched1 - sched0, unique_evaluations=uniq1 - uniq0,
        )

    partners = [i for i in range(k2) if i != first]
    pair_losses = _losses(
        cache, image_id, label,
        [[r1, mask_set.masks[i]] for i in partners], fill,
    )
    pick = _argmax_first(pair_losses)
    second = partners[pick]
    rects = [r1, mask_set.masks[second]]
    sched1, uniq1 = cache.counters()
    return StrategyOutcome(
        name="greedy", images=[apply_masks(image, rects, fill=fill)],
        mask_lists=[rects], mask_ids=[[first, second]],
        losses=[pair_losses[pick]],
        scheduled_evaluations=sched1 - sched0, unique_evaluations=uniq1 - uniq0,
        extras={"round1_losses": one_losses},
    )


def multisize_greedy(cache: CachedClassifier, image_id, label: int,
                     coarse: MaskSet, fine: MaskSet, nesting: NestingMap,
                     fill: float = 0.0) -> StrategyOutcome:
    """Coarse-to-fine two-round greedy masking; 13 + 13 scheduled passes.

    Round 1 finds the worst coarse mask, then the worst of the 4 fine masks
    nested under it.  Round 2 repeats both searches on the image already
    carrying that fine mask.  Returns two augmented images: the coarse pair
    and the fine pair.  The coarse-then-fine evaluation of the round-1 winner
    collapses in the cache, so unique passes are at most 26 (25 in generic
    position).
    """
    if len(nesting) != len(coarse):
        raise ValueError(
            f"nesting map covers {len(nesting)} coarse masks, set has {len(coarse)}"
        )
    sched0, uniq0 = cache.counters()
    image = cache.image(image_id)

    coarse_losses = _losses(cache, image_id, label, [[m] for m in coarse.masks], fill)
    big = _argmax_first(coarse_losses)
    big_rect = coarse.masks[big]

    nested = nesting[big]
    nested_losses = _losses(
        cache, image_id, label, [[fine.masks[i]] for i in nested], fill
    )
    small = nested[_argmax_first(nested_losses)]
    small_rect = fine.masks[small]

    round2_losses = _losses(
        cache, image_id, label,
        [[small_rect, m] for m in coarse.masks], fill,
    )
    big2 = _argmax_first(round2_losses)
    big2_rect = coarse.masks[big2]

    nested2 = nesting[big2]
    nested2_losses = _losses(
        cache, image_id, label,
        [[small_rect, fine.masks[i]] for i in nested2], fill,
    )
    pick2 = _argmax_first(nested2_losses)
    small2 = nested2[pick2]
    small2_rect = fine.masks[small2]

    coarse_pair = [big_rect, big2_rect]
    fine_pair = [small_rect, small2_rect]
    sched1, uniq1 = cache.counters()
    return StrategyOutcome(
        name="multisize",
        images=[apply_masks(image, coarse_pair, fill=fill),
                apply_masks(image, fine_pair, fill=fill)],
        mask_lists=[coarse_pair, fine_pair],
        mask_ids=[[big, big2], [small, small2]],
        losses=[round2_losses[big2], nested2_losses[pick2]],
        scheduled_evaluations=sched1 - sched0, unique_evaluations=uniq1 - uniq0,
        extras={"coarse_first": big, "fine_first": small,
                "coarse_second": big2, "fine_second": small2},
    )


def grid_search(cache: CachedClassifier, image_id, label: int, mask_set: MaskSet,
                fill: float = 0.0) -> StrategyOutcome:
    """Exhaustive worst-case pair over all unordered combos, diagonal included.

    C(k^2, 2) + k^2 combinations; the diagonal entries reduce to one-mask
    images.  Ties resolve to the lexicographically smallest id pair.
    """
    k2 = len(mask_set)
    sched0, uniq0 = cache.counters()
    image = cache.image(image_id)

    pairs = [(i, j) for i in range(k2) for j in range(i, k2)]
    losses = _losses(
        cache, image_id, label,
        [[mask_set.masks[i], mask_set.masks[j]] for i, j in pairs], fill,
    )
    best = _argmax_first(losses)
    i, j = pairs[best]
    rects = [mask_set.masks[i]] if i == j else [mask_set.masks[i], mask_set.masks[j]]
    sched1, uniq1 = cache.counters()
    return StrategyOutcome(
        name="grid", images=[apply_masks(image, rects, fill=fill)],
        mask_lists=[rects], mask_ids=[[i, j]], losses=[losses[best]],
        scheduled_evaluations=sched1 - sched0, unique_evaluations=uniq1 - uniq0,
        extras={"pair": (i, j)},
    )
