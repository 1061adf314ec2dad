"""SGD fine-tuning with pluggable mask-selection augmentation.

Each batch runs the configured strategy against a frozen snapshot of the
current weights to produce one or two masked copies per image, then takes a
momentum-SGD step on the mean cross-entropy over those copies only.  The
learning rate drops by a fixed factor at the epoch midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cache import CachedClassifier
from .data import LabeledDataset
from .masks import (
    MaskSet,
    NestingMap,
    build_mask_set,
    build_nesting_map,
    patch_side_from_fraction,
)
from .models import MlpModel, mlp_backward, saliency_from_gradient
from .strategies import (
    StrategyOutcome,
    grid_search,
    greedy_cutout,
    multisize_greedy,
    rand_cert,
    random_cutout,
    saliency_cutout,
)

STRATEGY_NAMES = (
    "none", "random", "rand3", "rand6", "rand",
    "saliency", "greedy3", "greedy6", "multisize", "grid3", "grid6",
)


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.01
    momentum: float = 0.9
    lr_drop_factor: float = 10.0
    batch_size: int = 16
    seed: int = 0
    strategy: str = "none"
    patch_side: int | None = None
    fill: float = 0.0
    cutout_side: int | None = None
    cutout_count: int = 2
    saliency_k: int = 3
    include_clean: bool = False
    frozen_reference: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.strategy not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.strategy!r}; pick from {STRATEGY_NAMES}")


@dataclass
class StrategyContext:
    """Mask sets and parameters resolved once for a (strategy, geometry) pair."""

    name: str
    fill: float = 0.0
    coarse: MaskSet | None = None
    fine: MaskSet | None = None
    nesting: NestingMap | None = None
    cutout_side: int | None = None
    cutout_count: int = 2

    @property
    def needs_classifier(self) -> bool:
        return self.name in ("saliency", "greedy3", "greedy6", "multisize", "grid3", "grid6")

    @property
    def copies_per_image(self) -> int:
        if self.name == "none":
            return 1
        return 2 if self.name in ("rand", "multisize") else 1


def build_strategy_context(name: str, n: int, patch_side: int,
                           fill: float = 0.0, cutout_side: int | None = None,
                           cutout_count: int = 2, saliency_k: int = 3) -> StrategyContext:
    """Prepare the mask sets a strategy needs on an n x n image."""
    if name not in STRATEGY_NAMES:
        raise ValueError(f"unknown strategy {name!r}")
    ctx = StrategyContext(name=name, fill=fill,
                          cutout_side=cutout_side, cutout_count=cutout_count)
    if name in ("rand3", "greedy3", "grid3"):
        ctx.coarse = build_mask_set(n, patch_side, 3)
    elif name in ("rand6", "greedy6", "grid6"):
        ctx.coarse = build_mask_set(n, patch_side, 6)
    elif name == "saliency":
        ctx.coarse = build_mask_set(n, patch_side, saliency_k)
    elif name in ("rand", "multisize"):
        ctx.coarse = build_mask_set(n, patch_side, 3)
        ctx.fine = build_mask_set(n, patch_side, 6)
        if name == "multisize":
            ctx.nesting = build_nesting_map(ctx.coarse, ctx.fine)
    return ctx


def run_strategy(ctx: StrategyContext, image: np.ndarray, label: int,
                 rng: np.random.Generator,
                 cache: CachedClassifier | None = None, image_id=None,
                 saliency: np.ndarray | None = None) -> StrategyOutcome | None:
    """Dispatch one image through the configured strategy; None means clean."""
    if ctx.name == "none":
        return None
    if ctx.name == "random":
        return random_cutout(image, rng, side=ctx.cutout_side,
                             count=ctx.cutout_count, fill=ctx.fill)
    if ctx.name in ("rand3", "rand6"):
        return rand_cert(image, rng, [ctx.coarse], fill=ctx.fill)
    if ctx.name == "rand":
        return rand_cert(image, rng, [ctx.coarse, ctx.fine], fill=ctx.fill)
    if ctx.name == "saliency":
        if saliency is None:
            raise ValueError("saliency strategy needs a saliency map")
        return saliency_cutout(image, saliency, ctx.coarse, fill=ctx.fill)
    if cache is None or image_id is None:
        raise ValueError(f"strategy {ctx.name} needs a classifier cache")
    if ctx.name in ("greedy3", "greedy6"):
        return greedy_cutout(cache, image_id, label, ctx.coarse, fill=ctx.fill)
    if ctx.name == "multisize":
        return multisize_greedy(cache, image_id, label,
                                ctx.coarse, ctx.fine, ctx.nesting, fill=ctx.fill)
    if ctx.name in ("grid3", "grid6"):
        return grid_search(cache, image_id, label, ctx.coarse, fill=ctx.fill)
    raise AssertionError(f"unhandled strategy {ctx.name}")


@dataclass
class EpochLog:
    epoch: int
    lr: float
    mean_loss: float
    scheduled_passes: int
    unique_passes: int
    loss_terms: int = 0


@dataclass
class TrainResult:
    model: MlpModel
    epochs: list[EpochLog] = field(default_factory=list)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr if epoch < cfg.epochs // 2 else cfg.lr / cfg.lr_drop_factor


def train(model: MlpModel, dataset: LabeledDataset, cfg: TrainConfig) -> TrainResult:
    """Momentum-SGD over strategy-augmented copies; deterministic per seed.

    The input model is not mutated.  When a masking strategy is active the
    loss covers the masked copies only (plus the clean image if
    ``include_clean`` is set).  Classifier-guided strategies evaluate a
    per-batch snapshot of the current weights, or the initial weights
    throughout when ``frozen_reference`` is set (ablation mode).
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    img_shape = dataset.images.shape[1:]
    if img_shape != (model.height, model.width, model.channels):
        raise ValueError(f"dataset images {img_shape} do not match model "
                         f"({model.height}, {model.width}, {model.channels})")

    n_side = model.height
    patch_side = cfg.patch_side
    if patch_side is None:
        patch_side = patch_side_from_fraction(model.width, model.height, 0.03)
    ctx = build_strategy_context(
        cfg.strategy, n_side, patch_side, fill=cfg.fill,
        cutout_side=cfg.cutout_side, cutout_count=cfg.cutout_count,
        saliency_k=cfg.saliency_k,
    )

    reference = model.copy() if cfg.frozen_reference else None
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(getattr(model, name))
                for name in ("w1", "b1", "w2", "b2")}
    logs: list[EpochLog] = []

    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(len(dataset))
        loss_sum, copy_count = 0.0, 0
        scheduled, unique = 0, 0

        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            snapshot = None
            if ctx.needs_classifier:
                snapshot = reference if reference is not None else model.copy()
            cache = CachedClassifier(snapshot) if snapshot is not None else None

            copies: list[tuple[np.ndarray, int]] = []
            for idx in batch:
                image = dataset.images[idx]
                label = int(dataset.labels[idx])
                image_id = None
                saliency = None
                if cache is not None:
                    image_id = cache.register(image, image_id=int(idx))
                if ctx.name == "saliency":
                    saliency = saliency_from_gradient(snapshot, image, label)
                outcome = run_strategy(ctx, image, label, rng,
                                       cache=cache, image_id=image_id,
                                       saliency=saliency)
                if outcome is None:
                    copies.append((image, label))
                else:
                    copies.extend((aug, label) for aug in outcome.images)
                    if cfg.include_clean:
                        copies.append((image, label))
                    scheduled += outcome.scheduled_evaluations
                    unique += outcome.unique_evaluations

            grad_sums = {name: np.zeros_like(getattr(model, name))
                         for name in ("w1", "b1", "w2", "b2")}
            for aug, label in copies:
                g = mlp_backward(model, aug, label)
                loss_sum += g.loss
                for name in grad_sums:
                    grad_sums[name] += getattr(g, name)
            copy_count += len(copies)

            scale = 1.0 / len(copies)
            for name, vel in velocity.items():
                vel *= cfg.momentum
                vel += grad_sums[name] * scale
                getattr(model, name)[...] -= lr * vel

        logs.append(EpochLog(
            epoch=epoch, lr=lr, mean_loss=loss_sum / copy_count,
            scheduled_passes=scheduled, unique_passes=unique,
            loss_terms=copy_count,
        ))
    return TrainResult(model=model, epochs=logs)
