"""Covering mask sets: construction, verification, nesting, and application.

A mask set places k x k square masks on an n x n image so that every p x p
patch fully inside the image is contained in at least one mask.  The stride
and mask side follow from (n, p, k):

    s = ceil((n - p + 1) / k),   mask side = s + p - 1

with the last per-axis offset clamped to n - mask_side so masks stay inside
the image.  At n=224, p=39 this yields the 100 px (k=3) and 69 px (k=6)
masks used throughout the defense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class InfeasibleMaskConfigError(ValueError):
    """Raised when (n, p, k) would require masks larger than the image."""


class NestingUnavailableError(ValueError):
    """Raised when a coarse mask cannot be covered by 2 fine offsets per axis."""


@dataclass(frozen=True, order=True)
class MaskRect:
    """Axis-aligned rectangle of masked-out pixels, in pixel units."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"mask must have positive extent, got {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"mask origin must be non-negative, got {self}")

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    def contains(self, other: "MaskRect") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and self.x1 >= other.x1
            and self.y1 >= other.y1
        )

    def contains_patch(self, tx: int, ty: int, p: int) -> bool:
        """True if the p x p patch with top-left (tx, ty) lies inside this mask."""
        return self.x0 <= tx and self.y0 <= ty and tx + p <= self.x1 and ty + p <= self.y1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.w, self.h)


def clip_rect(x0: int, y0: int, w: int, h: int, width: int, height: int) -> MaskRect | None:
    """Clip a rectangle to image bounds; None if the intersection is empty."""
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x0 + w, width), min(y0 + h, height)
    if cx1 <= cx0 or cy1 <= cy0:
        return None
    return MaskRect(cx0, cy0, cx1 - cx0, cy1 - cy0)


@dataclass(frozen=True)
class MaskSet:
    """k x k grid of square masks covering every p x p patch on an n x n image.

    ``positions`` holds the shared per-axis offsets; ``masks`` lists the
    k*k rectangles row-major, so mask id = row * k + col with row indexing
    the y offset and col the x offset.  ``k`` is the effective per-axis
    count after clamp-induced duplicates are removed.
    """

    n: int
    p: int
    k: int
    s: int
    m: int
    positions: tuple[int, ...]
    masks: tuple[MaskRect, ...]

    def __len__(self) -> int:
        return len(self.masks)

    def mask(self, mask_id: int) -> MaskRect:
        return self.masks[mask_id]


def patch_side_from_fraction(width: int, height: int, fraction: float) -> int:
    """Smallest square side whose area is at least ``fraction`` of the image."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    return math.ceil(math.sqrt(fraction * width * height))


def _grid_masks(positions: tuple[int, ...], m: int) -> tuple[MaskRect, ...]:
    return tuple(
        MaskRect(x0=px, y0=py, w=m, h=m) for py in positions for px in positions
    )


def build_mask_set(n: int, p: int, k: int) -> MaskSet:
    """Construct the k x k covering mask set for patch side p on an n x n image."""
    if n < 1:
        raise ValueError(f"image side must be positive, got {n}")
    if not 1 <= p <= n:
        raise ValueError(f"patch side must be in [1, {n}], got {p}")
    if k < 1:
        raise ValueError(f"masks per axis must be at least 1, got {k}")
    s = math.ceil((n - p + 1) / k)
    m = s + p - 1
    if m > n:
        raise InfeasibleMaskConfigError(
            f"mask side {m} exceeds image side {n} for (n={n}, p={p}, k={k})"
        )
    positions = sorted({min(i * s, n - m) for i in range(k)})
    mask_set = MaskSet(
        n=n, p=p, k=len(positions), s=s, m=m,
        positions=tuple(positions), masks=_grid_masks(tuple(positions), m),
    )
    ok, witness = verify_r_covering(mask_set, p)
    if not ok:  # unreachable for the formula above; guards future edits
        raise InfeasibleMaskConfigError(
            f"constructed set fails covering at patch {witness} for (n={n}, p={p}, k={k})"
        )
    return mask_set


def covering_witness(
    rects: list[MaskRect] | tuple[MaskRect, ...], n: int, p: int
) -> tuple[int, int] | None:
    """Brute-force scan of all (n-p+1)^2 patch placements against a rect list.

    Returns the first uncovered patch top-left (tx, ty) scanning ty then tx,
    or None when every placement is contained in some rectangle.
    """
    if p > n:
        raise ValueError(f"patch side {p} exceeds image side {n}")
    span = n - p + 1
    covered = np.zeros((span, span), dtype=bool)
    for r in rects:
        if r.w < p or r.h < p:
            continue
        x_lo, x_hi = max(r.x0, 0), min(r.x1 - p, span - 1)
        y_lo, y_hi = max(r.y0, 0), min(r.y1 - p, span - 1)
        if x_lo <= x_hi and y_lo <= y_hi:
            covered[y_lo : y_hi + 1, x_lo : x_hi + 1] = True
    if covered.all():
        return None
    ty, tx = np.unravel_index(int(np.argmin(covered)), covered.shape)
    return (int(tx), int(ty))


def verify_r_covering(mask_set: MaskSet, p: int) -> tuple[bool, tuple[int, int] | None]:
    """Check that every p x p patch inside the image is inside some mask."""
    witness = covering_witness(mask_set.masks, mask_set.n, p)
    return witness is None, witness


@dataclass(frozen=True)
class NestingMap:
    """For each coarse mask id, the 4 fine mask ids whose union contains it."""

    fine_ids: tuple[tuple[int, int, int, int], ...]

    def __getitem__(self, coarse_id: int) -> tuple[int, int, int, int]:
        return self.fine_ids[coarse_id]

    def __len__(self) -> int:
        return len(self.fine_ids)


def _axis_cover_pair(c_start: int, c_len: int, fine: MaskSet) -> tuple[int, int]:
    """Indices of the tightest gapless fine-offset pair covering [c_start, c_start+c_len)."""
    c_end = c_start + c_len
    left = [i for i, f in enumerate(fine.positions) if f <= c_start]
    right = [i for i, f in enumerate(fine.positions) if f + fine.m >= c_end]
    if not left or not right:
        raise NestingUnavailableError(
            f"no fine offsets bracket coarse interval [{c_start}, {c_end})"
        )
    a, b = left[-1], right[0]
    lo, hi = min(a, b), max(a, b)
    if fine.positions[hi] > fine.positions[lo] + fine.m:
        raise NestingUnavailableError(
            f"fine offsets {fine.positions[lo]} and {fine.positions[hi]} leave a gap "
            f"over coarse interval [{c_start}, {c_end})"
        )
    return lo, hi


def build_nesting_map(coarse: MaskSet, fine: MaskSet) -> NestingMap:
    """Map each coarse mask to the 4 fine masks (2 offsets per axis) covering it.

    Entries may repeat when one fine offset suffices on an axis (e.g. when
    coarse and fine are the same set each mask maps to itself four times).
    """
    if (coarse.n, coarse.p) != (fine.n, fine.p):
        raise ValueError(
            f"mask sets disagree on geometry: ({coarse.n}, {coarse.p}) vs ({fine.n}, {fine.p})"
        )
    entries = []
    for rect in coarse.masks:
        ya, yb = _axis_cover_pair(rect.y0, rect.h, fine)
        xa, xb = _axis_cover_pair(rect.x0, rect.w, fine)
        ids = (
            ya * fine.k + xa,
            ya * fine.k + xb,
            yb * fine.k + xa,
            yb * fine.k + xb,
        )
        if not _union_contains(rect, [fine.masks[i] for i in ids]):
            raise NestingUnavailableError(f"fine union fails to contain coarse mask {rect}")
        entries.append(ids)
    return NestingMap(fine_ids=tuple(entries))


def _union_contains(target: MaskRect, parts: list[MaskRect]) -> bool:
    """Pixel-exact containment of ``target`` in the union of ``parts``."""
    canvas = np.zeros((target.h, target.w), dtype=bool)
    for r in parts:
        x0, x1 = max(r.x0, target.x0), min(r.x1, target.x1)
        y0, y1 = max(r.y0, target.y0), min(r.y1, target.y1)
        if x0 < x1 and y0 < y1:
            canvas[y0 - target.y0 : y1 - target.y0, x0 - target.x0 : x1 - target.x0] = True
    return bool(canvas.all())


def apply_masks(image: np.ndarray, masks: list[MaskRect] | tuple[MaskRect, ...],
                fill: float = 0.0) -> np.ndarray:
    """Return a copy of ``image`` with every masked pixel set to ``fill``.

    ``image`` is (H, W) or (H, W, C) with values in [0, 1]; all channels of a
    masked pixel are overwritten.  Masks must already lie inside the image.
    """
    if image.ndim not in (2, 3):
        raise ValueError(f"image must be 2-D or 3-D, got shape {image.shape}")
    height, width = image.shape[0], image.shape[1]
    out = image.copy()
    for r in masks:
        if r.x1 > width or r.y1 > height:
            raise ValueError(f"mask {r} exceeds image bounds {width}x{height}")
        out[r.y0 : r.y1, r.x0 : r.x1, ...] = fill
    return out


def canonical_combo_key(masks: list[MaskRect] | tuple[MaskRect, ...],
                        fill: float = 0.0) -> tuple:
    """Deterministic key equal for mask lists that produce the same masked image.

    Rectangles contained in another are dropped, duplicates collapse, and the
    remainder is sorted, so key equality is preserved under reordering and
    absorption.
    """
    unique = {r.as_tuple(): r for r in masks}
    rects = list(unique.values())
    kept = [
        r for r in rects
        if not any(o is not r and o.contains(r) for o in rects)
    ]
    return (tuple(sorted(r.as_tuple() for r in kept)), float(fill))


def save_mask_set(mask_set: MaskSet, path: str | Path) -> None:
    """Write the line-oriented descriptor: header ``n p k s m``, then offsets."""
    lines = [f"{mask_set.n} {mask_set.p} {mask_set.k} {mask_set.s} {mask_set.m}"]
    lines.extend(str(pos) for pos in mask_set.positions)
    Path(path).write_text("\n".join(lines) + "\n")


def load_mask_set(path: str | Path) -> MaskSet:
    """Read a descriptor written by :func:`save_mask_set`; round-trips bit-exactly."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"empty mask-set descriptor: {path}")
    header = lines[0].split()
    if len(header) != 5:
        raise ValueError(f"descriptor header must have 5 fields, got {lines[0]!r}")
    n, p, k, s, m = (int(v) for v in header)
    positions = tuple(int(ln) for ln in lines[1:])
    if len(positions) != k:
        raise ValueError(f"descriptor lists {len(positions)} offsets, header says k={k}")
    if m != s + p - 1:
        raise ValueError(f"descriptor mask side {m} inconsistent with stride {s}, patch {p}")
    if list(positions) != sorted(set(positions)):
        raise ValueError("descriptor offsets must be strictly increasing")
    if positions and (positions[0] < 0 or positions[-1] + m > n):
        raise ValueError("descriptor offsets place masks outside the image")
    return MaskSet(n=n, p=p, k=k, s=s, m=m, positions=positions,
                   masks=_grid_masks(positions, m))
