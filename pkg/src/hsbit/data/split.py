"""Vertical three-way split of a scene into test / train / validation parts.

Background-only rows and columns at the borders are trimmed first, then the
remaining width is cut into three equal column blocks, assigned left to
right to test, train and validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SliceError
from .scene import BlobRegion, LabeledScene

PARTS = ("test", "train", "validation")


@dataclass
class SplitBounds:
    rows: tuple[int, int]
    cols: tuple[int, int]  # trimmed window, half-open
    cuts: tuple[int, int, int, int]  # column edges of the three parts

    def part_cols(self, part: str) -> tuple[int, int]:
        i = PARTS.index(part)
        return self.cuts[i], self.cuts[i + 1]


@dataclass
class SplitScene:
    test: LabeledScene
    train: LabeledScene
    validation: LabeledScene
    bounds: SplitBounds
    shape: tuple[int, int]
    margins: dict[str, tuple[np.ndarray, np.ndarray]]  # strip name -> (cube, truth)

    def part(self, name: str) -> LabeledScene:
        return getattr(self, name)


def split_bounds(truth: np.ndarray, n_parts: int = 3) -> SplitBounds:
    fg = np.asarray(truth) > 0
    if not fg.any():
        raise SliceError("scene has no foreground; nothing to split")
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    W = fg.shape[1]
    short = (-(c1 - c0)) % n_parts
    # widen into background margin first (right, then left); crop only if the image runs out
    grow_right = min(short, W - c1)
    c1 += grow_right
    grow_left = min(short - grow_right, c0)
    c0 -= grow_left
    c1 -= (c1 - c0) % n_parts
    width = (c1 - c0) // n_parts
    if width == 0:
        raise SliceError(f"trimmed width {c1 - c0} too narrow for {n_parts} parts")
    cuts = tuple(c0 + i * width for i in range(n_parts + 1))
    return SplitBounds((r0, r1), (c0, c1), cuts)


def _crop(scene: LabeledScene, rows, cols) -> LabeledScene:
    (r0, r1), (c0, c1) = rows, cols
    blobs = []
    for b in scene.blobs:
        keep = (b.rows >= r0) & (b.rows < r1) & (b.cols >= c0) & (b.cols < c1)
        if keep.any():
            blobs.append(BlobRegion(b.category, b.group, b.rows[keep] - r0, b.cols[keep] - c0))
    weights = None if scene.weights is None else scene.weights[r0:r1, c0:c1].copy()
    return LabeledScene(
        cube=scene.cube[r0:r1, c0:c1].copy(),
        truth=scene.truth[r0:r1, c0:c1].copy(),
        blobs=blobs,
        weights=weights,
    )


def _strips(b: SplitBounds) -> dict[str, tuple[slice, slice]]:
    (r0, r1), (c0, c1) = b.rows, b.cols
    return {
        "top": (slice(0, r0), slice(None)),
        "bottom": (slice(r1, None), slice(None)),
        "left": (slice(r0, r1), slice(0, c0)),
        "right": (slice(r0, r1), slice(c1, None)),
    }


def split_scene(scene: LabeledScene) -> SplitScene:
    """Cut ``scene`` into its (test, train, validation) column blocks."""
    b = split_bounds(scene.truth)
    parts = [_crop(scene, b.rows, (b.cuts[i], b.cuts[i + 1])) for i in range(3)]
    strips = _strips(b)
    margins = {k: (scene.cube[sl].copy(), scene.truth[sl].copy()) for k, sl in strips.items()}
    return SplitScene(*parts, bounds=b, shape=scene.truth.shape, margins=margins)


def reassemble(split: SplitScene) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild the full (cube, truth) from the three parts and the trimmed margins."""
    H, W = split.shape
    B = split.test.cube.shape[2]
    cube = np.empty((H, W, B), dtype=split.test.cube.dtype)
    truth = np.empty((H, W), dtype=split.test.truth.dtype)
    r0, r1 = split.bounds.rows
    strips = _strips(split.bounds)
    for k, sl in strips.items():
        cube[sl], truth[sl] = split.margins[k]
    for name in PARTS:
        p0, p1 = split.bounds.part_cols(name)
        cube[r0:r1, p0:p1] = split.part(name).cube
        truth[r0:r1, p0:p1] = split.part(name).truth
    return cube, truth
