"""Automatic mask annotation from a cube: blob detection plus morphology.

1. Foreground is where the band-mean reflectance exceeds an Otsu threshold
   computed on the band-mean image; a 3x3 closing fills pinholes.
2. Each foreground pixel gets a provisional category by nearest reference
   spectrum (pure signatures, and equal-weight mixes for overlaps).
3. Blobs are the 8-connected components of each provisional category.
   Every blob is relabelled from its *mean* spectrum, and blobs smaller than
   ``min_blob`` pixels are absorbed by their most common neighbour label.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from ..encoding import N_CATEGORIES
from .library import SpectralLibrary

EIGHT = np.ones((3, 3), dtype=bool)


def foreground_mask(cube: np.ndarray, closing: bool = True) -> np.ndarray:
    mean = cube.mean(axis=-1)
    if np.ptp(mean) <= 1e-6:
        return np.zeros(mean.shape, dtype=bool)
    fg = mean > threshold_otsu(mean)
    if closing:
        fg = ndimage.binary_closing(fg, structure=EIGHT, iterations=1, border_value=0)
    return fg


def references(library: SpectralLibrary) -> np.ndarray:
    """(7, B) reference spectra for categories 1..7."""
    return np.stack([library.reference(c) for c in range(1, N_CATEGORIES)])


def nearest_category(spectra: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Index in 1..7 of the closest reference (L2) for each row of ``spectra``."""
    d = (spectra**2).sum(axis=1)[:, None] - 2 * spectra @ refs.T + (refs**2).sum(axis=1)[None]
    return d.argmin(axis=1).astype(np.uint8) + 1


def annotate(cube: np.ndarray, library: SpectralLibrary, min_blob: int = 4) -> np.ndarray:
    """(H, W) powerset mask estimated from ``cube`` alone (plus reference spectra)."""
    cube = np.asarray(cube, dtype=np.float64)
    fg = foreground_mask(cube)
    labels = np.zeros(fg.shape, dtype=np.uint8)
    if not fg.any():
        return labels
    refs = references(library)
    labels[fg] = nearest_category(cube[fg], refs)

    for cat in range(1, N_CATEGORIES):
        comp, n = ndimage.label(labels == cat, structure=EIGHT)
        for idx, sl in enumerate(ndimage.find_objects(comp), start=1):
            if sl is None:
                continue
            region = comp[sl] == idx
            size = int(region.sum())
            if size < min_blob:
                # dilation is clipped to the bounding box, so grow it by one pixel first
                sl = tuple(slice(max(s.start - 1, 0), s.stop + 1) for s in sl)
                region = comp[sl] == idx
                ring = ndimage.binary_dilation(region, structure=EIGHT) & ~region
                neighbours = labels[sl][ring]
                neighbours = neighbours[neighbours != cat]
                if neighbours.size:
                    labels[sl][region] = np.bincount(neighbours, minlength=N_CATEGORIES).argmax()
                continue
            mean_spec = cube[sl][region].mean(axis=0)
            labels[sl][region] = nearest_category(mean_spec[None], refs)[0]
    return labels
