"""Synthetic conveyor-belt scenes with overlapping flakes.

A *group* is one primary flake, or two or three flakes stacked on top of
each other. Groups are placed without touching, each inside one of three
vertical column bands so that every band (and hence every slice after
splitting) sees a share of every category. Overlap pixels get a convex mix
of their constituents' signatures; the mixing weight is fixed per group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.draw import ellipse as draw_ellipse
from skimage.draw import polygon as draw_polygon

from .. import encoding
from ..encoding import K, N_CATEGORIES
from ..errors import ConfigError, GenerationError
from .library import SpectralLibrary

# blobs per category in the reference dataset, keyed by powerset index
REFERENCE_BLOB_COUNTS = {1: 8, 2: 8, 4: 9, 3: 2, 5: 3, 6: 3, 7: 3}
EXTRA_PRIMARY_COUNTS = {1: 8, 2: 8, 4: 7}
N_BANDS_SPLIT = 3


@dataclass
class SceneConfig:
    height: int = 208
    width: int = 264
    margin: int = 12
    counts: dict[int, int] = field(default_factory=lambda: dict(REFERENCE_BLOB_COUNTS))
    radius: tuple[float, float] = (9.0, 13.0)
    beta: tuple[float, float] = (0.35, 0.65)
    band_rotation: int = 0
    stratify: bool = True
    gap: int = 3
    max_attempts: int = 1000
    layouts: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.layouts < 1 or self.max_attempts < 1 or self.gap < 0:
            raise ConfigError("layouts and max_attempts must be positive and gap non-negative")
        if any(c < 0 for c in self.counts.values()):
            raise ConfigError(f"blob counts must be >= 0, got {self.counts}")
        if any(not 0 < k < N_CATEGORIES for k in self.counts):
            raise ConfigError(f"blob count keys must be non-background categories, got {sorted(self.counts)}")
        lo, hi = self.beta
        if not 0 < lo <= hi < 1:
            raise ConfigError(f"mixing range must lie inside (0, 1), got {self.beta}")
        if not 0 < self.radius[0] <= self.radius[1]:
            raise ConfigError(f"bad flake radius range {self.radius}")
        inner = self.width - 2 * self.margin
        if inner <= 0 or self.height - 2 * self.margin <= 0:
            raise ConfigError("margins leave no room for flakes")
        if self.stratify and inner % N_BANDS_SPLIT:
            raise ConfigError(f"interior width {inner} must be divisible by {N_BANDS_SPLIT}")

    def to_items(self) -> dict[str, str]:
        counts = ",".join(f"{encoding.format_bitfield(encoding.index_to_bitfield(k))}:{v}"
                          for k, v in sorted(self.counts.items()))
        return {
            "height": str(self.height), "width": str(self.width), "margin": str(self.margin),
            "counts": counts, "radius": f"{self.radius[0]},{self.radius[1]}",
            "beta": f"{self.beta[0]},{self.beta[1]}", "band_rotation": str(self.band_rotation),
            "stratify": str(int(self.stratify)), "gap": str(self.gap),
            "max_attempts": str(self.max_attempts), "layouts": str(self.layouts), "seed": str(self.seed),
        }

    @classmethod
    def from_items(cls, d: dict[str, str]) -> "SceneConfig":
        counts = {}
        for item in d["counts"].split(","):
            code, n = item.split(":")
            counts[encoding.powerset_to_index(encoding.parse_bitfield(code))] = int(n)
        return cls(
            height=int(d["height"]), width=int(d["width"]), margin=int(d["margin"]), counts=counts,
            radius=tuple(float(v) for v in d["radius"].split(",")),
            beta=tuple(float(v) for v in d["beta"].split(",")),
            band_rotation=int(d["band_rotation"]), stratify=bool(int(d["stratify"])),
            gap=int(d["gap"]), max_attempts=int(d["max_attempts"]), layouts=int(d["layouts"]),
            seed=int(d["seed"]),
        )


@dataclass
class BlobRegion:
    category: int
    group: int
    rows: np.ndarray
    cols: np.ndarray

    @property
    def size(self) -> int:
        return int(self.rows.size)


@dataclass
class LabeledScene:
    cube: np.ndarray  # (H, W, B) float32 in [0, 1]
    truth: np.ndarray  # (H, W) uint8 powerset indices
    blobs: list[BlobRegion] = field(default_factory=list)
    weights: np.ndarray | None = None  # (H, W, K) mixing weights, foreground only

    @property
    def bitfield_mask(self) -> np.ndarray:
        return encoding.powerset_mask_to_bitfield(self.truth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.truth.shape

    def category_counts(self) -> np.ndarray:
        return np.bincount(self.truth.ravel(), minlength=N_CATEGORIES)


# shapes -----------------------------------------------------------------------

def _flake(rng: np.random.Generator, r: float, center, shape) -> np.ndarray:
    """Random ellipse or convex polygon of radius ~r, rasterised onto ``shape``."""
    mask = np.zeros(shape, dtype=bool)
    cy, cx = center
    if rng.random() < 0.5:
        ry = r * rng.uniform(0.75, 1.0)
        rx = r * rng.uniform(0.75, 1.0)
        rr, cc = draw_ellipse(cy, cx, ry, rx, shape=shape, rotation=rng.uniform(0, np.pi))
    else:
        n = int(rng.integers(6, 11))
        ang = (np.arange(n) + rng.uniform(-0.3, 0.3, n)) * (2 * np.pi / n)
        ry, rx = r * rng.uniform(0.8, 1.0), r * rng.uniform(0.8, 1.0)
        rot = rng.uniform(0, np.pi)
        y0, x0 = ry * np.sin(ang), rx * np.cos(ang)
        ys = cy + y0 * np.cos(rot) - x0 * np.sin(rot)
        xs = cx + y0 * np.sin(rot) + x0 * np.cos(rot)
        rr, cc = draw_polygon(ys, xs, shape=shape)
    mask[rr, cc] = True
    return mask


def _group(rng, category: int, cfg: SceneConfig):
    """Local bitfield patch (h, w, K) and per-group mixing weights."""
    members = [k for k in range(K) if category >> k & 1]
    r_hi = cfg.radius[1]
    size = int(np.ceil(4 * r_hi)) + 3
    shape = (size, size)
    c = (size - 1) / 2.0
    r = rng.uniform(*cfg.radius)
    if len(members) == 1:
        offsets = [(0.0, 0.0)]
    elif len(members) == 2:
        d = r * rng.uniform(0.35, 0.55)
        th = rng.uniform(0, 2 * np.pi)
        offsets = [(0.5 * d * np.sin(th), 0.5 * d * np.cos(th)), (-0.5 * d * np.sin(th), -0.5 * d * np.cos(th))]
    else:
        d = r * rng.uniform(0.2, 0.3)
        th = rng.uniform(0, 2 * np.pi)
        offsets = [(d * np.sin(th + 2 * np.pi * i / 3), d * np.cos(th + 2 * np.pi * i / 3)) for i in range(3)]
    bits = np.zeros(shape + (K,), dtype=bool)
    for k, (dy, dx) in zip(members, offsets):
        bits[..., k] = _flake(rng, r, (c + dy, c + dx), shape)

    pair_beta = {}
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            pair_beta[(members[i], members[j])] = rng.uniform(*cfg.beta)
    triple = None
    if len(members) == 3:
        w = 1.0 / 3.0 + rng.uniform(-0.08, 0.08, 3)
        triple = w / w.sum()

    rows = np.flatnonzero(bits.any(axis=(1, 2)))
    cols = np.flatnonzero(bits.any(axis=(0, 2)))
    bits = bits[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    return bits, pair_beta, triple


def _mix_weights(bits: np.ndarray, pair_beta, triple) -> np.ndarray:
    """(h, w, K) convex weights of the primary signatures for each pixel."""
    w = np.zeros(bits.shape, dtype=np.float64)
    n_on = bits.sum(axis=-1)
    single = n_on == 1
    w[single] = bits[single]
    for (a, b), beta in pair_beta.items():
        sel = (n_on == 2) & bits[..., a] & bits[..., b]
        w[sel, a] = beta
        w[sel, b] = 1.0 - beta
    if triple is not None:
        w[n_on == 3] = triple
    return w


# scene -----------------------------------------------------------------------

def _placement_order(counts: dict[int, int]):
    # biggest groups first: three-way, then pairs, then single flakes
    cats = sorted(counts, key=lambda c: (-bin(c).count("1"), c))
    return [(c, i) for c in cats for i in range(counts[c])]


def generate_scene(config: SceneConfig, library: SpectralLibrary) -> LabeledScene:
    """Place the configured blob groups, synthesise spectra, add noise."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_bands = N_BANDS_SPLIT if config.stratify else 1
    band_w = (config.width - 2 * config.margin) // n_bands

    # restarts continue the same random stream, so the result stays a pure function of the seed
    for _ in range(config.layouts):
        truth, weights, group_id, unplaced = _layout(config, rng, band_w, n_bands)
        if not unplaced:
            break
    if unplaced:
        names = ", ".join(f"{encoding.category_name(c)}#{i}" for c, i in unplaced)
        raise GenerationError(f"could not place {len(unplaced)} blob group(s): {names}")

    blobs = []
    fg_ids = np.unique(group_id[group_id >= 0])
    for gid in fg_ids:
        in_group = group_id == gid
        for cat in np.unique(truth[in_group]):
            rows, cols = np.nonzero(in_group & (truth == cat))
            blobs.append(BlobRegion(int(cat), int(gid), rows, cols))

    cube = _render(truth, weights, library, rng)
    return LabeledScene(cube=cube, truth=truth, blobs=blobs, weights=weights.astype(np.float32))


def _layout(config: SceneConfig, rng, band_w: int, n_bands: int):
    """One attempt at placing every group; returns the rasters and any unplaced groups."""
    H, W, m = config.height, config.width, config.margin
    inner = W - 2 * m
    truth = np.zeros((H, W), dtype=np.uint8)
    weights = np.zeros((H, W, K), dtype=np.float64)
    occupied = np.zeros((H, W), dtype=bool)
    group_id = np.full((H, W), -1, dtype=np.int32)
    anchored = set()
    unplaced = []

    for gid, (cat, i) in enumerate(_placement_order(config.counts)):
        bits, pair_beta, triple = _group(rng, cat, config)
        gh, gw = bits.shape[:2]
        band = (i + config.band_rotation) % n_bands
        x_lo = m + band * band_w + (config.gap if config.stratify else 0)
        x_hi = m + (band + 1) * band_w - (config.gap if config.stratify else 0) - gw
        y_lo, y_hi = m, H - m - gh
        if x_hi < x_lo or y_hi < y_lo:
            unplaced.append((cat, i))
            continue
        occ = bits.any(axis=-1)
        halo = occ
        # the first group in the outer bands touches the interior edge, so
        # trimming margins later recovers exactly the band layout
        anchor = None
        if config.stratify and band == 0 and 0 not in anchored:
            anchor = m
        elif config.stratify and band == n_bands - 1 and n_bands - 1 not in anchored:
            anchor = m + inner - gw
        placed = False
        for _ in range(config.max_attempts):
            y = int(rng.integers(y_lo, y_hi + 1))
            x = anchor if anchor is not None else int(rng.integers(x_lo, x_hi + 1))
            if _fits(occupied, halo, y, x, config.gap):
                placed = True
                break
        if not placed:
            unplaced.append((cat, i))
            continue
        if anchor is not None:
            anchored.add(band)
        sl = (slice(y, y + gh), slice(x, x + gw))
        occupied[sl] |= occ
        group_id[sl][occ] = gid
        truth[sl][occ] = encoding.powerset_to_index(bits)[occ]
        weights[sl][occ] = _mix_weights(bits, pair_beta, triple)[occ]

    return truth, weights, group_id, unplaced


def _fits(occupied: np.ndarray, halo: np.ndarray, y: int, x: int, gap: int) -> bool:
    h, w = halo.shape
    H, W = occupied.shape
    y0, x0 = max(y - gap, 0), max(x - gap, 0)
    y1, x1 = min(y + h + gap, H), min(x + w + gap, W)
    grown = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    grown[y - y0:y - y0 + h, x - x0:x - x0 + w] = halo
    grown = ndimage.binary_dilation(grown, structure=np.ones((2 * gap + 1,) * 2, bool)) if gap else grown
    return not np.any(occupied[y0:y1, x0:x1] & grown)


def _render(truth, weights, library: SpectralLibrary, rng) -> np.ndarray:
    H, W = truth.shape
    B = library.bands
    fg = truth > 0
    clean = np.empty((H, W, B), dtype=np.float64)
    clean[:] = library.background.astype(np.float64)
    clean[fg] = weights[fg] @ library.signatures.astype(np.float64)
    illum = rng.normal(1.0, library.sigma_mul, size=(H, W))
    noise = rng.normal(0.0, library.sigma_add, size=(H, W, B))
    cube = clean * illum[..., None] + noise
    np.clip(cube, 0.0, 1.0, out=cube)
    return cube.astype(np.float32)
