"""On-disk synthetic dataset: a spectral library, several scenes, and the
extra primary-only scene used by the primary-only training experiment."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import encoding
from ..errors import FormatError
from . import io
from .library import SpectralLibrary, generate_library
from .scene import EXTRA_PRIMARY_COUNTS, LabeledScene, SceneConfig, generate_scene

DEFAULT_SCENES = 3
EXTRA_NAME = "extra_primary"


@dataclass
class Dataset:
    root: Path
    library: SpectralLibrary
    scenes: list[LabeledScene]
    extra: LabeledScene | None
    manifest: dict[str, str]


def scene_seed(seed: int, index: int) -> int:
    return seed * 1000 + index + 1


def generate_dataset(out_dir, seed: int = 7, bands: int = 224, n_scenes: int = DEFAULT_SCENES,
                     base: SceneConfig | None = None, sigma_add: float = 0.01,
                     sigma_mul: float = 0.02, extra_primary: bool = True) -> Dataset:
    """Generate and write everything under ``out_dir``; returns the in-memory dataset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = SceneConfig() if base is None else base
    library = generate_library(seed, bands, sigma_add=sigma_add, sigma_mul=sigma_mul)
    io.write_cube(out / "library.hsc", library.as_array()[:, None, :])

    manifest: dict[str, str] = {
        "format": "hsbit-dataset-1",
        "seed": str(seed),
        "bands": str(bands),
        "n_scenes": str(n_scenes),
        "sigma_add": repr(sigma_add),
        "sigma_mul": repr(sigma_mul),
        "delta_sep": repr(library.delta_sep),
    }
    manifest.update({f"scene_config.{k}": v for k, v in base.to_items().items() if k not in ("seed", "band_rotation")})

    scenes = []
    names = [f"scene_{i:03d}" for i in range(n_scenes)]
    configs = [replace(base, seed=scene_seed(seed, i), band_rotation=i) for i in range(n_scenes)]
    if extra_primary:
        names.append(EXTRA_NAME)
        configs.append(replace(base, seed=scene_seed(seed, 999), counts=dict(EXTRA_PRIMARY_COUNTS), band_rotation=0))
    extra = None
    for name, cfg in zip(names, configs):
        scene = generate_scene(cfg, library)
        io.write_cube(out / f"{name}.hsc", scene.cube)
        io.write_mask(out / f"{name}.hbm", scene.truth)
        manifest[f"{name}.seed"] = str(cfg.seed)
        manifest[f"{name}.band_rotation"] = str(cfg.band_rotation)
        counts = scene.category_counts()
        manifest[f"{name}.pixels"] = ",".join(
            f"{encoding.format_bitfield(encoding.index_to_bitfield(c))}:{int(n)}" for c, n in enumerate(counts)
        )
        if name == EXTRA_NAME:
            extra = scene
        else:
            scenes.append(scene)
    io.write_manifest(out / "manifest.txt", manifest)
    return Dataset(out, library, scenes, extra, manifest)


def load_library(root, manifest: dict[str, str]) -> SpectralLibrary:
    arr = io.read_cube(Path(root) / "library.hsc")[:, 0, :]
    return SpectralLibrary(
        signatures=arr[1:].copy(),
        background=arr[0].copy(),
        sigma_add=float(manifest["sigma_add"]),
        sigma_mul=float(manifest["sigma_mul"]),
        seed=int(manifest["seed"]),
        delta_sep=float(manifest.get("delta_sep", "1.0")),
    )


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "manifest.txt").exists():
        raise FormatError("dataset directory has no manifest.txt", path=str(root))
    manifest = io.read_manifest(root / "manifest.txt")
    library = load_library(root, manifest)
    scenes = []
    for i in range(int(manifest["n_scenes"])):
        name = f"scene_{i:03d}"
        scenes.append(LabeledScene(io.read_cube(root / f"{name}.hsc"), io.read_mask(root / f"{name}.hbm")))
    extra = None
    if (root / f"{EXTRA_NAME}.hsc").exists():
        extra = LabeledScene(io.read_cube(root / f"{EXTRA_NAME}.hsc"), io.read_mask(root / f"{EXTRA_NAME}.hbm"))
    return Dataset(root, library, scenes, extra, manifest)


def dataset_hash(root) -> str:
    root = Path(root)
    files = [p for p in root.iterdir() if p.suffix in (".hsc", ".hbm") or p.name == "manifest.txt"]
    return io.sha256_files(files)


def scene_from_manifest(manifest: dict[str, str], name: str, library: SpectralLibrary) -> LabeledScene:
    """Regenerate one scene bit-identically from its manifest entries."""
    items = {k.split(".", 1)[1]: v for k, v in manifest.items() if k.startswith("scene_config.")}
    items["seed"] = manifest[f"{name}.seed"]
    items["band_rotation"] = manifest[f"{name}.band_rotation"]
    cfg = SceneConfig.from_items(items)
    if name == EXTRA_NAME:
        cfg = replace(cfg, counts=dict(EXTRA_PRIMARY_COUNTS))
    return generate_scene(cfg, library)


def pixel_counts(scene: LabeledScene) -> np.ndarray:
    return scene.category_counts()
