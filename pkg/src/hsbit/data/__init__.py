"""Synthetic hyperspectral scenes, automatic annotation, splitting and file I/O."""

from .annotate import annotate, foreground_mask
from .dataset import Dataset, generate_dataset, load_dataset
from .io import export_view, read_cube, read_mask, write_cube, write_mask
from .library import SpectralLibrary, generate_library
from .scene import (
    EXTRA_PRIMARY_COUNTS,
    REFERENCE_BLOB_COUNTS,
    BlobRegion,
    LabeledScene,
    SceneConfig,
    generate_scene,
)
from .split import PARTS, SplitScene, reassemble, split_scene

__all__ = [
    "EXTRA_PRIMARY_COUNTS", "PARTS", "REFERENCE_BLOB_COUNTS", "BlobRegion", "Dataset",
    "LabeledScene", "SceneConfig", "SpectralLibrary", "SplitScene", "annotate",
    "export_view", "foreground_mask", "generate_dataset", "generate_library",
    "generate_scene", "load_dataset", "read_cube", "read_mask", "reassemble",
    "split_scene", "write_cube", "write_mask",
]
