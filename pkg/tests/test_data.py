from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from hsbit import encoding
from hsbit.data import (
    LabeledScene,
    SceneConfig,
    annotate,
    generate_dataset,
    generate_library,
    generate_scene,
    load_dataset,
    reassemble,
    split_scene,
)
from hsbit.data import io as dio
from hsbit.data.dataset import dataset_hash, scene_from_manifest
from hsbit.data.split import split_bounds
from hsbit.errors import ConfigError, FormatError, GenerationError, SliceError, UsageError


@pytest.fixture(scope="module")
def library():
    return generate_library(seed=7)


@pytest.fixture(scope="module")
def quiet(library):
    return library.with_noise(0.0, 0.0)


@pytest.fixture(scope="module")
def scene(library):
    return generate_scene(SceneConfig(seed=11), library)


# library ---------------------------------------------------------------------------

def test_library_deterministic():
    a, b = generate_library(seed=3), generate_library(seed=3)
    assert a.as_array().tobytes() == b.as_array().tobytes()
    assert a.as_array().tobytes() != generate_library(seed=4).as_array().tobytes()


def test_library_range_and_separation(library):
    arr = library.as_array()
    assert arr.shape == (4, 224)
    assert arr.min() >= 0 and arr.max() <= 1
    d = library.pairwise_distances()
    assert d[np.triu_indices(3, 1)].min() >= 1.0


def test_library_background_is_low(library):
    assert abs(float(library.background.mean()) - 0.05) < 0.02


def test_library_needs_bands():
    with pytest.raises(UsageError):
        generate_library(seed=0, bands=4)


def test_library_unreachable_separation():
    with pytest.raises(GenerationError):
        generate_library(seed=0, bands=8, delta_sep=50.0)


# scenes ---------------------------------------------------------------------------

def test_scene_deterministic(library):
    a = generate_scene(SceneConfig(seed=5), library)
    b = generate_scene(SceneConfig(seed=5), library)
    assert a.cube.tobytes() == b.cube.tobytes()
    assert a.truth.tobytes() == b.truth.tobytes()


def test_scene_shapes_and_range(scene):
    assert scene.cube.shape == (208, 264, 224) and scene.cube.dtype == np.float32
    assert scene.truth.shape == (208, 264)
    assert scene.cube.min() >= 0 and scene.cube.max() <= 1


def test_scene_contains_every_category(scene):
    assert (scene.category_counts() > 0).all()


def test_every_foreground_pixel_in_one_blob(scene):
    owner = np.zeros(scene.truth.shape, dtype=np.int64)
    for b in scene.blobs:
        owner[b.rows, b.cols] += 1
        assert (scene.truth[b.rows, b.cols] == b.category).all()
    fg = scene.truth > 0
    assert (owner[fg] == 1).all()
    assert (owner[~fg] == 0).all()


def test_single_pp_blob_zero_noise_is_pure(quiet):
    s = generate_scene(SceneConfig(counts={1: 1}, seed=2), quiet)
    fg = s.truth > 0
    assert fg.any() and set(np.unique(s.truth[fg])) == {1}
    np.testing.assert_array_equal(s.cube[fg], np.broadcast_to(quiet.signatures[0], s.cube[fg].shape))
    np.testing.assert_array_equal(s.cube[~fg], np.broadcast_to(quiet.background, s.cube[~fg].shape))


def test_zero_noise_overlaps_are_convex(quiet):
    s = generate_scene(SceneConfig(seed=4), quiet)
    sig = quiet.signatures.astype(np.float64)
    for cat in (3, 5, 6):
        a, b = [k for k in range(3) if cat >> k & 1]
        px = s.cube[s.truth == cat].astype(np.float64)
        assert px.size
        # solve px = beta*a + (1-beta)*b for beta, then check the residual
        d = sig[a] - sig[b]
        beta = (px - sig[b]) @ d / (d @ d)
        assert np.all((beta >= 0.35 - 1e-6) & (beta <= 0.65 + 1e-6))
        resid = px - (beta[:, None] * sig[a] + (1 - beta[:, None]) * sig[b])
        assert np.abs(resid).max() < 1e-6
    px = s.cube[s.truth == 7].astype(np.float64)
    w, *_ = np.linalg.lstsq(sig.T, px.T, rcond=None)
    assert np.allclose(w.sum(axis=0), 1, atol=1e-5) and (w > 0).all()
    assert np.abs(sig.T @ w - px.T).max() < 1e-6


def test_single_class_pixels_equal_signature_without_noise(quiet):
    s = generate_scene(SceneConfig(seed=4), quiet)
    for k in range(3):
        px = s.cube[s.truth == (1 << k)]
        np.testing.assert_array_equal(px, np.broadcast_to(quiet.signatures[k], px.shape))


def test_overlap_mean_near_midpoint(scene, library):
    sig = library.signatures.astype(np.float64)
    for cat in (3, 5, 6):
        a, b = [k for k in range(3) if cat >> k & 1]
        mean = scene.cube[scene.truth == cat].astype(np.float64).mean(axis=0)
        mid = (sig[a] + sig[b]) / 2
        d_mid = np.linalg.norm(mean - mid)
        assert d_mid < np.linalg.norm(mean - sig[a])
        assert d_mid < np.linalg.norm(mean - sig[b])


def test_scene_config_validation():
    with pytest.raises(ConfigError):
        SceneConfig(counts={1: -1}).validate()
    with pytest.raises(ConfigError):
        SceneConfig(beta=(0.0, 0.5)).validate()
    with pytest.raises(ConfigError):
        SceneConfig(counts={0: 3}).validate()


def test_placement_failure_lists_blobs(library):
    cfg = SceneConfig(height=40, width=48, margin=3, counts={1: 40}, max_attempts=20, seed=1)
    with pytest.raises(GenerationError, match="PP"):
        generate_scene(cfg, library)


def test_scene_config_items_roundtrip():
    cfg = SceneConfig(seed=9, band_rotation=2, counts={1: 3, 6: 1})
    assert SceneConfig.from_items(cfg.to_items()) == cfg


# annotation ----------------------------------------------------------------------------

def test_annotate_all_background(library):
    cube = np.broadcast_to(library.background, (20, 30, 224)).astype(np.float32)
    assert not annotate(cube, library).any()


def test_annotate_noise_free_single_blob_exact(quiet):
    s = generate_scene(SceneConfig(counts={1: 1}, seed=2), quiet)
    np.testing.assert_array_equal(annotate(s.cube, quiet), s.truth)


def near_borders(truth, overlap_only: bool, radius: int) -> np.ndarray:
    """Pixels within ``radius`` of a boundary between two categories."""
    if overlap_only:
        region = encoding.is_overlap(truth)
        edge = (region ^ ndimage.binary_erosion(region)) | (ndimage.binary_dilation(region) & ~region)
    else:
        edge = np.zeros(truth.shape, bool)
        for cat in range(8):
            region = truth == cat
            edge |= ndimage.binary_dilation(region) & ~region
    return ndimage.binary_dilation(edge, iterations=radius)


@pytest.mark.parametrize("seed", [11, 12])
def test_annotate_agreement_on_noisy_scene(library, seed):
    s = generate_scene(SceneConfig(seed=seed), library)
    wrong = annotate(s.cube, library) != s.truth
    assert 1 - wrong.mean() >= 0.95
    if wrong.any():
        assert (wrong & near_borders(s.truth, True, 2)).sum() >= 0.8 * wrong.sum()
        assert not (wrong & ~near_borders(s.truth, False, 3)).any()


# slicing -------------------------------------------------------------------------------

def _box_scene(h, w, rows, cols, bands=4):
    truth = np.zeros((h, w), np.uint8)
    truth[rows[0]:rows[1], cols[0]:cols[1]] = 1
    rng = np.random.default_rng(0)
    cube = rng.random((h, w, bands), dtype=np.float32)
    return LabeledScene(cube, truth)


def test_slice_example_shape():
    s = _box_scene(996, 640, (60, 936), (128, 512))
    sp = split_scene(s)
    for part in (sp.test, sp.train, sp.validation):
        assert part.truth.shape == (876, 128)
        assert part.cube.shape == (876, 128, 4)
    assert sp.bounds.cuts == (128, 256, 384, 512)


def test_slice_order_left_to_right(scene):
    sp = split_scene(scene)
    (r0, r1), _ = sp.bounds.rows, sp.bounds.cols
    c = sp.bounds.cuts
    np.testing.assert_array_equal(sp.test.truth, scene.truth[r0:r1, c[0]:c[1]])
    np.testing.assert_array_equal(sp.train.cube, scene.cube[r0:r1, c[1]:c[2]])
    np.testing.assert_array_equal(sp.validation.truth, scene.truth[r0:r1, c[2]:c[3]])


def test_slice_widens_to_multiple_of_three():
    sp = split_scene(_box_scene(20, 40, (5, 9), (10, 21)))
    widths = {p.truth.shape[1] for p in (sp.test, sp.train, sp.validation)}
    assert widths == {4}
    assert sp.bounds.cols == (10, 22)


def test_slice_roundtrip_bit_exact(scene):
    sp = split_scene(scene)
    cube, truth = reassemble(sp)
    assert cube.tobytes() == scene.cube.tobytes()
    assert truth.tobytes() == scene.truth.tobytes()


def test_slice_partition_counts(scene):
    sp = split_scene(scene)
    inner = sum(p.truth.size for p in (sp.test, sp.train, sp.validation))
    margin = sum(t.size for _, t in sp.margins.values())
    assert inner + margin == scene.truth.size


def test_slice_all_background():
    with pytest.raises(SliceError):
        split_bounds(np.zeros((10, 10), np.uint8))


def test_default_scene_slices_keep_categories(scene):
    sp = split_scene(scene)
    for part in (sp.test, sp.train, sp.validation):
        assert (part.category_counts() > 0).all()


# file formats ------------------------------------------------------------------------

def test_cube_roundtrip(tmp_path, rng):
    cube = rng.random((5, 7, 9)).astype(np.float32)
    dio.write_cube(tmp_path / "c.hsc", cube)
    back = dio.read_cube(tmp_path / "c.hsc")
    assert back.tobytes() == cube.tobytes()
    raw = (tmp_path / "c.hsc").read_bytes()
    assert raw[:4] == b"HSC1" and len(raw) == 16 + 5 * 7 * 9 * 4


def test_cube_layout_is_band_interleaved_by_pixel():
    cube = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    raw = dio.cube_to_bytes(cube)
    assert np.frombuffer(raw[16:], "<f4").tolist() == list(range(24))
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [2, 3, 4]


def test_cube_corruption(tmp_path, rng):
    raw = dio.cube_to_bytes(rng.random((3, 3, 2)).astype(np.float32))
    with pytest.raises(FormatError, match="offset 0"):
        dio.cube_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="offset"):
        dio.cube_from_bytes(raw[:-3])
    with pytest.raises(FormatError):
        dio.cube_from_bytes(raw[:10])
    p = tmp_path / "bad.hsc"
    p.write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="bad.hsc"):
        dio.read_cube(p)


def test_mask_roundtrip_and_table_code(tmp_path):
    mask = np.zeros((2, 3), np.uint8)
    mask[0, 0] = 3
    mask[1, 2] = 7
    dio.write_mask(tmp_path / "m.hbm", mask)
    back = dio.read_mask(tmp_path / "m.hbm")
    assert back.tobytes() == mask.tobytes()
    assert encoding.format_bitfield(encoding.index_to_bitfield(back[0, 0])) == "011"
    assert encoding.category_name(back[0, 0]) == "PP+PE"


def test_mask_corruption():
    raw = dio.mask_to_bytes(np.ones((2, 2), np.uint8))
    with pytest.raises(FormatError):
        dio.mask_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        dio.mask_from_bytes(raw[:-1])
    bad = bytearray(raw)
    bad[-1] = 8
    with pytest.raises(FormatError, match=f"offset {len(raw) - 1}"):
        dio.mask_from_bytes(bytes(bad))


def test_export_view(tmp_path, scene):
    paths = dio.export_view(scene.cube, scene.truth, tmp_path / "s")
    assert [p.name for p in paths] == ["s_rgb.ppm", "s_mask.ppm"]
    rgb = dio.read_ppm(paths[0])
    assert rgb.shape == (208, 264, 3)
    m = dio.read_ppm(paths[1])
    np.testing.assert_array_equal(m, dio.PALETTE[scene.truth])
    assert paths[0].read_bytes().startswith(b"P6\n264 208\n255\n")


# datasets ----------------------------------------------------------------------------------

def test_dataset_regenerates_from_manifest(tmp_path):
    ds = generate_dataset(tmp_path / "d", seed=5, bands=32, n_scenes=1)
    loaded = load_dataset(tmp_path / "d")
    again = scene_from_manifest(loaded.manifest, "scene_000", loaded.library)
    assert again.cube.tobytes() == ds.scenes[0].cube.tobytes()
    assert again.truth.tobytes() == loaded.scenes[0].truth.tobytes()
    assert loaded.extra is not None
    counts = loaded.manifest["scene_000.pixels"]
    assert counts.startswith("000:")
    assert set(np.unique(loaded.extra.truth)) <= {0, 1, 2, 4}


def test_dataset_bytes_identical(tmp_path):
    generate_dataset(tmp_path / "a", seed=5, bands=16, n_scenes=1)
    generate_dataset(tmp_path / "b", seed=5, bands=16, n_scenes=1)
    assert dataset_hash(tmp_path / "a") == dataset_hash(tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_dataset_rotation_spreads_categories(tmp_path):
    ds = generate_dataset(tmp_path / "d", seed=7, bands=16, n_scenes=3, extra_primary=False)
    for s in ds.scenes:
        assert replace(SceneConfig()).counts == {1: 8, 2: 8, 4: 9, 3: 2, 5: 3, 6: 3, 7: 3}
    tests = [split_scene(s).test for s in ds.scenes]
    pooled = sum(t.category_counts() for t in tests)
    assert (pooled > 0).all()
