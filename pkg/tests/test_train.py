from types import SimpleNamespace

import numpy as np
import pytest

from hsbit import encoding
from hsbit.data.library import generate_library
from hsbit.data.scene import SceneConfig, generate_scene
from hsbit.errors import NumericalError, PresetError
from hsbit.experiments.presets import get_preset
from hsbit.experiments.train import PatchSampler, supervised_counts, train, training_sources
from hsbit.model import BASELINE, BITFIELD, ModelSpec, build, dumps

SMALL = dict(spectral_reduction_channels=4, encoder_channels=[4, 8, 8])


@pytest.fixture(scope="module")
def scene():
    lib = generate_library(seed=3, bands=224)
    return generate_scene(SceneConfig(seed=3), lib)


@pytest.fixture(scope="module")
def patch(scene):
    # the 32x32 window holding every category at this seed
    cube, truth = scene.cube[0:32, 216:248], scene.truth[0:32, 216:248]
    assert len(np.unique(truth)) == 8
    return SimpleNamespace(cube=cube, truth=truth)


def test_zero_epochs_returns_initial_model(patch):
    p = get_preset("baseline-bitfield").with_overrides(epochs=0)
    m, h = train(p, [patch], [patch])
    assert len(h) == 0 and h.train_loss == [] and h.val_macro_f1 == []
    assert dumps(m) == dumps(build(ModelSpec(head=BITFIELD, seed=p.seed)))


@pytest.mark.parametrize("name", ["baseline-bitfield", "baseline"])
def test_overfit_single_patch(patch, name):
    p = get_preset(name).with_overrides(epochs=10, steps_per_epoch=20, patch=32, batch=1, seed=0)
    _, h = train(p, [patch], [])
    assert p.epochs * p.steps_per_epoch == 200
    assert h.train_loss[-1] < 0.05
    assert h.train_loss[-1] < h.train_loss[0]


def _short(name="baseline-bitfield", seed=5):
    return get_preset(name).with_overrides(epochs=2, steps_per_epoch=3, patch=16, batch=2, seed=seed)


def test_same_seed_identical_history(patch):
    runs = []
    for _ in range(2):
        spec = ModelSpec(head=BITFIELD, seed=5, **SMALL)
        m, h = train(_short(), [patch], [patch], spec=spec)
        runs.append((h, dumps(m)))
    (h1, b1), (h2, b2) = runs
    assert np.array(h1.train_loss).tobytes() == np.array(h2.train_loss).tobytes()
    assert np.array(h1.val_loss).tobytes() == np.array(h2.val_loss).tobytes()
    assert h1.val_macro_f1 == h2.val_macro_f1 and h1.best_epoch == h2.best_epoch
    assert b1 == b2


def test_different_seed_differs(patch):
    a = train(_short(seed=5), [patch], [], spec=ModelSpec(head=BITFIELD, seed=5, **SMALL))[1]
    b = train(_short(seed=6), [patch], [], spec=ModelSpec(head=BITFIELD, seed=6, **SMALL))[1]
    assert a.train_loss != b.train_loss


def test_history_length_and_best_epoch(patch):
    p = _short()
    m, h = train(p, [patch], [patch], spec=ModelSpec(head=BITFIELD, seed=5, **SMALL))
    assert len(h) == len(h.val_loss) == len(h.val_macro_f1) == p.epochs
    assert h.best_epoch == int(np.argmax(h.val_macro_f1))
    assert m.meta["best_epoch"] == h.best_epoch
    assert h.to_csv().count("\n") == p.epochs + 1


def test_primary_only_sources_drop_overlaps(scene, patch):
    extra = SimpleNamespace(cube=scene.cube[:40, :40], truth=np.ones((40, 40), np.uint8))
    src = training_sources([patch], [extra], primary_only=True)
    counts = supervised_counts(src)
    assert counts[encoding.is_overlap(np.arange(8))].sum() == 0
    assert counts[1] >= 1600  # the extra scene joins the pool
    full = supervised_counts(training_sources([patch], [extra]))
    np.testing.assert_array_equal(full, np.bincount(patch.truth.ravel(), minlength=8))


def test_bitfield_preset_trains_without_overlaps(patch):
    assert get_preset("bitfield").primary_only
    p = get_preset("bitfield").with_overrides(epochs=1, steps_per_epoch=2, patch=16, batch=1)
    m, h = train(p, [patch], [], spec=ModelSpec(head=BITFIELD, seed=0, **SMALL))
    assert len(h) == 1


def test_empty_filtered_training_set():
    overlap_only = SimpleNamespace(cube=np.zeros((32, 32, 8), np.float32), truth=np.full((32, 32), 7, np.uint8))
    p = get_preset("bitfield").with_overrides(patch=16)
    with pytest.raises(PresetError):
        train(p, [overlap_only], [], spec=ModelSpec(bands=8, head=BITFIELD, **SMALL))
    with pytest.raises(PresetError):
        train(get_preset("baseline"), [], [])


def test_head_mismatch_rejected(patch):
    with pytest.raises(PresetError):
        train(get_preset("baseline"), [patch], [], spec=ModelSpec(head=BITFIELD))


def test_patch_larger_than_sources(patch):
    with pytest.raises(PresetError):
        PatchSampler(training_sources([patch]), 64, 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises(patch):
    bad = SimpleNamespace(cube=np.full_like(patch.cube, np.nan), truth=patch.truth)
    spec = ModelSpec(head=BASELINE, seed=0, **SMALL)
    with pytest.raises(NumericalError):
        train(_short("baseline"), [bad], [], spec=spec)
    # a prebuilt model skips the statistics and fails on the loss itself
    m = build(spec)
    m.params["head.b"].data[0] = np.inf
    with pytest.raises(NumericalError, match="loss"):
        train(_short("baseline"), [patch], [], model=m)
