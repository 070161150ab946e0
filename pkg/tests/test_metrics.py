import numpy as np
import pytest

from hsbit.errors import DimensionError
from hsbit.experiments.metrics import (
    CategoryMetrics,
    evaluate,
    evaluate_predictions,
    f1_score,
    macro_average,
    overlap_composition,
    pooled_two_way,
    predict_all,
    score,
)
from hsbit.model import ModelSpec, build

# Published per-category (F1, precision, recall), rows in table order:
# Background, PP, PE, PET, PP+PE, PP+PET, PE+PET, PP+PE+PET
TABLE = {
    "Baseline": [
        (0.998, 0.998, 0.998), (0.982, 0.972, 0.992), (0.969, 0.968, 0.969), (0.942, 0.898, 0.990),
        (0.961, 0.940, 0.984), (0.923, 0.986, 0.868), (0.825, 0.745, 0.924), (0.903, 0.981, 0.837),
    ],
    "Baseline-Bitfield": [
        (0.998, 0.999, 0.996), (0.979, 0.961, 0.997), (0.949, 0.914, 0.987), (0.963, 0.939, 0.989),
        (0.976, 0.967, 0.985), (0.940, 0.982, 0.902), (0.817, 0.703, 0.977), (0.903, 0.981, 0.837),
    ],
    "Bitfield": [
        (0.992, 1.000, 0.985), (0.553, 0.388, 0.964), (0.741, 0.604, 0.960), (0.430, 0.390, 0.481),
        (0.088, 0.686, 0.047), (0.340, 0.278, 0.447), (0.421, 0.294, 0.741), (0.110, 0.447, 0.062),
    ],
}
AVERAGES = {
    "Baseline": (0.938, 0.936, 0.945),
    "Baseline-Bitfield": (0.941, 0.958, 0.930),
    "Bitfield": (0.425, 0.481, 0.549),
}


CATEGORIES = ["Background", "PP", "PE", "PET", "PP+PE", "PP+PET", "PE+PET", "PP+PE+PET"]
ROWS = [(col, CATEGORIES[i], *TABLE[col][i]) for col in TABLE for i in range(8)]


@pytest.mark.parametrize("column,category,f1,p,r", ROWS, ids=[f"{c}-{k}" for c, k, *_ in ROWS])
def test_table_f1_from_precision_recall(column, category, f1, p, r):
    assert abs(f1_score(p, r) - f1) <= 0.001 + 1e-12


AVG_CASES = [(col, i) for col in TABLE for i in range(3)]


@pytest.mark.parametrize("column,which", AVG_CASES, ids=[f"{c}-{'F1 P R'.split()[i]}" for c, i in AVG_CASES])
def test_table_macro_averages(column, which):
    got = macro_average(TABLE[column])[which]
    assert abs(got - AVERAGES[column][which]) <= 0.001 + 1e-12


def test_f1_example():
    assert round(f1_score(0.940, 0.984), 3) == 0.961


def test_f1_zero_convention():
    assert f1_score(0.0, 0.0) == 0.0
    np.testing.assert_array_equal(f1_score([0.0, 1.0], [0.0, 1.0]), [0.0, 1.0])


def test_hand_counted_confusion():
    m = score([1, 1, 2, 0], [1, 2, 2, 0])
    assert m.precision[1] == 1.0 and m.recall[1] == 0.5
    assert m.f1[1] == pytest.approx(2 / 3)
    assert m.precision[2] == 0.5 and m.recall[2] == 1.0
    assert m.f1[2] == pytest.approx(2 / 3)
    assert m.tp[0] == 1 and m.fp[2] == 1 and m.fn[1] == 1


def test_perfect_prediction(rng):
    t = rng.integers(0, 8, (20, 20))
    m = score(t, t)
    assert np.all(m.f1 == 1) and np.all(m.precision == 1) and np.all(m.recall == 1)
    assert macro_average(m) == (1.0, 1.0, 1.0)


def test_absent_category_scores_zero():
    m = score([0, 1], [0, 1])
    assert m.f1[5] == 0.0 and m.support[5] == 0


def test_pooled_counts_and_order_invariance(rng):
    truths = [rng.integers(0, 8, (6, 7)) for _ in range(3)]
    preds = [rng.integers(0, 8, (6, 7)) for _ in range(3)]
    a = evaluate_predictions(truths, preds)
    b = evaluate_predictions(truths[::-1], preds[::-1])
    np.testing.assert_array_equal(a.confusion, b.confusion)
    counts = np.bincount(np.concatenate([t.ravel() for t in truths]), minlength=8)
    np.testing.assert_array_equal(a.tp + a.fn, counts)
    # pooling is not averaging per image
    assert isinstance(a + a, CategoryMetrics)
    np.testing.assert_array_equal((a + a).confusion, 2 * a.confusion)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        score(np.zeros((2, 2), int), np.zeros((2, 3), int))


def test_predict_all_threads_match(monkeypatch, rng):
    cubes = [rng.random((4, 4, 2)) for _ in range(5)]
    fn = lambda c: (c.sum(axis=-1) > 1).astype(np.uint8)
    monkeypatch.setenv("HSBIT_THREADS", "1")
    one = predict_all(fn, cubes)
    monkeypatch.setenv("HSBIT_THREADS", "3")
    many = predict_all(fn, cubes)
    for a, b in zip(one, many):
        np.testing.assert_array_equal(a, b)


class _Scene:
    def __init__(self, cube, truth):
        self.cube, self.truth = cube, truth


def test_evaluate_band_mismatch(rng):
    m = build(ModelSpec(bands=16, spectral_reduction_channels=4, encoder_channels=[4, 4, 4]))
    with pytest.raises(DimensionError):
        evaluate(m, [_Scene(rng.random((8, 8, 12)).astype(np.float32), np.zeros((8, 8), np.uint8))])


def test_evaluate_self_consistency(rng):
    # truth taken from the model's own predictions scores all-ones on present categories
    from hsbit.model import predict_powerset

    m = build(ModelSpec(bands=16, spectral_reduction_channels=4, encoder_channels=[4, 4, 4], seed=2))
    cubes = [rng.random((8, 12, 16)).astype(np.float32) * 3 for _ in range(2)]
    scenes = [_Scene(c, predict_powerset(m, c)) for c in cubes]
    res = evaluate(m, scenes)
    present = res.support > 0
    assert np.all(res.f1[present] == 1.0)


# overlap composition -----------------------------------------------------------------

def _overlap_truth():
    t = np.zeros((4, 6), np.uint8)
    t[0, :3] = 3  # PP+PE
    t[1, :3] = 6  # PE+PET
    t[2, :2] = 7
    t[3, :] = 1
    return t


def test_composition_perfect():
    t = _overlap_truth()
    comp = overlap_composition([t], [t])
    assert set(comp) == {3, 6, 7}
    for c in comp.values():
        assert c.exact_recall == 1.0
        assert all(v == 1.0 for v in c.bit_recall.values())
        assert c.subset_fraction == 1.0


def test_composition_top_layer_predictor():
    t = _overlap_truth()
    pred = t.copy()
    pred[t == 3] = 2  # only PE reported on PP+PE
    comp = overlap_composition([t], [pred])
    c = comp[3]
    assert c.exact_recall == 0.0
    assert c.bit_recall == {0: 0.0, 1: 1.0}
    assert c.subset_fraction == 1.0
    exact, bits = pooled_two_way(comp)
    assert exact == pytest.approx(0.5) and bits == pytest.approx(0.75)


def test_composition_superset_is_not_subset():
    t = np.full((1, 2), 3, np.uint8)
    comp = overlap_composition([t], [np.full((1, 2), 7, np.uint8)])
    assert comp[3].subset_fraction == 0.0
    assert comp[3].bit_recall == {0: 1.0, 1: 1.0}


def test_composition_absent_categories_omitted():
    t = np.ones((3, 3), np.uint8)
    assert overlap_composition([t], [t]) == {}
    assert pooled_two_way({}) == (0.0, 0.0)
