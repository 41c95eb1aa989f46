import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cattle_tfd.dataset import ACC_ONLY, ALL_MODALITIES, SynthConfig, synth_generate
from cattle_tfd.errors import DegenerateChannelError, EmptyDatasetError, ValidationError
from cattle_tfd.evaluation import (
    ConfusionMatrix,
    ScaledFeatures,
    _fit_block_minmax,
    confusion,
    featurize,
    fold_seeds,
    loso_folds,
    prepare_windows,
    reduce_to_3_classes,
    run_experiment,
    stratified_folds,
    f1_scores,
    write_plot_csv,
)
from cattle_tfd.mlp import TrainConfig
from cattle_tfd.preprocess import WindowSpec, design_bandpass, filter_recording, segment, window_count
from cattle_tfd.tfd import StftParams, resize_bicubic, spectrogram

from conftest import make_recording


def brute_force_f1(counts):
    """Per-class precision/recall/F1 by explicit loops over (pred, true) cells."""
    k = len(counts)
    f1, support = [], []
    for c in range(k):
        tp = counts[c][c]
        pred_c = sum(counts[c][j] for j in range(k))
        true_c = sum(counts[i][c] for i in range(k))
        p = tp / pred_c if pred_c else 0.0
        r = tp / true_c if true_c else 0.0
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
        support.append(true_c)
    weighted = sum(f * s for f, s in zip(f1, support)) / sum(support)
    return f1, weighted


def check_stratified(labels, k, seed):
    plan = stratified_folds(labels, k, seed)
    all_idx = np.concatenate(plan.test_folds)
    assert np.array_equal(np.sort(all_idx), np.arange(labels.size))
    for cls in np.unique(labels):
        share = np.sum(labels == cls) / k
        for fold in plan.test_folds:
            assert abs(np.sum(labels[fold] == cls) - share) < 1 + 1e-9
    sizes = [f.size for f in plan.test_folds]
    assert max(sizes) - min(sizes) <= 1
    for i, (train, test) in enumerate(plan.splits()):
        assert not set(train) & set(test)
        assert train.size + test.size == labels.size


# ---------------------------------------------------------------- folds


def test_stratified_balanced_two_class():
    labels = np.array([1] * 50 + [2] * 50)
    plan = stratified_folds(labels, 10, 0)
    for f in plan.test_folds:
        assert np.sum(labels[f] == 1) == 5 and np.sum(labels[f] == 2) == 5


def test_stratified_pigeonhole():
    plan = stratified_folds(np.ones(9, dtype=int), 10, 0)
    assert sorted(f.size for f in plan.test_folds) == [0] + [1] * 9


def test_stratified_deterministic():
    labels = np.random.default_rng(0).integers(1, 10, 200)
    a, b = stratified_folds(labels, 10, 4), stratified_folds(labels, 10, 4)
    assert all(np.array_equal(x, y) for x, y in zip(a.test_folds, b.test_folds))


@settings(max_examples=300, deadline=None)
@given(
    labels=st.lists(st.integers(1, 9), min_size=1, max_size=300),
    k=st.integers(2, 12),
    seed=st.integers(0, 2**32 - 1),
)
def test_stratified_property(labels, k, seed):
    check_stratified(np.array(labels), k, seed)


def test_stratified_errors():
    with pytest.raises(ValidationError):
        stratified_folds([1, 2], k=1)
    with pytest.raises(EmptyDatasetError):
        stratified_folds([], k=3)


def test_loso_partition():
    ids = np.array(["b", "a", "b", "c", "a"])
    plan = loso_folds(ids)
    assert plan.k == 3
    for (train, test), animal in zip(plan.splits(), ["b", "a", "c"]):
        assert set(ids[test]) == {animal}
        assert animal not in set(ids[train])
    ten = np.repeat([f"cow{i:02d}" for i in range(10)], 3)
    assert loso_folds(ten).k == 10


def test_loso_two_animals():
    ids = np.array(["x"] * 3 + ["y"] * 2)
    (tr0, te0), (tr1, te1) = loso_folds(ids).splits()
    assert np.array_equal(tr0, te1) and np.array_equal(tr1, te0)


def test_loso_needs_two_animals():
    with pytest.raises(ValidationError):
        loso_folds(["a", "a"])


# ---------------------------------------------------------------- metrics


def test_confusion_conventions():
    truths = [1, 2, 3, 3]
    cm = confusion(truths, truths)
    assert np.array_equal(cm.counts, np.diag(np.bincount(truths, minlength=10)[1:]))
    cm = confusion([1, 1, 1, 1], truths)
    assert cm.counts[0].sum() == 4 and cm.counts[1:].sum() == 0
    assert cm.counts[0, 2] == 2  # row = predicted, column = true


def test_confusion_errors():
    with pytest.raises(ValidationError):
        confusion([1, 2], [1])
    with pytest.raises(ValidationError):
        confusion([0], [1])
    with pytest.raises(ValidationError):
        confusion([1], [10])


def test_column_percent():
    cm = ConfusionMatrix(np.array([[3, 0], [1, 0]]))
    np.testing.assert_allclose(cm.column_percent(), [[75, 0], [25, 0]])


def test_f1_two_class_example():
    rep = f1_scores(ConfusionMatrix(np.array([[8, 2], [2, 8]])))
    assert rep.weighted_f1 == pytest.approx(0.8, abs=1e-15)


def test_f1_perfect():
    rep = f1_scores(confusion([1, 2, 5, 9, 9], [1, 2, 5, 9, 9]))
    assert rep.weighted_f1 == 1.0
    assert np.all(rep.f1[rep.support > 0] == 1.0)


def test_f1_zero_diagonal_class():
    # Walking (class 2) is present but never predicted correctly.
    counts = np.zeros((9, 9), dtype=int)
    counts[0, 0] = 10
    counts[0, 1] = 4
    rep = f1_scores(ConfusionMatrix(counts))
    assert rep.f1[1] == 0.0
    assert rep.support[1] == 4
    assert rep.f1[4] == 0.0 and rep.support[4] == 0


@pytest.mark.parametrize(
    "counts",
    [
        [[5, 1, 0], [2, 7, 3], [0, 0, 4]],
        [[0, 0, 0], [3, 2, 0], [1, 0, 9]],
        [[1, 2], [3, 4]],
        [[0, 5], [0, 0]],
    ],
)
def test_f1_matches_brute_force(counts):
    rep = f1_scores(ConfusionMatrix(np.array(counts)))
    f1, weighted = brute_force_f1(counts)
    assert rep.f1.tolist() == f1
    assert rep.weighted_f1 == weighted


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(0, 30), min_size=4, max_size=4), min_size=4, max_size=4))
def test_f1_random_matrices(counts):
    if sum(map(sum, counts)) == 0:
        return
    if sum(counts[i][c] for i in range(4) for c in range(4)) == 0:
        return
    rep = f1_scores(ConfusionMatrix(np.array(counts)))
    f1, weighted = brute_force_f1(counts)
    np.testing.assert_allclose(rep.f1, f1, rtol=1e-15, atol=0)
    assert rep.weighted_f1 == pytest.approx(weighted, rel=1e-14)


def test_f1_empty():
    with pytest.raises(EmptyDatasetError):
        f1_scores(ConfusionMatrix(np.zeros((3, 3), dtype=int)))


# ---------------------------------------------------------------- 3-class


def test_reduce_to_3_classes():
    labels = [1, 1, 2, 3, 4, 4, 5, 6, 1, 7, 8, 9, 5]
    out = reduce_to_3_classes([make_recording(labels)])
    merged = np.concatenate([r.labels for r in out])
    assert set(merged.tolist()) == {1, 2, 3}
    assert np.sum(merged == 2) == labels.count(3) + labels.count(4)
    assert np.sum(merged == 1) == labels.count(1)
    assert np.sum(merged == 3) == labels.count(5)
    # Gaps split the stream into contiguous runs.
    assert [len(r) for r in out] == [2, 4, 1, 1]


def test_reduce_to_3_classes_keeps_channels():
    rec = make_recording([3, 4, 2])
    (out,) = reduce_to_3_classes([rec])
    np.testing.assert_array_equal(out.channels, rec.channels[:, :2])
    assert out.labels.tolist() == [2, 2]


# ---------------------------------------------------------------- features


@pytest.fixture(scope="module")
def small_recs():
    return synth_generate(SynthConfig(seed=2, duration_s=60, animals=2, bout_s=10))


def test_prepare_windows_filters_before_windowing(small_recs):
    spec = WindowSpec(10, 0.8)
    ws = prepare_windows(small_recs, spec, ALL_MODALITIES)
    filt = design_bandpass()
    expected = [w for r in small_recs for w in segment(filter_recording(r, filt), spec, ALL_MODALITIES)]
    assert len(ws) == len(expected) == sum(window_count(len(r), spec) for r in small_recs)
    for i in (0, 17, len(ws) - 1):
        np.testing.assert_array_equal(ws.data[i], expected[i].channels)
        assert ws.labels[i] == expected[i].label
        assert ws.starts[i] == expected[i].start_index
    assert ws.channel_names == ALL_MODALITIES.channel_names


def test_prepare_windows_all_short():
    with pytest.raises(EmptyDatasetError):
        prepare_windows([make_recording([1] * 100)])


def test_featurize_shapes(small_recs):
    ws = prepare_windows(small_recs, WindowSpec(10, 0.8), ACC_ONLY)
    t = featurize(ws, "time")
    assert t.shape == (len(ws), 3, 500) and t.dtype == np.float32
    f = featurize(ws, "tfd", StftParams(), 10)
    assert f.shape == (len(ws), 3, 150)
    ref = resize_bicubic(spectrogram(ws.data[3], StftParams()), 10).reshape(3, -1)
    np.testing.assert_allclose(f[3], ref, rtol=1e-6)
    with pytest.raises(ValidationError):
        featurize(ws, "time", resolution=50)
    with pytest.raises(ValidationError):
        featurize(ws, "wavelet")


def test_block_minmax_and_scaled_view(rng):
    feats = rng.normal(size=(10, 2, 5)).astype(np.float32)
    rows = np.array([0, 2, 4, 6])
    params = _fit_block_minmax(feats, rows, ("ax", "ay"))
    sub = feats[rows].astype(np.float64)
    np.testing.assert_array_equal(params.mins, sub.min(axis=(0, 2)))
    view = ScaledFeatures(feats, rows, params)
    assert len(view) == 4 and view.shape == (4, 10)
    x = view[np.arange(4)]
    assert x.min() == 0.0 and x.max() == 1.0
    feats[:, 1] = 1.0
    with pytest.raises(DegenerateChannelError, match="ay"):
        _fit_block_minmax(feats, rows, ("ax", "ay"))


def test_fold_seeds_distinct():
    seeds = {fold_seeds(0, i) for i in range(10)}
    assert len(seeds) == 10
    assert fold_seeds(3, 1) == fold_seeds(3, 1)


# ---------------------------------------------------------------- experiment


def test_run_experiment_small(small_recs, tmp_path):
    cfg = TrainConfig(epochs=1)
    rep = run_experiment(small_recs, WindowSpec(10, 0.8), ACC_ONLY, "tfd", 10, "stratified", cfg, k=3, seed=1)
    assert len(rep.folds) == 3
    n = sum(window_count(len(r), WindowSpec(10, 0.8)) for r in small_recs)
    assert sum(f.test_size for f in rep.folds) == rep.aggregate.counts.sum() == n
    assert rep.input_dim == 3 * 10 * 15
    assert rep.param_count == 64 * rep.input_dim + 10_761
    sizes = np.array([f.test_size for f in rep.folds])
    scores = np.array([f.weighted_f1 for f in rep.folds])
    assert rep.weighted_f1 == pytest.approx(np.sum(sizes * scores) / sizes.sum())
    again = run_experiment(small_recs, WindowSpec(10, 0.8), ACC_ONLY, "tfd", 10, "stratified", cfg, k=3, seed=1)
    assert json.dumps(rep.to_dict(), sort_keys=True) == json.dumps(again.to_dict(), sort_keys=True)

    rep.write_json(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["n_classes"] == 9 and len(data["folds"]) == 3
    rep.write_confusion_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 10 and lines[1].startswith("Grazing,")
    write_plot_csv([rep], tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0].startswith("representation,")


def test_run_experiment_loso_three_class(small_recs):
    rep = run_experiment(
        small_recs, WindowSpec(10, 0.8), ACC_ONLY, "time", 100, "loso", TrainConfig(epochs=1), three_class=True
    )
    assert len(rep.folds) == 2
    assert rep.aggregate.counts.shape == (3, 3)
    assert [f.test_animals for f in rep.folds] == [["cow01"], ["cow02"]]
    assert rep.to_dict()["class_names"] == ["Grazing", "Ruminating", "Standing"]


def test_run_experiment_bad_scheme(small_recs):
    with pytest.raises(ValidationError):
        run_experiment(small_recs, scheme="holdout")


def test_weighted_f1_equal_supports_is_plain_mean():
    counts = np.array([[6, 1, 2], [3, 8, 0], [1, 1, 8]])
    rep = f1_scores(ConfusionMatrix(counts))
    assert len(set(rep.support.tolist())) == 1
    assert rep.weighted_f1 == pytest.approx(rep.f1.mean(), rel=1e-15)


def test_aggregate_is_fold_sum(small_recs):
    rep = run_experiment(small_recs, WindowSpec(10, 0.8), ACC_ONLY, "time", 100, "loso", TrainConfig(epochs=1))
    total = sum(f.confusion.counts for f in rep.folds)
    np.testing.assert_array_equal(rep.aggregate.counts, total)
    assert rep.metrics.weighted_f1 == f1_scores(rep.aggregate).weighted_f1
