import json
import math

import numpy as np
import pytest

from rntk import Arch, ShapeError, Variant
from rntk.bench import (
    BenchReport,
    Dataset,
    DatasetFormatError,
    HyperGrid,
    RNNKernelSpec,
    Splits,
    _GramStore,
    _method_configs,
    _vote,
    aggregates_to_csv,
    compute_metrics,
    default_splits,
    load_dataset,
    load_splits,
    normalize,
    report_to_json,
    run_protocol,
    run_suite,
    sigma_v_for,
)

SMALL_GRID = HyperGrid(sigma_u_set=(0.5,), sigma_b_set=(0.1,), L_set=(1,),
                       C_set=(1.0, 100.0), rbf_gamma_scaled=(0.1, 1.0),
                       poly_degrees=(2,), methods=("rnn", "rbf"))


def write_csv(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def make_dataset(seed, n=16, T=4, classes=2, name="synth"):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, T))
    labels = np.arange(n) % classes
    X += labels[:, None] * 1.5
    return Dataset(features=X, labels=np.asarray(labels, dtype=np.int64),
                   name=name, label_values=tuple(range(classes)))


def test_load_dataset_basic(tmp_path):
    p = write_csv(tmp_path, "toy.csv", "1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0\n")
    ds = load_dataset(p)
    assert ds.n_points == 3 and ds.T == 2
    assert np.array_equal(ds.labels, [0, 1, 0])
    assert ds.name == "toy" and ds.label_values == (0, 1)
    assert np.array_equal(ds.features, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])


def test_load_dataset_recodes_labels(tmp_path):
    p = write_csv(tmp_path, "gap.csv", "1.0,7\n2.0,3\n3.0,7\n")
    ds = load_dataset(p)
    assert ds.label_values == (3, 7)
    assert np.array_equal(ds.labels, [1, 0, 1])


def test_load_dataset_errors(tmp_path):
    with pytest.raises(DatasetFormatError, match="empty"):
        load_dataset(write_csv(tmp_path, "empty.csv", ""))
    with pytest.raises(DatasetFormatError, match="row 2"):
        load_dataset(write_csv(tmp_path, "ragged.csv", "1.0,2.0,0\n1.0,1\n"))
    with pytest.raises(DatasetFormatError, match="row 2, column 1"):
        load_dataset(write_csv(tmp_path, "nan.csv", "1.0,0\nNaN,1\n"))
    with pytest.raises(DatasetFormatError, match="column 2"):
        load_dataset(write_csv(tmp_path, "text.csv", "1.0,abc,0\n"))
    with pytest.raises(DatasetFormatError, match="label"):
        load_dataset(write_csv(tmp_path, "flab.csv", "1.0,2.0,0.5\n"))
    with pytest.raises(DatasetFormatError, match="row 1"):
        load_dataset(write_csv(tmp_path, "thin.csv", "7\n8\n"))


def test_normalize_contract():
    train = np.array([[5.0, -1.0, 2.0], [5.0, 1.0, 4.0]])
    test = np.array([[5.0, 3.0, 100.0]])
    tr, te = normalize(train, test)
    assert np.all(tr[:, 0] == 0.0) and np.all(te[:, 0] == 0.0)
    assert np.allclose(tr[:, 1], [-1.0, 1.0])
    assert np.allclose(te[0, 1], 3.0)  # scaled by train stats, no clipping
    assert abs(tr[:, 2].mean()) < 1e-15 and abs(tr[:, 2].std() - 1.0) < 1e-15
    with pytest.raises(ShapeError):
        normalize(train, np.zeros((1, 2)))


def test_sigma_v_values():
    assert sigma_v_for(Variant(Arch.RNN), 10) == 1.0
    assert sigma_v_for(Variant(Arch.RNN_AVG), 4) == 0.5
    assert sigma_v_for(Variant(Arch.BI_RNN_AVG), 2) == 0.5
    assert abs(sigma_v_for(Variant(Arch.BI_RNN), 3) - 1.0 / math.sqrt(2)) < 1e-15
    with pytest.raises(ValueError):
        sigma_v_for(Variant(Arch.RNN), 0)


def test_default_splits_deterministic():
    a = default_splits("wine", 21)
    b = default_splits("wine", 21)
    c = default_splits("iris", 21)
    assert np.array_equal(a.validation_half, b.validation_half)
    assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))
    assert not np.array_equal(a.validation_half, c.validation_half)
    assert a.validation_half.size == 10
    sizes = [f.size for f in a.folds]
    assert max(sizes) - min(sizes) <= 1
    assert np.array_equal(np.sort(np.concatenate(a.folds)), np.arange(21))
    assert np.array_equal(np.sort(np.concatenate([a.validation_half,
                                                  a.training_half])), np.arange(21))


def test_splits_validation():
    f = tuple(np.array_split(np.arange(12), 4))
    with pytest.raises(ValueError):
        Splits(validation_half=np.array([0, 0, 1]), folds=f, n_points=12)
    with pytest.raises(ValueError):
        Splits(validation_half=np.array([0, 99]), folds=f, n_points=12)
    bad_folds = (np.arange(6), np.arange(6, 12), np.array([], dtype=int),
                 np.array([], dtype=int))
    with pytest.raises(ValueError):
        Splits(validation_half=np.arange(6), folds=bad_folds, n_points=12)
    overlapping = (np.arange(3), np.arange(3), np.arange(3, 8), np.arange(8, 12))
    with pytest.raises(ValueError):
        Splits(validation_half=np.arange(6), folds=overlapping, n_points=12)


def test_load_splits_round_trip(tmp_path):
    s = default_splits("demo", 16)
    doc = {"validation_half": s.validation_half.tolist(),
           "folds": [f.tolist() for f in s.folds]}
    p = tmp_path / "demo.splits.json"
    p.write_text(json.dumps(doc), encoding="utf-8")
    loaded = load_splits(p, 16)
    assert np.array_equal(loaded.validation_half, s.validation_half)
    assert all(np.array_equal(a, b) for a, b in zip(loaded.folds, s.folds))


def test_metrics_rank_example():
    table = np.array([[0.9, 0.8], [0.7, 0.7]])
    rep = compute_metrics(table, ("A", "B"))
    assert np.allclose(rep.friedman_rank, [1.25, 1.75])
    assert np.allclose(rep.p95, [1.0, 0.5])
    assert np.allclose(rep.pma, [1.0, (0.8 / 0.9 + 1.0) / 2.0])
    assert np.allclose(rep.acc_mean, [0.8, 0.75])
    strict = compute_metrics(table, ("A", "B"), strict_pma=True)
    assert np.allclose(strict.pma, [1.0, 0.5])
    assert strict.pma_definition == "strict-count"


def test_metrics_single_method():
    rep = compute_metrics(np.array([[0.6], [0.9]]))
    assert rep.p95[0] == 1.0 and rep.pma[0] == 1.0 and rep.friedman_rank[0] == 1.0


def test_metrics_boundary_inclusive():
    table = np.array([[1.0, 0.95], [0.8, 0.76]])
    rep = compute_metrics(table)
    assert rep.p95[1] == 1.0


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        compute_metrics(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        compute_metrics(np.ones((2, 2)), ("only-one",))


def test_rank_sum_invariant_random_tables():
    rng = np.random.default_rng(7)
    for _ in range(20):
        D, M = rng.integers(1, 6), rng.integers(1, 7)
        table = rng.choice([0.5, 0.6, 0.7, 0.8], size=(D, M))
        rep = compute_metrics(table)
        assert np.allclose(rep.ranks.sum(axis=1), M * (M + 1) / 2)


def test_vote_rules():
    assert np.array_equal(_vote([np.array([2, 0, 1])], 3), [2, 0, 1])
    same = np.array([1, 1])
    assert np.array_equal(_vote([same, same.copy()], 2), same)
    # a 1-1 split between classes 2 and 0 goes to the smaller code
    a, b = np.array([2, 1]), np.array([0, 1])
    assert np.array_equal(_vote([a, b], 3), [0, 1])


def test_method_configs_counts():
    grid = HyperGrid()
    assert len(_method_configs("rnn", grid, 5)) == 80
    assert len(_method_configs("bi-rnn-avg", grid, 5)) == 80
    assert len(_method_configs("rnn-p", grid, 5)) == 320
    assert len(_method_configs("rbf", grid, 5)) == 20
    assert len(_method_configs("poly", grid, 5)) == 10
    with pytest.raises(ValueError):
        _method_configs("mystery", grid, 5)


def test_gram_store_reuse_counter():
    ds = make_dataset(1)
    store = _GramStore(SMALL_GRID, ds.T, threads=1)
    spec = RNNKernelSpec(Variant(Arch.RNN), 0.5, 0.1, 1)
    X = ds.features[:8]
    Y = ds.features[8:]
    first = store.get("validation", spec, X, Y)
    again = store.get("validation", spec, X, Y)
    assert store.computations == 1
    assert first["ck"][0] is again["ck"][0]
    assert first["ntk"][0] is not first["ck"][0]
    store.get(("fold", 0), spec, X, Y)
    assert store.computations == 2


def test_protocol_deterministic_and_counted():
    ds = make_dataset(11, n=16, T=4)
    r1 = run_protocol(ds, SMALL_GRID, threads=1)
    r2 = run_protocol(ds, SMALL_GRID, threads=1)
    assert r1.accuracies == r2.accuracies
    assert r1.best_configs == r2.best_configs
    assert set(r1.accuracies) == {"rnn", "rbf"}
    for acc in r1.accuracies.values():
        assert 0.0 <= acc <= 1.0
    for m, folds in r1.fold_accuracies.items():
        assert len(folds) == 4
        assert abs(np.mean(folds) - r1.accuracies[m]) < 1e-15
    # distinct kernel specs: 1 rnn + 2 rbf gammas; best specs per fold are a
    # subset, and every C value shares its spec's computation
    n_specs = 3
    best_specs = set()
    for labels in r1.best_configs.values():
        for label in labels:
            parts = label.split("|")
            drop = 2 if parts[0] not in ("rbf", "poly") else 1
            best_specs.add("|".join(parts[:-drop]))
    expected = n_specs + 4 * len(best_specs)
    assert r1.gram_computations == expected


def test_protocol_rejects_tiny_datasets():
    ds = make_dataset(13, n=6)
    with pytest.raises(ValueError, match="at least 8"):
        run_protocol(ds, SMALL_GRID)


def test_protocol_handles_missing_classes(caplog):
    rng = np.random.default_rng(17)
    X = rng.standard_normal((12, 3))
    labels = np.array([2, 2, 0, 0, 0, 1, 1, 1, 0, 1, 0, 1])
    X += labels[:, None]
    ds = Dataset(features=X, labels=labels, name="rare", label_values=(0, 1, 2))
    # both rare-class rows sit in the validation half, so the training half
    # never sees class 2 and pair models fall back to constant votes
    splits = Splits(validation_half=np.array([0, 1, 3, 5, 8, 10]),
                    folds=tuple(np.array_split(np.arange(12), 4)), n_points=12)
    with caplog.at_level("INFO"):
        result = run_protocol(ds, SMALL_GRID, splits=splits)
    assert "absent from the training half" in caplog.text
    assert all(0.0 <= a <= 1.0 for a in result.accuracies.values())


def test_run_suite_and_serialization():
    datasets = [make_dataset(19, name="alpha"), make_dataset(23, name="beta")]
    report, results = run_suite(datasets, SMALL_GRID, threads=1)
    assert report.dataset_names == ("alpha", "beta")
    assert report.method_names == ("rnn", "rbf")
    assert np.allclose(report.ranks.sum(axis=1), 3.0)
    doc = json.loads(report_to_json(report, results))
    assert doc["methods"] == ["rnn", "rbf"]
    assert "alpha" in doc["details"]
    csv_text = aggregates_to_csv(report)
    lines = csv_text.strip().split("\n")
    assert lines[0].startswith("method,") and len(lines) == 3
    with pytest.raises(ValueError):
        run_suite([], SMALL_GRID)


def test_report_invariants_enforced():
    with pytest.raises(ValueError):
        BenchReport(dataset_names=("d",), method_names=("m",),
                    accuracies=np.array([[0.5]]), acc_mean=np.array([0.5]),
                    acc_std=np.array([0.0]), p95=np.array([1.5]),
                    pma=np.array([1.0]), friedman_rank=np.array([1.0]),
                    ranks=np.array([[1.0]]), pma_definition="ratio-mean")


def test_sidecar_splits_change_result(tmp_path):
    ds = make_dataset(29, n=12, T=3, name="override")
    custom = Splits(validation_half=np.arange(6),
                    folds=tuple(np.array_split(np.arange(12), 4)), n_points=12)
    r_default = run_protocol(ds, SMALL_GRID)
    r_custom = run_protocol(ds, SMALL_GRID, splits=custom)
    assert set(r_default.accuracies) == set(r_custom.accuracies)
