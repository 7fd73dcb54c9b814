import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rocerf.data import (
    Dataset,
    SplitSpec,
    fit_apply_preprocess,
    load_csv,
    load_schema,
    make_synthetic_gaussians,
    split,
)
from rocerf.errors import (
    DegenerateLabels,
    DegenerateSplit,
    EmptyTrainingSet,
    MissingFile,
    SchemaMismatch,
)
from rocerf.models import train_logreg

from .conftest import DATA


def _write(tmp_path, text, schema_text):
    csv = tmp_path / "d.csv"
    csv.write_text(text)
    sch = tmp_path / "d.schema"
    sch.write_text(schema_text)
    return csv, load_schema(sch)


SCHEMA = "[label]\ncolumn = y\npositive = yes\n\n[columns]\na = numeric\nc = categorical\ny = label\n"


def test_label_mapping(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n1,u,yes\n2,v,no\n3,u,yes\n", SCHEMA)
    raw = load_csv(csv, schema)
    assert raw.labels.tolist() == [1, -1, 1]


def test_non_numeric_cell_names_row_and_column(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n1,u,yes\nabc,v,no\n", SCHEMA)
    with pytest.raises(SchemaMismatch) as err:
        load_csv(csv, schema)
    assert err.value.row is not None and err.value.column == "a"


def test_missing_column(tmp_path):
    csv, schema = _write(tmp_path, "a,y\n1,yes\n2,no\n", SCHEMA)
    with pytest.raises(SchemaMismatch):
        load_csv(csv, schema)


def test_single_class_labels(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n1,u,yes\n2,v,yes\n", SCHEMA)
    with pytest.raises(DegenerateLabels):
        load_csv(csv, schema)


def test_missing_values_dropped_and_counted(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n1,u,yes\n,v,no\n3,?,no\n4,v,no\n", SCHEMA)
    raw = load_csv(csv, schema)
    assert raw.n == 2 and raw.dropped_rows == 2


def test_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        load_schema(tmp_path / "nope.schema")


def test_german_credit_has_1000_rows():
    raw = load_csv(DATA / "german_credit.csv", load_schema(DATA / "german_credit.schema"))
    assert raw.n == 1000


def test_zscore_symmetric_triple(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n1,u,yes\n2,u,no\n3,u,yes\n", SCHEMA)
    _, (tr,) = fit_apply_preprocess(load_csv(csv, schema))
    np.testing.assert_allclose(tr.features[:, 0], [-1.224744871391589, 0.0, 1.224744871391589],
                               atol=1e-9)


def test_constant_column_is_zero(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n5,u,yes\n5,v,no\n5,u,yes\n", SCHEMA)
    _, (tr,) = fit_apply_preprocess(load_csv(csv, schema))
    assert np.all(tr.features[:, 0] == 0.0)


def test_unseen_category_is_all_zeros(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n1,a,yes\n2,b,no\n", SCHEMA)
    csv2 = tmp_path / "t.csv"
    csv2.write_text("a,c,y\n1,c,yes\n2,a,no\n")
    pre, (tr, te) = fit_apply_preprocess(load_csv(csv, schema), [load_csv(csv2, schema)])
    assert pre.feature_names == ("a", "c=a", "c=b")
    assert te.features[0, 1:].tolist() == [0.0, 0.0]
    assert te.features[1, 1:].tolist() == [1.0, 0.0]


def test_inverse_numeric_round_trip():
    raw = load_csv(DATA / "german_credit.csv", load_schema(DATA / "german_credit.schema"))
    pre, (tr,) = fit_apply_preprocess(raw)
    back = pre.inverse_numeric(tr.features)
    for name, values in back.items():
        np.testing.assert_allclose(values, raw.columns[name], atol=1e-9)
    # one-hot blocks sum to one for every categorical column
    for col, cats in pre.categorical_maps.items():
        cols = [pre.feature_names.index(f"{col}={c}") for c in cats]
        assert np.all(tr.features[:, cols].sum(axis=1) == 1.0)


def test_empty_training_set(tmp_path):
    csv, schema = _write(tmp_path, "a,c,y\n1,u,yes\n2,v,no\n", SCHEMA)
    raw = load_csv(csv, schema)
    with pytest.raises(EmptyTrainingSet):
        fit_apply_preprocess(raw.take(np.array([], dtype=int)))


def test_split_sizes_and_determinism():
    ds = Dataset(np.arange(20.0).reshape(10, 2), np.array([1, -1] * 5))
    a = split(ds, SplitSpec(0.6, 0.2, 0.2, seed=7))
    b = split(ds, SplitSpec(0.6, 0.2, 0.2, seed=7))
    assert [p.n for p in a] == [6, 2, 2]
    for x, y in zip(a, b):
        assert np.array_equal(x.features, y.features)
    rows = np.concatenate([p.features[:, 0] for p in a])
    assert sorted(rows.tolist()) == sorted(ds.features[:, 0].tolist())


def test_degenerate_split():
    ds = Dataset(np.zeros((3, 1)), np.array([1, -1, 1]))
    with pytest.raises(DegenerateSplit):
        split(ds, SplitSpec(0.98, 0.01, 0.01))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(10, 200), seed=st.integers(0, 2**32 - 1))
def test_split_is_a_partition(n, seed):
    ds = Dataset(np.arange(n, dtype=float)[:, None], np.where(np.arange(n) % 2, 1, -1))
    parts = split(ds, SplitSpec(seed=seed))
    rows = np.sort(np.concatenate([p.features[:, 0] for p in parts]))
    assert np.array_equal(rows, np.arange(n, dtype=float))


def test_synthetic_means_coincide_at_zero_separation():
    ds = make_synthetic_gaussians(2000, 3, 0.0, 0)
    pos = ds.features[ds.labels == 1].mean(axis=0)
    neg = ds.features[ds.labels == -1].mean(axis=0)
    assert np.linalg.norm(pos) < 0.1 and np.linalg.norm(neg) < 0.1


def test_synthetic_separable_and_deterministic():
    ds = make_synthetic_gaussians(20, 2, 4.0, 1)
    model = train_logreg(ds)
    assert np.mean(model.predict(ds.features) == ds.labels) >= 0.95
    assert np.array_equal(ds.features, make_synthetic_gaussians(20, 2, 4.0, 1).features)


def test_dataset_csv_round_trip(tmp_path):
    ds = make_synthetic_gaussians(5, 3, 1.0, 2)
    ds.to_csv(tmp_path / "x.csv")
    back = Dataset.from_csv(tmp_path / "x.csv")
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
