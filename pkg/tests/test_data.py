import json

import numpy as np
import pytest

from subadjacent.data import (ANOMALY_KINDS, Anomaly, SyntheticSpec, default_spec, denormalize,
                              generate_synthetic, load_csv, load_spec, make_dataset, normalize,
                              plan_anomalies, spec_from_dict, write_csv)
from subadjacent.errors import ContractError, InputError, SpecError


def _write(path, text):
    path.write_text(text)
    return path


def test_csv_round_trip(tmp_path):
    train = np.array([[0.1, -2.5], [1e-17, 3.0], [7.25, 1 / 3]])
    labels = np.array([0, 1, 0])
    write_csv(tmp_path / "train.csv", train, ["a", "b"])
    write_csv(tmp_path / "test.csv", train[::-1], ["a", "b"], labels)
    ds = load_csv(tmp_path / "train.csv", tmp_path / "test.csv")
    np.testing.assert_array_equal(ds.train, train)
    np.testing.assert_array_equal(ds.test, train[::-1])
    np.testing.assert_array_equal(ds.test_labels, labels)
    assert ds.channels == ("a", "b") and not ds.normalized


def test_missing_label_column_is_named(tmp_path):
    tr = _write(tmp_path / "tr.csv", "a\n1\n2\n")
    te = _write(tmp_path / "te.csv", "a\n1\n2\n")
    with pytest.raises(InputError, match="'label'"):
        load_csv(tr, te)
    with pytest.raises(InputError, match="'attack'"):
        load_csv(tr, te, label_column="attack")


@pytest.mark.parametrize("body,where", [
    ("a,b,label\n1,2,0\n3,4\n", ":3:"),
    ("a,b,label\n1,2,0\n3,x,1\n", ":3: column 'b'"),
    ("a,b,label\n1,2,0\n3,4,2\n", ":3: column 'label'"),
    ("a,b,label\n1,2,yes\n", ":2: column 'label'"),
])
def test_parse_errors_carry_location(tmp_path, body, where):
    tr = _write(tmp_path / "tr.csv", "a,b\n1,2\n")
    te = _write(tmp_path / "te.csv", body)
    with pytest.raises(InputError, match=where):
        load_csv(tr, te)


def test_other_load_errors(tmp_path):
    tr = _write(tmp_path / "tr.csv", "a,b\n1,2\n")
    with pytest.raises(InputError):
        load_csv(tr, tmp_path / "missing.csv")
    with pytest.raises(InputError, match="channel mismatch"):
        load_csv(tr, _write(tmp_path / "te.csv", "a,c,label\n1,2,0\n"))
    with pytest.raises(InputError, match="no data rows"):
        load_csv(tr, _write(tmp_path / "te2.csv", "a,b,label\n"))


def test_constant_channel_survives(tmp_path):
    tr = _write(tmp_path / "tr.csv", "a,b\n5.0,1\n5.0,2\n5.0,3\n")
    te = _write(tmp_path / "te.csv", "a,b,label\n5.0,2,0\n6.0,2,1\n")
    ds = load_csv(tr, te)
    assert ds.n_channels == 2
    assert ds.std[0] == 1e-8
    n = normalize(ds)
    np.testing.assert_array_equal(n.train[:, 0], 0.0)
    assert n.test[0, 0] == 0.0 and n.test[1, 0] == pytest.approx(1e8)


def test_entity_column_is_not_a_channel(tmp_path):
    tr = _write(tmp_path / "tr.csv", "a\n1\n2\n")
    te = _write(tmp_path / "te.csv", "entity,a,label\nm1,1,0\nm2,2,1\n")
    ds = load_csv(tr, te)
    assert ds.channels == ("a",)
    assert list(ds.test_entities) == ["m1", "m2"]


def test_normalize_cases():
    ds = make_dataset("x", np.array([[0.0], [2.0]]), np.array([[1.0], [3.0]]), np.array([0, 1]))
    n = normalize(ds)
    assert ds.mean[0] == 1.0 and ds.std[0] == 1.0
    np.testing.assert_array_equal(n.train[:, 0], [-1.0, 1.0])
    # test is scaled with train statistics: the train mean maps to zero
    np.testing.assert_array_equal(n.test[:, 0], [0.0, 2.0])
    with pytest.raises(ContractError):
        normalize(n)
    with pytest.raises(ContractError):
        denormalize(ds)


def test_normalize_round_trip():
    rng = np.random.default_rng(0)
    ds = make_dataset("x", rng.normal(3, 2, (50, 3)), rng.normal(3, 2, (20, 3)), np.zeros(20, int))
    back = denormalize(normalize(ds))
    np.testing.assert_allclose(back.train, ds.train, atol=1e-10)
    np.testing.assert_allclose(back.test, ds.test, atol=1e-10)


def test_dataset_shape_checks():
    with pytest.raises(InputError):
        make_dataset("x", np.zeros((5, 2)), np.zeros((5, 3)), np.zeros(5, int))
    with pytest.raises(InputError):
        make_dataset("x", np.zeros((5, 2)), np.zeros((5, 2)), np.zeros(4, int))


def test_no_anomalies_gives_clean_labels():
    ds = generate_synthetic(SyntheticSpec(train_length=300, test_length=200))
    assert ds.test_labels.sum() == 0 and ds.n_channels == 1


def test_global_anomaly_at_fifty():
    spec = SyntheticSpec(train_length=300, test_length=200, anomalies=(Anomaly("global", 50, 1, 8.0),))
    ds = generate_synthetic(spec)
    clean = generate_synthetic(SyntheticSpec(train_length=300, test_length=200))
    assert np.flatnonzero(ds.test_labels).tolist() == [50]
    base = clean.test[:, 0]
    assert abs(ds.test[50, 0] - base.mean()) == pytest.approx(8.0 * base.std(), rel=1e-12)
    np.testing.assert_array_equal(np.delete(ds.test, 50), np.delete(clean.test, 50))


def test_each_kind_perturbs_only_its_segment():
    clean = generate_synthetic(SyntheticSpec(train_length=100, test_length=400)).test[:, 0]
    positions = {"global": 20, "contextual": 60, "shapelet": 100, "seasonal": 200, "trend": 300}
    for kind in ANOMALY_KINDS:
        span = 1 if kind in ("global", "contextual") else 40
        a = Anomaly(kind, positions[kind], span, 2.0 if kind == "contextual" else 3.0)
        ds = generate_synthetic(SyntheticSpec(train_length=100, test_length=400, anomalies=(a,)))
        x, lab = ds.test[:, 0], ds.test_labels
        assert lab.sum() == span
        changed = np.flatnonzero(x != clean)
        assert set(changed) <= set(range(a.position, a.end)), kind
        assert len(changed) > 0, kind
        if kind == "contextual":
            assert clean.min() <= x[a.position] <= clean.max()


def test_default_rate_and_label_mass():
    for seed in (0, 1, 2):
        spec = default_spec(seed)
        ds = generate_synthetic(spec)
        assert len(ds.train) == 20000 and len(ds.test) == 20000
        assert abs(ds.anomaly_rate - 0.2244) <= 0.01
        assert ds.test_labels.sum() == spec.label_mass
        kinds = {a.kind for a in spec.anomalies}
        assert kinds == set(ANOMALY_KINDS)


def test_generator_is_deterministic():
    a, b = generate_synthetic(default_spec(4)), generate_synthetic(default_spec(4))
    assert a.test.tobytes() == b.test.tobytes() and a.train.tobytes() == b.train.tobytes()
    c = generate_synthetic(default_spec(5))
    assert a.test.tobytes() != c.test.tobytes()


def test_spec_errors():
    with pytest.raises(SpecError, match="overlapping"):
        SyntheticSpec(test_length=100, anomalies=(Anomaly("trend", 10, 20), Anomaly("global", 25)))
    with pytest.raises(SpecError):
        SyntheticSpec(test_length=100, anomalies=(Anomaly("trend", 90, 20),))
    with pytest.raises(SpecError):
        SyntheticSpec(anomalies=(Anomaly("spike", 10),))
    with pytest.raises(SpecError):
        SyntheticSpec(anomalies=(Anomaly("global", 10, 3),))
    with pytest.raises(SpecError):
        plan_anomalies(100, 0.9)


def test_spec_file(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps({"train_length": 500, "test_length": 400, "seed": 3,
                             "anomalies": [{"kind": "seasonal", "position": 100, "span": 30}]}))
    spec = load_spec(p)
    assert spec.label_mass == 30 and spec.seed == 3
    assert spec_from_dict(spec.to_dict()) == spec
    planned = spec_from_dict({"test_length": 2000, "anomaly_rate": 0.1})
    assert planned.label_mass == 200
    p.write_text('{"lenght": 3}')
    with pytest.raises(SpecError, match="lenght"):
        load_spec(p)
