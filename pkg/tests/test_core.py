"""Tests for domain types and dataset / certificate file round-trips."""

import numpy as np
import pytest

from towercert.core import (
    Dataset,
    NeighbourhoodSpec,
    ParseError,
    TestConfig,
    ValidationError,
    load_dataset,
    load_dc_certificates,
    save_dataset,
    save_dc_certificates,
)
from towercert.stats import ParameterError


def test_csv_three_rows(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("0.1,0.2,1\n0.0,1.0,0\n0.5,0.5,1\n")
    ds = load_dataset(path)
    assert ds.n_items == 3
    assert ds.dim == 2
    assert ds.n_classes == 2
    assert list(ds.labels) == [1, 0, 1]
    assert ds.features[0, 1] == np.float32(0.2)


def test_empty_file_is_parse_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ParseError):
        load_dataset(path)


def test_csv_bad_rows_name_the_record(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.1,0.2,1\n0.3,oops,0\n")
    with pytest.raises(ParseError, match="record 2"):
        load_dataset(path)
    path.write_text("0.1,0.2,1\n0.3,0\n")
    with pytest.raises(ParseError, match="record 2"):
        load_dataset(path)


def test_out_of_domain_coordinate_names_item(tmp_path):
    path = tmp_path / "range.csv"
    path.write_text("0.1,0.2,0\n0.3,1.5,1\n")
    with pytest.raises(ValidationError, match="item 1"):
        load_dataset(path)


def test_csv_round_trip_identity(tmp_path):
    path = tmp_path / "rt.csv"
    original = Dataset(
        features=np.array([[0.1, 0.2], [0.0, 1.0], [0.5, 0.5]], dtype=np.float32),
        labels=np.array([1, 0, 1]),
        n_classes=2,
    )
    save_dataset(original, path)
    back = load_dataset(path)
    assert np.array_equal(back.features, original.features)
    assert np.array_equal(back.labels, original.labels)
    assert back.n_classes == original.n_classes


def test_minimal_round_trip(tmp_path):
    ds = Dataset(
        features=np.array([[0.75]], dtype=np.float32), labels=np.array([0]), n_classes=1
    )
    for name in ("one.csv", "one.bin"):
        save_dataset(ds, tmp_path / name)
        back = load_dataset(tmp_path / name)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)


def test_container_round_trip_is_bit_exact_at_scale(tmp_path):
    rng = np.random.default_rng(31)
    ds = Dataset(
        features=rng.random((10_000, 784), dtype=np.float32),
        labels=rng.integers(0, 10, size=10_000),
        n_classes=10,
    )
    path = tmp_path / "big.bin"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.features.dtype == np.float32
    assert np.array_equal(
        back.features.view(np.uint32), ds.features.view(np.uint32)
    )  # bit-exact, not merely close
    assert np.array_equal(back.labels, ds.labels)
    assert (back.n_classes, back.domain_lo, back.domain_hi) == (10, 0.0, 1.0)


def test_random_round_trips_both_formats(tmp_path):
    rng = np.random.default_rng(32)
    for trial in range(8):
        n, d = int(rng.integers(1, 40)), int(rng.integers(1, 12))
        ds = Dataset(
            features=rng.random((n, d), dtype=np.float32),
            labels=rng.integers(0, 5, size=n),
            n_classes=5,
        )
        for suffix in (".csv", ".bin"):
            path = tmp_path / f"t{trial}{suffix}"
            save_dataset(ds, path)
            back = load_dataset(path)
            assert np.array_equal(back.features.view(np.uint32), ds.features.view(np.uint32))
            assert np.array_equal(back.labels, ds.labels)


def test_container_header_and_payload_errors(tmp_path):
    path = tmp_path / "broken.bin"
    path.write_text('{"dim":2,"n_items":1}\nAAAA\nAAAA\n')
    with pytest.raises(ParseError, match="missing keys"):
        load_dataset(path)
    path.write_text(
        '{"dim":2,"n_items":2,"n_classes":2,"domain_lo":0.0,"domain_hi":1.0}\nAAAA\nAAAA\n'
    )
    with pytest.raises(ParseError, match="bytes"):
        load_dataset(path)
    path.write_text('{"dim":2,,}\nAAAA\nAAAA\n')
    with pytest.raises(ParseError, match="byte"):
        load_dataset(path)


def test_label_out_of_range_rejected():
    with pytest.raises(ValidationError, match="item 1"):
        Dataset(
            features=np.array([[0.1], [0.2]], dtype=np.float32),
            labels=np.array([0, 3]),
            n_classes=2,
        )


def test_no_partial_dataset_on_failure(tmp_path):
    # validation totality: the constructor either returns a full Dataset or raises
    path = tmp_path / "mix.csv"
    path.write_text("0.1,0.2,0\nnot,a,row\n")
    with pytest.raises(ParseError):
        load_dataset(path)


def test_dc_certificates_round_trip(tmp_path):
    ds = Dataset(
        features=np.random.default_rng(0).random((5, 2), dtype=np.float32),
        labels=np.zeros(5, dtype=np.int64),
        n_classes=1,
    )
    path = tmp_path / "dc.txt"
    path.write_text("1\n0\n1\n1\n0\n")
    dc = load_dc_certificates(path, ds)
    assert list(dc.flags) == [True, False, True, True, False]
    save_dc_certificates(dc, tmp_path / "dc2.txt")
    again = load_dc_certificates(tmp_path / "dc2.txt", ds)
    assert np.array_equal(again.flags, dc.flags)


def test_dc_length_mismatch(tmp_path):
    ds = Dataset(
        features=np.random.default_rng(0).random((5, 2), dtype=np.float32),
        labels=np.zeros(5, dtype=np.int64),
        n_classes=1,
    )
    path = tmp_path / "dc.txt"
    path.write_text("1\n0\n1\n1\n")
    with pytest.raises(ValidationError, match="expected 5.*found 4"):
        load_dc_certificates(path, ds)
    path.write_text("1\n0\n2\n1\n0\n")
    with pytest.raises(ParseError, match="record 3"):
        load_dc_certificates(path, ds)


def test_all_certified_flags(tmp_path):
    ds = Dataset(
        features=np.random.default_rng(0).random((3, 2), dtype=np.float32),
        labels=np.zeros(3, dtype=np.int64),
        n_classes=1,
    )
    path = tmp_path / "dc.txt"
    path.write_text("1\n1\n1\n")
    dc = load_dc_certificates(path, ds)
    assert dc.flags.all()


def test_neighbourhood_spec_validation():
    NeighbourhoodSpec(p=float("inf"), eps=0.0)
    NeighbourhoodSpec(p=1.0, eps=1.0)
    with pytest.raises(ParameterError):
        NeighbourhoodSpec(p=0.5, eps=0.1)
    with pytest.raises(ParameterError):
        NeighbourhoodSpec(p=2.0, eps=1.5)
    with pytest.raises(ParameterError):
        NeighbourhoodSpec(p=2.0, eps=-0.1)


def test_test_config_validation():
    TestConfig(kappa=0.1, alpha=0.1)
    with pytest.raises(ParameterError):
        TestConfig(kappa=0.5, alpha=0.1)
    with pytest.raises(ParameterError):
        TestConfig(kappa=0.1, alpha=1.0)
    with pytest.raises(ParameterError):
        TestConfig(kappa=0.1, alpha=0.1, pilot_size=100, max_samples=50)
    with pytest.raises(ParameterError):
        TestConfig(kappa=0.1, alpha=0.1, batch_size=0)
