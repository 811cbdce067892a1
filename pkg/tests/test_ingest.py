import json

import numpy as np
import pytest

from trajid import DataError, load_catalog, validate_trial
from trajid.ingest import Catalog, Trial, read_trial_csv, write_manifest, write_trial_csv
from trajid.syngen import export_catalog, synth_catalog


def _write_minimal_dataset(tmp_path, rows, fs=250.0):
    trial_file = tmp_path / "trial0.csv"
    with open(trial_file, "w") as fh:
        fh.write("t,x,y,z\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")
    manifest = tmp_path / "manifest.json"
    write_manifest(
        [{"file": "trial0.csv", "participant": 0, "target": 0, "trial": 0, "fs": fs}],
        manifest,
    )
    return manifest


def test_load_minimal_manifest(tmp_path):
    rows = [(0.0, 1.0, 2.0, 3.0), (0.004, 1.1, 2.1, 3.1), (0.008, 1.2, 2.2, 3.2)]
    catalog = load_catalog(_write_minimal_dataset(tmp_path, rows))
    assert len(catalog) == 1
    assert catalog.trials[0].n_samples == 3
    np.testing.assert_array_equal(
        catalog.trials[0].samples, np.asarray(rows)[:, 1:]
    )


def test_missing_trial_file_rejected(tmp_path):
    manifest = tmp_path / "manifest.json"
    write_manifest(
        [{"file": "nope.csv", "participant": 0, "target": 0, "trial": 0, "fs": 250.0}],
        manifest,
    )
    with pytest.raises(DataError, match="missing trial file"):
        load_catalog(manifest)


def test_missing_manifest_rejected(tmp_path):
    with pytest.raises(DataError, match="missing manifest"):
        load_catalog(tmp_path / "absent.json")


def test_malformed_row_rejected(tmp_path):
    trial_file = tmp_path / "bad.csv"
    trial_file.write_text("t,x,y,z\n0.0,1.0,2.0,spam\n0.004,1.0,2.0,3.0\n")
    with pytest.raises(DataError, match="malformed number"):
        read_trial_csv(trial_file)


def test_wrong_header_rejected(tmp_path):
    trial_file = tmp_path / "bad.csv"
    trial_file.write_text("time,x,y,z\n0.0,1.0,2.0,3.0\n")
    with pytest.raises(DataError, match="header"):
        read_trial_csv(trial_file)


def test_uniform_spacing_accepted():
    rows = [(0.0, 0, 0, 0), (0.004, 0, 0, 0), (0.008, 0, 0, 0)]
    trial = validate_trial(rows, 0, 0, 0, 250.0)
    assert trial.n_samples == 3


def test_non_uniform_spacing_rejected():
    rows = [(0.0, 0, 0, 0), (0.004, 0, 0, 0), (0.009, 0, 0, 0)]
    with pytest.raises(DataError, match="non-uniform sampling"):
        validate_trial(rows, 0, 0, 0, 250.0)


def test_non_monotonic_time_rejected():
    rows = [(0.0, 0, 0, 0), (0.008, 0, 0, 0), (0.004, 0, 0, 0)]
    with pytest.raises(DataError, match="non-monotonic"):
        validate_trial(rows, 0, 0, 0, 250.0)


def test_two_row_trial_is_the_minimum():
    rows = [(0.0, 0, 0, 0), (0.004, 0, 0, 0)]
    assert validate_trial(rows, 0, 0, 0, 250.0).n_samples == 2
    with pytest.raises(DataError):
        validate_trial(rows[:1], 0, 0, 0, 250.0)


def test_non_finite_sample_rejected():
    rows = [(0.0, 0, 0, 0), (0.004, np.nan, 0, 0)]
    with pytest.raises(DataError, match="non-finite"):
        validate_trial(rows, 0, 0, 0, 250.0)


def test_duplicate_trial_key_rejected():
    samples = np.zeros((2, 3))
    a = Trial(0, 0, 0, 250.0, samples)
    b = Trial(0, 0, 0, 250.0, samples + 1.0)
    with pytest.raises(DataError, match="duplicate"):
        Catalog((a, b))


def test_mixed_sampling_rates_rejected():
    samples = np.zeros((2, 3))
    a = Trial(0, 0, 0, 250.0, samples)
    b = Trial(0, 0, 1, 100.0, samples)
    with pytest.raises(DataError, match="inconsistent sampling rates"):
        Catalog((a, b))


def test_target_id_out_of_range_rejected():
    with pytest.raises(DataError, match="target_id"):
        Trial(0, 9, 0, 250.0, np.zeros((2, 3)))


def test_trial_samples_are_immutable(small_catalog):
    catalog, _ = small_catalog
    with pytest.raises(ValueError):
        catalog.trials[0].samples[0, 0] = 1.0


def test_write_load_round_trip_is_bitwise(tmp_path):
    catalog, signatures = synth_catalog(2, 1, 0.7, master_seed=42)
    manifest = export_catalog(catalog, signatures, tmp_path)
    loaded = load_catalog(manifest)
    assert len(loaded) == len(catalog)
    by_key = {t.key: t for t in loaded.trials}
    for trial in catalog.trials:
        reread = by_key[trial.key]
        assert reread.samples.tobytes() == trial.samples.tobytes()
        assert reread.fs == trial.fs


def test_round_trip_csv_floats(tmp_path):
    values = np.array(
        [[0.1 + 0.2, -1e-17, 3.030303030303e2], [np.pi, -np.e, 1.0 / 3.0]]
    )
    trial = Trial(0, 0, 0, 250.0, values)
    path = tmp_path / "t.csv"
    write_trial_csv(trial, path)
    rows = read_trial_csv(path)
    assert rows[:, 1:].tobytes() == values.tobytes()


def test_subset_selects_participants(small_catalog):
    catalog, _ = small_catalog
    sub = catalog.subset([0, 2])
    assert sub.participants == (0, 2)
    with pytest.raises(DataError, match="not in catalog"):
        catalog.subset([5])


def test_manifest_entry_missing_key_rejected(tmp_path):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps([{"file": "x.csv", "participant": 0}]))
    with pytest.raises(DataError, match="missing key"):
        load_catalog(manifest)


def test_manifest_invalid_json_rejected(tmp_path):
    manifest = tmp_path / "manifest.json"
    manifest.write_text("{not json")
    with pytest.raises(DataError, match="invalid JSON"):
        load_catalog(manifest)
