import json
from collections import Counter

import numpy as np
import pytest

from reachgen import dataset
from reachgen.arm import ArmParams, JointState, forward_kinematics, inverse_kinematics, simulate_activations
from reachgen.dataset import (GenConfig, ReachPair, generate_dataset, load_dataset, sample_reach_pair,
                              sample_stream, save_dataset)
from reachgen.errors import ChecksumMismatch, FormatError, InfeasibleStep, SamplingExhausted
from reachgen.minjerk import MinJerkSpec, sample_minjerk_arrays

ARM = ArmParams()


@pytest.fixture(scope="module")
def small_id():
    return generate_dataset(GenConfig(n_train=40, n_test=10, seed=7), ARM)


def test_sampling_respects_region_and_distance():
    cfg = GenConfig()
    rng = sample_stream(0, 0)
    counter = Counter()
    pts = np.array([sample_reach_pair(rng, cfg, ARM, counter).as_vector() for _ in range(10_000)])
    s, e = pts[:, :2], pts[:, 2:]
    assert np.all((s[:, 0] >= -0.25) & (s[:, 0] <= 0.25) & (s[:, 1] >= 0.25) & (s[:, 1] <= 0.45))
    d = np.linalg.norm(e - s, axis=1)
    assert np.all((d > 0) & (d <= 0.10))
    for p in (s, e):
        r = np.linalg.norm(p, axis=1)
        assert np.all((r >= 0.15) & (r <= 0.58))
    # directions cover the circle
    ang = np.arctan2(e[:, 1] - s[:, 1], e[:, 0] - s[:, 0])
    assert np.histogram(ang, bins=8, range=(-np.pi, np.pi))[0].min() > 800
    assert counter["reach"] > 0


def test_sampling_is_deterministic():
    cfg = GenConfig()
    a = [sample_reach_pair(sample_stream(3, i), cfg, ARM).as_vector() for i in range(20)]
    b = [sample_reach_pair(sample_stream(3, i), cfg, ARM).as_vector() for i in range(20)]
    np.testing.assert_array_equal(a, b)


def test_unreachable_region_exhausts():
    cfg = GenConfig(region=(-0.25, 0.25, 1.9, 2.1))
    with pytest.raises(SamplingExhausted):
        sample_reach_pair(sample_stream(0, 0), cfg, ARM)


def test_generated_dataset_shape_and_splits(small_id):
    ds = small_id
    assert len(ds) == 50 and ds.activations.shape == (50, 300)
    assert ds.activations.min() >= 0 and ds.activations.max() <= 1
    assert len(set(ds.ids.tolist())) == 50
    assert len(ds.train) == 40 and len(ds.test) == 10
    assert not set(ds.train.ids) & set(ds.test.ids)


def test_parallel_generation_matches_serial(small_id):
    par = generate_dataset(GenConfig(n_train=40, n_test=10, seed=7), ARM, threads=2)
    assert par.pairs.tobytes() == small_id.pairs.tobytes()
    assert par.activations.tobytes() == small_id.activations.tobytes()
    assert par.rejections == small_id.rejections


def test_id_labels_reproduce_targets(small_id):
    ds = small_id
    q0 = inverse_kinematics(ARM, ds.pairs[:, :2])
    states, hand = simulate_activations(ARM, JointState.at_rest(q0), ds.activations.reshape(-1, 50, 6))
    assert np.linalg.norm(hand - ds.pairs[:, 2:], axis=1).max() < 2e-3
    for i in range(len(ds)):
        p, _, _ = sample_minjerk_arrays(MinJerkSpec(ds.pairs[i, :2], ds.pairs[i, 2:]))
        path = forward_kinematics(ARM, states[i, 1:, :2])
        assert np.linalg.norm(path - p, axis=1).max() < 5e-3


def test_oc_labels():
    ds = generate_dataset(GenConfig(n_train=2, n_test=1, seed=1, method="OC"), ARM)
    assert ds.activations.shape == (3, 300)
    q0 = inverse_kinematics(ARM, ds.pairs[:, :2])
    _, hand = simulate_activations(ARM, JointState.at_rest(q0), ds.activations.reshape(-1, 50, 6))
    assert np.linalg.norm(hand - ds.pairs[:, 2:], axis=1).max() < 2e-3


def test_labeling_failures_are_resampled(monkeypatch):
    real = dataset.label_pair
    calls = []

    def flaky(arm, pair, method, ilqg_cfg=None):
        calls.append(pair)
        if len(calls) == 1:
            raise InfeasibleStep(3)
        return real(arm, pair, method, ilqg_cfg)

    monkeypatch.setattr(dataset, "label_pair", flaky)
    ds = generate_dataset(GenConfig(n_train=1, n_test=0, seed=2), ARM)
    assert ds.rejections["label"] == 1
    assert not np.array_equal(calls[0].as_vector(), ds.pairs[0])


def test_save_load_round_trip(small_id, tmp_path):
    manifest = save_dataset(small_id, tmp_path / "a")
    back = load_dataset(tmp_path / "a")
    as_text = np.vectorize(lambda v: float(dataset.fmt(v)))
    np.testing.assert_array_equal(back.pairs, as_text(small_id.pairs))
    np.testing.assert_array_equal(back.activations, as_text(small_id.activations))
    np.testing.assert_array_equal(back.ids, small_id.ids)
    np.testing.assert_array_equal(back.splits, small_id.splits)
    assert back.config == small_id.config
    assert manifest["rows"] == {"train": 40, "test": 10}
    assert manifest["seed"] == 7 and manifest["format_version"] == "1"
    assert set(manifest["checksums"]) == {"pairs.csv", "activations.csv"}
    # a reloaded dataset saves to identical bytes
    save_dataset(back, tmp_path / "b")
    for name in ("pairs.csv", "activations.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "activations.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["id", "a_t00_m0", "a_t00_m1"] and header[-1] == "a_t49_m5"


def test_truncated_file_names_row(small_id, tmp_path):
    save_dataset(small_id, tmp_path)
    path = tmp_path / "activations.csv"
    lines = path.read_text().splitlines()
    lines[5] = ",".join(lines[5].split(",")[:100])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError) as exc:
        load_dataset(tmp_path)
    assert exc.value.line == 6
    assert "activations.csv:6" in str(exc.value)


def test_flipped_digit_fails_checksum(small_id, tmp_path):
    save_dataset(small_id, tmp_path)
    path = tmp_path / "pairs.csv"
    text = path.read_text()
    i = text.index("0.", text.index("\n")) + 2
    flipped = text[:i] + ("1" if text[i] != "1" else "2") + text[i + 1:]
    path.write_text(flipped)
    with pytest.raises(ChecksumMismatch):
        load_dataset(tmp_path)
    load_dataset(tmp_path, verify=False)


def test_out_of_range_activation_rejected(small_id, tmp_path):
    save_dataset(small_id, tmp_path)
    path = tmp_path / "activations.csv"
    lines = path.read_text().splitlines()
    cells = lines[2].split(",")
    cells[4] = "1.5"
    lines[2] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError) as exc:
        load_dataset(tmp_path, verify=False)
    assert (exc.value.line, exc.value.column) == (3, 5)


def test_manifest_records_config(small_id, tmp_path):
    save_dataset(small_id, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["gen"]["region"] == [-0.25, 0.25, 0.25, 0.45]
    assert m["arm"]["R"] == ARM.R.tolist()
    assert "reach" in m["rejections"] and "label" in m["rejections"]


def test_reach_pair_vector_round_trip():
    p = ReachPair(np.array([0.1, 0.3]), np.array([0.15, 0.35]))
    q = ReachPair.from_vector(p.as_vector())
    np.testing.assert_array_equal(q.start, p.start)
    np.testing.assert_array_equal(q.end, p.end)


def test_gen_config_validation():
    assert GenConfig().problems() == []
    assert GenConfig(region=(0.25, -0.25, 0.25, 0.45)).problems()
    assert GenConfig(method="XX").problems()
    assert GenConfig(n_train=0, n_test=0).problems()
    assert GenConfig(method="oc").method == "OC"
