from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adasdbo.data import (Dataset, IdxParseError, RngSpec, export_csv, generate_synthetic,
                          load_idx, partition, synthetic_ground_truth)

from idx_writer import write_idx_images, write_idx_labels


def test_idx_handcrafted(tmp_path):
    imgs = np.array([[[0, 255], [128, 64]], [[1, 2], [3, 4]]])
    write_idx_images(tmp_path / "img", imgs)
    write_idx_labels(tmp_path / "lab", [7, 1])
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    np.testing.assert_allclose(ds.features[0], [0, 1, 128 / 255, 64 / 255])
    assert ds.features[0, 2] == pytest.approx(0.50196, abs=1e-5)
    assert ds.features[0, 3] == pytest.approx(0.25098, abs=1e-5)
    np.testing.assert_array_equal(ds.labels, [7, 1])


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_roundtrip(tmp_path, suffix):
    g = np.random.default_rng(0)
    imgs = g.integers(0, 256, (17, 5, 3))
    labs = g.integers(0, 10, 17)
    write_idx_images(tmp_path / f"i{suffix}", imgs)
    write_idx_labels(tmp_path / f"l{suffix}", labs)
    ds = load_idx(tmp_path / f"i{suffix}", tmp_path / f"l{suffix}", split="test")
    np.testing.assert_array_equal(np.rint(ds.features * 255).astype(int), imgs.reshape(17, 15))
    np.testing.assert_array_equal(ds.labels, labs)
    assert ds.split == "test"


def test_idx_empty(tmp_path):
    write_idx_images(tmp_path / "i", np.zeros((0, 2, 2)))
    write_idx_labels(tmp_path / "l", [])
    assert len(load_idx(tmp_path / "i", tmp_path / "l")) == 0


def test_idx_errors(tmp_path):
    write_idx_images(tmp_path / "i", np.zeros((2, 2, 2)))
    write_idx_labels(tmp_path / "bad", [0, 1], magic=0x00000803)
    with pytest.raises(IdxParseError) as info:
        load_idx(tmp_path / "i", tmp_path / "bad")
    assert info.value.offset == 0
    write_idx_labels(tmp_path / "l3", [0, 1, 2])
    with pytest.raises(IdxParseError):
        load_idx(tmp_path / "i", tmp_path / "l3")
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-1])
    write_idx_labels(tmp_path / "l", [0, 1])
    with pytest.raises(IdxParseError, match="truncated"):
        load_idx(tmp_path / "short", tmp_path / "l")
    (tmp_path / "tiny").write_bytes(raw[:6])
    with pytest.raises(IdxParseError, match="header"):
        load_idx(tmp_path / "tiny", tmp_path / "l")


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(3), split="dev")
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), np.zeros(3))


def test_synthetic_statistics():
    rng = RngSpec(5, "stats")
    shards = generate_synthetic(3, 4, 4000, 10, 0.7, rng)
    omega = synthetic_ground_truth(4, rng)
    for i, (tr, va) in enumerate(shards, start=1):
        assert tr.split == "train" and va.split == "validation"
        std = tr.features.std(axis=0)
        np.testing.assert_allclose(std, i * 0.7, rtol=0.05)
        resid = tr.labels - tr.features @ omega
        assert resid.std() == pytest.approx(0.1, rel=0.1)


def test_synthetic_r_scaling_and_determinism():
    a = generate_synthetic(2, 3, 50, 50, 1.0, RngSpec(0, "s"))
    b = generate_synthetic(2, 3, 50, 50, 2.0, RngSpec(0, "s"))
    c = generate_synthetic(2, 3, 50, 50, 1.0, RngSpec(0, "s"))
    np.testing.assert_allclose(b[1][0].features, 2 * a[1][0].features)
    for (ta, va), (tc, vc) in zip(a, c):
        np.testing.assert_array_equal(ta.features, tc.features)
        np.testing.assert_array_equal(va.labels, vc.labels)
    d = generate_synthetic(2, 3, 50, 50, 1.0, RngSpec(1, "s"))
    assert not np.array_equal(d[0][0].features, a[0][0].features)
    with pytest.raises(ValueError):
        generate_synthetic(2, 3, 50, 50, 0.0, RngSpec(0))


def test_export_csv(tmp_path):
    ds = Dataset([[1.5, -2.0]], [0.25])
    export_csv(ds, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines() == ["x0,x1,label", "1.5,-2.0,0.25"]


def test_partition_equal_sizes():
    ds = Dataset(np.arange(20.0).reshape(10, 2), np.arange(10))
    assert [len(s) for s in partition(ds, 5)] == [2] * 5
    ds11 = Dataset(np.arange(22.0).reshape(11, 2), np.arange(11))
    assert [len(s) for s in partition(ds11, 5)] == [3, 2, 2, 2, 2]
    with pytest.raises(ValueError):
        partition(ds, 11)
    with pytest.raises(ValueError):
        partition(ds, 2, policy="nope")


def test_partition_class_skew():
    g = np.random.default_rng(0)
    labels = np.repeat(np.arange(5), 40)
    ds = Dataset(g.standard_normal((200, 3)), labels)
    shards = partition(ds, 5, policy="by_class_skew", fraction=0.3)
    for i, s in enumerate(shards):
        assert np.sum(s.labels == i) >= 0.3 * 40


@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 60), n=st.integers(1, 8), seed=st.integers(0, 100),
       policy=st.sampled_from(["equal", "by_class_skew"]))
def test_partition_is_multiset_split(N, n, seed, policy):
    if n > N:
        return
    g = np.random.default_rng(seed)
    ds = Dataset(np.arange(N, dtype=float)[:, None], g.integers(0, 4, N))
    shards = partition(ds, n, policy=policy, rng=RngSpec(seed, "p"))
    assert len(shards) == n
    got = Counter(float(v) for s in shards for v in s.features[:, 0])
    assert got == Counter(float(v) for v in ds.features[:, 0])
    for s in shards:
        np.testing.assert_array_equal(s.labels, ds.labels[s.features[:, 0].astype(int)])
