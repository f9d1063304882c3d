import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adda.errors import FormatError, ValidationError
from adda.data import (
    DatasetContainer,
    PreprocessConfig,
    SyntheticShiftSpec,
    apply_shift,
    load_dataset,
    load_idx,
    preprocess,
    resolve_dataset,
    save_dataset,
    save_idx,
    split,
    synthetic_digits,
    to_grayscale,
)


def make_container(rng, n=10, c=1, h=28, w=28, name="demo"):
    images = rng.integers(0, 256, size=(n, c, h, w), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    return DatasetContainer(name, np.asarray(images), labels)


class TestIdx:
    def test_round_trip_4d(self, rng, tmp_path):
        arr = rng.integers(0, 256, size=(10, 1, 28, 28), dtype=np.uint8)
        save_idx(arr, tmp_path / "a.idx")
        assert np.array_equal(load_idx(tmp_path / "a.idx"), arr)

    def test_round_trip_labels(self, rng, tmp_path):
        arr = rng.integers(0, 10, size=64, dtype=np.uint8)
        save_idx(arr, tmp_path / "l.idx")
        assert np.array_equal(load_idx(tmp_path / "l.idx"), arr)

    def test_3d_file_loads_as_single_channel(self, tmp_path):
        blob = struct.pack(">IIII", 0x00000803, 1, 2, 2) + bytes([1, 2, 3, 4])
        (tmp_path / "h.idx").write_bytes(blob)
        arr = load_idx(tmp_path / "h.idx")
        assert arr.shape == (1, 1, 2, 2)
        assert arr.ravel().tolist() == [1, 2, 3, 4]  # row-major payload order

    def test_bad_magic_rejected(self, tmp_path):
        blob = struct.pack(">II", 0x00000802, 4) + bytes(4)
        (tmp_path / "bad.idx").write_bytes(blob)
        with pytest.raises(FormatError) as exc:
            load_idx(tmp_path / "bad.idx")
        assert exc.value.reason == "bad-magic"

    def test_truncated_payload_rejected(self, tmp_path):
        blob = struct.pack(">IIII", 0x00000803, 2, 3, 3) + bytes(10)
        (tmp_path / "t.idx").write_bytes(blob)
        with pytest.raises(FormatError) as exc:
            load_idx(tmp_path / "t.idx")
        assert exc.value.reason == "truncated"

    def test_dimension_overflow_rejected(self, tmp_path):
        blob = struct.pack(">IIII", 0x00000803, 0xFFFFFFFF, 0xFFFFFFFF, 0xFF)
        (tmp_path / "o.idx").write_bytes(blob)
        with pytest.raises(FormatError) as exc:
            load_idx(tmp_path / "o.idx")
        assert exc.value.reason == "dimension-overflow"

    def test_dataset_pair_round_trip(self, rng, tmp_path):
        ds = make_container(rng)
        save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path, "demo")
        assert np.array_equal(back.images, ds.images)
        assert np.array_equal(back.labels, ds.labels)

    def test_missing_dataset_raises_file_not_found(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path, "nope")


class TestPreprocess:
    def test_constant_image_stays_constant_after_resize(self):
        images = np.full((2, 1, 40, 17), 113, dtype=np.uint8)
        labels = np.zeros(2, dtype=np.uint8)
        x, _ = preprocess(DatasetContainer("c", images, labels))
        assert x.shape == (2, 1, 28, 28)
        expected = (113 / 255.0 - 0.5) / 0.5
        assert np.abs(x.data - expected).max() < 1e-6

    def test_pure_red_luma_byte(self):
        img = np.zeros((1, 3, 2, 2), dtype=np.uint8)
        img[0, 0] = 255  # (255, 0, 0)
        gray = to_grayscale(img)
        assert gray.shape == (1, 1, 2, 2)
        assert np.all(gray == 76)  # 0.299 * 255 = 76.245 rounds down

    def test_luma_rounds_half_up(self):
        img = np.zeros((1, 3, 1, 1), dtype=np.uint8)
        img[0, 1] = 255  # 0.587 * 255 = 149.685 -> 150
        assert to_grayscale(img)[0, 0, 0, 0] == 150

    def test_byte_endpoints_map_to_unit_interval_edges(self):
        images = np.zeros((1, 1, 28, 28), dtype=np.uint8)
        images[0, 0, 0, 0] = 255
        x, _ = preprocess(DatasetContainer("e", images, np.zeros(1, dtype=np.uint8)))
        assert x.data[0, 0, 0, 0] == 1.0
        assert x.data[0, 0, 5, 5] == -1.0

    def test_output_range_and_shape(self, rng):
        ds = make_container(rng, n=5, c=3, h=31, w=19)
        x, labels = preprocess(ds)
        assert x.shape == (5, 1, 28, 28)
        assert x.data.min() >= -1.0 and x.data.max() <= 1.0
        assert labels.dtype == np.int64

    def test_ramp_stays_monotone_after_resize(self):
        ramp = np.tile(np.linspace(0, 255, 37, dtype=np.uint8), (37, 1))
        ds = DatasetContainer("r", ramp[None, None], np.zeros(1, dtype=np.uint8))
        x, _ = preprocess(ds)
        row = x.data[0, 0, 14]
        assert np.all(np.diff(row) >= 0)


class TestShifts:
    def test_invert_is_involution(self, rng):
        ds = make_container(rng)
        twice = apply_shift(apply_shift(ds, SyntheticShiftSpec("invert")), SyntheticShiftSpec("invert"))
        assert np.array_equal(twice.images, ds.images)

    def test_zero_sigma_noise_is_identity(self, rng):
        ds = make_container(rng)
        out = apply_shift(ds, SyntheticShiftSpec("gaussian_noise", sigma=0.0, seed=5))
        assert np.array_equal(out.images, ds.images)

    def test_noise_is_seed_deterministic(self, rng):
        ds = make_container(rng)
        a = apply_shift(ds, SyntheticShiftSpec("gaussian_noise", sigma=25.0, seed=7))
        b = apply_shift(ds, SyntheticShiftSpec("gaussian_noise", sigma=25.0, seed=7))
        assert np.array_equal(a.images, b.images)

    def test_translate_moves_single_pixel(self):
        images = np.zeros((1, 1, 28, 28), dtype=np.uint8)
        images[0, 0, 5, 5] = 255
        ds = DatasetContainer("p", images, np.zeros(1, dtype=np.uint8))
        out = apply_shift(ds, SyntheticShiftSpec("translate", dx=2, dy=0))
        assert out.images[0, 0, 5, 7] == 255
        assert out.images.sum() == 255

    def test_translate_out_of_range_rejected(self, rng):
        ds = make_container(rng)
        with pytest.raises(ValidationError, match="translate"):
            apply_shift(ds, SyntheticShiftSpec("translate", dx=28, dy=0))

    def test_unknown_kind_rejected(self, rng):
        with pytest.raises(ValidationError, match="unknown shift"):
            apply_shift(make_container(rng), SyntheticShiftSpec("blur"))

    @settings(max_examples=25, deadline=None)
    @given(kind=st.sampled_from(["invert", "gaussian_noise", "translate"]),
           seed=st.integers(0, 2**16))
    def test_shift_never_alters_labels_or_geometry(self, kind, seed):
        r = np.random.default_rng(seed)
        ds = make_container(r, n=4, h=12, w=12)
        spec = SyntheticShiftSpec(kind, sigma=10.0, dx=2, dy=-1, seed=seed)
        out = apply_shift(ds, spec)
        assert np.array_equal(out.labels, ds.labels)
        assert out.images.shape == ds.images.shape


class TestSplit:
    def test_sizes_80_20(self, rng):
        train, test = split(make_container(rng, n=100), 0.8, seed=0)
        assert len(train) == 80 and len(test) == 20

    def test_same_seed_identical(self, rng):
        ds = make_container(rng, n=50)
        a = split(ds, 0.7, seed=3)
        b = split(ds, 0.7, seed=3)
        assert np.array_equal(a[0].images, b[0].images)
        assert np.array_equal(a[1].labels, b[1].labels)

    def test_union_preserves_multiset(self, rng):
        ds = make_container(rng, n=37)
        train, test = split(ds, 0.5, seed=1)
        got = np.concatenate([train.images, test.images]).sum(axis=(1, 2, 3))
        assert sorted(got.tolist()) == sorted(ds.images.sum(axis=(1, 2, 3)).tolist())

    def test_empty_side_rejected(self, rng):
        with pytest.raises(ValidationError, match="empty"):
            split(make_container(rng, n=3), 0.01, seed=0)

    def test_bad_fraction_rejected(self, rng):
        with pytest.raises(ValidationError, match="fraction"):
            split(make_container(rng), 1.5, seed=0)


class TestResolveAndSynthetic:
    def test_resolve_prefers_train_test_pair(self, rng, tmp_path):
        train = make_container(rng, n=20, name="digits-train")
        test = make_container(rng, n=8, name="digits-test")
        save_dataset(train, tmp_path)
        save_dataset(test, tmp_path)
        tr, te = resolve_dataset(tmp_path, "digits")
        assert len(tr) == 20 and len(te) == 8

    def test_resolve_falls_back_to_split(self, rng, tmp_path):
        save_dataset(make_container(rng, n=30, name="digits"), tmp_path)
        tr, te = resolve_dataset(tmp_path, "digits", fraction=0.8, seed=0)
        assert len(tr) == 24 and len(te) == 6

    def test_resolve_missing_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="digits"):
            resolve_dataset(tmp_path, "digits")

    def test_synthetic_digits_deterministic(self):
        a = synthetic_digits(50, seed=5)
        b = synthetic_digits(50, seed=5)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)

    def test_synthetic_digits_valid_container(self):
        ds = synthetic_digits(64, seed=1)
        assert ds.images.shape == (64, 1, 28, 28)
        assert ds.labels.max() <= 9

    def test_container_invariants_enforced(self, rng):
        with pytest.raises(ValidationError, match="label count"):
            DatasetContainer(
                "bad",
                rng.integers(0, 255, size=(5, 1, 8, 8), dtype=np.uint8),
                np.zeros(4, dtype=np.uint8),
            )
        with pytest.raises(ValidationError, match="< 10"):
            DatasetContainer(
                "bad",
                rng.integers(0, 255, size=(2, 1, 8, 8), dtype=np.uint8),
                np.array([3, 11], dtype=np.uint8),
            )
