import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmindex import (
    FeatureTuple,
    ImageRecord,
    SynthConfig,
    generate_synthetic_corpus,
    load_descriptors,
    mean_cn_descriptor,
    root_sift_transform,
    save_descriptors,
    save_descriptors_text,
)
from cmindex.errors import ConfigError, EmptyPatchError, FormatError, InvalidDescriptorError


def one_hot(dim, idx):
    v = np.zeros(dim)
    v[idx] = 1.0
    return v


class TestRootSift:
    def test_zero_maps_to_zero(self):
        assert np.array_equal(root_sift_transform(np.zeros(128)), np.zeros(128))

    def test_one_hot_fixed_point(self):
        v = one_hot(128, 5)
        assert np.array_equal(root_sift_transform(v), v)

    def test_hand_example(self):
        raw = np.zeros(128)
        raw[0], raw[1] = 3.0, 1.0
        out = root_sift_transform(raw)
        assert out[0] == pytest.approx(math.sqrt(0.75), abs=1e-12)
        assert out[1] == pytest.approx(0.5, abs=1e-12)
        assert np.all(out[2:] == 0.0)

    def test_rejects_negative_and_nonfinite(self):
        bad = np.zeros(128)
        bad[3] = -1.0
        with pytest.raises(InvalidDescriptorError):
            root_sift_transform(bad)
        bad[3] = np.nan
        with pytest.raises(InvalidDescriptorError):
            root_sift_transform(bad)
        with pytest.raises(InvalidDescriptorError):
            root_sift_transform(np.ones(127))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_nonzero_input_has_unit_norm(self, seed):
        raw = np.random.default_rng(seed).random(128) + 1e-9
        out = root_sift_transform(raw)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-6)
        assert np.all(out >= 0)


simplex11 = (
    st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=11, max_size=11)
    .map(np.array)
    .filter(lambda v: v.sum() > 1e-3)
    .map(lambda v: v / v.sum())
)


class TestMeanCn:
    def test_mean_of_one_is_identity(self):
        v = np.full(11, 1 / 11)
        assert np.array_equal(mean_cn_descriptor([v]), v)

    def test_two_one_hots(self):
        out = mean_cn_descriptor([one_hot(11, 1), one_hot(11, 2)])
        expected = np.zeros(11)
        expected[1] = expected[2] = 0.5
        assert np.array_equal(out, expected)

    def test_hand_mean(self):
        a = np.zeros(11)
        a[0], a[1] = 0.6, 0.4
        b = np.zeros(11)
        b[0], b[1] = 0.2, 0.8
        out = mean_cn_descriptor([a, b])
        assert out[0] == pytest.approx(0.4, abs=1e-12)
        assert out[1] == pytest.approx(0.6, abs=1e-12)

    def test_empty_patch_rejected(self):
        with pytest.raises(EmptyPatchError):
            mean_cn_descriptor([])

    def test_non_simplex_rejected(self):
        with pytest.raises(InvalidDescriptorError):
            mean_cn_descriptor([np.full(11, 0.5)])

    @given(st.lists(simplex11, min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_output_on_simplex(self, vectors):
        out = mean_cn_descriptor(vectors)
        assert out.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(out >= 0) and np.all(out <= 1 + 1e-9)


class TestSyntheticCorpus:
    def test_zero_noise_gives_identical_tuples(self):
        cfg = SynthConfig(groups=1, images_per_group=2, features_per_image=1, noise=0.0, illum=0.0)
        a, b = generate_synthetic_corpus(cfg, seed=9)
        assert np.array_equal(a.features[0].sift, b.features[0].sift)
        assert np.array_equal(a.features[0].color, b.features[0].color)

    def test_deterministic_in_seed_and_config(self):
        cfg = SynthConfig(groups=3, images_per_group=2, features_per_image=4)
        c1 = generate_synthetic_corpus(cfg, seed=42)
        c2 = generate_synthetic_corpus(cfg, seed=42)
        assert len(c1) == len(c2)
        for r1, r2 in zip(c1, c2):
            assert r1.image_id == r2.image_id and r1.group_id == r2.group_id
            for f1, f2 in zip(r1.features, r2.features):
                assert np.array_equal(f1.sift, f2.sift)
                assert np.array_equal(f1.color, f2.color)
                assert (f1.x, f1.y, f1.scale) == (f2.x, f2.y, f2.scale)

    def test_counts_and_groups(self):
        cfg = SynthConfig(groups=100, images_per_group=4, features_per_image=2)
        records = generate_synthetic_corpus(cfg, seed=0)
        assert len(records) == 400
        assert len({r.group_id for r in records}) == 100
        assert len({r.image_id for r in records}) == 400

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            generate_synthetic_corpus(SynthConfig(groups=0), 0)
        with pytest.raises(ConfigError):
            generate_synthetic_corpus(SynthConfig(images_per_group=1), 0)
        with pytest.raises(ConfigError):
            generate_synthetic_corpus(SynthConfig(features_per_image=0), 0)


class TestFeatureTuple:
    def test_scale_must_be_positive(self, corpus):
        f = corpus[0].features[0]
        with pytest.raises(InvalidDescriptorError):
            FeatureTuple(f.sift, f.color, scale=0.0)


def assert_corpora_close(a, b, tol=1e-6):
    assert len(a) == len(b)
    for r1, r2 in zip(a, b):
        assert (r1.image_id, r1.group_id) == (r2.image_id, r2.group_id)
        assert len(r1.features) == len(r2.features)
        for f1, f2 in zip(r1.features, r2.features):
            np.testing.assert_allclose(f1.sift, f2.sift, atol=tol)
            np.testing.assert_allclose(f1.color, f2.color, atol=tol)


class TestDescriptorFiles:
    def test_binary_round_trip(self, corpus, tmp_path):
        path = tmp_path / "corpus.cmid"
        save_descriptors(corpus, path)
        loaded = load_descriptors(path)
        assert_corpora_close(corpus, loaded)
        # a second trip through float32 is exact
        path2 = tmp_path / "again.cmid"
        save_descriptors(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_text_variant_matches_binary(self, corpus, tmp_path):
        bpath, tpath = tmp_path / "c.cmid", tmp_path / "c.txt"
        save_descriptors(corpus, bpath)
        save_descriptors_text(corpus, tpath)
        from_bin = load_descriptors(bpath)
        from_text = load_descriptors(tpath)
        for r1, r2 in zip(from_bin, from_text):
            for f1, f2 in zip(r1.features, r2.features):
                assert np.array_equal(f1.sift, f2.sift)
                assert np.array_equal(f1.color, f2.color)

    def test_empty_image_round_trips(self, tmp_path):
        records = [ImageRecord(7, 3, [])]
        path = tmp_path / "empty.cmid"
        save_descriptors(records, path)
        loaded = load_descriptors(path)
        assert loaded[0].image_id == 7 and loaded[0].features == []

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.cmid"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FormatError):
            load_descriptors(path)

    def test_truncated(self, corpus, tmp_path):
        path = tmp_path / "trunc.cmid"
        save_descriptors(corpus, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError):
            load_descriptors(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        cfg = SynthConfig(groups=1, images_per_group=2, features_per_image=1)
        a, b = generate_synthetic_corpus(cfg, seed=3)
        dup = [a, ImageRecord(a.image_id, b.group_id, b.features)]
        path = tmp_path / "dup.cmid"
        save_descriptors(dup, path)
        with pytest.raises(FormatError):
            load_descriptors(path)
