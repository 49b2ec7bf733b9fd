import json

import numpy as np
import pytest

from mmgat.checkpoint import load_tensors, save_tensors
from mmgat.synthetic import (RECIPE_VERSION, SyntheticConfig, generate_synthetic, load_dataset,
                             save_dataset)


class TestGenerator:
    def test_exact_class_counts(self):
        ds = generate_synthetic(SyntheticConfig(grid=16, num_samples=4))
        for s in ds:
            counts = np.bincount(s.labels.ravel(), minlength=5)
            np.testing.assert_array_equal(counts, [154, 26, 25, 26, 25])

    def test_contrast_without_noise(self):
        cfg = SyntheticConfig(grid=8, num_modalities=3, num_classes=4, num_samples=2)
        for s in generate_synthetic(cfg):
            for m in range(3):
                img = s.images[m]
                np.testing.assert_array_equal(img[s.labels == m + 1], cfg.high)
                np.testing.assert_array_equal(img[s.labels == 0], 0.0)
                other = (s.labels > 0) & (s.labels != m + 1)
                np.testing.assert_array_equal(img[other], cfg.low)

    def test_noise_is_added(self):
        clean = generate_synthetic(SyntheticConfig(grid=8, num_samples=1, seed=3))
        noisy = generate_synthetic(SyntheticConfig(grid=8, num_samples=1, seed=3, noise=0.5))
        np.testing.assert_array_equal(clean[0].labels, noisy[0].labels)
        resid = noisy[0].images - clean[0].images
        assert 0.3 < resid.std() < 0.7

    def test_deterministic(self):
        cfg = SyntheticConfig(grid=8, num_samples=3, seed=11, noise=0.2)
        a, b = generate_synthetic(cfg), generate_synthetic(cfg)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.images, y.images)
            np.testing.assert_array_equal(x.labels, y.labels)
        c = generate_synthetic(SyntheticConfig(grid=8, num_samples=3, seed=12, noise=0.2))
        assert not np.array_equal(a[0].labels, c[0].labels)

    def test_class_one_sits_on_field_peaks(self):
        # nested bands: every class-1 pixel is surrounded mostly by foreground
        s = generate_synthetic(SyntheticConfig(grid=16, num_samples=1, smoothness=3.0))[0]
        ones = np.argwhere(s.labels == 1)
        fg = s.labels > 0
        nbr = [fg[(i + di) % 16, (j + dj) % 16] for i, j in ones
               for di, dj in ((0, 1), (1, 0), (0, -1), (-1, 0))]
        assert np.mean(nbr) > 0.8

    @pytest.mark.parametrize("kw", [dict(num_classes=6, num_modalities=4), dict(grid=1),
                                    dict(noise=-1.0), dict(fractions=(0.5, 0.5)),
                                    dict(num_classes=2, num_modalities=1, fractions=(0.9, 0.2))])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SyntheticConfig(**kw)

    def test_custom_fractions(self):
        cfg = SyntheticConfig(grid=10, num_modalities=1, num_classes=2, num_samples=1,
                              fractions=(0.75, 0.25))
        assert (generate_synthetic(cfg)[0].labels == 1).sum() == 25


class TestDatasetFiles:
    def test_round_trip(self, tmp_path):
        cfg = SyntheticConfig(grid=8, num_samples=3, noise=0.1, fractions=(0.6, 0.1, 0.1, 0.1, 0.1))
        ds = generate_synthetic(cfg)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.config == cfg
        for x, y in zip(ds, back):
            np.testing.assert_array_equal(x.images, y.images)
            np.testing.assert_array_equal(x.labels, y.labels)
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert manifest["recipe_version"] == RECIPE_VERSION
        assert manifest["sample_count"] == 3
        assert (tmp_path / "d" / "sample_00002.bin").stat().st_size == (4 * 64 + 64) * 8

    def test_byte_layout(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(grid=4, num_modalities=2, num_classes=3,
                                                num_samples=1))
        save_dataset(ds, tmp_path)
        blob = (tmp_path / "sample_00000.bin").read_bytes()
        np.testing.assert_array_equal(np.frombuffer(blob[:128], "<f8").reshape(4, 4),
                                      ds[0].images[0])
        np.testing.assert_array_equal(np.frombuffer(blob[256:], "<i8").reshape(4, 4), ds[0].labels)

    def test_truncated_sample(self, tmp_path):
        save_dataset(generate_synthetic(SyntheticConfig(grid=4, num_samples=1)), tmp_path)
        path = tmp_path / "sample_00000.bin"
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_dataset(tmp_path)


class TestTensorFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"W/0/1": rng.standard_normal((3, 4)), "p/0": np.zeros((0, 4)),
                   "b": rng.standard_normal((1, 2)), "s": np.array(2.5)}
        save_tensors(tensors, tmp_path / "t")
        back = load_tensors(tmp_path / "t")
        assert sorted(back) == sorted(tensors)
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])
            assert back[k].shape == tensors[k].shape

    def test_manifest_lines(self, tmp_path):
        save_tensors({"b": np.ones((2, 3)), "a": np.ones(1)}, tmp_path / "t")
        lines = (tmp_path / "t.manifest").read_text().splitlines()
        assert lines == ["mmgat-tensors 1", "a 1 0 8", "b 2x3 8 48"]

    def test_rejects_bad_files(self, tmp_path):
        with pytest.raises(ValueError):
            save_tensors({"a b": np.ones(1)}, tmp_path / "t")
        save_tensors({"a": np.ones(4)}, tmp_path / "t")
        (tmp_path / "t.bin").write_bytes(b"\0" * 16)
        with pytest.raises(ValueError):
            load_tensors(tmp_path / "t")
