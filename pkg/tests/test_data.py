import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcanet import data
from hcanet.errors import ConfigError, FormatError


def rand_cube(h=8, w=8, b=4, seed=0):
    return np.random.default_rng(seed).random((h, w, b)).astype(np.float32)


class TestCubeFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        cube = rand_cube()
        p = tmp_path / "c.hsic"
        data.save_cube(cube, p)
        back = data.load_cube(p)
        assert np.array_equal(back.view(np.uint32), cube.view(np.uint32))

    def test_truncated_payload_names_lengths(self, tmp_path):
        cube = rand_cube()
        p = tmp_path / "c.hsic"
        data.save_cube(cube, p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-40])
        with pytest.raises(FormatError, match="expected 1024"):
            data.load_cube(p)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.hsic"
        p.write_bytes(b"JUNK" + b"\x00" * 40)
        with pytest.raises(FormatError, match="HSIC"):
            data.load_cube(p)

    def test_payload_is_band_major(self, tmp_path):
        cube = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
        p = tmp_path / "c.hsic"
        data.save_cube(cube, p)
        payload = np.frombuffer(p.read_bytes()[24:], dtype="<f4")
        np.testing.assert_array_equal(payload.reshape(2, 2, 3), np.transpose(cube, (2, 0, 1)))


class TestCropPatches:
    def test_random_patch_shape(self):
        cube = rand_cube(64, 64, 8)
        patches = data.crop_patches(cube, (16, 16, 8), "random", count=5, seed=1)
        assert len(patches) == 5
        assert all(p.shape == (16, 16, 8) for p in patches)

    def test_stride_tiling_disjoint(self):
        cube = rand_cube(32, 32, 4)
        patches = data.crop_patches(cube, (16, 16, 4), "stride")
        assert len(patches) == 4
        rebuilt = np.empty_like(cube)
        rebuilt[:16, :16] = patches[0]
        rebuilt[:16, 16:] = patches[1]
        rebuilt[16:, :16] = patches[2]
        rebuilt[16:, 16:] = patches[3]
        assert np.array_equal(rebuilt, cube)

    def test_patches_are_sub_blocks(self):
        cube = rand_cube(32, 32, 6)
        for p in data.crop_patches(cube, (8, 8, 3), "random", count=8, seed=2):
            # locate by matching the first voxel then verify the whole block
            matches = np.argwhere(np.isclose(cube, p[0, 0, 0]))
            found = any(
                oh + 8 <= 32 and ow + 8 <= 32 and ob + 3 <= 6
                and np.array_equal(cube[oh : oh + 8, ow : ow + 8, ob : ob + 3], p)
                for oh, ow, ob in matches
            )
            assert found

    def test_oversize_rejected(self):
        with pytest.raises(ConfigError):
            data.crop_patches(rand_cube(), (16, 8, 4), "random")

    def test_deterministic_in_seed(self):
        cube = rand_cube(32, 32, 4)
        a = data.crop_patches(cube, (8, 8, 4), "random", count=3, seed=9)
        b = data.crop_patches(cube, (8, 8, 4), "random", count=3, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestAugment:
    def test_rot90_four_times_identity(self):
        p = rand_cube()
        out = p
        for _ in range(4):
            out = data.augment(out, "rot90")
        assert np.array_equal(out, p)

    def test_rotation_preserves_voxel_multiset(self):
        p = rand_cube()
        for op in ("rot90", "rot180", "rot270"):
            q = data.augment(p, op)
            for b in range(p.shape[2]):
                assert sorted(q[:, :, b].ravel()) == sorted(p[:, :, b].ravel())

    def test_scale_one_identity(self):
        p = rand_cube()
        assert np.array_equal(data.augment(p, "scale1.0"), p)

    def test_scale_half_shape(self):
        p = rand_cube(16, 16, 4)
        assert data.augment(p, "scale0.5").shape == (8, 8, 4)

    def test_scale_stays_in_source_range(self):
        p = rand_cube(16, 16, 4, seed=3)
        q = data.augment(p, "scale0.75")
        assert q.min() >= p.min() - 1e-6 and q.max() <= p.max() + 1e-6

    def test_bilinear_constant_preserved(self):
        p = np.full((16, 16, 2), 0.37, dtype=np.float32)
        np.testing.assert_allclose(data.bilinear_scale(p, 0.75), 0.37, atol=1e-6)

    def test_unknown_op(self):
        with pytest.raises(ConfigError):
            data.augment(rand_cube(), "flip")


class TestManifestAndDataset:
    def make_dataset(self, tmp_path, n_cubes=2, samples=20):
        paths = []
        for i in range(n_cubes):
            cube = data.synthetic_cube(32, 32, 4, seed=i)
            p = tmp_path / f"cube{i}.hsic"
            data.save_cube(cube, p)
            paths.append(str(p))
        m = data.DatasetManifest(cubes=tuple(paths), patch_size=(8, 8, 4),
                                 samples=samples, seed=5)
        return data.PatchDataset(m)

    def test_manifest_json_roundtrip(self):
        m = data.DatasetManifest(cubes=("a.hsic",), patch_size=(8, 8, 4), samples=10)
        assert data.DatasetManifest.from_json(m.to_json()) == m

    def test_missing_cube_rejected(self):
        m = data.DatasetManifest(cubes=("nope.hsic",), patch_size=(8, 8, 4))
        with pytest.raises(ConfigError):
            data.PatchDataset(m)

    def test_samples_deterministic(self, tmp_path):
        d1 = self.make_dataset(tmp_path)
        d2 = self.make_dataset(tmp_path)
        assert d1.samples == d2.samples
        assert np.array_equal(d1.patch(3), d2.patch(3))

    def test_epoch_order_pure_function(self, tmp_path):
        d = self.make_dataset(tmp_path)
        train, val = d.split_indices()
        assert sorted(train + val) == list(range(len(d)))
        assert d.epoch_order(2, train) == d.epoch_order(2, train)
        assert d.epoch_order(1, train) != d.epoch_order(2, train)

    def test_patch_shape_and_dtype(self, tmp_path):
        d = self.make_dataset(tmp_path)
        p = d.patch(0)
        assert p.shape == (8, 8, 4) and p.dtype == np.float32

    def test_val_split_fraction(self, tmp_path):
        d = self.make_dataset(tmp_path, samples=100)
        train, val = d.split_indices()
        assert len(val) == 5  # default 5%


class TestSyntheticCube:
    def test_range_and_dtype(self):
        c = data.synthetic_cube(32, 32, 8, seed=0)
        assert c.dtype == np.float32
        assert 0.0 <= c.min() and c.max() <= 1.0
        assert c.max() - c.min() > 0.5  # actually uses the range

    def test_deterministic(self):
        a = data.synthetic_cube(16, 16, 4, seed=7)
        b = data.synthetic_cube(16, 16, 4, seed=7)
        assert np.array_equal(a, b)

    def test_seed_changes_content(self):
        a = data.synthetic_cube(16, 16, 4, seed=7)
        b = data.synthetic_cube(16, 16, 4, seed=8)
        assert not np.array_equal(a, b)

    @given(st.integers(0, 500))
    @settings(max_examples=10, deadline=None)
    def test_smoothness(self, seed):
        c = data.synthetic_cube(24, 24, 6, seed=seed)
        # low-order Fourier content: neighboring voxels stay close
        assert np.abs(np.diff(c, axis=0)).max() < 0.6
        assert np.abs(np.diff(c, axis=2)).max() < 0.7
