import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdmlp import tensor as T
from mdmlp.errors import ConfigError, ShapeError
from mdmlp.tensor import PatchGeometry


def naive_linear(x, w, b):
    n_out, n_in = w.shape
    flat = x.reshape(-1, n_in)
    out = np.zeros((flat.shape[0], n_out))
    for r in range(flat.shape[0]):
        for o in range(n_out):
            acc = 0.0
            for i in range(n_in):
                acc += w[o, i] * flat[r, i]
            out[r, o] = acc + b[o]
    return out.reshape(x.shape[:-1] + (n_out,))


def naive_mean(t, axes):
    keep = [a for a in range(t.ndim) if a not in axes]
    out = np.zeros([t.shape[a] for a in keep])
    count = 0
    for idx in itertools.product(*(range(t.shape[a]) for a in axes)):
        sl = [slice(None)] * t.ndim
        for a, i in zip(axes, idx):
            sl[a] = i
        out += t[tuple(sl)]
        count += 1
    return out / count


class TestGeometry:
    @pytest.mark.parametrize(
        "side, p, o, expected",
        [(32, 4, 2, 15), (32, 4, 4, 8), (224, 14, 7, 31)],
    )
    def test_grid_extent(self, side, p, o, expected):
        g = PatchGeometry(side, side, 3, p, o)
        assert g.grid_h == g.grid_w == expected
        assert g.patch_pixels == p * p

    @pytest.mark.parametrize("side, p, o", [(32, 4, 3), (33, 4, 2), (10, 3, 2)])
    def test_indivisible_rejected(self, side, p, o):
        with pytest.raises(ConfigError, match="divisible"):
            PatchGeometry(side, side, 3, p, o)

    @pytest.mark.parametrize("p, o", [(4, 5), (40, 2), (4, 0)])
    def test_ordering_rejected(self, p, o):
        with pytest.raises(ConfigError):
            PatchGeometry(32, 32, 3, p, o)


class TestPermute:
    def test_shape(self):
        t = np.zeros((15, 15, 3, 64))
        assert T.permute(t, (3, 1, 2, 0)).shape == (64, 15, 3, 15)

    def test_identity(self, rng):
        t = rng.standard_normal((2, 3, 4))
        np.testing.assert_array_equal(T.permute(t, (0, 1, 2)), t)

    def test_matrix_transpose(self):
        out = T.permute(np.array([[1.0, 2, 3], [4, 5, 6]]), (1, 0))
        np.testing.assert_array_equal(out, [[1, 4], [2, 5], [3, 6]])
        assert out.flags.c_contiguous

    def test_invalid(self):
        with pytest.raises(ConfigError):
            T.permute(np.zeros((2, 2)), (0, 0))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=5).flatmap(
        lambda shape: st.tuples(st.just(tuple(shape)), st.permutations(range(len(shape))))))
    def test_roundtrip(self, case):
        shape, axes = case
        t = np.arange(np.prod(shape), dtype=np.float64).reshape(shape)
        back = T.permute(T.permute(t, axes), T.inverse_permutation(axes))
        np.testing.assert_array_equal(back, t)


class TestLinear:
    def test_hand_case(self):
        out = T.linear_last_axis(np.array([1.0, 2.0]), np.array([[1.0, 0], [0, 1], [1, 1]]), np.array([0.0, 0, 1]))
        np.testing.assert_array_equal(out, [1, 2, 4])

    def test_zero_map(self, rng):
        b = rng.standard_normal(3)
        out = T.linear_last_axis(rng.standard_normal((4, 5)), np.zeros((3, 5)), b)
        np.testing.assert_array_equal(out, np.broadcast_to(b, (4, 3)))

    def test_against_loop_oracle(self, rng):
        x = rng.standard_normal((2, 5, 7))
        w = rng.standard_normal((3, 7))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(T.linear_last_axis(x, w, b), naive_linear(x, w, b), rtol=1e-13, atol=1e-14)

    def test_within_4_ulps_at_64_bit(self, rng):
        for _ in range(5):
            x = rng.standard_normal((3, 7, 11))
            w = rng.standard_normal((5, 11))
            b = rng.standard_normal(5)
            got = T.linear_last_axis(x, w, b)
            want = naive_linear(x, w, b)
            # ulp measured against the magnitude of the summands, the scale at which rounding happens
            scale = np.abs(x).reshape(-1, 11) @ np.abs(w).T + np.abs(b)
            ulps = np.abs(got - want).reshape(-1, 5) / (np.spacing(scale))
            assert ulps.max() <= 4

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            T.linear_last_axis(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))


class TestPatches:
    def test_cifar_shape(self):
        img = np.zeros((3, 32, 32))
        assert T.extract_overlapping_patches(img, PatchGeometry(32, 32, 3, 4, 2)).shape == (15, 15, 3, 16)

    def test_non_overlap_partitions_image(self, rng):
        img = rng.random((3, 32, 32))
        out = T.extract_overlapping_patches(img, PatchGeometry(32, 32, 3, 4, 4))
        assert out.shape == (8, 8, 3, 16)
        rebuilt = out.reshape(8, 8, 3, 4, 4).transpose(2, 0, 3, 1, 4).reshape(3, 32, 32)
        np.testing.assert_array_equal(rebuilt, img)

    def test_constant_image(self):
        out = T.extract_overlapping_patches(np.full((3, 16, 16), 0.7), PatchGeometry(16, 16, 3, 4, 2))
        assert np.all(out == 0.7)

    def test_window_contents_row_major(self, rng):
        img = rng.random((2, 12, 10))
        g = PatchGeometry(12, 10, 2, 4, 2)
        out = T.extract_overlapping_patches(img, g)
        for i, j, c in itertools.product(range(g.grid_h), range(g.grid_w), range(2)):
            window = img[c, 2 * i:2 * i + 4, 2 * j:2 * j + 4]
            np.testing.assert_array_equal(out[i, j, c], window.reshape(-1))

    def test_interior_pixel_multiplicity(self):
        g = PatchGeometry(16, 16, 1, 4, 2)
        counts = np.zeros((16, 16), dtype=int)
        ids = np.arange(256, dtype=np.float64).reshape(1, 16, 16)
        out = T.extract_overlapping_patches(ids, g)
        for v in out.reshape(-1):
            counts.flat[int(v)] += 1
        # interior: away from the border band where fewer windows reach
        assert np.all(counts[2:14, 2:14] == 4)

    def test_geometry_mismatch(self):
        with pytest.raises(ShapeError):
            T.extract_overlapping_patches(np.zeros((3, 16, 16)), PatchGeometry(32, 32, 3, 4, 2))


class TestMean:
    def test_scalar(self):
        assert T.mean_over_axes(np.array([[1.0, 3.0], [5.0, 7.0]]), {0, 1}).tolist() == [4.0]

    def test_size_one_axis(self, rng):
        t = rng.random((3, 1, 4))
        out = T.mean_over_axes(t, {1})
        np.testing.assert_array_equal(out, t[:, 0, :])

    def test_loop_oracle(self, rng):
        t = rng.random((4, 5, 6))
        np.testing.assert_allclose(T.mean_over_axes(t, {0, 2}), naive_mean(t, (0, 2)), rtol=1e-13)

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            T.mean_over_axes(np.zeros((2, 2)), {2})
        with pytest.raises(ShapeError):
            T.mean_over_axes(np.zeros((2, 2)), set())


class TestElementwise:
    def test_channel_shared_field(self, rng):
        v = rng.random((1, 5, 6))
        x = rng.random((3, 5, 6))
        y = T.mul(v, x)
        assert y.shape == (3, 5, 6)
        for c in range(3):
            np.testing.assert_array_equal(y[c], v[0] * x[c])

    def test_identities(self, rng):
        a = rng.random((2, 3))
        np.testing.assert_array_equal(T.add(a, np.zeros_like(a)), a)
        np.testing.assert_array_equal(T.mul(a, np.ones_like(a)), a)

    def test_incompatible(self):
        with pytest.raises(ShapeError):
            T.add(np.zeros((2, 3)), np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            T.add(np.zeros((2, 3)), np.zeros(3))
