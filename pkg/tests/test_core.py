"""Grid, signal, filter, and mask invariants plus the two core operators."""

import numpy as np
import pytest

from lpk.core import (
    Filter,
    GridMismatchError,
    KGrid,
    KSignal,
    MultiFilter,
    MultiKSignal,
    SamplingMask,
    centered_grid,
    conv_apply,
    conv_response,
    signals_allclose,
    zero_fill,
)


def grid1d(lo, hi, fov=1.0):
    return KGrid((lo,), (hi,), (fov,))


class TestKGrid:
    def test_contains_origin_required(self):
        with pytest.raises(ValueError):
            KGrid((1,), (4,), (1.0,))
        with pytest.raises(ValueError):
            KGrid((-4,), (-1,), (1.0,))

    def test_minimum_two_points(self):
        with pytest.raises(ValueError):
            KGrid((0,), (0,), (1.0,))

    def test_positive_fov(self):
        with pytest.raises(ValueError):
            KGrid((-2,), (2,), (0.0,))
        with pytest.raises(ValueError):
            KGrid((-2,), (2,), (-1.0,))

    def test_window_skips_origin_check(self):
        g = KGrid.window((3,), (5,), (1.0,))
        assert g.shape == (3,)
        assert not g.contains_origin

    def test_shape_size_2d(self):
        g = KGrid((-2, -1), (2, 3), (1.0, 2.0))
        assert g.dims == 2
        assert g.shape == (5, 5)
        assert g.size == 25

    def test_centered_grid_even_odd(self):
        assert centered_grid(16, 1.0).n_min == (-8,)
        assert centered_grid(16, 1.0).n_max == (7,)
        assert centered_grid(17, 1.0).n_min == (-8,)
        assert centered_grid(17, 1.0).n_max == (8,)

    def test_valid_for_shrinks_range(self):
        g = grid1d(-4, 4)
        v = g.valid_for(1, 2)
        assert (v.n_min, v.n_max) == ((-2,), (3,))
        with pytest.raises(ValueError):
            grid1d(-1, 1).valid_for(2, 2)

    def test_pos_and_contains(self):
        g = grid1d(-3, 3)
        assert g.pos((-3,)) == (0,)
        assert g.pos((3,)) == (6,)
        assert g.contains((0,))
        assert not g.contains((4,))
        with pytest.raises(IndexError):
            g.pos((4,))


class TestKSignal:
    def test_length_must_match_grid(self):
        with pytest.raises(ValueError):
            KSignal(grid1d(-2, 2), np.zeros(4))

    def test_rejects_non_finite(self):
        vals = np.array([1.0, np.nan, 0.0, 0.0, 0.0], dtype=complex)
        with pytest.raises(ValueError):
            KSignal(grid1d(-2, 2), vals)
        vals = np.array([1.0, np.inf, 0.0, 0.0, 0.0], dtype=complex)
        with pytest.raises(ValueError):
            KSignal(grid1d(-2, 2), vals)

    def test_values_read_only(self):
        s = KSignal(grid1d(-1, 1), np.ones(3))
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    def test_at_indexes_by_grid_label(self):
        s = KSignal(grid1d(-1, 1), np.array([10.0, 20.0, 30.0]))
        assert s.at((-1,)) == 10.0
        assert s.at((1,)) == 30.0


class TestMultiKSignal:
    def test_channels_share_grid(self):
        a = KSignal(grid1d(-1, 1), np.ones(3))
        b = KSignal(grid1d(-1, 2), np.ones(4))
        with pytest.raises(ValueError):
            MultiKSignal((a, b))

    def test_q_count_and_stack(self):
        g = grid1d(-1, 1)
        ms = MultiKSignal(
            (KSignal(g, np.array([1, 2, 3.0])), KSignal(g, np.array([4, 5, 6.0])))
        )
        assert ms.q_count == 2
        assert ms.stack().shape == (2, 3)
        rebuilt = MultiKSignal.from_array(g, ms.stack())
        assert signals_allclose(rebuilt.channels[1], ms.channels[1])

    def test_needs_at_least_one_channel(self):
        with pytest.raises(ValueError):
            MultiKSignal(())


class TestFilter:
    def test_tap_length_matches_support(self):
        with pytest.raises(ValueError):
            Filter(np.ones(3), 0, 1)

    def test_anchor_fixed_enforces_minus_one(self):
        taps = np.array([1.0, 1.0])
        with pytest.raises(ValueError):
            Filter(taps, 0, 1, anchor_fixed=True)
        f = Filter(np.array([-1.0, 1.0]), 0, 1, anchor_fixed=True)
        assert f.tap((0,)) == -1.0

    def test_all_zero_taps_rejected(self):
        with pytest.raises(ValueError):
            Filter(np.zeros(3), 1, 1)

    def test_tap_lookup_by_offset(self):
        f = Filter(np.array([10.0, 20.0, 30.0]), 1, 1)
        assert f.tap((-1,)) == 10.0
        assert f.tap((0,)) == 20.0
        assert f.tap((1,)) == 30.0

    def test_2d_taps_square(self):
        f = Filter(np.ones((3, 3)), 1, 1)
        assert f.dims == 2
        with pytest.raises(ValueError):
            Filter(np.ones((3, 2)), 1, 1)


class TestMultiFilter:
    def test_shared_support_required(self):
        a = Filter(np.ones(2), 0, 1)
        b = Filter(np.ones(3), 1, 1)
        with pytest.raises(ValueError):
            MultiFilter((a, b))

    def test_at_most_one_anchor(self):
        a = Filter(np.array([-1.0, 1.0]), 0, 1, anchor_fixed=True)
        with pytest.raises(ValueError):
            MultiFilter((a, a))
        mf = MultiFilter((a, Filter(np.ones(2), 0, 1)))
        assert mf.anchor_channel == 0


class TestSamplingMask:
    def test_acquired_length_checked(self):
        with pytest.raises(ValueError):
            SamplingMask(grid1d(-2, 2), np.ones(4, dtype=bool))

    def test_calib_inside_grid(self):
        g = grid1d(-4, 3)
        with pytest.raises(ValueError):
            SamplingMask(g, np.ones(8, dtype=bool), ((-5, 0),))

    def test_calib_must_be_acquired(self):
        g = grid1d(-4, 3)
        acq = np.ones(8, dtype=bool)
        acq[2] = False  # index -2
        with pytest.raises(ValueError):
            SamplingMask(g, acq, ((-3, -1),))

    def test_calib_slices_and_counts(self):
        g = grid1d(-8, 7)
        acq = np.zeros(16, dtype=bool)
        acq[4:9] = True
        m = SamplingMask(g, acq, ((-4, 0),))
        assert m.calib_slices() == (slice(4, 9),)
        assert m.acquired_count == 5
        assert m.missing_positions().shape == (11, 1)


class TestZeroFill:
    def test_example_values(self):
        g = grid1d(-1, 1)
        data = KSignal(g, np.array([1.0, 2.0, 3.0]))
        mask = SamplingMask(g, np.array([True, False, True]))
        out = zero_fill(data, mask)
        assert np.array_equal(out.values, [1.0, 0.0, 3.0])

    def test_full_mask_is_identity(self):
        g = grid1d(-1, 1)
        data = KSignal(g, np.array([1.0, 2.0, 3.0]))
        out = zero_fill(data, SamplingMask(g, np.ones(3, dtype=bool)))
        assert signals_allclose(out, data)

    def test_empty_mask_zeroes_everything(self):
        g = grid1d(-1, 1)
        data = KSignal(g, np.array([1.0, 2.0, 3.0]))
        out = zero_fill(data, SamplingMask(g, np.zeros(3, dtype=bool)))
        assert np.array_equal(out.values, np.zeros(3))

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        g = grid1d(-8, 7)
        data = KSignal(g, rng.normal(size=16) + 1j * rng.normal(size=16))
        mask = SamplingMask(g, rng.random(16) < 0.5)
        once = zero_fill(data, mask)
        twice = zero_fill(once, mask)
        assert np.array_equal(once.values, twice.values)

    def test_grid_mismatch_rejected(self):
        data = KSignal(grid1d(-1, 1), np.ones(3))
        mask = SamplingMask(grid1d(-2, 2), np.ones(5, dtype=bool))
        with pytest.raises(GridMismatchError):
            zero_fill(data, mask)

    def test_multichannel_path(self):
        g = grid1d(-1, 1)
        ms = MultiKSignal.from_array(g, np.arange(6.0).reshape(2, 3))
        mask = SamplingMask(g, np.array([True, False, True]))
        out = zero_fill(ms, mask)
        assert np.array_equal(out.stack()[:, 1], [0.0, 0.0])


class TestConvApply:
    def test_period_two_annihilator(self):
        # rho[n] = 1 + (-1)^n is annihilated by h[0] = -1, h[2] = 1.
        g = grid1d(-4, 4)
        n = np.arange(-4, 5)
        sig = KSignal(g, 1.0 + (-1.0) ** n)
        filt = Filter(np.array([-1.0, 0.0, 1.0]), 0, 2, anchor_fixed=True)
        out = conv_apply(sig, filt)
        assert np.max(np.abs(out.values)) == 0.0
        assert (out.grid.n_min, out.grid.n_max) == ((-2,), (4,))

    def test_identity_filter(self):
        rng = np.random.default_rng(1)
        g = grid1d(-5, 5)
        sig = KSignal(g, rng.normal(size=11) + 1j * rng.normal(size=11))
        out = conv_apply(sig, Filter(np.array([1.0]), 0, 0))
        assert signals_allclose(out, sig)

    def test_point_source_annihilator(self):
        # rho[n] = exp(-i pi n / 2) satisfies rho[n] = -i rho[n-1].
        g = grid1d(0, 3)
        sig = KSignal(KGrid.window((0,), (3,), (1.0,)), np.array([1, -1j, -1, 1j]))
        filt = Filter(np.array([-1.0, -1j]), 0, 1, anchor_fixed=True)
        out = conv_apply(sig, filt)
        assert np.max(np.abs(out.values)) < 1e-15

    def test_filter_longer_than_signal_rejected(self):
        sig = KSignal(grid1d(-1, 1), np.ones(3))
        with pytest.raises(ValueError):
            conv_apply(sig, Filter(np.ones(5), 2, 2))

    def test_linearity(self):
        rng = np.random.default_rng(2)
        g = grid1d(-16, 15)
        x = KSignal(g, rng.normal(size=32) + 1j * rng.normal(size=32))
        y = KSignal(g, rng.normal(size=32) + 1j * rng.normal(size=32))
        h = Filter(rng.normal(size=5) + 1j * rng.normal(size=5), 2, 2)
        a, b = 0.7 - 0.3j, -1.2 + 0.9j
        mix = KSignal(g, a * x.values + b * y.values)
        lhs = conv_apply(mix, h).values
        rhs = a * conv_apply(x, h).values + b * conv_apply(y, h).values
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_shift_commutation(self):
        # Shifting the input one index ahead shifts the valid output too.
        rng = np.random.default_rng(3)
        vals = rng.normal(size=12) + 1j * rng.normal(size=12)
        h = Filter(rng.normal(size=4) + 1j * rng.normal(size=4), 1, 2)
        a = KSignal(KGrid.window((0,), (11,), (1.0,)), vals)
        b = KSignal(KGrid.window((1,), (12,), (1.0,)), vals)
        ya, yb = conv_apply(a, h), conv_apply(b, h)
        assert np.allclose(ya.values, yb.values)
        assert yb.grid.n_min[0] == ya.grid.n_min[0] + 1

    def test_2d_valid_region(self):
        rng = np.random.default_rng(4)
        g = KGrid((-3, -3), (3, 3), (1.0, 1.0))
        sig = KSignal(g, rng.normal(size=(7, 7)))
        h = Filter(rng.normal(size=(3, 3)), 1, 1)
        out = conv_apply(sig, h)
        assert out.grid.shape == (5, 5)


class TestConvResponse:
    def test_sums_channel_responses(self):
        g = grid1d(-3, 3)
        rng = np.random.default_rng(5)
        ms = MultiKSignal.from_array(g, rng.normal(size=(2, 7)) * (1 + 1j))
        f1 = Filter(rng.normal(size=3), 1, 1)
        f2 = Filter(rng.normal(size=3), 1, 1)
        out = conv_response(ms, MultiFilter((f1, f2)))
        expect = conv_apply(ms.channels[0], f1).values + conv_apply(ms.channels[1], f2).values
        assert np.allclose(out.values, expect)

    def test_channel_count_mismatch(self):
        g = grid1d(-3, 3)
        ms = MultiKSignal.from_array(g, np.ones((2, 7)))
        with pytest.raises(ValueError):
            conv_response(ms, MultiFilter((Filter(np.ones(3), 1, 1),)))
