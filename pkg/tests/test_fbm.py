"""Tests for the fractional Brownian motion sampler."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import ks_2samp

from fracvol.fbm import (
    FFT_THRESHOLD,
    GaussianPathBatch,
    TimeGrid,
    _convolve_fft,
    _convolve_naive,
    _joint_covariance,
    cholesky_oracle,
    iter_path_blocks,
    kernel_weights,
    load_path_batch,
    sample_paths,
    save_path_batch,
)

HURSTS = st.floats(0.05, 0.95)


def cell_second_moment_oracle(grid: TimeGrid, hurst: float) -> np.ndarray:
    """Independent per-cell oracle: int over [t_j, t_{j+1}] of
    (t_n - r)^(2H-1) dr, by adaptive quadrature, for j = 0..n-1."""
    t = grid.times
    t_n = grid.maturity
    out = np.empty(grid.n_steps)
    for j in range(grid.n_steps):
        if j < grid.n_steps - 1:
            val, _ = quad(lambda r: (t_n - r) ** (2 * hurst - 1), t[j], t[j + 1])
        else:
            # Last cell: integrable singularity at r = t_n for H < 1/2.
            val, _ = quad(
                lambda r: 1.0,
                t[j],
                t[j + 1],
                weight="alg",
                wvar=(0.0, 2 * hurst - 1.0),
            )
        out[j] = val
    return out


class TestKernelWeights:
    def test_h_half_weights_are_exactly_one(self):
        w = kernel_weights(TimeGrid(2.0, 100), 0.5)
        assert np.all(w.weights == 1.0)

    def test_single_step_variance(self):
        # One cell over [0, 1] at H=0.1: b0^2 * dt = 1 / (2H) = 5.
        w = kernel_weights(TimeGrid(1.0, 1), 0.1)
        assert w.weights[0] ** 2 * 1.0 == pytest.approx(5.0, abs=1e-14)

    def test_total_variance_h03(self):
        grid = TimeGrid(1.0, 4)
        w = kernel_weights(grid, 0.3)
        total = np.sum(w.weights**2) * grid.dt
        assert total == pytest.approx(1.0 / 0.6, abs=1e-12)

    def test_per_cell_second_moment_matches_quadrature(self):
        # Weight at lag m carries the cell second moment of the kernel;
        # cell j of the final-time integral sits at lag n-1-j.
        grid = TimeGrid(2.0, 8)
        for hurst in (0.1, 0.3, 0.7, 0.9):
            w = kernel_weights(grid, hurst)
            per_cell = (w.weights[::-1] ** 2) * grid.dt
            oracle = cell_second_moment_oracle(grid, hurst)
            np.testing.assert_allclose(per_cell, oracle, rtol=1e-9)

    def test_variance_matching_every_grid_point(self):
        for hurst in (0.1, 0.3, 0.5, 0.7, 0.9):
            grid = TimeGrid(3.0, 250)
            w = kernel_weights(grid, hurst)
            cum = np.cumsum(w.weights**2) * grid.dt
            target = grid.times[1:] ** (2 * hurst) / (2 * hurst)
            assert np.max(np.abs(cum - target)) < 1e-12

    def test_weights_nonnegative_and_decreasing_for_rough_h(self):
        w = kernel_weights(TimeGrid(1.0, 50), 0.2)
        assert np.all(w.weights >= 0.0)
        assert np.all(np.diff(w.weights[1:]) <= 0.0)

    @given(hurst=HURSTS, n_steps=st.integers(1, 300), maturity=st.floats(0.1, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_variance_matching_property(self, hurst, n_steps, maturity):
        grid = TimeGrid(maturity, n_steps)
        w = kernel_weights(grid, hurst)
        cum = np.cumsum(w.weights**2) * grid.dt
        target = grid.times[1:] ** (2 * hurst) / (2 * hurst)
        np.testing.assert_allclose(cum, target, rtol=1e-12, atol=1e-13)

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_hurst_outside_unit_interval(self, bad):
        with pytest.raises(ValueError):
            kernel_weights(TimeGrid(1.0, 10), bad)


class TestConvolution:
    def test_fft_matches_naive(self):
        rng = np.random.default_rng(42)
        dw = rng.standard_normal((16, 200))
        b = rng.uniform(0.1, 2.0, size=200)
        np.testing.assert_allclose(
            _convolve_fft(dw, b), _convolve_naive(dw, b), atol=1e-10
        )

    def test_end_to_end_across_threshold(self):
        # Same seed, step counts straddling the FFT threshold; both code
        # paths must produce paths with the right marginal variance and
        # agree with a direct dense reconstruction.
        for n_steps in (FFT_THRESHOLD // 2, FFT_THRESHOLD + 9):
            grid = TimeGrid(1.0, n_steps)
            w = kernel_weights(grid, 0.3)
            batch = sample_paths(grid, w, 64, seed=7)
            expected = _convolve_naive(batch.dw, w.weights)
            np.testing.assert_allclose(batch.wh, expected, atol=1e-10)


class TestSamplePaths:
    def test_h_half_is_bitwise_cumsum(self):
        grid = TimeGrid(1.0, 250)
        w = kernel_weights(grid, 0.5)
        batch = sample_paths(grid, w, 500, seed=11)
        assert np.array_equal(batch.wh, np.cumsum(batch.dw, axis=1))

    def test_increment_distribution(self):
        grid = TimeGrid(2.0, 50)
        w = kernel_weights(grid, 0.3)
        batch = sample_paths(grid, w, 50_000, seed=3)
        var = batch.dw.var(axis=0)
        se = grid.dt * math.sqrt(2.0 / batch.n_paths)
        assert np.all(np.abs(var - grid.dt) < 4.0 * se)

    def test_terminal_variance_within_3se(self):
        grid = TimeGrid(1.0, 250)
        w = kernel_weights(grid, 0.3)
        batch = sample_paths(grid, w, 100_000, seed=5)
        target = 1.0 / 0.6
        sample_var = batch.wh[:, -1].var(ddof=1)
        se = target * math.sqrt(2.0 / batch.n_paths)
        assert abs(sample_var - target) < 3.0 * se

    def test_terminal_cross_covariance_within_3se(self):
        grid = TimeGrid(1.0, 250)
        w = kernel_weights(grid, 0.3)
        batch = sample_paths(grid, w, 100_000, seed=5)
        w_t = batch.dw.sum(axis=1)
        wh_t = batch.wh[:, -1]
        sample_cov = np.cov(wh_t, w_t, ddof=1)[0, 1]
        target = 1.0 / 0.8  # T^{H+1/2} / (H+1/2) at T=1, H=0.3
        var_wh = 1.0 / 0.6
        se = math.sqrt((var_wh * 1.0 + target**2) / batch.n_paths)
        assert abs(sample_cov - target) < 3.0 * se

    def test_deterministic_given_seed_and_blocking(self):
        grid = TimeGrid(1.0, 64)
        w = kernel_weights(grid, 0.2)
        a = sample_paths(grid, w, 1000, seed=9, block_size=128)
        b = sample_paths(grid, w, 1000, seed=9, block_size=128)
        assert np.array_equal(a.dw, b.dw) and np.array_equal(a.wh, b.wh)

    def test_streaming_matches_materialized(self):
        grid = TimeGrid(1.0, 64)
        w = kernel_weights(grid, 0.2)
        full = sample_paths(grid, w, 1000, seed=9, block_size=256)
        row = 0
        for idx, blk in iter_path_blocks(grid, w, 1000, seed=9, block_size=256):
            assert np.array_equal(full.dw[row : row + blk.n_paths], blk.dw)
            assert np.array_equal(full.wh[row : row + blk.n_paths], blk.wh)
            row += blk.n_paths
        assert row == 1000

    def test_blocks_are_order_independent(self):
        # Drawing block 2 alone gives the same rows as drawing all blocks.
        grid = TimeGrid(1.0, 32)
        w = kernel_weights(grid, 0.4)
        blocks = dict(iter_path_blocks(grid, w, 900, seed=21, block_size=300))
        only_last = [
            blk for i, blk in iter_path_blocks(grid, w, 900, seed=21, block_size=300)
            if i == 2
        ]
        assert np.array_equal(blocks[2].dw, only_last[0].dw)

    def test_rejects_mismatched_weights(self):
        w = kernel_weights(TimeGrid(1.0, 16), 0.3)
        with pytest.raises(ValueError):
            sample_paths(TimeGrid(1.0, 32), w, 10, seed=0)


class TestCholeskyOracle:
    def test_h_half_covariance_is_brownian(self):
        grid = TimeGrid(1.0, 8)
        cov = _joint_covariance(grid, 0.5)
        t = grid.times[1:]
        brownian = np.minimum.outer(t, t)
        n = grid.n_steps
        for block in (cov[:n, :n], cov[:n, n:], cov[n:, :n], cov[n:, n:]):
            np.testing.assert_allclose(block, brownian, atol=1e-10)

    def test_marginal_variance_from_covariance(self):
        grid = TimeGrid(2.0, 16)
        for hurst in (0.1, 0.3, 0.7):
            cov = _joint_covariance(grid, hurst)
            t = grid.times[1:]
            np.testing.assert_allclose(
                np.diag(cov)[grid.n_steps :], t ** (2 * hurst) / (2 * hurst),
                atol=1e-10,
            )

    def test_oracle_sample_moments(self):
        grid = TimeGrid(1.0, 32)
        batch = cholesky_oracle(grid, 0.3, 20_000, seed=17)
        var = batch.wh[:, -1].var(ddof=1)
        target = 1.0 / 0.6
        assert abs(var - target) < 3.0 * target * math.sqrt(2.0 / batch.n_paths)
        dw_var = batch.dw.var(axis=0)
        se = grid.dt * math.sqrt(2.0 / batch.n_paths)
        assert np.all(np.abs(dw_var - grid.dt) < 4.0 * se)

    @pytest.mark.parametrize("hurst", [0.1, 0.3, 0.7])
    def test_ks_against_convolution_scheme(self, hurst):
        grid = TimeGrid(1.0, 64)
        w = kernel_weights(grid, hurst)
        conv = sample_paths(grid, w, 10_000, seed=23)
        oracle = cholesky_oracle(grid, hurst, 10_000, seed=29)
        stat = ks_2samp(conv.wh[:, -1], oracle.wh[:, -1])
        assert stat.pvalue > 0.01

    def test_rejects_oversized_grid(self):
        with pytest.raises(ValueError):
            cholesky_oracle(TimeGrid(1.0, 4096), 0.3, 10, seed=0)


class TestPathDump:
    def test_roundtrip(self, tmp_path):
        grid = TimeGrid(1.5, 16)
        w = kernel_weights(grid, 0.25)
        batch = sample_paths(grid, w, 40, seed=2)
        target = tmp_path / "batch.bin"
        save_path_batch(target, batch, grid, 0.25)
        loaded, loaded_grid, hurst = load_path_batch(target)
        assert np.array_equal(loaded.dw, batch.dw)
        assert np.array_equal(loaded.wh, batch.wh)
        assert loaded_grid == grid
        assert hurst == 0.25
        # 32-byte header then two row-major float64 blocks.
        assert target.stat().st_size == 32 + 2 * 40 * 16 * 8

    def test_rejects_foreign_file(self, tmp_path):
        target = tmp_path / "junk.bin"
        target.write_bytes(b"\x00" * 64)
        with pytest.raises(ValueError):
            load_path_batch(target)


class TestBatchValidation:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            GaussianPathBatch(dw=np.zeros((2, 3)), wh=np.zeros((2, 4)))
