import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import ismkit as ik

from oracles import ideal_config, instrument_config, profile_peak_count, square_grid


# ---------------------------------------------------------------- phantoms

def test_two_points_one_pixel_apart():
    grid = square_grid(32, 50.0)
    ph = ik.make_phantom("point_sources", grid,
                         positions_nm=[(0.0, 0.0), (0.0, 50.0)])
    assert np.count_nonzero(ph.image) == 2
    assert ph.total_photons == pytest.approx(2e4)  # default 1e4 per emitter


def test_siemens_star_rotational_symmetry():
    grid = square_grid(129, 20.0)
    ph = ik.make_phantom("siemens_star", grid, n_spokes=8)
    img = ph.image
    mismatch = np.count_nonzero(np.rot90(img) != img) / img.size
    assert mismatch < 0.02  # raster quantization only


def test_phantom_errors():
    grid = square_grid(32, 50.0)
    with pytest.raises(ValueError, match="outside the grid"):
        ik.make_phantom("point_sources", grid, positions_nm=[(0.0, 5000.0)])
    with pytest.raises(ValueError):
        ik.make_phantom("line_pairs", grid, spacing_nm=0.0)
    with pytest.raises(ValueError, match="unknown phantom"):
        ik.make_phantom("blob", grid)


def test_phantom_deterministic_given_seed():
    grid = square_grid(48, 40.0)
    a = ik.make_phantom("point_sources", grid, n_points=4, seed=3)
    b = ik.make_phantom("point_sources", grid, n_points=4, seed=3)
    assert np.array_equal(a.image, b.image)


def test_phantom_import_csv_and_pgm(tmp_path):
    grid = square_grid(8, 25.0)
    values = np.arange(64, dtype=float).reshape(8, 8)
    csv_path = tmp_path / "obj.csv"
    np.savetxt(csv_path, values, delimiter=",")
    ph = ik.phantom_from_file(csv_path, grid)
    assert np.allclose(ph.image, values)

    from PIL import Image

    pgm_path = tmp_path / "obj.pgm"
    Image.fromarray(values.astype(np.uint8), mode="L").save(pgm_path)
    ph2 = ik.phantom_from_file(pgm_path, grid, photons=1000.0)
    assert ph2.total_photons == pytest.approx(1000.0)


# ---------------------------------------------------------------- forward model

def test_forward_delta_reproduces_psf_stack():
    cfg = ideal_config()
    grid = square_grid(64, 40.0)
    stack = ik.psf_stack(cfg, grid)
    ph = ik.make_phantom("point_sources", grid, positions_nm=[(0.0, 0.0)],
                         photons=5e3)
    ds = ik.forward(ph, stack)
    assert np.abs(ds.data - 5e3 * stack.data).max() < 1e-9 * 5e3 * stack.data.max()


def test_forward_superposition_of_two_deltas():
    cfg = ideal_config()
    grid = square_grid(64, 40.0)
    stack = ik.psf_stack(cfg, grid)
    ph_a = ik.make_phantom("point_sources", grid, positions_nm=[(0.0, -200.0)],
                           photons=1e3)
    ph_b = ik.make_phantom("point_sources", grid, positions_nm=[(200.0, 0.0)],
                           photons=1e3)
    one = ik.forward(ph_a, stack)
    two = ik.forward(ph_b, stack)
    both = ik.forward(ik.phantom_from_array(ph_a.image + ph_b.image, grid), stack)
    assert np.abs(both.data - (one.data + two.data)).max() < 1e-10 * one.data.max()


def test_forward_linearity():
    cfg = ideal_config(array_side=3)
    grid = square_grid(48, 40.0)
    stack = ik.psf_stack(cfg, grid)
    rng = np.random.default_rng(0)
    o1 = rng.random(grid.shape)
    o2 = rng.random(grid.shape)
    a, b = 2.5, 0.7
    f = lambda img: ik.forward(ik.phantom_from_array(img, grid), stack).data
    lhs = f(a * o1 + b * o2)
    rhs = a * f(o1) + b * f(o2)
    assert np.abs(lhs - rhs).max() <= 1e-10 * rhs.max()


def test_forward_channel_totals_proportional_to_fingerprint():
    cfg = instrument_config()
    grid = square_grid(64, 40.0)
    stack = ik.psf_stack(cfg, grid)
    ph = ik.make_phantom("point_sources", grid,
                         positions_nm=[(0.0, 0.0), (120.0, -80.0)])
    ds = ik.forward(ph, stack)
    totals = ds.data.sum(axis=(0, 1))
    fp = ik.fingerprint_from_psf(stack).values.ravel()
    alpha = ph.total_photons  # object integral, since the stack sums to one
    assert np.abs(totals - alpha * fp).max() <= 1e-9 * totals.max()


def test_forward_grid_mismatch():
    cfg = ideal_config()
    stack = ik.psf_stack(cfg, square_grid(48, 40.0))
    ph = ik.make_phantom("point_sources", square_grid(32, 40.0),
                         positions_nm=[(0.0, 0.0)])
    with pytest.raises(ValueError, match="grid"):
        ik.forward(ph, stack)


def test_line_pair_merged_in_sum_resolved_after_deconvolution():
    cfg = instrument_config()
    grid = square_grid(64, 40.0)
    stack = ik.psf_stack(cfg, grid)
    ph = ik.make_phantom("line_pairs", grid, spacing_nm=150.0)
    ds = ik.forward(ph, stack)
    assert profile_peak_count(ik.sum_image(ds).image) == 1
    assert profile_peak_count(ik.rl_deconvolve(ds, stack, 30).image) == 2


# ---------------------------------------------------------------- background

def _small_setup():
    cfg = ideal_config(array_side=3)
    grid = square_grid(32, 40.0)
    stack = ik.psf_stack(cfg, grid)
    ph = ik.make_phantom("point_sources", grid, positions_nm=[(0.0, 0.0)],
                         photons=1e3)
    return grid, stack, ph


def test_background_zero_matches_forward():
    grid, stack, ph = _small_setup()
    plain = ik.forward(ph, stack)
    with_bkg = ik.forward_with_background(ph, stack, ik.BackgroundModel(0.0))
    assert np.array_equal(plain.data, with_bkg.data)


def test_background_constant_channels():
    grid, stack, ph = _small_setup()
    dark = ik.phantom_from_array(np.full(grid.shape, 1e-300), grid)  # object ~ 0
    rates = np.arange(1.0, 10.0)
    ds = ik.forward_with_background(dark, stack, ik.BackgroundModel(rates))
    for c, rate in enumerate(rates):
        channel = ds.data[:, :, c]
        assert np.allclose(channel, rate, atol=1e-12)


def test_background_totals():
    grid, stack, ph = _small_setup()
    rate = 0.5
    ds = ik.forward_with_background(ph, stack, ik.BackgroundModel(rate))
    totals = ds.data.sum(axis=(0, 1))
    fp = ik.fingerprint_from_psf(stack).values.ravel()
    expected = ph.total_photons * fp + rate * grid.n_y * grid.n_x
    assert np.abs(totals - expected).max() <= 1e-9 * expected.max()


def test_background_shape_mismatch():
    grid, stack, ph = _small_setup()
    bad = ik.BackgroundModel(np.zeros((8, 8, 9)))
    with pytest.raises(ValueError, match="shape"):
        ik.forward_with_background(ph, stack, bad)
    with pytest.raises(ValueError):
        ik.BackgroundModel(-1.0)


# ---------------------------------------------------------------- shot noise

def test_poisson_of_zero_is_zero():
    grid, stack, _ = _small_setup()
    zeros = ik.IsmDataset(data=np.zeros((32, 32, 9)), dtype="intensity",
                          grid=grid, detector=stack.detector)
    counts = ik.add_poisson(zeros, seed=1)
    assert counts.dtype == "counts"
    assert counts.data.sum() == 0


def test_poisson_statistics():
    grid = square_grid(400, 50.0)  # 160_000 pixels
    ds = ik.IsmDataset(data=np.full((400, 400, 1), 100.0), dtype="intensity",
                       grid=grid, detector=None)
    counts = ik.add_poisson(ds, seed=42).data.astype(float)
    n = counts.size
    assert abs(counts.mean() - 100.0) < 3 * np.sqrt(100.0 / n)
    assert 0.95 < counts.var() / counts.mean() < 1.05


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_poisson_deterministic_per_seed(seed):
    grid = square_grid(16, 50.0)
    rng = np.random.default_rng(7)
    ds = ik.IsmDataset(data=rng.random((16, 16, 2)) * 50, dtype="intensity",
                       grid=grid, detector=None)
    a = ik.add_poisson(ds, seed=seed)
    b = ik.add_poisson(ds, seed=seed)
    assert np.array_equal(a.data, b.data)


def test_poisson_rejects_bad_input():
    grid = square_grid(8, 50.0)
    bad = ik.IsmDataset(data=np.full((8, 8, 1), -1.0), dtype="intensity",
                        grid=grid, detector=None)
    bad.data[0, 0, 0] = -1.0
    with pytest.raises(ValueError, match="non-negative"):
        ik.add_poisson(bad, seed=0)
    counts = ik.IsmDataset(data=np.ones((8, 8, 1), dtype=np.int64),
                           dtype="counts", grid=grid, detector=None)
    with pytest.raises(ValueError, match="intensity"):
        ik.add_poisson(counts, seed=0)


def test_poisson_preserves_expected_totals():
    grid, stack, ph = _small_setup()
    ds = ik.forward(ph, stack)
    reps = 32
    totals = [ik.add_poisson(ds, seed=s).data.sum() for s in range(reps)]
    expected = ds.total()
    assert abs(np.mean(totals) - expected) < 4 * np.sqrt(expected / reps)
