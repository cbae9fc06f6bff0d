"""Synthetic generator and image loader tests."""

import numpy as np
import pytest
from PIL import Image

from swarmipp.envgen import (
    SyntheticEnvSpec,
    gen_env,
    load_env,
    render_star_field,
    write_grid_image,
)
from swarmipp.grid import ConfigurationError


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        SyntheticEnvSpec(n_shapes=0)
    with pytest.raises(ConfigurationError):
        SyntheticEnvSpec(kind="perlin")
    with pytest.raises(ConfigurationError):
        SyntheticEnvSpec(width=2)


def test_gen_env_deterministic(tmp_path):
    spec = SyntheticEnvSpec(width=30, height=30, n_shapes=3, seed=7)
    a = gen_env(spec, tmp_path / "a.png")
    b = gen_env(spec, tmp_path / "b.png")
    np.testing.assert_array_equal(a.cells, b.cells)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_gen_env_valuable_fraction_nondegenerate():
    grid = gen_env(SyntheticEnvSpec(width=30, height=30, n_shapes=3, seed=1))
    frac = grid.cells.mean()
    assert 0.0 < frac < 1.0


def test_gen_env_roundtrips_through_loader(tmp_path):
    spec = SyntheticEnvSpec(width=25, height=35, n_shapes=2, seed=3)
    grid = gen_env(spec, tmp_path / "env.png")
    loaded = load_env(tmp_path / "env.png")
    np.testing.assert_array_equal(loaded.cells, grid.cells)
    assert loaded.shape == (35, 25)


def test_gen_env_writes_pgm(tmp_path):
    grid = gen_env(SyntheticEnvSpec(seed=5), tmp_path / "env.pgm")
    loaded = load_env(tmp_path / "env.pgm")
    np.testing.assert_array_equal(loaded.cells, grid.cells)


def test_render_star_field_shapes_vary_with_rng():
    rng = np.random.default_rng(0)
    a = render_star_field(30, 30, 2, rng)
    b = render_star_field(30, 30, 2, rng)
    assert not np.array_equal(a, b)


def test_load_env_all_black_all_valuable(tmp_path):
    path = tmp_path / "black.png"
    Image.fromarray(np.zeros((10, 10), dtype=np.uint8)).save(path)
    grid = load_env(path, threshold=128)
    assert grid.cells.all()


def test_load_env_inverted_polarity_all_white(tmp_path):
    path = tmp_path / "white.png"
    Image.fromarray(np.full((10, 10), 255, dtype=np.uint8)).save(path)
    grid = load_env(path, threshold=128, invert=True)
    assert grid.cells.all()


def test_load_env_majority_downsample(tmp_path):
    pixels = np.full((60, 60), 255, dtype=np.uint8)
    # One 2x2 block with 3 dark pixels -> valuable; one with 2 -> tie, valueless.
    pixels[0, 0] = pixels[0, 1] = pixels[1, 0] = 0
    pixels[10, 10] = pixels[11, 11] = 0
    path = tmp_path / "img.png"
    Image.fromarray(pixels).save(path)
    grid = load_env(path, threshold=128, downsample=2)
    assert grid.shape == (30, 30)
    assert grid.cells[0, 0] == 1
    assert grid.cells[5, 5] == 0


def test_load_env_mask(tmp_path):
    pixels = np.zeros((10, 10), dtype=np.uint8)  # all valuable
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[2, 3] = 255
    img_path, mask_path = tmp_path / "img.png", tmp_path / "mask.png"
    Image.fromarray(pixels).save(img_path)
    Image.fromarray(mask).save(mask_path)
    grid = load_env(img_path, mask_path=mask_path)
    assert grid.mask[2, 3]
    assert grid.cells[2, 3] == 0  # masked cells forced valueless


def test_load_env_mask_size_mismatch(tmp_path):
    img_path, mask_path = tmp_path / "img.png", tmp_path / "mask.png"
    Image.fromarray(np.zeros((10, 10), dtype=np.uint8)).save(img_path)
    Image.fromarray(np.zeros((8, 10), dtype=np.uint8)).save(mask_path)
    with pytest.raises(ConfigurationError):
        load_env(img_path, mask_path=mask_path)


def test_load_env_unreadable_file(tmp_path):
    path = tmp_path / "not-an-image.png"
    path.write_text("garbage")
    with pytest.raises(ConfigurationError):
        load_env(path)


def test_write_grid_image_polarity(tmp_path):
    grid = gen_env(SyntheticEnvSpec(seed=11))
    path = tmp_path / "env.png"
    write_grid_image(grid, path)
    pixels = np.asarray(Image.open(path))
    assert set(np.unique(pixels)) <= {0, 255}
    np.testing.assert_array_equal(pixels == 0, grid.cells == 1)
