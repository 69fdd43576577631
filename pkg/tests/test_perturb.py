import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hsicattr.images import heatmap_image, load_input, read_png, read_raw, write_heatmap, write_png, write_raw
from hsicattr.perturb import (
    BILINEAR,
    PerturbConfig,
    cell_index_map,
    cell_inputs,
    cell_means,
    inpaint,
    perturb_batch,
    upsample_mask,
)


def test_upsample_trivial_grid():
    np.testing.assert_array_equal(upsample_mask([1], (1, 1), 5, 3), np.ones((3, 5)))


def test_upsample_nearest_floor_mapping():
    np.testing.assert_array_equal(upsample_mask([1, 0], (2, 1), 4, 1), [[1, 1, 0, 0]])


def test_upsample_bilinear_monotone():
    row = upsample_mask([1, 0], (2, 1), 4, 1, BILINEAR)[0]
    assert row[0] == 1.0 and row[-1] == 0.0
    assert np.all(np.diff(row) <= 0)
    np.testing.assert_allclose(row, [1.0, 0.75, 0.25, 0.0])


def test_upsample_dim_mismatch():
    with pytest.raises(ValueError):
        upsample_mask([1, 0, 1], (2, 1), 4, 4)


def test_non_divisible_grid_golden():
    # 3 cells over 7 pixels: floor(x*3/7) -> 0,0,0,1,1,2,2
    np.testing.assert_array_equal(cell_index_map((3, 1), 7, 1)[0], [0, 0, 0, 1, 1, 2, 2])
    labels = cell_index_map((7, 7), 224, 224)
    assert np.bincount(labels.ravel()).tolist() == [32 * 32] * 49
    np.testing.assert_array_equal(cell_index_map((2, 3), 3, 4), [[0, 0, 1], [0, 0, 1], [2, 2, 3], [4, 4, 5]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(5, 20), st.integers(5, 20), st.data())
def test_nearest_binary_stays_binary(gw, gh, w, h, data):
    mask = data.draw(arrays(np.uint8, gw * gh, elements=st.integers(0, 1)))
    out = upsample_mask(mask, (gw, gh), w, h)
    assert set(np.unique(out).tolist()) <= {0.0, 1.0}


def test_inpaint_examples():
    x = np.full((2, 2, 3), 0.8)
    np.testing.assert_array_equal(inpaint(x, np.ones((2, 2)), 0.3), x)
    np.testing.assert_array_equal(inpaint(x, np.zeros((2, 2)), 0.3), np.full((2, 2, 3), 0.3))
    assert inpaint(x, np.zeros((2, 2)), 0.0)[0, 0, 0] == 0.0


def test_inpaint_per_channel_baseline():
    x = np.zeros((1, 2, 3))
    out = inpaint(x, np.array([[0, 1]]), (0.1, 0.2, 0.3))
    np.testing.assert_array_equal(out[0, 0], [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(out[0, 1], 0.0)


def test_inpaint_errors():
    with pytest.raises(ValueError):
        inpaint(np.zeros((2, 2, 3)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        inpaint(np.zeros((2, 2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        inpaint(np.zeros((2, 2, 3)), np.ones((2, 2)), (0.1, 0.2))


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (4, 5, 3), elements=st.floats(0, 1)),
    arrays(np.uint8, (4, 5), elements=st.integers(0, 1)),
    st.floats(0, 1),
)
def test_inpaint_idempotent_and_in_range(x, m, mu):
    once = inpaint(x, m, mu)
    np.testing.assert_array_equal(inpaint(once, m, mu), once)
    assert once.min() >= 0 and once.max() <= 1


def test_perturb_batch_and_cell_means(rng):
    x = rng.random((6, 6, 3))
    cfg = PerturbConfig((3, 3), baseline=0.0)
    masks = np.eye(9, dtype=np.uint8)[:2]
    batch = perturb_batch(x, masks, cfg)
    assert batch.shape == (2, 6, 6, 3)
    np.testing.assert_array_equal(batch[0, :2, :2], x[:2, :2])
    assert not batch[0, 2:].any()
    means = cell_means(x, (3, 3))
    assert means[4] == pytest.approx(x[2:4, 2:4].mean(), rel=1e-14)


def test_cell_inputs_are_masks_for_ones_image():
    masks = np.array([[1, 0, 1], [0, 0, 1]])
    np.testing.assert_array_equal(cell_inputs(masks, np.ones(3), 0.0), masks)


def test_cell_means_grid_too_fine():
    with pytest.raises(ValueError):
        cell_means(np.zeros((2, 2, 1)), (3, 3))


def test_png_roundtrip(tmp_path, rng):
    x = np.round(rng.random((5, 7, 3)) * 255) / 255
    write_png(tmp_path / "a.png", x)
    np.testing.assert_array_equal(read_png(tmp_path / "a.png"), x)
    g = np.round(rng.random((4, 4, 1)) * 255) / 255
    write_png(tmp_path / "g.png", g)
    back = load_input(tmp_path / "g.png")
    assert back.shape == (4, 4, 1)
    np.testing.assert_array_equal(back, g)


def test_raw_roundtrip(tmp_path, rng):
    x = rng.random((3, 4, 3)).astype(np.float32).astype(np.float64)
    write_raw(tmp_path / "x.f32", x)
    blob = (tmp_path / "x.f32").read_bytes()
    assert len(blob) == 16 + 4 * x.size and blob[:4] == b"HSFT"
    np.testing.assert_array_equal(read_raw(tmp_path / "x.f32"), x)
    np.testing.assert_array_equal(load_input(tmp_path / "x.f32"), x)
    (tmp_path / "bad.f32").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        read_raw(tmp_path / "bad.f32")
    (tmp_path / "short.f32").write_bytes(blob[:-4])
    with pytest.raises(ValueError):
        read_raw(tmp_path / "short.f32")


def test_heatmap_rendering(tmp_path):
    scores = [-1.0, 0.0, 2.0, 4.0]
    grey = heatmap_image(scores, (2, 2), 4, 4, color=False)[:, :, 0]
    np.testing.assert_array_equal(grey[0], [0, 0, 0, 0])
    np.testing.assert_array_equal(grey[3], [0.5, 0.5, 1.0, 1.0])
    rgb = heatmap_image(scores, (2, 2), 4, 4)
    np.testing.assert_allclose(rgb[3, 3] * 255, (253, 231, 37))
    np.testing.assert_allclose(rgb[0, 0] * 255, (68, 1, 84))
    write_heatmap(tmp_path / "h.png", scores, (2, 2), 8, 8)
    assert read_png(tmp_path / "h.png").shape == (8, 8, 3)
