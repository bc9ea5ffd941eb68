import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textdark.core import (
    FileHeatmapProvider,
    GaussianBoxProvider,
    TextBox,
    box_iou,
    canny_edges,
    canonical_quad,
    check_image,
    gaussian_box_heatmap,
    read_image,
    rgb_to_lightness,
    sobel_edges,
    write_image,
)
from textdark.errors import ConfigError, ProviderContractError, ShapeError

# skimage.color.rgb2lab(0.5 gray)[L] / 100, frozen from the independent oracle
GRAY_HALF_LIGHTNESS = 0.5338896474111432


def test_lightness_black_white():
    assert rgb_to_lightness(np.zeros((4, 5, 3))).mean() == 0.0
    assert rgb_to_lightness(np.ones((4, 5, 3))).mean() == pytest.approx(1.0, abs=1e-12)


def test_lightness_mid_gray_matches_colorimetry_oracle():
    assert rgb_to_lightness(np.full((3, 3, 3), 0.5)).mean() == pytest.approx(
        GRAY_HALF_LIGHTNESS, abs=1e-6)


def test_lightness_agrees_with_skimage_on_random_pixels():
    skcolor = pytest.importorskip("skimage.color")
    img = np.random.default_rng(0).random((16, 16, 3))
    ref = skcolor.rgb2lab(img)[..., 0] / 100
    # skimage's sRGB matrix differs in the 5th decimal
    np.testing.assert_allclose(rgb_to_lightness(img)[..., 0], ref, atol=5e-5)


def test_lightness_rejects_gray_input():
    with pytest.raises(ShapeError):
        rgb_to_lightness(np.zeros((4, 4, 1)))


@given(st.integers(0, 255), st.integers(0, 255))
def test_lightness_monotone_in_gray_level(g1, g2):
    if g1 == g2:
        return
    lo, hi = sorted((g1 / 255, g2 / 255))
    a = rgb_to_lightness(np.full((1, 1, 3), lo)).mean()
    b = rgb_to_lightness(np.full((1, 1, 3), hi)).mean()
    assert a < b


def test_check_image_contract():
    assert check_image(np.zeros((2, 3))).shape == (2, 3, 1)
    with pytest.raises(ConfigError):
        check_image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ShapeError):
        check_image(np.zeros((2, 2, 2)))


# ------------------------------------------------------------------ canny

def test_canny_uniform_and_single_pixel():
    assert not canny_edges(np.full((16, 16, 3), 0.4)).any()
    assert not canny_edges(np.ones((1, 1, 3))).any()


def test_canny_step_band_matches_oracle():
    cv2 = pytest.importorskip("cv2")
    img = np.zeros((24, 24))
    img[:, 12:] = 1.0
    edges = canny_edges(img)
    cols = np.nonzero(edges.any(axis=0))[0]
    assert set(edges.ravel()) <= {0.0, 1.0}
    assert 1 <= len(cols) <= 2 and set(cols) <= {11, 12}
    oracle = cv2.Canny((img * 255).astype(np.uint8), 50, 100)
    oracle_cols = set(np.nonzero(oracle.any(axis=0))[0])
    # both detectors put the edge on the step boundary
    assert oracle_cols & set(cols)
    assert edges[:, 11:13].any(axis=1).all()


def test_canny_agrees_with_skimage_on_step():
    feature = pytest.importorskip("skimage.feature")
    img = np.zeros((24, 24))
    img[8:, :] = 1.0
    ours = canny_edges(img).astype(bool)
    theirs = feature.canny(img, sigma=1.4)
    rows_ours = set(np.nonzero(ours.any(axis=1))[0])
    rows_theirs = set(np.nonzero(theirs.any(axis=1))[0])
    assert rows_ours == rows_theirs


def test_canny_threshold_order():
    with pytest.raises(ConfigError):
        canny_edges(np.zeros((8, 8)), 0.3, 0.2)


@pytest.mark.parametrize("seed", range(5))
def test_canny_invariant_to_affine_intensity(seed):
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((32, 32)), 2.0) * 0.5
    base = canny_edges(img)
    np.testing.assert_array_equal(canny_edges(img + 0.25), base)
    np.testing.assert_array_equal(canny_edges(img * 1.5), base)


def test_sobel_normalized():
    img = np.zeros((10, 10))
    img[:, 5:] = 1
    e = sobel_edges(img)
    assert e.max() == pytest.approx(1.0)
    assert e[:, 4:6].max() == pytest.approx(1.0)
    assert not sobel_edges(np.full((10, 10), 0.3)).any()


# ---------------------------------------------------------------- heatmap

def test_heatmap_empty():
    assert not gaussian_box_heatmap([], 20, 30).any()


def test_heatmap_single_box_peak_at_center():
    box = TextBox.from_aabb(10, 10, 40, 20)
    heat = gaussian_box_heatmap([box], 60, 80, peak=0.8)
    r, c = np.unravel_index(np.argmax(heat), heat.shape)
    assert abs(r - 20) <= 1 and abs(c - 30) <= 1
    assert heat.max() == pytest.approx(0.8, abs=1e-12)


def test_heatmap_max_composition():
    a = TextBox.from_aabb(2, 2, 10, 6)
    b = TextBox.from_aabb(20, 10, 8, 8)
    both = gaussian_box_heatmap([a, b], 32, 32)
    np.testing.assert_array_equal(
        both, np.maximum(gaussian_box_heatmap([a], 32, 32), gaussian_box_heatmap([b], 32, 32)))


def test_heatmap_ignores_illegible():
    box = TextBox.from_aabb(2, 2, 10, 6, legible=False)
    assert not gaussian_box_heatmap([box], 16, 16).any()


boxes_st = st.lists(
    st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(1, 23), st.integers(1, 23)),
    max_size=4)


@given(boxes_st, st.floats(0.05, 1.0))
@settings(max_examples=50, deadline=None)
def test_heatmap_bounded_and_supported(specs, peak):
    boxes = [TextBox.from_aabb(*s) for s in specs]
    heat = gaussian_box_heatmap(boxes, 64, 64, peak=peak)
    assert heat.max(initial=0) <= peak + 1e-12
    support = np.zeros_like(heat, dtype=bool)
    for u, v, w, h in specs:
        support[v:v + h + 1, u:u + w + 1] = True
    assert not heat[~support].any()


def test_heatmap_rotated_quad_inside_only():
    quad = canonical_quad([(20, 5), (35, 20), (20, 35), (5, 20)])
    heat = gaussian_box_heatmap([TextBox(quad)], 40, 40)
    assert heat[20, 20] == pytest.approx(1.0)
    assert heat[6, 6] == 0.0


def test_providers(tmp_path):
    box = TextBox.from_aabb(4, 4, 8, 8)
    img = np.zeros((16, 16, 3))
    prov = GaussianBoxProvider([box], scale=2)
    assert prov(img).shape == (8, 8)
    write_image(tmp_path / "h.png", gaussian_box_heatmap([box], 16, 16))
    assert FileHeatmapProvider(tmp_path / "h.png")(img).shape == (16, 16)
    with pytest.raises(ProviderContractError):
        FileHeatmapProvider(tmp_path / "h.png", scale=2)(img)


# -------------------------------------------------------------------- IoU

def test_iou_examples():
    a = TextBox.from_aabb(0, 0, 10, 10)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, TextBox.from_aabb(20, 20, 5, 5)) == 0.0
    assert box_iou(a, TextBox.from_aabb(5, 0, 10, 10)) == pytest.approx(50 / 150, abs=1e-12)


def test_iou_polygon_mode_matches_aabb_for_rectangles():
    a = TextBox.from_aabb(0, 0, 10, 10)
    b = TextBox.from_aabb(5, 3, 10, 10)
    assert box_iou(a, b, mode="polygon") == pytest.approx(box_iou(a, b))


@given(st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(0.5, 30), st.floats(0.5, 30)),
       st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(0.5, 30), st.floats(0.5, 30)))
def test_iou_symmetric_and_bounded(sa, sb):
    a, b = TextBox.from_aabb(*sa), TextBox.from_aabb(*sb)
    v = box_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == box_iou(b, a)
    assert box_iou(a, a) == pytest.approx(1.0)


def test_textbox_icdar_roundtrip_format():
    box = TextBox.from_aabb(10, 10, 40, 20, transcription="hello")
    assert box.to_icdar() == "10,10,50,10,50,30,10,30,hello"
    assert TextBox.from_aabb(0, 0, 5, 5, legible=False).to_icdar().endswith(",###")


def test_image_io_roundtrip(tmp_path):
    img = np.random.default_rng(1).random((7, 9, 3))
    write_image(tmp_path / "a.png", img)
    back = read_image(tmp_path / "a.png")
    np.testing.assert_allclose(back, np.round(img * 255) / 255, atol=1e-12)
