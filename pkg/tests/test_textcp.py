import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textdark.core import TextBox, aabb_intersection
from textdark.dataset import PAPER_BOX_STATS, BoxStats, SamplePair
from textdark.errors import ConfigError
from textdark.synthetic import make_text_scene
from textdark.textcp import (
    TextCpParams,
    TextPool,
    augment_pair,
    build_pool,
    sample_placement,
    text_cp_augment,
)

STATS = BoxStats(40.0, 12.0, 15.0, 4.0)


def _pool(n=3, seed=0):
    pairs = [make_text_scene(seed + i, 96, 96, n_boxes=3, n_illegible=2, sample_id=f"p{i}") for i in range(n)]
    return build_pool(pairs), pairs


def test_build_pool_counts_legible_only():
    pair = make_text_scene(1, 128, 128, n_boxes=3, n_illegible=2)
    assert sum(b.legible for b in pair.boxes) == 3
    pool = build_pool([pair])
    assert len(pool) == 3
    assert all(e.box.legible for e in pool.entries)
    assert len(build_pool([])) == 0


def test_pool_crops_carry_pixels():
    pool, pairs = _pool(1)
    e = pool.entries[0]
    u, v, w, h = map(int, e.box.aabb)
    np.testing.assert_array_equal(e.long_crop, pairs[0].long[v:v + h, u:u + w])


def test_placement_degenerate_gaussian():
    params = TextCpParams(BoxStats(30.0, 10.0, 0.0, 0.0))
    _, _, w, h = sample_placement(params, 100, 50, np.random.default_rng(0))
    assert (w, h) == (30.0, 10.0)


def test_placement_reproducible():
    params = TextCpParams(STATS)
    a = sample_placement(params, 100, 50, np.random.default_rng(5))
    b = sample_placement(params, 100, 50, np.random.default_rng(5))
    assert a == b


def test_placement_width_mean_clt_bound():
    sony = PAPER_BOX_STATS["sid-sony-text"]
    params = TextCpParams(sony)
    rng = np.random.default_rng(0)
    draws = np.array([sample_placement(params, 512, 512, rng) for _ in range(10_000)])
    assert abs(draws[:, 2].mean() - sony.mu_w) < 3 * sony.sigma_w / 100
    assert draws[:, 0].min() >= 0 and draws[:, 0].max() <= 512


def test_no_augmentation_when_target_met():
    pool, pairs = _pool(1)
    img = pairs[0].long
    params = TextCpParams(STATS, n_target=2)
    out, boxes = text_cp_augment(img, pairs[0].boxes, pool, params, np.random.default_rng(0))
    np.testing.assert_array_equal(out, img)
    assert boxes == pairs[0].boxes


def test_overlapping_candidate_rejected():
    pool, _ = _pool(1)
    img = np.zeros((64, 64, 3))
    existing = [TextBox.from_aabb(10, 10, 20, 10)]

    def overlapping(params, w, h, rng):
        return 15.0, 12.0, 20.0, 8.0

    params = TextCpParams(STATS, n_target=3, max_attempts=5)
    out, boxes = text_cp_augment(img, existing, pool, params, np.random.default_rng(0), sampler=overlapping)
    assert boxes == existing
    assert not out.any()


def test_accepted_candidate_pasted_bilinear():
    pool, _ = _pool(1)
    img = np.zeros((64, 64, 3))

    def fixed(params, w, h, rng):
        return 5.0, 40.0, 30.0, 10.0

    params = TextCpParams(STATS, n_target=1)
    out, boxes = text_cp_augment(img, [], pool, params, np.random.default_rng(0), sampler=fixed)
    assert len(boxes) == 1 and boxes[0].aabb == (5, 40, 30, 10)
    assert out[40:50, 5:35].any()
    mask = np.ones(out.shape[:2], bool)
    mask[40:50, 5:35] = False
    assert not out[mask].any()


def test_aspect_ratio_rejection():
    pool, _ = _pool(1)

    def tall(params, w, h, rng):
        return 0.0, 0.0, 10.0, 20.0

    params = TextCpParams(STATS, n_target=1, gamma=1.0, max_attempts=3)
    _, boxes = text_cp_augment(np.zeros((64, 64, 3)), [], pool, params, sampler=tall)
    assert boxes == []


def test_empty_pool_config_error():
    with pytest.raises(ConfigError):
        text_cp_augment(np.zeros((8, 8, 3)), [], TextPool(), TextCpParams(STATS, n_target=1))
    out, boxes = text_cp_augment(np.zeros((8, 8, 3)), [], TextPool(), TextCpParams(STATS, n_target=0))
    assert boxes == []


def test_params_validation():
    with pytest.raises(ConfigError):
        TextCpParams(STATS, gamma=0)
    with pytest.raises(ConfigError):
        TextCpParams(STATS, max_attempts=0)


def test_own_boxes_and_reused_entries_excluded():
    pair = make_text_scene(4, 128, 128, n_boxes=2, n_illegible=0, sample_id="self")
    pool = build_pool([pair])
    params = TextCpParams(STATS, n_target=10, max_attempts=200)
    _, boxes = text_cp_augment(pair.long, pair.boxes, pool, params, np.random.default_rng(0), image_id="self")
    assert boxes == pair.boxes

    other = np.zeros((256, 256, 3))
    _, boxes = text_cp_augment(other, [], pool, params, np.random.default_rng(0))
    # each pool entry can be pasted at most once per image
    assert len(boxes) <= 2


def test_paired_paste_uses_aligned_short_crop():
    pool, pairs = _pool(2)
    pair = pairs[0]
    params = TextCpParams(STATS, n_target=8, max_attempts=200)
    aug = augment_pair(pair, pool, params, np.random.default_rng(3))
    added = aug.boxes[len(pair.boxes):]
    assert added
    for b in added:
        u, v, w, h = map(int, b.aabb)
        # toy scenes have short = 0.1 * long, so pasted regions keep that ratio
        np.testing.assert_allclose(aug.short[v:v + h, u:u + w], 0.1 * aug.long[v:v + h, u:u + w], atol=1e-12)


def check_augmentation(img, existing, out, boxes, params, H, W):
    new = boxes[len(existing):]
    assert boxes[:len(existing)] == list(existing)
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            if a in existing and b in existing:
                continue
            assert aabb_intersection(a.aabb, b.aabb) == 0
    mask = np.ones((H, W), bool)
    for b in new:
        u, v, w, h = b.aabb
        assert u >= 0 and v >= 0 and u + w <= W and v + h <= H
        assert w / h >= params.gamma
        mask[int(v):int(v + h), int(u):int(u + w)] = False
    np.testing.assert_array_equal(out[mask], img[mask])


@given(st.integers(0, 10_000), st.integers(0, 12), st.floats(0.3, 3.0))
@settings(max_examples=60, deadline=None)
def test_augmentation_properties(seed, n_target, gamma):
    pool, _ = _pool(2)
    rng = np.random.default_rng(seed)
    scene = make_text_scene(seed, 128, 160, n_boxes=2, n_illegible=1)
    params = TextCpParams(STATS, n_target=n_target, gamma=gamma, max_attempts=50)
    calls = []

    def counting(p, w, h, r):
        calls.append(1)
        return sample_placement(p, w, h, r)

    out, boxes = text_cp_augment(scene.long, scene.boxes, pool, params, rng, sampler=counting)
    assert len(calls) <= params.max_attempts
    check_augmentation(scene.long, scene.boxes, out, boxes, params, 128, 160)
