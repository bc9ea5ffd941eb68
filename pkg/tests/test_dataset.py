import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textdark.core import TextBox, write_image
from textdark.dataset import (
    PAPER_BOX_STATS,
    PatchSpec,
    SamplePair,
    compute_box_stats,
    load_manifest,
    load_pair,
    parse_icdar_line,
    read_annotations,
    sample_patch,
    write_annotations,
)
from textdark.errors import ConfigError, DataError, EmptyCorpusError, ParseError, SamplingExhaustedError
from textdark.synthetic import make_text_scene, write_corpus


def test_parse_legible():
    box = parse_icdar_line("10,10,50,10,50,30,10,30,hello")
    assert box.aabb == (10, 10, 40, 20)
    assert box.legible and box.transcription == "hello"


def test_parse_dont_care():
    box = parse_icdar_line("0,0,5,0,5,5,0,5,###")
    assert not box.legible and box.transcription == ""


@pytest.mark.parametrize("line", ["1,2,3", "a,0,5,0,5,5,0,5,x", ""])
def test_parse_errors(line):
    with pytest.raises(ParseError):
        parse_icdar_line(line)


def test_parse_transcription_with_comma_and_bom():
    box = parse_icdar_line("﻿0,0,5,0,5,5,0,5,a,b\n")
    assert box.transcription == "a,b"


def test_parse_detector_line_without_text():
    box = parse_icdar_line("0,0,5,0,5,5,0,5", require_transcription=False)
    assert box.legible and box.transcription == ""


def test_annotation_file_roundtrip(tmp_path):
    boxes = [TextBox.from_aabb(1, 2, 3, 4, transcription="ab"), TextBox.from_aabb(5, 5, 2, 2, legible=False)]
    write_annotations(tmp_path / "a.txt", boxes)
    assert read_annotations(tmp_path / "a.txt") == boxes


def test_annotation_error_has_line_context(tmp_path):
    (tmp_path / "a.txt").write_text("0,0,5,0,5,5,0,5,ok\n1,2\n")
    with pytest.raises(ParseError, match=r"a.txt:2"):
        read_annotations(tmp_path / "a.txt")


# --------------------------------------------------------------- load_pair

def _write_triple(tmp_path, shape_short=(20, 30, 3), shape_long=(20, 30, 3), lines=("0,0,5,0,5,5,0,5,ab",)):
    write_image(tmp_path / "s.png", np.zeros(shape_short))
    write_image(tmp_path / "l.png", np.ones(shape_long))
    (tmp_path / "a.txt").write_text("\n".join(lines) + "\n")
    return tmp_path / "s.png", tmp_path / "l.png", tmp_path / "a.txt"


def test_load_pair_valid(tmp_path):
    s, l, a = _write_triple(tmp_path, lines=("0,0,5,0,5,5,0,5,ab", "1,1,4,1,4,4,1,4,###"))
    pair = load_pair(s, l, a)
    assert len(pair.boxes) == 2
    assert pair.short.shape == (20, 30, 3) and pair.long.max() == 1.0


def test_load_pair_dimension_mismatch(tmp_path):
    s, l, a = _write_triple(tmp_path, (80, 100, 3), (160, 200, 3))
    with pytest.raises(DataError, match="s.png.*l.png"):
        load_pair(s, l, a)


def test_load_pair_unlabeled(tmp_path):
    s, l, _ = _write_triple(tmp_path)
    assert load_pair(s, l, tmp_path / "missing.txt", allow_unlabeled=True).boxes == []
    with pytest.raises(DataError):
        load_pair(s, l, tmp_path / "missing.txt")
    with pytest.raises(DataError):
        load_pair(tmp_path / "nope.png", l, None, allow_unlabeled=True)


def test_manifest_corpus(tmp_path):
    manifest = write_corpus(tmp_path, n_train=2, n_test=1, height=64, width=64)
    train = load_manifest(manifest, "train")
    assert [p.id for p in train] == ["train_000", "train_001"]
    assert len(load_manifest(manifest, None)) == 3


# ----------------------------------------------------------------- stats

def _pair_with(widths, heights, extra=()):
    boxes = [TextBox.from_aabb(0, 0, w, h) for w, h in zip(widths, heights)] + list(extra)
    size = int(max(list(widths) + list(heights) + [8])) + 1
    img = np.zeros((size, size, 3))
    return SamplePair(img, img, boxes)


def test_stats_two_boxes():
    stats = compute_box_stats([_pair_with([10, 20], [4, 4])])
    assert (stats.mu_w, stats.sigma_w, stats.sigma_h) == (15.0, 5.0, 0.0)


def test_stats_single_box_and_counts():
    stats = compute_box_stats([_pair_with([7], [3], [TextBox.from_aabb(0, 0, 2, 2, legible=False)])])
    assert stats.sigma_w == 0 and stats.sigma_h == 0
    assert (stats.count_legible, stats.count_illegible) == (1, 1)


def test_stats_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        compute_box_stats([_pair_with([], [], [TextBox.from_aabb(0, 0, 2, 2, legible=False)])])


def test_paper_table_values():
    sony = PAPER_BOX_STATS["sid-sony-text"]
    assert (sony.mu_w, sony.mu_h, sony.sigma_w, sony.sigma_h) == (79.270, 34.122, 123.635, 50.920)
    assert sony.count_legible == 5937


@given(st.lists(st.tuples(st.floats(0.5, 500), st.floats(0.5, 200)), min_size=1, max_size=60))
@settings(max_examples=50, deadline=None)
def test_stats_match_two_pass_oracle(wh):
    boxes = [TextBox.from_aabb(0, 0, w, h) for w, h in wh]
    pair = SamplePair(np.zeros((1, 1, 3)), np.zeros((1, 1, 3)), [])
    pair.boxes = boxes  # bypass the bounds check; stats do not need pixels
    stats = compute_box_stats([pair])
    ws = [b.aabb[2] for b in boxes]
    mean = sum(ws) / len(ws)
    var = sum((x - mean) ** 2 for x in ws) / len(ws)
    assert stats.mu_w == pytest.approx(mean, rel=1e-9)
    assert stats.sigma_w == pytest.approx(var ** 0.5, rel=1e-9, abs=1e-9)


# --------------------------------------------------------------- patches

def _coord_pair(h=96, w=80, boxes=()):
    yy, xx = np.mgrid[0:h, 0:w]
    long = np.stack([yy / h, xx / w, np.zeros((h, w))], axis=-1)
    return SamplePair(long * 0.5, long, list(boxes), "coord")


def test_patch_windows_identical_between_exposures():
    pair = _coord_pair(boxes=[TextBox.from_aabb(30, 40, 20, 10)])
    for seed in range(10):
        short, long, _ = sample_patch(pair, PatchSpec(size=48), seed)
        np.testing.assert_array_equal(short, long * 0.5)


def test_patch_contains_the_only_legible_box():
    pair = _coord_pair(boxes=[TextBox.from_aabb(30, 40, 20, 10, transcription="x"),
                              TextBox.from_aabb(0, 0, 5, 5, legible=False)])
    for seed in range(20):
        _, _, boxes = sample_patch(pair, PatchSpec(size=48), seed)
        full = [b for b in boxes if b.legible and b.area == pytest.approx(200)]
        assert len(full) == 1


def test_patch_too_small_image():
    pair = SamplePair(np.zeros((256, 256, 3)), np.zeros((256, 256, 3)), [])
    with pytest.raises(ConfigError):
        sample_patch(pair, PatchSpec(size=512), 0)


def test_patch_no_placeable_box():
    pair = _coord_pair(boxes=[TextBox.from_aabb(0, 0, 70, 10)])
    with pytest.raises(SamplingExhaustedError):
        sample_patch(pair, PatchSpec(size=48), 0)
    short, _, _ = sample_patch(pair, PatchSpec(size=48, require_legible_text=False), 0)
    assert short.shape == (48, 48, 3)


def test_patch_spec_minimum():
    with pytest.raises(ConfigError):
        PatchSpec(size=16)


def test_patch_deterministic():
    pair = make_text_scene(3, 96, 96)
    a = sample_patch(pair, PatchSpec(size=64), 11)
    b = sample_patch(pair, PatchSpec(size=64), 11)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert a[2] == b[2]


def test_patch_clipping_rule():
    # box half inside is kept, mostly-outside box is dropped
    pair = _coord_pair(h=64, w=64, boxes=[TextBox.from_aabb(20, 10, 10, 10, transcription="k"),
                                          TextBox.from_aabb(0, 50, 40, 14, transcription="d")])
    spec = PatchSpec(size=32, hflip=False, vflip=False, transpose=False)
    kept = None
    for seed in range(50):
        _, _, boxes = sample_patch(pair, spec, seed)
        for b in boxes:
            assert b.in_bounds(32, 32)
        kept = kept or [b for b in boxes if b.transcription == "d"]
    assert kept is not None


@pytest.mark.parametrize("flips", list(itertools.product([False, True], repeat=3)))
def test_box_transforms_commute_with_image_transforms(flips, monkeypatch):
    h = w = 40
    img = np.zeros((h, w, 3))
    u, v, bw, bh = 7, 12, 15, 6
    # mark the four interior corner pixels with distinct values
    marks = {(v, u): 0.1, (v, u + bw - 1): 0.2, (v + bh - 1, u + bw - 1): 0.3, (v + bh - 1, u): 0.4}
    for (r, c), val in marks.items():
        img[r, c] = val
    pair = SamplePair(img.copy(), img.copy(), [TextBox.from_aabb(u, v, bw, bh, transcription="t")])
    spec = PatchSpec(size=32, hflip=flips[0], vflip=flips[1], transpose=flips[2])

    # force every enabled transform by making the coin always land heads
    class Heads(np.random.Generator):
        def random(self, *a, **k):
            return 0.0
    rng = Heads(np.random.PCG64(0))
    short, _, boxes = sample_patch(pair, spec, rng)
    (bu, bv, bw2, bh2), = [b.aabb for b in boxes]
    bu, bv, bw2, bh2 = int(bu), int(bv), int(bw2), int(bh2)
    corners = {short[bv, bu, 0], short[bv, bu + bw2 - 1, 0],
               short[bv + bh2 - 1, bu + bw2 - 1, 0], short[bv + bh2 - 1, bu, 0]}
    assert corners == set(marks.values())
    assert (bw2, bh2) == ((bh, bw) if flips[2] else (bw, bh))
