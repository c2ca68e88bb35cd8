import numpy as np
import pytest

from segproof.core import Section, SectionGeometry
from segproof.errors import InvalidPair, MissingGroundTruth
from segproof.patches import (
    augment_rotate,
    build_training_set,
    export_training_set,
    render_patch,
    sample_boundary_patches,
)
from conftest import make_dataset, tiny_config


def flat_section(w=120, h=100, split_col=60, gray_value=0.5):
    """Two segments split vertically at split_col, constant gray."""
    geometry = SectionGeometry(width=w, height=h, index=0)
    labels = np.full((h, w), 1, np.uint32)
    labels[:, split_col:] = 2
    return Section(geometry=geometry,
                   gray=np.full((h, w), gray_value, np.float32),
                   membrane=np.zeros((h, w), np.float32),
                   labels=labels, gt_labels=labels.copy())


def test_render_patch_interior_center():
    sec = flat_section()
    cfg = tiny_config()
    center = (50, 60)
    p = render_patch(sec, 1, 2, center, cfg)
    assert p.data.shape == (4, 25, 25)
    assert np.all(p.data[0] == 0.5)                       # constant gray channel
    assert set(np.unique(p.data[2])) <= {0.0, 1.0}
    assert set(np.unique(p.data[3])) <= {0.0, 1.0}
    assert np.all(p.data[2] == 1.0)                       # window inside merged mask
    # boundary columns 59,60 relative to window start 48 -> 11,12; border mask
    # is that line dilated by 5
    assert p.data[3][:, 11:13].all()
    assert not p.data[3][:, :6].any()


def test_render_patch_clamps_at_edges():
    sec = flat_section(split_col=10)
    cfg = tiny_config()
    from segproof.patches import _window_origin
    # center 10 px from the left edge: window must start at column 0
    assert _window_origin((50, 10), 25, sec.geometry.shape) == (38, 0)
    p = render_patch(sec, 1, 2, (50, 10), cfg)
    # boundary sits at columns 9,10 of the clamped window
    assert p.data[3][:, 9:11].all()
    assert not p.data[3][:, 16:].any()


def test_render_patch_invalid_pair():
    sec = flat_section()
    with pytest.raises(InvalidPair):
        render_patch(sec, 1, 1, (50, 60), tiny_config())
    with pytest.raises(InvalidPair):
        render_patch(sec, 1, 99, (50, 60), tiny_config())


def test_patch_values_in_range_fuzz():
    ds = make_dataset(n_sections=1, n_cells=6, size=120, splits=2, merges=0)
    sec = ds.sections[0]
    cfg = tiny_config()
    from segproof.imageops import adjacency_pairs
    for a, b in adjacency_pairs(sec.labels)[:10]:
        pset = sample_boundary_patches(sec, a, b, cfg)
        for p in pset.patches:
            assert p.data.min() >= 0.0 and p.data.max() <= 1.0
            assert set(np.unique(p.data[2])) <= {0.0, 1.0}
            assert set(np.unique(p.data[3])) <= {0.0, 1.0}


def test_single_window_boundary():
    sec = flat_section(w=80, h=25, split_col=40)
    cfg = tiny_config()
    pset = sample_boundary_patches(sec, 1, 2, cfg)
    # 25-px-high boundary fits in one 25x25 window
    assert len(pset.patches) == 1
    assert pset.weights[0] == pytest.approx(1.0)


def windows_of(pset, size, shape):
    from segproof.patches import _window_origin
    return [_window_origin(p.center, size, shape) for p in pset.patches]


def test_long_boundary_coverage_arithmetic():
    sec = flat_section(w=100, h=200, split_col=50)
    cfg = tiny_config()
    pset = sample_boundary_patches(sec, 1, 2, cfg)
    assert len(pset.patches) >= 2
    assert pset.weights.sum() == pytest.approx(1.0, abs=1e-9)
    # windows pairwise disjoint
    rects = windows_of(pset, cfg.patch_size, sec.geometry.shape)
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            ri, rj = rects[i], rects[j]
            assert abs(ri[0] - rj[0]) >= cfg.patch_size or \
                abs(ri[1] - rj[1]) >= cfg.patch_size
    # weights proportional to covered boundary pixels
    from segproof.imageops import extract_boundary
    boundary = extract_boundary(sec.labels, 1, 2)
    coords = np.argwhere(boundary)
    counts = []
    for r0, c0 in rects:
        inside = ((coords[:, 0] >= r0) & (coords[:, 0] < r0 + cfg.patch_size)
                  & (coords[:, 1] >= c0) & (coords[:, 1] < c0 + cfg.patch_size))
        counts.append(inside.sum())
    expected = np.array(counts, float) / sum(counts)
    assert np.allclose(pset.weights, expected, atol=1e-9)


def test_boundary_needing_many_windows_caps_at_limit():
    sec = flat_section(w=100, h=400, split_col=50)
    cfg = tiny_config()  # 25-px windows; 400-px boundary would need 16
    pset = sample_boundary_patches(sec, 1, 2, cfg)
    assert len(pset.patches) == cfg.max_patches_per_boundary == 10


def test_rotation_group_properties():
    ds = make_dataset(n_sections=1, n_cells=5, size=120)
    sec = ds.sections[0]
    from segproof.imageops import adjacency_pairs
    a, b = adjacency_pairs(sec.labels)[0]
    p = sample_boundary_patches(sec, a, b, tiny_config()).patches[0]
    assert np.array_equal(augment_rotate(p, 0).data, p.data)
    assert np.array_equal(augment_rotate(p, 4).data, p.data)
    q = p
    for _ in range(4):
        q = augment_rotate(q, 1)
    assert np.array_equal(q.data, p.data)


def test_rotation_matches_index_remap_oracle():
    rng = np.random.default_rng(0)
    from segproof.patches import Patch4
    data = rng.random((4, 9, 9)).astype(np.float32)
    p = Patch4(data=data)
    s = 9
    for k in range(4):
        rot = augment_rotate(p, k).data
        for _ in range(20):
            c, i, j = rng.integers(4), rng.integers(s), rng.integers(s)
            # one CCW quarter turn maps (i, j) -> source (j, s-1-i), applied k times
            si, sj = i, j
            for _ in range(k):
                si, sj = sj, s - 1 - si
            assert rot[c, i, j] == data[c, si, sj]


def test_build_training_set_no_errors_when_auto_equals_gt():
    ds = make_dataset(n_sections=1, n_cells=6, size=120)
    ts = build_training_set(ds, tiny_config(), rng_seed=0)
    assert len(ts.errors) == 0
    assert len(ts.correct) == 0  # balanced down to the smaller class


def test_build_training_set_finds_planted_split():
    ds = make_dataset(n_sections=1, n_cells=6, size=120, splits=1, merges=0)
    ts = build_training_set(ds, tiny_config(), rng_seed=0)
    assert len(ts.errors) >= 1
    assert len(ts.correct) == len(ts.errors)
    # the error provenance names the planted pair
    from segproof.metrics import max_overlap_map
    sec = ds.sections[0]
    mapping = max_overlap_map(sec.labels, sec.gt_labels)
    for _, a, b in ts.provenance["errors"]:
        assert mapping[a][0] == mapping[b][0]


def test_build_training_set_balances_and_separates_provenance():
    ds = make_dataset(n_sections=2, n_cells=8, size=140, splits=3, merges=0)
    ts = build_training_set(ds, tiny_config(), rng_seed=0)
    assert len(ts.correct) == len(ts.errors) > 0
    err_pairs = {(s, a, b) for s, a, b in ts.provenance["errors"]}
    cor_pairs = {(s, a, b) for s, a, b in ts.provenance["correct"]}
    assert not err_pairs & cor_pairs
    # 3 planted splits -> 3 distinct error pairs
    assert len(err_pairs) == 3


def test_build_training_set_requires_gt():
    ds = make_dataset(n_sections=1)
    ds.sections[0].gt_labels = None
    with pytest.raises(MissingGroundTruth):
        build_training_set(ds, tiny_config(), rng_seed=0)


def test_export_training_set(tmp_path):
    ds = make_dataset(n_sections=1, n_cells=6, size=120, splits=1, merges=0)
    ts = build_training_set(ds, tiny_config(), rng_seed=0)
    export_training_set(ts, tmp_path)
    x, y = ts.as_arrays()
    raw = np.frombuffer((tmp_path / "patches.bin").read_bytes(), "<f4")
    assert np.array_equal(raw.reshape(x.shape), x)
    labels = np.frombuffer((tmp_path / "labels.bin").read_bytes(), np.uint8)
    assert np.array_equal(labels, y.astype(np.uint8))
    import json
    sidecar = json.loads((tmp_path / "training_set.json").read_text())
    assert sidecar["count"] == len(y)
