import numpy as np
import pytest

from segproof.errors import GeometryMismatch, IdenticalSeeds, InvalidPair, SeedOutsideRegion
from segproof.imageops import (
    Bipartition,
    _flood,
    _flood_python,
    adjacency_pairs,
    connected_components,
    contingency,
    dilate,
    extract_boundary,
    watershed_two_seed,
)


# --- dilation -----------------------------------------------------------------

def test_dilate_radius_zero_is_identity():
    rng = np.random.default_rng(1)
    mask = rng.random((20, 20)) < 0.2
    assert np.array_equal(dilate(mask, 0), mask)


def test_dilate_single_pixel_radius_one():
    mask = np.zeros((9, 9), bool)
    mask[4, 4] = True
    out = dilate(mask, 1)
    assert out.sum() == 5  # center + 4-neighbors; diagonals are at sqrt(2)
    assert out[4, 4] and out[3, 4] and out[5, 4] and out[4, 3] and out[4, 5]


def brute_force_disk_count(radius):
    n = 0
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if dr * dr + dc * dc <= radius * radius:
                n += 1
    return n


def test_dilate_single_pixel_radius_five_matches_lattice_count():
    mask = np.zeros((21, 21), bool)
    mask[10, 10] = True
    out = dilate(mask, 5)
    assert out.sum() == brute_force_disk_count(5) == 81


def test_dilate_monotone_and_extensive():
    rng = np.random.default_rng(7)
    for _ in range(20):
        mask = rng.random((24, 24)) < 0.1
        if not mask.any():
            continue
        d1 = dilate(mask, 1)
        d3 = dilate(mask, 3)
        assert (mask <= d1).all()        # extensive
        assert (d1 <= d3).all()          # monotone in radius


# --- boundaries & adjacency ------------------------------------------------------

def test_extract_boundary_half_and_half():
    labels = np.zeros((4, 4), np.uint32)
    labels[:, :2] = 1
    labels[:, 2:] = 2
    out = extract_boundary(labels, 1, 2)
    assert out.sum() == 8
    assert out[:, 1].all() and out[:, 2].all()


def test_extract_boundary_symmetry_and_errors():
    labels = np.zeros((6, 6), np.uint32)
    labels[:2] = 1
    labels[2:4] = 2
    labels[4:] = 3
    assert np.array_equal(extract_boundary(labels, 1, 2),
                          extract_boundary(labels, 2, 1))
    assert not extract_boundary(labels, 1, 3).any()  # not adjacent
    with pytest.raises(InvalidPair):
        extract_boundary(labels, 1, 1)
    with pytest.raises(InvalidPair):
        extract_boundary(labels, 1, 99)


def test_adjacency_single_segment_and_tri_band():
    assert adjacency_pairs(np.full((5, 5), 7, np.uint32)) == []
    labels = np.zeros((6, 9), np.uint32)
    labels[:, :3] = 4
    labels[:, 3:6] = 2
    labels[:, 6:] = 9
    assert adjacency_pairs(labels) == [(2, 4), (2, 9)]


def brute_force_adjacency(labels):
    pairs = set()
    h, w = labels.shape
    for r in range(h):
        for c in range(w):
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr < h and cc < w:
                    a, b = int(labels[r, c]), int(labels[rr, cc])
                    if a != b and a != 0 and b != 0:
                        pairs.add((min(a, b), max(a, b)))
    return sorted(pairs)


def test_adjacency_matches_pixel_pair_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        labels = rng.integers(0, 6, (20, 20)).astype(np.uint32)
        assert adjacency_pairs(labels) == brute_force_adjacency(labels)


# --- contingency -------------------------------------------------------------------

def test_contingency_diagonal_and_constant():
    x = np.arange(9).reshape(3, 3) % 3 + 1
    assert contingency(x, x) == {(1, 1): 3, (2, 2): 3, (3, 3): 3}
    ones = np.ones((4, 4), np.int64)
    assert contingency(ones, ones * 5) == {(1, 5): 16}


def brute_force_contingency(x, y, ignore_zero_y):
    table = {}
    for xi, yi in zip(x.ravel(), y.ravel()):
        if ignore_zero_y and yi == 0:
            continue
        table[(int(xi), int(yi))] = table.get((int(xi), int(yi)), 0) + 1
    return table


def test_contingency_matches_tally_oracle():
    rng = np.random.default_rng(3)
    for flag in (False, True):
        for _ in range(10):
            x = rng.integers(0, 5, (8, 8))
            y = rng.integers(0, 4, (8, 8))
            assert contingency(x, y, flag) == brute_force_contingency(x, y, flag)
    with pytest.raises(GeometryMismatch):
        contingency(np.zeros((2, 2)), np.zeros((3, 3)))


# --- watershed ------------------------------------------------------------------

def two_basin_height(h=21, w=40, c_left=8, c_right=32):
    rr, cc = np.mgrid[0:h, 0:w].astype(float)
    d_left = np.hypot(rr - h // 2, cc - c_left)
    d_right = np.hypot(rr - h // 2, cc - c_right)
    return np.minimum(d_left, d_right) / max(h, w)


def test_watershed_boundary_on_ridge_crest():
    height = two_basin_height()
    region = np.ones(height.shape, bool)
    bp = watershed_two_seed(height, region, (10, 8), (10, 32))
    crest = (8 + 32) // 2
    cols = np.argwhere(bp.boundary)[:, 1]
    assert len(cols) > 0
    assert np.abs(cols - crest).max() <= 1


def check_bipartition(bp: Bipartition, region: np.ndarray):
    assert not (bp.side_a & bp.side_b).any()
    assert not (bp.side_a & bp.boundary).any()
    assert not (bp.side_b & bp.boundary).any()
    assert np.array_equal(bp.side_a | bp.side_b | bp.boundary, region)
    assert bp.side_a[bp.seed_a] and bp.side_b[bp.seed_b]
    assert connected_components(bp.side_a)[1] == 1
    assert connected_components(bp.side_b)[1] == 1


def random_blob(rng, h=32, w=32):
    mask = np.zeros((h, w), bool)
    r, c = rng.integers(4, h - 4), rng.integers(4, w - 4)
    mask[r, c] = True
    for _ in range(rng.integers(120, 400)):
        coords = np.argwhere(mask)
        r, c = coords[rng.integers(len(coords))]
        dr, dc = ((-1, 0), (1, 0), (0, -1), (0, 1))[rng.integers(4)]
        rr, cc = np.clip(r + dr, 0, h - 1), np.clip(c + dc, 0, w - 1)
        mask[rr, cc] = True
    return mask


def test_watershed_invariants_fuzz():
    rng = np.random.default_rng(23)
    for _ in range(25):
        region = random_blob(rng)
        height = rng.random(region.shape)
        coords = np.argwhere(region)
        if len(coords) < 3:
            continue
        i, j = rng.choice(len(coords), 2, replace=False)
        bp = watershed_two_seed(height, region, tuple(coords[i]), tuple(coords[j]))
        check_bipartition(bp, region)


def test_watershed_deterministic_including_uniform_heights():
    rng = np.random.default_rng(5)
    region = np.ones((30, 30), bool)
    for height in (rng.random((30, 30)), np.full((30, 30), 0.5)):
        a = watershed_two_seed(height, region, (4, 4), (25, 25))
        b = watershed_two_seed(height, region, (4, 4), (25, 25))
        assert np.array_equal(a.side_a, b.side_a)
        assert np.array_equal(a.side_b, b.side_b)
        assert np.array_equal(a.boundary, b.boundary)
        check_bipartition(a, region)


def test_watershed_seed_errors():
    region = np.ones((10, 10), bool)
    region[:, 5] = False  # two components
    h = np.zeros((10, 10))
    with pytest.raises(IdenticalSeeds):
        watershed_two_seed(h, region, (2, 2), (2, 2))
    with pytest.raises(SeedOutsideRegion):
        watershed_two_seed(h, region, (2, 2), (2, 5))
    with pytest.raises(SeedOutsideRegion):
        watershed_two_seed(h, region, (2, 2), (2, 8))  # other component


def test_numba_flood_matches_python_reference():
    rng = np.random.default_rng(17)
    for _ in range(10):
        region = random_blob(rng, 24, 24)
        coords = np.argwhere(region)
        if len(coords) < 3:
            continue
        i, j = rng.choice(len(coords), 2, replace=False)
        height = rng.random(region.shape)
        sa, sb = tuple(coords[i]), tuple(coords[j])
        comp, _ = connected_components(region)
        if comp[sa] != comp[sb]:
            continue
        sub = comp == comp[sa]
        a1, m1 = _flood(height, sub, sa, sb)
        a2, m2 = _flood_python(height, sub, sa, sb)
        assert np.array_equal(a1, a2)
        assert np.array_equal(m1, m2)
