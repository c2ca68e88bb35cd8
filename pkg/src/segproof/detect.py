"""Ranked split-error and merge-error candidates for a section.

Split candidates score every adjacent label pair with the classifier. Merge
candidates hypothesize a missing boundary inside a segment: the segment mask
is dilated, two watershed seeds are placed at antipodal points of the segment
perimeter, and a priority flood over the inverted grayscale proposes a
dividing line, which the split classifier then rates; a line that looks like
a correct boundary (low split score) is strong evidence of a merge error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnn import CnnWeights, score_patch_sets
from .core import EngineConfig, Section
from .errors import DegenerateSegment, SeedOutsideRegion
from .imageops import (
    Bipartition,
    adjacency_pairs,
    connected_components,
    dilate,
    neighbor_any,
    watershed_two_seed,
)
from .patches import WeightedPatchSet, cut_window, greedy_cover


@dataclass
class SplitCandidate:
    section_index: int
    a: int
    b: int
    score: float                 # probability that the boundary is a split error
    n_patches: int = 0

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.section_index, self.a, self.b)


@dataclass
class MergeCandidate:
    section_index: int
    segment_id: int
    score: float                 # 1 - p of the best hypothesized boundary
    bipartition: Bipartition     # clipped to the segment mask
    all_scores: list[float] = field(default_factory=list)

    @property
    def key(self) -> tuple[int, int]:
        return (self.section_index, self.segment_id)


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed by (master seed, context); independent of visit order."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed)] + [int(k) for k in keys]))


def antipodal_seeds(perimeter: np.ndarray, centroid: np.ndarray,
                    theta: float) -> tuple[tuple[int, int], tuple[int, int]]:
    """Perimeter pixels nearest the rays from the centroid at theta, theta+pi.

    The direction is (sin theta, cos theta) in (row, col), so theta = 0 points
    east along increasing columns.
    """
    u = np.array([np.sin(theta), np.cos(theta)])
    v = perimeter - centroid
    t = v @ u
    along = v - np.outer(t, u)
    dist = np.where(t < 0, np.linalg.norm(v, axis=1), np.linalg.norm(along, axis=1))
    first = np.lexsort((perimeter[:, 1], perimeter[:, 0], dist))[0]
    t2 = v @ -u
    along2 = v - np.outer(t2, -u)
    dist2 = np.where(t2 < 0, np.linalg.norm(v, axis=1), np.linalg.norm(along2, axis=1))
    second = np.lexsort((perimeter[:, 1], perimeter[:, 0], dist2))[0]
    return (tuple(int(x) for x in perimeter[first]),
            tuple(int(x) for x in perimeter[second]))


def opposite_seed_pairs(segment_mask: np.ndarray, n: int,
                        rng_seed: int | np.random.Generator,
                        ) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """n seed pairs at antipodal perimeter points of the mask, seeded."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    mask = np.asarray(segment_mask, dtype=bool)
    if not mask.any():
        raise DegenerateSegment("empty segment mask")
    interior_edge = np.zeros_like(mask)
    interior_edge[1:-1, 1:-1] = True
    perimeter_mask = mask & (neighbor_any(~mask) | ~interior_edge)
    perimeter = np.argwhere(perimeter_mask)
    if len(perimeter) < 2:
        raise DegenerateSegment("perimeter too small for two distinct seeds")
    centroid = np.argwhere(mask).mean(axis=0)
    pairs: list[tuple[tuple[int, int], tuple[int, int]]] = []
    budget = 8 * n
    while len(pairs) < n:
        if budget <= 0:
            raise DegenerateSegment(
                f"could not draw {n} distinct seed pairs (got {len(pairs)})")
        budget -= 1
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        sa, sb = antipodal_seeds(perimeter, centroid, theta)
        if sa == sb:
            continue
        pairs.append((sa, sb))
    return pairs


def hypothesis_patch_set(section: Section, region: np.ndarray,
                         boundary: np.ndarray, cfg: EngineConfig,
                         ) -> WeightedPatchSet | None:
    """Patches for a hypothesized split: the dilated region stands in for the
    merged-label channel and the candidate line for the border channel."""
    if not boundary.any():
        return None
    border = dilate(boundary, cfg.border_dilation)
    centers, counts = greedy_cover(boundary, cfg.patch_size,
                                    section.geometry.shape,
                                    cfg.max_patches_per_boundary)
    if not centers:
        return None
    patches = [cut_window(section, region, border, c, cfg.patch_size) for c in centers]
    weights = np.asarray(counts, dtype=np.float64)
    weights /= weights.sum()
    return WeightedPatchSet(patches=patches, weights=weights)


def _clip_bipartition(bp: Bipartition, mask: np.ndarray,
                      min_side: int) -> Bipartition | None:
    """Restrict a bipartition to the original segment; None if degenerate.

    The part of the dividing line inside the segment acts as a wall: the two
    wall-separated components holding the seeds become the sides, and every
    other segment pixel (the wall itself plus stray slivers the flood grabbed
    through the dilated halo) joins the boundary. Hypotheses whose wall does
    not separate the seeds, or whose children would fall below the segment
    area floor, are discarded — a cut that shaves off a sliver the engine
    would never consider a segment is noise, not a correction.
    """
    wall = bp.boundary & mask
    interior = mask & ~wall
    comp, _ = connected_components(interior)
    ca, cb = comp[bp.seed_a], comp[bp.seed_b]
    if ca == cb:
        return None
    side_a = comp == ca
    side_b = comp == cb
    if side_a.sum() < min_side or side_b.sum() < min_side:
        return None
    boundary = mask & ~side_a & ~side_b
    if not boundary.any():
        return None
    return Bipartition(side_a=side_a, side_b=side_b, boundary=boundary,
                       seed_a=bp.seed_a, seed_b=bp.seed_b)


def merge_hypotheses(section: Section, mask: np.ndarray, cfg: EngineConfig,
                     rng: np.random.Generator,
                     ) -> list[tuple[Bipartition, WeightedPatchSet]]:
    """Deduplicated, scorable watershed split hypotheses for one segment mask.

    Seeds are drawn on the mask perimeter, the flood runs over the inverted
    grayscale inside the dilated mask, duplicate dividing lines are dropped,
    and each surviving bipartition is clipped back to the segment.
    """
    try:
        seed_pairs = opposite_seed_pairs(mask, cfg.n_merge_candidates, rng)
    except DegenerateSegment:
        return []
    region = dilate(mask, cfg.merge_dilation)
    height = 1.0 - section.gray.astype(np.float64)

    hypotheses: list[tuple[Bipartition, WeightedPatchSet]] = []
    seen: set[bytes] = set()
    for sa, sb in seed_pairs:
        try:
            bp = watershed_two_seed(height, region, sa, sb)
        except SeedOutsideRegion:
            continue
        key = bp.boundary_key()
        if key in seen:
            continue
        seen.add(key)
        clipped = _clip_bipartition(bp, mask, cfg.min_segment_area)
        if clipped is None:
            continue
        pset = hypothesis_patch_set(section, region, clipped.boundary, cfg)
        if pset is None:
            continue
        hypotheses.append((clipped, pset))
    return hypotheses


def generate_merge_candidates(section: Section, segment_id: int,
                              weights: CnnWeights, cfg: EngineConfig,
                              rng_seed: int) -> MergeCandidate | None:
    """Best watershed split hypothesis for one segment, or None.

    Segments below the area floor, too thin to seed, or yielding no valid
    dividing line produce None rather than an error.
    """
    mask = section.labels == segment_id
    area = int(mask.sum())
    if area < cfg.min_segment_area:
        return None
    comp, n_comp = connected_components(mask)
    if n_comp > 1:
        # disconnected segments can appear after corrections; analyze the
        # largest piece (ties resolve to the first in scan order)
        sizes = np.bincount(comp.ravel())
        sizes[0] = 0
        mask = comp == int(sizes.argmax())
        if int(mask.sum()) < cfg.min_segment_area:
            return None

    rng = derive_rng(rng_seed, section.geometry.index, segment_id)
    hypotheses = merge_hypotheses(section, mask, cfg, rng)
    if not hypotheses:
        return None

    probs = score_patch_sets(weights, [ps for _, ps in hypotheses])
    inverted = [1.0 - p for p in probs]
    best = int(np.argmax(inverted))
    return MergeCandidate(section_index=section.geometry.index,
                          segment_id=int(segment_id),
                          score=float(inverted[best]),
                          bipartition=hypotheses[best][0],
                          all_scores=[float(s) for s in inverted])


def score_split_pairs(section: Section, pairs: list[tuple[int, int]],
                      weights: CnnWeights, cfg: EngineConfig) -> list[SplitCandidate]:
    from .patches import sample_boundary_patches

    sets = [sample_boundary_patches(section, a, b, cfg) for a, b in pairs]
    probs = score_patch_sets(weights, sets)
    return [SplitCandidate(section_index=section.geometry.index, a=a, b=b,
                           score=float(p), n_patches=len(s.patches))
            for (a, b), p, s in zip(pairs, probs, sets)]


def sort_splits(cands: list[SplitCandidate]) -> list[SplitCandidate]:
    return sorted(cands, key=lambda c: (-c.score, c.section_index, c.a, c.b))


def sort_merges(cands: list[MergeCandidate]) -> list[MergeCandidate]:
    return sorted(cands, key=lambda c: (-c.score, c.section_index, c.segment_id))


def rank_splits(section: Section, weights: CnnWeights,
                cfg: EngineConfig) -> list[SplitCandidate]:
    """One candidate per adjacency pair, sorted by descending split score."""
    pairs = adjacency_pairs(section.labels)
    return sort_splits(score_split_pairs(section, pairs, weights, cfg))


def rank_merges(section: Section, weights: CnnWeights, cfg: EngineConfig,
                rng_seed: int) -> list[MergeCandidate]:
    """One candidate per eligible segment, sorted by descending inverted score."""
    ids = [int(i) for i in np.unique(section.labels) if i != 0]
    cands = []
    for s in ids:
        cand = generate_merge_candidates(section, s, weights, cfg, rng_seed)
        if cand is not None:
            cands.append(cand)
    return sort_merges(cands)


def export_rankings(splits: list[SplitCandidate], merges: list[MergeCandidate],
                    master_seed: int, path: str | Path) -> None:
    """JSON-lines export: one candidate per line, merges first."""
    with open(path, "w") as fh:
        for m in merges:
            fh.write(json.dumps({
                "type": "merge", "section": m.section_index,
                "ids": [m.segment_id], "score": m.score, "seed": master_seed,
            }) + "\n")
        for s in splits:
            fh.write(json.dumps({
                "type": "split", "section": s.section_index,
                "ids": [s.a, s.b], "score": s.score, "seed": master_seed,
            }) + "\n")
