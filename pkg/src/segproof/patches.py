"""4-channel classifier input patches and training-set construction.

A patch stacks four aligned channels over a window centered on a boundary:
grayscale, membrane probability, the merged binary mask of the two segments,
and the dilated border mask. Windows are clamped inside the image rather than
zero-padded, so no channel ever contains fabricated structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, EngineConfig, Section
from .errors import GeometryMismatch, InvalidPair, MissingGroundTruth
from .imageops import adjacency_pairs, dilate, extract_boundary
from .metrics import max_overlap_map

AMBIGUITY_FLOOR = 0.5  # minimum max-overlap fraction to trust a training label


@dataclass
class Patch4:
    data: np.ndarray              # (4, s, s) float32, values in [0,1]
    label: int | None = None      # 0 = correct split, 1 = split error
    center: tuple[int, int] | None = None


@dataclass
class WeightedPatchSet:
    patches: list[Patch4]
    weights: np.ndarray           # fractions summing to 1

    def stack(self) -> np.ndarray:
        return np.stack([p.data for p in self.patches])


@dataclass
class TrainingSet:
    correct: np.ndarray           # (N, 4, s, s)
    errors: np.ndarray            # (N, 4, s, s), same N
    provenance: dict[str, list[tuple[int, int, int]]] = field(default_factory=dict)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (patches, labels) with errors as class 1."""
        x = np.concatenate([self.correct, self.errors], axis=0)
        y = np.concatenate([np.zeros(len(self.correct), dtype=np.int64),
                            np.ones(len(self.errors), dtype=np.int64)])
        return x, y


def _window_origin(center: tuple[int, int], size: int,
                   shape: tuple[int, int]) -> tuple[int, int]:
    half = size // 2
    r0 = min(max(center[0] - half, 0), shape[0] - size)
    c0 = min(max(center[1] - half, 0), shape[1] - size)
    return r0, c0


def cut_window(section: Section, merged: np.ndarray, border: np.ndarray,
         center: tuple[int, int], size: int) -> Patch4:
    shape = section.geometry.shape
    if shape[0] < size or shape[1] < size:
        raise GeometryMismatch(
            f"section {section.geometry.index} is {shape}, smaller than a "
            f"{size}x{size} patch")
    r0, c0 = _window_origin(center, size, shape)
    sl = (slice(r0, r0 + size), slice(c0, c0 + size))
    data = np.stack([
        section.gray[sl],
        section.membrane[sl],
        merged[sl].astype(np.float32),
        border[sl].astype(np.float32),
    ]).astype(np.float32)
    return Patch4(data=data, center=center)


def render_patch(section: Section, a: int, b: int, center: tuple[int, int],
                 cfg: EngineConfig) -> Patch4:
    """Single classifier input patch for the boundary between a and b."""
    boundary = extract_boundary(section.labels, a, b)
    merged = (section.labels == a) | (section.labels == b)
    border = dilate(boundary, cfg.border_dilation)
    return cut_window(section, merged, border, center, cfg.patch_size)


def greedy_cover(boundary: np.ndarray, size: int, shape: tuple[int, int],
                  cap: int) -> tuple[list[tuple[int, int]], list[int]]:
    """Centroid-out greedy cover of the boundary with non-overlapping windows.

    Returns window centers and the count of boundary pixels inside each
    window. Candidate centers whose window would intersect an already emitted
    window are skipped, so windows are pairwise disjoint.
    """
    coords = np.argwhere(boundary)
    centroid = coords.mean(axis=0)
    d2 = ((coords - centroid) ** 2).sum(axis=1)
    order = np.lexsort((coords[:, 1], coords[:, 0], d2))
    coords = coords[order]

    covered = np.zeros(len(coords), dtype=bool)
    centers: list[tuple[int, int]] = []
    counts: list[int] = []
    rects: list[tuple[int, int]] = []
    while len(centers) < cap and not covered.all():
        emitted = False
        for i in np.flatnonzero(~covered):
            center = (int(coords[i, 0]), int(coords[i, 1]))
            r0, c0 = _window_origin(center, size, shape)
            if any(abs(r0 - pr) < size and abs(c0 - pc) < size for pr, pc in rects):
                continue
            inside = ((coords[:, 0] >= r0) & (coords[:, 0] < r0 + size)
                      & (coords[:, 1] >= c0) & (coords[:, 1] < c0 + size))
            centers.append(center)
            counts.append(int(inside.sum()))
            covered |= inside
            rects.append((r0, c0))
            emitted = True
            break
        if not emitted:
            break
    return centers, counts


def sample_boundary_patches(section: Section, a: int, b: int,
                            cfg: EngineConfig) -> WeightedPatchSet:
    """Up to max_patches_per_boundary non-overlapping patches along a boundary,
    weighted by the boundary length each window covers."""
    boundary = extract_boundary(section.labels, a, b)
    if not boundary.any():
        raise InvalidPair(f"segments {a} and {b} are not adjacent")
    merged = (section.labels == a) | (section.labels == b)
    border = dilate(boundary, cfg.border_dilation)
    centers, counts = greedy_cover(boundary, cfg.patch_size,
                                    section.geometry.shape,
                                    cfg.max_patches_per_boundary)
    patches = [cut_window(section, merged, border, c, cfg.patch_size) for c in centers]
    weights = np.asarray(counts, dtype=np.float64)
    weights /= weights.sum()
    return WeightedPatchSet(patches=patches, weights=weights)


def augment_rotate(patch: Patch4, k: int) -> Patch4:
    """All four channels rotated by (k mod 4) * 90 degrees counter-clockwise."""
    data = np.ascontiguousarray(np.rot90(patch.data, k % 4, axes=(1, 2)))
    return Patch4(data=data, label=patch.label, center=patch.center)


def rotate_batch(batch: np.ndarray, k: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(batch, k % 4, axes=(2, 3)))


def pair_training_class(a: int, b: int,
                        mapping: dict[int, tuple[int, float]]) -> int | None:
    """Training label for a boundary, or None when ambiguous.

    Both segments must map to ground truth with at least AMBIGUITY_FLOOR of
    their pixels; a pair mapping to one gt id is a split error (1), a pair
    mapping to two ids is a correct split (0).
    """
    ga, fa = mapping[a]
    gb, fb = mapping[b]
    if ga == 0 or gb == 0 or fa < AMBIGUITY_FLOOR or fb < AMBIGUITY_FLOOR:
        return None
    return 1 if ga == gb else 0


def build_training_set(dataset: Dataset, cfg: EngineConfig,
                       rng_seed: int) -> TrainingSet:
    """Labeled, exactly balanced patch set from automatic-vs-gt comparison."""
    per_class: dict[int, list[tuple[np.ndarray, tuple[int, int, int]]]] = {0: [], 1: []}
    for sec in dataset.sections:
        if sec.gt_labels is None:
            raise MissingGroundTruth(
                f"section {sec.geometry.index} has no ground truth")
        mapping = max_overlap_map(sec.labels, sec.gt_labels)
        for a, b in adjacency_pairs(sec.labels):
            cls = pair_training_class(a, b, mapping)
            if cls is None:
                continue
            pset = sample_boundary_patches(sec, a, b, cfg)
            for p in pset.patches:
                per_class[cls].append((p.data, (sec.geometry.index, a, b)))

    rng = np.random.default_rng(rng_seed)
    n = min(len(per_class[0]), len(per_class[1]))
    picked: dict[int, list[tuple[np.ndarray, tuple[int, int, int]]]] = {}
    for cls in (0, 1):
        items = per_class[cls]
        if len(items) > n:
            idx = np.sort(rng.choice(len(items), size=n, replace=False))
            items = [items[i] for i in idx]
        picked[cls] = items

    def _stack(items):
        if not items:
            return np.zeros((0, 4, cfg.patch_size, cfg.patch_size), dtype=np.float32)
        return np.stack([d for d, _ in items])

    return TrainingSet(
        correct=_stack(picked[0]),
        errors=_stack(picked[1]),
        provenance={"correct": [prov for _, prov in picked[0]],
                    "errors": [prov for _, prov in picked[1]]},
    )


def export_training_set(ts: TrainingSet, out_dir: str | Path) -> None:
    """patches.bin (f32-LE, N x 4 x s x s, C order), labels.bin (u8), sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x, y = ts.as_arrays()
    (out_dir / "patches.bin").write_bytes(
        np.ascontiguousarray(x, dtype="<f4").tobytes())
    (out_dir / "labels.bin").write_bytes(y.astype(np.uint8).tobytes())
    sidecar = {
        "count": int(len(y)),
        "patch_size": int(x.shape[-1]) if len(y) else 0,
        "channels": 4,
        "provenance": {
            "correct": [list(p) for p in ts.provenance.get("correct", [])],
            "errors": [list(p) for p in ts.provenance.get("errors", [])],
        },
    }
    (out_dir / "training_set.json").write_text(json.dumps(sidecar, indent=2) + "\n")
