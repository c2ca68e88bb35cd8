"""Pixel-level primitives: morphology, boundaries, adjacency, two-seed watershed.

Conventions used throughout:
  * 4-connectivity everywhere (adjacency, components, flooding), which avoids
    diagonal label leaks through one-pixel membranes;
  * dilation uses a Euclidean disk (pixels within distance <= radius);
  * masks are boolean numpy arrays of the section shape.

The watershed is a priority flood restricted to a region mask. Frontier
pixels pop in ascending (height, row, column, seed-id) order, so the flood is
fully deterministic; randomness enters only through seed placement upstream.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import GeometryMismatch, IdenticalSeeds, InvalidPair, SeedOutsideRegion

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def neighbor_any(mask: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbor inside `mask`."""
    out = np.zeros_like(mask, dtype=bool)
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean dilation: all pixels within distance <= radius of the mask."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    dist = ndi.distance_transform_edt(~mask)
    return dist <= radius


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected component labeling of a boolean mask."""
    lab, n = ndi.label(mask, structure=FOUR_CONNECTED)
    return lab, int(n)


def extract_boundary(labels: np.ndarray, a: int, b: int) -> np.ndarray:
    """Two-pixel-thick border between segments a and b.

    Returns pixels labeled a with a 4-neighbor labeled b, union pixels
    labeled b with a 4-neighbor labeled a; empty if not adjacent.
    """
    if a == b:
        raise InvalidPair(f"a and b must differ, both are {a}")
    mask_a = labels == a
    mask_b = labels == b
    if not mask_a.any() or not mask_b.any():
        raise InvalidPair(f"id absent from label map: a={a} b={b}")
    return (mask_a & neighbor_any(mask_b)) | (mask_b & neighbor_any(mask_a))


def adjacency_pairs(labels: np.ndarray) -> list[tuple[int, int]]:
    """All unordered pairs of distinct nonzero ids with 4-adjacent pixels.

    Enumerated in ascending (min, max) order.
    """
    lab = np.asarray(labels)
    h = np.stack([lab[:, :-1].ravel(), lab[:, 1:].ravel()], axis=1)
    v = np.stack([lab[:-1, :].ravel(), lab[1:, :].ravel()], axis=1)
    pairs = np.concatenate([h, v], axis=0).astype(np.int64)
    keep = (pairs[:, 0] != pairs[:, 1]) & (pairs[:, 0] != 0) & (pairs[:, 1] != 0)
    pairs = pairs[keep]
    if pairs.size == 0:
        return []
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0)
    return [(int(a), int(b)) for a, b in pairs]


def contingency(x: np.ndarray, y: np.ndarray,
                ignore_zero_y: bool = False) -> dict[tuple[int, int], int]:
    """Sparse count table n(i,j) of pixels with x=i and y=j.

    Pixels where y == 0 are excluded when ignore_zero_y is set.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise GeometryMismatch(f"label maps differ in shape: {x.shape} vs {y.shape}")
    xf = x.ravel().astype(np.int64)
    yf = y.ravel().astype(np.int64)
    if ignore_zero_y:
        keep = yf != 0
        xf, yf = xf[keep], yf[keep]
    if xf.size == 0:
        return {}
    stride = yf.max() + 1
    codes = xf * stride + yf
    uniq, counts = np.unique(codes, return_counts=True)
    return {(int(c // stride), int(c % stride)): int(n)
            for c, n in zip(uniq, counts)}


# --- two-seed watershed -------------------------------------------------------


@dataclass
class Bipartition:
    """A two-way split of one region plus the separating boundary.

    side_a, side_b and boundary are pairwise disjoint, their union covers the
    flooded region, and each side is 4-connected and contains its seed.
    """

    side_a: np.ndarray
    side_b: np.ndarray
    boundary: np.ndarray
    seed_a: tuple[int, int]
    seed_b: tuple[int, int]

    def region(self) -> np.ndarray:
        return self.side_a | self.side_b | self.boundary

    def boundary_key(self) -> bytes:
        """Stable identity of the separating line, for deduplication."""
        return np.packbits(self.boundary).tobytes()


def _flood_python(height: np.ndarray, region: np.ndarray,
                  seed_a: tuple[int, int],
                  seed_b: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Reference priority flood; returns (assignment in {0,1,2}, meet mask)."""
    H, W = height.shape
    assign = np.zeros((H, W), dtype=np.uint8)
    meet = np.zeros((H, W), dtype=bool)
    assign[seed_a] = 1
    assign[seed_b] = 2
    heap: list[tuple[float, int, int, int]] = []
    offs = ((-1, 0), (1, 0), (0, -1), (0, 1))
    for (r0, c0), side in ((seed_a, 1), (seed_b, 2)):
        for dr, dc in offs:
            nr, nc = r0 + dr, c0 + dc
            if 0 <= nr < H and 0 <= nc < W and region[nr, nc] and not assign[nr, nc]:
                heapq.heappush(heap, (float(height[nr, nc]), nr, nc, side))
    while heap:
        _, r, c, side = heapq.heappop(heap)
        if assign[r, c]:
            continue
        other = 3 - side
        hit = False
        for dr, dc in offs:
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and assign[nr, nc] == other:
                hit = True
        assign[r, c] = side
        if hit:
            meet[r, c] = True
        for dr, dc in offs:
            nr, nc = r + dr, c + dc
            if 0 <= nr < H and 0 <= nc < W and region[nr, nc] and not assign[nr, nc]:
                heapq.heappush(heap, (float(height[nr, nc]), nr, nc, side))
    return assign, meet


if _HAVE_NUMBA:

    @njit(cache=True)
    def _flood_kernel(height, region, sa_r, sa_c, sb_r, sb_c):  # pragma: no cover
        H, W = height.shape
        assign = np.zeros((H, W), np.uint8)
        meet = np.zeros((H, W), np.uint8)
        # binary heap over (height, packed) where packed = (r*W+c)*2 + side-1,
        # which realises the (height, row, column, seed-id) pop order
        cap = H * W * 4 + 8
        kh = np.empty(cap, np.float64)
        kp = np.empty(cap, np.int64)
        n = 0
        drs = (-1, 1, 0, 0)
        dcs = (0, 0, -1, 1)
        assign[sa_r, sa_c] = 1
        assign[sb_r, sb_c] = 2
        for s0 in (1, 2):
            r0 = sa_r if s0 == 1 else sb_r
            c0 = sa_c if s0 == 1 else sb_c
            for k in range(4):
                nr = r0 + drs[k]
                nc = c0 + dcs[k]
                if 0 <= nr < H and 0 <= nc < W and region[nr, nc] and assign[nr, nc] == 0:
                    h = height[nr, nc]
                    p = (nr * W + nc) * 2 + (s0 - 1)
                    i = n
                    kh[i] = h
                    kp[i] = p
                    n += 1
                    while i > 0:
                        q = (i - 1) >> 1
                        if kh[i] < kh[q] or (kh[i] == kh[q] and kp[i] < kp[q]):
                            kh[i], kh[q] = kh[q], kh[i]
                            kp[i], kp[q] = kp[q], kp[i]
                            i = q
                        else:
                            break
        while n > 0:
            packed = kp[0]
            r = packed // 2 // W
            c = (packed // 2) % W
            s = (packed & 1) + 1
            n -= 1
            kh[0] = kh[n]
            kp[0] = kp[n]
            i = 0
            while True:
                l = 2 * i + 1
                rt = l + 1
                m = i
                if l < n and (kh[l] < kh[m] or (kh[l] == kh[m] and kp[l] < kp[m])):
                    m = l
                if rt < n and (kh[rt] < kh[m] or (kh[rt] == kh[m] and kp[rt] < kp[m])):
                    m = rt
                if m == i:
                    break
                kh[i], kh[m] = kh[m], kh[i]
                kp[i], kp[m] = kp[m], kp[i]
                i = m
            if assign[r, c] != 0:
                continue
            other = 3 - s
            hit = False
            for k in range(4):
                nr = r + drs[k]
                nc = c + dcs[k]
                if 0 <= nr < H and 0 <= nc < W and assign[nr, nc] == other:
                    hit = True
            assign[r, c] = np.uint8(s)
            if hit:
                meet[r, c] = 1
            for k in range(4):
                nr = r + drs[k]
                nc = c + dcs[k]
                if 0 <= nr < H and 0 <= nc < W and region[nr, nc] and assign[nr, nc] == 0:
                    h = height[nr, nc]
                    p = (nr * W + nc) * 2 + (s - 1)
                    i = n
                    kh[i] = h
                    kp[i] = p
                    n += 1
                    while i > 0:
                        q = (i - 1) >> 1
                        if kh[i] < kh[q] or (kh[i] == kh[q] and kp[i] < kp[q]):
                            kh[i], kh[q] = kh[q], kh[i]
                            kp[i], kp[q] = kp[q], kp[i]
                            i = q
                        else:
                            break
        return assign, meet

    def _flood(height, region, seed_a, seed_b):
        assign, meet = _flood_kernel(
            np.ascontiguousarray(height, dtype=np.float64),
            np.ascontiguousarray(region, dtype=bool),
            seed_a[0], seed_a[1], seed_b[0], seed_b[1])
        return assign, meet.astype(bool)

else:  # pragma: no cover
    _flood = _flood_python


def _repair_side(color: np.ndarray, meet: np.ndarray,
                 seed: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Reinstate meet pixels until the side containing `seed` is 4-connected.

    The flooded color mask is connected by construction; removing meet pixels
    can strand pockets that were filled through a meet pixel. Those pockets
    are reattached by returning the blocking meet pixels to the side.
    """
    side = color & ~meet
    while True:
        lab, n = connected_components(side)
        if n <= 1:
            return side, meet
        stranded = side & (lab != lab[seed])
        grab = meet & color & neighbor_any(stranded)
        if not grab.any():  # unreachable: pockets are always sealed by meets
            side = color.copy()
            return side, meet & ~color
        meet = meet & ~grab
        side = side | grab


def watershed_two_seed(height: np.ndarray, region: np.ndarray,
                       seed_a: tuple[int, int],
                       seed_b: tuple[int, int]) -> Bipartition:
    """Deterministic two-seed priority-flood watershed restricted to a region.

    Pixels are assigned to the seed whose flood reaches them first in
    ascending height order; pixels where the two fronts meet form the
    boundary. The flood covers the 4-connected component of the region that
    contains the seeds — both seeds must lie in the same component.
    """
    height = np.asarray(height, dtype=np.float64)
    region = np.asarray(region, dtype=bool)
    if height.shape != region.shape:
        raise GeometryMismatch(
            f"height {height.shape} vs region {region.shape}")
    seed_a = (int(seed_a[0]), int(seed_a[1]))
    seed_b = (int(seed_b[0]), int(seed_b[1]))
    if seed_a == seed_b:
        raise IdenticalSeeds(f"both seeds at {seed_a}")
    for name, s in (("seed_a", seed_a), ("seed_b", seed_b)):
        if not (0 <= s[0] < region.shape[0] and 0 <= s[1] < region.shape[1]) \
                or not region[s]:
            raise SeedOutsideRegion(f"{name} {s} is not inside the region")
    comp, _ = connected_components(region)
    if comp[seed_a] != comp[seed_b]:
        raise SeedOutsideRegion(
            f"seeds {seed_a} and {seed_b} lie in different region components")
    flood_region = comp == comp[seed_a]

    assign, meet = _flood(height, flood_region, seed_a, seed_b)
    # seeds are assigned before the flood starts, so they are never meet pixels
    side_a, meet = _repair_side(assign == 1, meet, seed_a)
    side_b, meet = _repair_side(assign == 2, meet, seed_b)
    return Bipartition(side_a=side_a, side_b=side_b, boundary=meet,
                       seed_a=seed_a, seed_b=seed_b)
