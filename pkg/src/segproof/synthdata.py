"""Synthetic EM-like sections with ground truth and plantable errors.

Sections are built from a jittered-grid site partition: every pixel joins its
nearest site, giving convex, 4-connected cells. Cell interiors render bright
(~0.75) with mild per-cell variation, inter-cell membranes render dark (~0.2),
and Gaussian noise is added on top. The membrane probability map is a blurred
membrane indicator with its own noise.

`corrupt` plants known errors into a copy of the ground truth and returns a
manifest describing them, which downstream tests use as an oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .core import Dataset, Section, SectionGeometry
from .errors import InfeasibleCorruption
from .imageops import adjacency_pairs, extract_boundary

INTERIOR_LEVEL = 0.75
MEMBRANE_LEVEL = 0.20


@dataclass(frozen=True)
class SynthSpec:
    width: int
    height: int
    n_cells: int
    membrane_width: int = 3
    noise_sigma: float = 0.04
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_cells < 2:
            raise ValueError("n_cells must be >= 2")
        if self.membrane_width < 1:
            raise ValueError("membrane_width must be >= 1")


@dataclass
class SplitPlant:
    gt_id: int
    child_ids: tuple[int, int]       # (kept id, new id on the far side)
    line: tuple[float, float, float]  # (center_r, center_c, theta)


@dataclass
class MergePlant:
    gt_pair: tuple[int, int]
    auto_id: int
    erased_boundary: list[tuple[int, int]]


@dataclass
class ErrorManifest:
    splits: list[SplitPlant] = field(default_factory=list)
    merges: list[MergePlant] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "splits": [{"gt_id": s.gt_id, "child_ids": list(s.child_ids),
                        "line": list(s.line)} for s in self.splits],
            "merges": [{"gt_pair": list(m.gt_pair), "auto_id": m.auto_id,
                        "erased_boundary": [list(p) for p in m.erased_boundary]}
                       for m in self.merges],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ErrorManifest":
        return cls(
            splits=[SplitPlant(gt_id=s["gt_id"], child_ids=tuple(s["child_ids"]),
                               line=tuple(s["line"])) for s in doc["splits"]],
            merges=[MergePlant(gt_pair=tuple(m["gt_pair"]), auto_id=m["auto_id"],
                               erased_boundary=[tuple(p) for p in m["erased_boundary"]])
                    for m in doc["merges"]],
        )


def _place_sites(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Jittered grid keeps sites well separated while staying random."""
    n = spec.n_cells
    cols = int(np.ceil(np.sqrt(n * spec.width / spec.height)))
    rows = int(np.ceil(n / cols))
    cell_h = spec.height / rows
    cell_w = spec.width / cols
    slots = [(r, c) for r in range(rows) for c in range(cols)]
    chosen = rng.permutation(len(slots))[:n]
    sites = np.empty((n, 2), dtype=np.float64)
    for i, k in enumerate(chosen):
        r, c = slots[k]
        sites[i, 0] = (r + 0.25 + 0.5 * rng.random()) * cell_h
        sites[i, 1] = (c + 0.25 + 0.5 * rng.random()) * cell_w
    return sites


def generate_section(spec: SynthSpec, index: int = 0) -> Section:
    """Deterministic synthetic section; gt_labels equals the label map."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    sites = _place_sites(spec, rng)

    rr, cc = np.mgrid[0:spec.height, 0:spec.width]
    d2 = ((rr[None, :, :] - sites[:, 0, None, None]) ** 2
          + (cc[None, :, :] - sites[:, 1, None, None]) ** 2)
    order = np.argsort(d2, axis=0)
    labels = (order[0] + 1).astype(np.uint32)

    # membrane strip: where the two nearest sites are almost equidistant
    d_sorted = np.take_along_axis(d2, order[:2], axis=0)
    d1 = np.sqrt(d_sorted[0])
    d2nd = np.sqrt(d_sorted[1])
    membrane_true = (d2nd - d1) < spec.membrane_width

    cell_tint = rng.uniform(-0.06, 0.06, size=spec.n_cells + 1)
    gray = INTERIOR_LEVEL + cell_tint[labels]
    gray[membrane_true] = MEMBRANE_LEVEL
    gray = ndi.gaussian_filter(gray, sigma=0.7)
    gray += rng.normal(0.0, spec.noise_sigma, size=gray.shape)
    gray = np.clip(gray, 0.0, 1.0).astype(np.float32)

    membrane = ndi.gaussian_filter(membrane_true.astype(np.float64), sigma=1.0)
    membrane = membrane / max(membrane.max(), 1e-9)
    membrane += rng.normal(0.0, spec.noise_sigma, size=membrane.shape)
    membrane = np.clip(membrane, 0.0, 1.0).astype(np.float32)

    geometry = SectionGeometry(width=spec.width, height=spec.height, index=index)
    return Section(geometry=geometry, gray=gray, membrane=membrane,
                   labels=labels.copy(), gt_labels=labels.copy())


def generate_dataset(spec: SynthSpec, n_sections: int, name: str = "synth") -> Dataset:
    sections = [generate_section(spec, index=i) for i in range(n_sections)]
    return Dataset(sections=sections, manifest_path=None, name=name)


def _split_cell(labels: np.ndarray, gt_id: int, new_id: int,
                rng: np.random.Generator, min_fraction: float = 0.25,
                ) -> SplitPlant | None:
    """Bisect one cell with a random chord through its centroid."""
    mask = labels == gt_id
    coords = np.argwhere(mask)
    center = coords.mean(axis=0)
    area = len(coords)
    for _ in range(24):
        theta = rng.uniform(0.0, np.pi)
        normal = np.array([np.sin(theta), np.cos(theta)])
        sign = (coords - center) @ normal > 0.0
        n_pos = int(sign.sum())
        if min(n_pos, area - n_pos) < max(8, int(min_fraction * area)):
            continue
        far = coords[sign]
        labels[far[:, 0], far[:, 1]] = new_id
        return SplitPlant(gt_id=int(gt_id), child_ids=(int(gt_id), int(new_id)),
                          line=(float(center[0]), float(center[1]), float(theta)))
    return None


def corrupt(section: Section, n_splits: int, n_merges: int,
            seed: int) -> tuple[np.ndarray, ErrorManifest]:
    """Plant split and merge errors into a copy of the ground truth.

    Splits bisect randomly chosen cells with a chord; merges erase the label
    boundary between a randomly chosen adjacent pair. Every planted error uses
    distinct cells so the manifest entries stay independent. Returns the
    corrupted label map and the manifest; the section is not modified.
    """
    if section.gt_labels is None:
        raise InfeasibleCorruption("section has no ground truth to corrupt")
    rng = np.random.default_rng(np.random.SeedSequence([seed, section.geometry.index]))
    auto = section.gt_labels.copy()
    manifest = ErrorManifest()
    used: set[int] = set()

    pairs = list(adjacency_pairs(section.gt_labels))
    rng.shuffle(pairs)
    for a, b in pairs:
        if len(manifest.merges) == n_merges:
            break
        if a in used or b in used:
            continue
        boundary = extract_boundary(section.gt_labels, a, b)
        auto[auto == b] = a
        manifest.merges.append(MergePlant(
            gt_pair=(int(a), int(b)), auto_id=int(a),
            erased_boundary=[(int(r), int(c)) for r, c in np.argwhere(boundary)]))
        used.update((a, b))
    if len(manifest.merges) < n_merges:
        raise InfeasibleCorruption(
            f"only {len(manifest.merges)} of {n_merges} merges could be planted")

    next_id = int(auto.max()) + 1
    all_ids = [int(i) for i in np.unique(section.gt_labels) if i != 0]
    rng.shuffle(all_ids)
    for gt_id in all_ids:
        if len(manifest.splits) == n_splits:
            break
        if gt_id in used:
            continue
        plant = _split_cell(auto, gt_id, next_id, rng)
        if plant is None:
            continue
        manifest.splits.append(plant)
        used.add(gt_id)
        next_id += 1
    if len(manifest.splits) < n_splits:
        raise InfeasibleCorruption(
            f"only {len(manifest.splits)} of {n_splits} splits could be planted")

    return auto, manifest


def corrupt_dataset(dataset: Dataset, n_splits: int, n_merges: int,
                    seed: int) -> dict[int, ErrorManifest]:
    """Distribute planted errors round-robin across sections, mutating labels.

    Returns the per-section manifests keyed by section index.
    """
    n = len(dataset.sections)
    per_splits = [n_splits // n + (1 if i < n_splits % n else 0) for i in range(n)]
    per_merges = [n_merges // n + (1 if i < n_merges % n else 0) for i in range(n)]
    manifests: dict[int, ErrorManifest] = {}
    for sec, ns, nm in zip(dataset.sections, per_splits, per_merges):
        auto, manifest = corrupt(sec, ns, nm, seed)
        sec.labels = auto
        manifests[sec.geometry.index] = manifest
    return manifests


def save_error_manifests(manifests: dict[int, ErrorManifest], path: str | Path) -> None:
    doc = {str(k): m.to_json() for k, m in manifests.items()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_error_manifests(path: str | Path) -> dict[int, ErrorManifest]:
    doc = json.loads(Path(path).read_text())
    return {int(k): ErrorManifest.from_json(v) for k, v in doc.items()}
