"""Data model for sections and datasets, manifest IO, label-map persistence.

A dataset on disk is a JSON manifest plus per-section image and label files:
grayscale and membrane-probability maps are PNG (8- or 16-bit, decoded to
float in [0,1]); label maps are raw little-endian u32, row-major. Label id 0
is reserved for unlabeled pixels in both automatic and ground-truth maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    ConfigError,
    GeometryMismatch,
    IoFailure,
    ManifestError,
    MissingFile,
    SizeMismatch,
)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SectionGeometry:
    width: int
    height: int
    index: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass
class Section:
    """One aligned 2D section: intensities, membrane probabilities, labels."""

    geometry: SectionGeometry
    gray: np.ndarray            # float32 in [0,1], shape (H, W)
    membrane: np.ndarray        # float32 in [0,1], shape (H, W)
    labels: np.ndarray          # uint32, 0 = unlabeled
    gt_labels: np.ndarray | None = None

    def validate(self) -> None:
        shape = self.geometry.shape
        for name, arr in (("gray", self.gray), ("membrane", self.membrane),
                          ("labels", self.labels)):
            if arr.shape != shape:
                raise GeometryMismatch(
                    f"section {self.geometry.index}: {name} has shape {arr.shape}, "
                    f"expected {shape}")
        if self.gt_labels is not None and self.gt_labels.shape != shape:
            raise GeometryMismatch(
                f"section {self.geometry.index}: gt_labels has shape "
                f"{self.gt_labels.shape}, expected {shape}")
        for name, arr in (("gray", self.gray), ("membrane", self.membrane)):
            lo, hi = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
            if lo < 0.0 or hi > 1.0:
                raise GeometryMismatch(
                    f"section {self.geometry.index}: {name} values outside [0,1] "
                    f"({lo}..{hi})")

    def copy(self) -> "Section":
        return Section(
            geometry=self.geometry,
            gray=self.gray.copy(),
            membrane=self.membrane.copy(),
            labels=self.labels.copy(),
            gt_labels=None if self.gt_labels is None else self.gt_labels.copy(),
        )


@dataclass
class Dataset:
    sections: list[Section]
    manifest_path: Path | None
    name: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.sections[0].geometry.shape

    def section_by_index(self, index: int) -> Section:
        for sec in self.sections:
            if sec.geometry.index == index:
                return sec
        raise KeyError(f"no section with index {index}")

    def has_ground_truth(self) -> bool:
        return all(sec.gt_labels is not None for sec in self.sections)

    def copy(self) -> "Dataset":
        return Dataset(sections=[s.copy() for s in self.sections],
                       manifest_path=self.manifest_path, name=self.name)


@dataclass(frozen=True)
class EngineConfig:
    """Tunables of the detection/correction engine.

    Defaults follow the production configuration: 75 px patches, 5 px border
    dilation, 20 px segment dilation with 50 watershed hypotheses per segment,
    at most 10 patches per boundary, acceptance threshold 0.95.
    """

    patch_size: int = 75
    border_dilation: int = 5
    merge_dilation: int = 20
    n_merge_candidates: int = 50
    max_patches_per_boundary: int = 10
    p_t: float = 0.95
    min_segment_area: int = 200
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be odd and >= 3, got {self.patch_size}")
        if not (0.0 < self.p_t < 1.0):
            raise ConfigError(f"p_t must lie strictly inside (0,1), got {self.p_t}")
        if self.n_merge_candidates < 1:
            raise ConfigError("n_merge_candidates must be >= 1")
        if self.border_dilation < 0 or self.merge_dilation < 0:
            raise ConfigError("dilation radii must be non-negative")
        if self.max_patches_per_boundary < 1:
            raise ConfigError("max_patches_per_boundary must be >= 1")
        if self.min_segment_area < 1:
            raise ConfigError("min_segment_area must be >= 1")


# --- image / blob codecs -----------------------------------------------------

def _decode_png(path: Path) -> np.ndarray:
    img = Image.open(path)
    if img.mode == "L":
        return np.asarray(img, dtype=np.float32) / 255.0
    if img.mode in ("I;16", "I;16B"):
        return np.asarray(img, dtype=np.uint16).astype(np.float32) / 65535.0
    if img.mode == "I":
        arr = np.asarray(img, dtype=np.int32)
        return arr.astype(np.float32) / 65535.0
    # fall back through 8-bit grayscale for anything exotic
    return np.asarray(img.convert("L"), dtype=np.float32) / 255.0


def _encode_png16(arr: np.ndarray, path: Path) -> None:
    q = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)


def _decode_labels(path: Path, geometry: SectionGeometry) -> np.ndarray:
    data = path.read_bytes()
    expected = 4 * geometry.width * geometry.height
    if len(data) != expected:
        raise SizeMismatch(
            f"{path}: {len(data)} bytes, expected {expected} "
            f"(4 * {geometry.width} * {geometry.height})")
    return np.frombuffer(data, dtype="<u4").reshape(geometry.shape).copy()


def _encode_labels(arr: np.ndarray, path: Path) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype="<u4").tobytes())


# --- manifest IO -------------------------------------------------------------

def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load and fully validate a dataset from its JSON manifest.

    Raises MissingFile, SizeMismatch, GeometryMismatch, or ManifestError;
    never returns a partially valid dataset.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid JSON: {exc}") from exc

    for key in ("name", "width", "height", "sections"):
        if key not in doc:
            raise ManifestError(f"{manifest_path}: missing field {key!r}")
    width, height = int(doc["width"]), int(doc["height"])
    entries = doc["sections"]
    if not entries:
        raise ManifestError(f"{manifest_path}: dataset has no sections")

    base = manifest_path.parent
    seen: set[int] = set()
    sections: list[Section] = []
    for entry in entries:
        for key in ("index", "gray", "membrane", "labels"):
            if key not in entry:
                raise ManifestError(f"{manifest_path}: section entry missing {key!r}")
        index = int(entry["index"])
        if index in seen:
            raise ManifestError(f"{manifest_path}: duplicate section index {index}")
        seen.add(index)
        geometry = SectionGeometry(width=width, height=height, index=index)

        paths = {k: base / entry[k] for k in ("gray", "membrane", "labels")}
        if entry.get("gt_labels"):
            paths["gt_labels"] = base / entry["gt_labels"]
        for name, p in paths.items():
            if not p.is_file():
                raise MissingFile(f"section {index}: {name} file not found: {p}")

        gray = _decode_png(paths["gray"])
        membrane = _decode_png(paths["membrane"])
        for name, arr in (("gray", gray), ("membrane", membrane)):
            if arr.shape != geometry.shape:
                raise GeometryMismatch(
                    f"section {index}: {name} decoded to {arr.shape}, "
                    f"manifest declares {geometry.shape}")
        labels = _decode_labels(paths["labels"], geometry)
        gt = _decode_labels(paths["gt_labels"], geometry) if "gt_labels" in paths else None

        section = Section(geometry=geometry, gray=gray, membrane=membrane,
                          labels=labels, gt_labels=gt)
        section.validate()
        sections.append(section)

    sections.sort(key=lambda s: s.geometry.index)
    return Dataset(sections=sections, manifest_path=manifest_path, name=str(doc["name"]))


def save_labels(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write the dataset to out_dir and return the manifest path.

    Per-section raw label files plus the manifest are always written; gray and
    membrane PNGs (16-bit) and optional gt blobs are written alongside so the
    output directory is a complete, loadable dataset. Reloading reproduces the
    label arrays bit-exactly.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for sec in dataset.sections:
            i = sec.geometry.index
            names = {
                "gray": f"sec{i:04d}_gray.png",
                "membrane": f"sec{i:04d}_membrane.png",
                "labels": f"sec{i:04d}_labels.u32",
            }
            _encode_png16(sec.gray, out_dir / names["gray"])
            _encode_png16(sec.membrane, out_dir / names["membrane"])
            _encode_labels(sec.labels, out_dir / names["labels"])
            entry = {"index": i, **names}
            if sec.gt_labels is not None:
                entry["gt_labels"] = f"sec{i:04d}_gt.u32"
                _encode_labels(sec.gt_labels, out_dir / entry["gt_labels"])
            entries.append(entry)
        h, w = dataset.shape
        doc = {"name": dataset.name, "width": w, "height": h, "sections": entries}
        manifest = out_dir / MANIFEST_NAME
        manifest.write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"failed to write dataset to {out_dir}: {exc}") from exc
    return manifest
