import json

import numpy as np
import pytest
from PIL import Image

from segproof.core import EngineConfig, Section, load_dataset, save_labels
from segproof.errors import (
    ConfigError,
    GeometryMismatch,
    IoFailure,
    ManifestError,
    MissingFile,
    SizeMismatch,
)
from conftest import make_dataset


def write_minimal(tmp_path, w=100, h=100, with_gt=False, label_bytes=None):
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 256, (h, w), dtype=np.uint8).astype(np.uint8),
                    mode="L").save(tmp_path / "g.png")
    Image.fromarray(rng.integers(0, 256, (h, w), dtype=np.uint8).astype(np.uint8),
                    mode="L").save(tmp_path / "m.png")
    labels = rng.integers(1, 5, (h, w)).astype("<u4")
    blob = labels.tobytes() if label_bytes is None else label_bytes
    (tmp_path / "l.u32").write_bytes(blob)
    entry = {"index": 0, "gray": "g.png", "membrane": "m.png", "labels": "l.u32"}
    if with_gt:
        (tmp_path / "gt.u32").write_bytes(labels.tobytes())
        entry["gt_labels"] = "gt.u32"
    doc = {"name": "mini", "width": w, "height": h, "sections": [entry]}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path, labels


def test_load_minimal_dataset(tmp_path):
    path, labels = write_minimal(tmp_path, with_gt=True)
    ds = load_dataset(path)
    assert len(ds.sections) == 1
    sec = ds.sections[0]
    assert sec.geometry.shape == (100, 100)
    assert np.array_equal(sec.labels, labels.astype(np.uint32))
    assert np.array_equal(sec.gt_labels, labels.astype(np.uint32))
    assert sec.gray.dtype == np.float32
    assert 0.0 <= sec.gray.min() and sec.gray.max() <= 1.0


def test_missing_label_file(tmp_path):
    path, _ = write_minimal(tmp_path)
    (tmp_path / "l.u32").unlink()
    with pytest.raises(MissingFile):
        load_dataset(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingFile):
        load_dataset(tmp_path / "nope.json")


def test_label_size_mismatch(tmp_path):
    short = np.zeros((99, 100), dtype="<u4").tobytes()  # 4*100*99 bytes
    path, _ = write_minimal(tmp_path, label_bytes=short)
    with pytest.raises(SizeMismatch):
        load_dataset(path)


def test_png_geometry_mismatch(tmp_path):
    path, _ = write_minimal(tmp_path)
    Image.fromarray(np.zeros((50, 100), dtype=np.uint8), mode="L").save(
        tmp_path / "g.png")
    with pytest.raises(GeometryMismatch):
        load_dataset(path)


def test_manifest_schema_errors(tmp_path):
    path, _ = write_minimal(tmp_path)
    doc = json.loads(path.read_text())
    doc["sections"].append(dict(doc["sections"][0]))  # duplicate index
    path.write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_dataset(path)

    doc["sections"] = []
    path.write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_dataset(path)

    path.write_text("{not json")
    with pytest.raises(ManifestError):
        load_dataset(path)


def test_png_bit_depth_scaling(tmp_path):
    Image.fromarray(np.full((4, 4), 51, dtype=np.uint8), mode="L").save(
        tmp_path / "g8.png")
    Image.fromarray(np.full((4, 4), 13107, dtype=np.uint16)).save(
        tmp_path / "g16.png")
    from segproof.core import _decode_png
    assert np.allclose(_decode_png(tmp_path / "g8.png"), 51 / 255)
    assert np.allclose(_decode_png(tmp_path / "g16.png"), 13107 / 65535)


def test_roundtrip_bit_exact(tmp_path):
    ds = make_dataset(n_sections=3, splits=2, merges=1)
    manifest = save_labels(ds, tmp_path / "out")
    back = load_dataset(manifest)
    assert len(back.sections) == 3
    for a, b in zip(ds.sections, back.sections):
        assert a.geometry == b.geometry
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.gt_labels, b.gt_labels)


def test_save_unwritable_target(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    ds = make_dataset(n_sections=1)
    with pytest.raises(IoFailure):
        save_labels(ds, blocker / "sub")  # parent is a file


def test_three_sections_write_three_label_files(tmp_path):
    ds = make_dataset(n_sections=3)
    save_labels(ds, tmp_path / "out")
    assert len(list((tmp_path / "out").glob("*_labels.u32"))) == 3


def test_config_invariants():
    with pytest.raises(ConfigError):
        EngineConfig(patch_size=74)
    with pytest.raises(ConfigError):
        EngineConfig(patch_size=1)
    with pytest.raises(ConfigError):
        EngineConfig(p_t=1.0)
    with pytest.raises(ConfigError):
        EngineConfig(n_merge_candidates=0)
    cfg = EngineConfig()
    assert cfg.patch_size == 75
    assert cfg.border_dilation == 5
    assert cfg.merge_dilation == 20
    assert cfg.n_merge_candidates == 50
    assert cfg.max_patches_per_boundary == 10
    assert cfg.p_t == 0.95


def test_section_validation_catches_shape_drift():
    ds = make_dataset(n_sections=1)
    sec = ds.sections[0]
    bad = Section(geometry=sec.geometry, gray=sec.gray[:-1], membrane=sec.membrane,
                  labels=sec.labels)
    with pytest.raises(GeometryMismatch):
        bad.validate()
