import numpy as np
import pytest

from segproof import cnn, synthdata
from segproof.core import Dataset, EngineConfig
from segproof.patches import build_training_set

TINY_PATCH = 25
TINY_ARCH = cnn.CnnArch(input_hw=TINY_PATCH, conv_filters=(12, 12), dense_units=32)


def tiny_config(**overrides) -> EngineConfig:
    base = dict(patch_size=TINY_PATCH, min_segment_area=60, n_merge_candidates=6)
    base.update(overrides)
    return EngineConfig(**base)


def make_dataset(n_sections=2, n_cells=6, size=120, seed=3,
                 splits=0, merges=0, corrupt_seed=9) -> Dataset:
    spec = synthdata.SynthSpec(width=size, height=size, n_cells=n_cells, seed=seed)
    ds = synthdata.generate_dataset(spec, n_sections=n_sections)
    if splits or merges:
        synthdata.corrupt_dataset(ds, splits, merges, seed=corrupt_seed)
    return ds


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_weights():
    return cnn.init_weights(TINY_ARCH, seed=0)


@pytest.fixture(scope="session")
def trained_tiny():
    """Small classifier trained to saturation on easy synthetic boundaries."""
    spec = synthdata.SynthSpec(width=140, height=140, n_cells=8, seed=21)
    ds = synthdata.generate_dataset(spec, n_sections=10)
    synthdata.corrupt_dataset(ds, n_splits=30, n_merges=0, seed=31)
    cfg = tiny_config()
    ts = build_training_set(ds, cfg, rng_seed=1)
    sched = cnn.TrainSchedule(lr_start=0.03, lr_end=0.0005, batch_size=32,
                              max_epochs=80, patience=15)
    return cnn.train(ts, sched, rng_seed=5, arch=TINY_ARCH).weights
