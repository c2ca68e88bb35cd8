"""The correction loop: visit ranked candidates, decide, apply, re-rank.

Merge candidates are visited first (descending inverted score), then split
candidates (descending split score). Accepting a fix mutates the section's
label map under a single-writer contract and incrementally refreshes exactly
the ranking entries whose inputs changed; everything else keeps bit-identical
scores. Decided candidates never re-enter the queue within a run, although
their ranking entries stay up to date.

Decisions come from a provider: the selection oracle (accept iff the fix
strictly lowers VI against ground truth), a probability threshold, or an
interactive caller driving the session one candidate at a time.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cnn import CnnWeights
from .core import Dataset, EngineConfig, Section
from .detect import (
    MergeCandidate,
    SplitCandidate,
    generate_merge_candidates,
    rank_merges,
    rank_splits,
    score_split_pairs,
    sort_merges,
    sort_splits,
)
from .errors import (
    GroundTruthRequired,
    IdCollision,
    InvalidPair,
    StaleCandidate,
)
from .imageops import Bipartition, neighbor_any
from .metrics import vi


# --- label-map edits -----------------------------------------------------------

def apply_split_fix(labels: np.ndarray, a: int, b: int) -> np.ndarray:
    """Merge segment b into a, in place; b disappears from the map."""
    if a == b:
        raise InvalidPair(f"cannot merge a segment into itself ({a})")
    if not (labels == b).any():
        raise StaleCandidate(f"segment {b} no longer exists")
    if not (labels == a).any():
        raise StaleCandidate(f"segment {a} no longer exists")
    labels[labels == b] = a
    return labels


def apply_merge_fix(labels: np.ndarray, s: int, bipartition: Bipartition,
                    fresh_id: int) -> np.ndarray:
    """Split segment s along a bipartition, in place.

    side_b pixels take fresh_id; boundary pixels join the side whose seed is
    nearer so no unlabeled gap appears. The bipartition must lie inside the
    current mask of s.
    """
    if (labels == fresh_id).any():
        raise IdCollision(f"fresh id {fresh_id} is already in use")
    mask = labels == s
    covered = bipartition.side_a | bipartition.side_b | bipartition.boundary
    if not mask.any() or (covered & ~mask).any():
        raise StaleCandidate(
            f"bipartition no longer fits inside segment {s}")
    labels[bipartition.side_b] = fresh_id
    bcoords = np.argwhere(bipartition.boundary)
    if len(bcoords):
        da = ((bcoords - np.asarray(bipartition.seed_a)) ** 2).sum(axis=1)
        db = ((bcoords - np.asarray(bipartition.seed_b)) ** 2).sum(axis=1)
        to_b = bcoords[db < da]
        labels[to_b[:, 0], to_b[:, 1]] = fresh_id
    return labels


def neighbors_of(labels: np.ndarray, a: int) -> list[int]:
    """Nonzero ids with at least one pixel 4-adjacent to segment a."""
    near = neighbor_any(labels == a)
    vals = np.unique(labels[near])
    return [int(v) for v in vals if v != 0 and v != a]


# --- rankings ------------------------------------------------------------------

@dataclass
class Rankings:
    splits: dict[tuple[int, int, int], SplitCandidate]
    merges: dict[tuple[int, int], MergeCandidate]
    master_seed: int

    def sorted_splits(self) -> list[SplitCandidate]:
        return sort_splits(list(self.splits.values()))

    def sorted_merges(self) -> list[MergeCandidate]:
        return sort_merges(list(self.merges.values()))


def build_rankings(dataset: Dataset, weights: CnnWeights, cfg: EngineConfig,
                   master_seed: int, jobs: int = 1) -> Rankings:
    """Full split and merge detection over every section."""
    def _one(sec: Section):
        return (rank_splits(sec, weights, cfg),
                rank_merges(sec, weights, cfg, master_seed))

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, dataset.sections))
    else:
        results = [_one(sec) for sec in dataset.sections]

    splits: dict[tuple[int, int, int], SplitCandidate] = {}
    merges: dict[tuple[int, int], MergeCandidate] = {}
    for (sp, mg) in results:
        for c in sp:
            splits[c.key] = c
        for c in mg:
            merges[c.key] = c
    return Rankings(splits=splits, merges=merges, master_seed=master_seed)


@dataclass
class Correction:
    """An applied fix, for ranking maintenance."""
    kind: str                    # "split" | "merge"
    section_index: int
    ids: tuple[int, int]         # split: (surviving a, vanished b); merge: (s, fresh)


def update_after_correction(rankings: Rankings, correction: Correction,
                            dataset: Dataset, weights: CnnWeights,
                            cfg: EngineConfig) -> Rankings:
    """Refresh exactly the entries whose segments changed; equal to a full
    recomputation restricted to those entries."""
    sec = dataset.section_by_index(correction.section_index)
    idx = correction.section_index
    if correction.kind == "split":
        a, b = correction.ids
        changed = {a}
        gone = {b}
    else:
        s, fresh = correction.ids
        changed = {s, fresh}
        gone = set()

    for seg in gone | changed:
        rankings.merges.pop((idx, seg), None)
    stale_keys = [k for k in rankings.splits
                  if k[0] == idx and (set(k[1:]) & (gone | changed))]
    for k in stale_keys:
        rankings.splits.pop(k)

    for seg in sorted(changed):
        if not (sec.labels == seg).any():
            continue
        cand = generate_merge_candidates(sec, seg, weights, cfg,
                                         rankings.master_seed)
        if cand is not None:
            rankings.merges[cand.key] = cand

    pairs: set[tuple[int, int]] = set()
    for seg in changed:
        for nb in neighbors_of(sec.labels, seg):
            pairs.add((min(seg, nb), max(seg, nb)))
    for c in score_split_pairs(sec, sorted(pairs), weights, cfg):
        rankings.splits[c.key] = c
    return rankings


# --- events & log ----------------------------------------------------------------

@dataclass
class CorrectionEvent:
    ordinal: int
    kind: str
    section_index: int
    ids: tuple[int, ...]
    score: float
    decision: str                # accept | reject | skip
    vi_before: float | None
    vi_after: float | None
    wall_time: float

    def to_json(self) -> dict:
        return {
            "ordinal": self.ordinal, "kind": self.kind,
            "section": self.section_index, "ids": list(self.ids),
            "score": self.score, "decision": self.decision,
            "vi_before": self.vi_before, "vi_after": self.vi_after,
            "wall_time": self.wall_time,
        }


@dataclass
class CorrectionLog:
    events: list[CorrectionEvent]
    initial_vi: dict[int, float] | None
    final_vi: dict[int, float] | None

    @property
    def accepted(self) -> int:
        return sum(1 for e in self.events if e.decision == "accept")

    @staticmethod
    def _median(per_section: dict[int, float] | None) -> float | None:
        if not per_section:
            return None
        return float(np.median(list(per_section.values())))

    def summary(self) -> dict:
        return {
            "events": len(self.events),
            "accepted": self.accepted,
            "rejected": sum(1 for e in self.events if e.decision == "reject"),
            "skipped": sum(1 for e in self.events if e.decision == "skip"),
            "initial_vi": self.initial_vi,
            "final_vi": self.final_vi,
            "initial_median_vi": self._median(self.initial_vi),
            "final_median_vi": self._median(self.final_vi),
        }


def export_log(log: CorrectionLog, events_path: str | Path,
               summary_path: str | Path | None = None) -> None:
    with open(events_path, "w") as fh:
        for e in log.events:
            fh.write(json.dumps(e.to_json()) + "\n")
    if summary_path is not None:
        Path(summary_path).write_text(json.dumps(log.summary(), indent=2) + "\n")


# --- the session -----------------------------------------------------------------

class CorrectionSession:
    """Sequential single-writer loop over the ranked candidates.

    Drives the two-phase visit order (merges, then splits). `current()` is an
    idempotent read of the cursor candidate; `decide()` applies the decision,
    maintains the rankings, logs an event, and advances. Candidates that
    appear or are rescored during the run join the queue only if their key
    has not been decided yet; new merge candidates created while already in
    the split phase are recorded but no longer presented.
    """

    def __init__(self, dataset: Dataset, rankings: Rankings,
                 weights: CnnWeights, cfg: EngineConfig,
                 merge_queue_threshold: float | None = None):
        self.dataset = dataset
        self.rankings = rankings
        self.weights = weights
        self.cfg = cfg
        self.merge_queue_threshold = merge_queue_threshold
        self.consumed: set[tuple] = set()
        self.phase = "merge"
        self.events: list[CorrectionEvent] = []
        self.track_vi = dataset.has_ground_truth()
        self._section_vi: dict[int, float] = {}
        if self.track_vi:
            for sec in dataset.sections:
                self._section_vi[sec.geometry.index] = vi(
                    sec.labels, sec.gt_labels).vi
        self.initial_vi = dict(self._section_vi) if self.track_vi else None
        self._t0 = time.monotonic()

    # -- queue --------------------------------------------------------------

    def _pending_merges(self) -> list[MergeCandidate]:
        out = []
        for c in self.rankings.sorted_merges():
            if ("merge", *c.key) in self.consumed:
                continue
            if self.merge_queue_threshold is not None \
                    and not c.score > self.merge_queue_threshold:
                continue
            out.append(c)
        return out

    def _pending_splits(self) -> list[SplitCandidate]:
        return [c for c in self.rankings.sorted_splits()
                if ("split", *c.key) not in self.consumed]

    def current(self) -> SplitCandidate | MergeCandidate | None:
        if self.phase == "merge":
            pending = self._pending_merges()
            if pending:
                return pending[0]
            self.phase = "split"
        pending = self._pending_splits()
        return pending[0] if pending else None

    def done(self) -> bool:
        return self.current() is None

    # -- VI bookkeeping -------------------------------------------------------

    def median_vi(self) -> float | None:
        if not self.track_vi:
            return None
        return float(np.median(list(self._section_vi.values())))

    def section_vi_current(self, section_index: int) -> float:
        return self._section_vi[section_index]

    def section_vi_if_applied(self, cand: SplitCandidate | MergeCandidate) -> float:
        """VI of the affected section after tentatively applying the fix."""
        sec = self.dataset.section_by_index(cand.section_index)
        trial = sec.labels.copy()
        if isinstance(cand, SplitCandidate):
            apply_split_fix(trial, cand.a, cand.b)
        else:
            apply_merge_fix(trial, cand.segment_id, cand.bipartition,
                            int(trial.max()) + 1)
        return vi(trial, sec.gt_labels).vi

    # -- decisions --------------------------------------------------------------

    def decide(self, decision: str) -> CorrectionEvent:
        cand = self.current()
        if cand is None:
            raise StaleCandidate("no pending candidate")
        if decision not in ("accept", "reject", "skip"):
            raise ValueError(f"unknown decision {decision!r}")

        vi_before = self.median_vi()
        sec = self.dataset.section_by_index(cand.section_index)
        if isinstance(cand, MergeCandidate):
            kind, key, ids = "merge", cand.key, (cand.segment_id,)
        else:
            kind, key, ids = "split", cand.key, (cand.a, cand.b)

        if decision == "accept":
            if kind == "split":
                apply_split_fix(sec.labels, cand.a, cand.b)
                correction = Correction("split", cand.section_index,
                                        (cand.a, cand.b))
            else:
                fresh = int(sec.labels.max()) + 1
                apply_merge_fix(sec.labels, cand.segment_id, cand.bipartition,
                                fresh)
                correction = Correction("merge", cand.section_index,
                                        (cand.segment_id, fresh))
                ids = (cand.segment_id, fresh)
            update_after_correction(self.rankings, correction, self.dataset,
                                    self.weights, self.cfg)
            if self.track_vi:
                self._section_vi[cand.section_index] = vi(
                    sec.labels, sec.gt_labels).vi

        self.consumed.add((kind, *key))
        event = CorrectionEvent(
            ordinal=len(self.events), kind=kind,
            section_index=cand.section_index, ids=ids, score=cand.score,
            decision=decision, vi_before=vi_before, vi_after=self.median_vi(),
            wall_time=time.monotonic() - self._t0)
        self.events.append(event)
        return event

    def log(self) -> CorrectionLog:
        return CorrectionLog(
            events=list(self.events),
            initial_vi=self.initial_vi,
            final_vi=dict(self._section_vi) if self.track_vi else None)


# --- decision providers ------------------------------------------------------------

class DecisionProvider:
    """Yes/no source for the correction loop."""

    merge_queue_threshold: float | None = None

    def prepare(self, dataset: Dataset) -> None:
        pass

    def decide(self, session: CorrectionSession,
               cand: SplitCandidate | MergeCandidate) -> str:
        raise NotImplementedError


class OracleProvider(DecisionProvider):
    """Accept exactly the corrections that strictly lower VI (perfect user)."""

    def prepare(self, dataset: Dataset) -> None:
        if not dataset.has_ground_truth():
            raise GroundTruthRequired("oracle decisions need gt on every section")

    def decide(self, session, cand) -> str:
        before = session.section_vi_current(cand.section_index)
        after = session.section_vi_if_applied(cand)
        return "accept" if after < before else "reject"


class ThresholdProvider(DecisionProvider):
    """Accept candidates whose score strictly exceeds p_t.

    Merge candidates already carry the inverted score, so one rule covers
    both kinds.
    """

    def __init__(self, p_t: float):
        self.p_t = float(p_t)

    def decide(self, session, cand) -> str:
        return "accept" if cand.score > self.p_t else "reject"


def run_corrections(dataset: Dataset, rankings: Rankings,
                    provider: DecisionProvider, weights: CnnWeights,
                    cfg: EngineConfig) -> CorrectionLog:
    """Drive the session with a provider until the queue is exhausted."""
    provider.prepare(dataset)
    session = CorrectionSession(
        dataset, rankings, weights, cfg,
        merge_queue_threshold=provider.merge_queue_threshold)
    while True:
        cand = session.current()
        if cand is None:
            break
        session.decide(provider.decide(session, cand))
    return session.log()
