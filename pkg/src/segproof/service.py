"""HTTP session backend for the forced-choice correction mode.

Each session owns a correction loop over one dataset: merge candidates above
the probability threshold first, then every split candidate. The server
renders three context views per candidate (outline, solid overlay, plain
grayscale) plus two choice panels whose left/right placement is randomized
per candidate from the session seed, so a client cannot tell the current
labeling from the proposed correction. Decisions are append-only and
serialized per session.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .cnn import load_checkpoint
from .core import EngineConfig, load_dataset
from .correct import CorrectionSession, build_rankings
from .detect import MergeCandidate, SplitCandidate, derive_rng
from .errors import EngineError, NoCandidates, SessionNotFound, StaleCursor
from .imageops import neighbor_any

MARGIN = 16
MIN_VIEW = 64
COLOR_A = np.array([255, 170, 0], dtype=np.float64)    # amber
COLOR_B = np.array([64, 130, 255], dtype=np.float64)   # blue


# --- rendering -----------------------------------------------------------------

def _crop_box(mask: np.ndarray, shape: tuple[int, int]) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    r0, c0 = max(r0 - MARGIN, 0), max(c0 - MARGIN, 0)
    r1, c1 = min(r1 + MARGIN, shape[0]), min(c1 + MARGIN, shape[1])
    while r1 - r0 < MIN_VIEW and (r0 > 0 or r1 < shape[0]):
        r0, r1 = max(r0 - 1, 0), min(r1 + 1, shape[0])
    while c1 - c0 < MIN_VIEW and (c0 > 0 or c1 < shape[1]):
        c0, c1 = max(c0 - 1, 0), min(c1 + 1, shape[1])
    return r0, r1, c0, c1


def _outline(mask: np.ndarray) -> np.ndarray:
    return mask & neighbor_any(~mask)


def _to_rgb(gray: np.ndarray) -> np.ndarray:
    g = np.clip(gray * 255.0, 0, 255)
    return np.repeat(g[:, :, None], 3, axis=2)


def _paint(rgb: np.ndarray, mask: np.ndarray, color: np.ndarray,
           alpha: float = 1.0) -> None:
    rgb[mask] = (1.0 - alpha) * rgb[mask] + alpha * color


def _encode(rgb: np.ndarray) -> str:
    img = Image.fromarray(rgb.astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@dataclass
class RenderedCandidate:
    candidate_id: str
    kind: str
    score: float
    outline: str
    solid: str
    plain: str
    choice_with_line: str
    choice_without_line: str
    accept_side: str             # "left" | "right"
    left_is_line: bool


def render_candidate(session: CorrectionSession,
                     cand: SplitCandidate | MergeCandidate,
                     session_seed: int, ordinal: int) -> RenderedCandidate:
    sec = session.dataset.section_by_index(cand.section_index)
    cid = candidate_id_of(cand)
    if isinstance(cand, MergeCandidate):
        kind = "merge"
        region = sec.labels == cand.segment_id
        part_a = cand.bipartition.side_a
        part_b = cand.bipartition.side_b | cand.bipartition.boundary
        line = cand.bipartition.boundary
        proposed_has_line = True
    else:
        kind = "split"
        part_a = sec.labels == cand.a
        part_b = sec.labels == cand.b
        region = part_a | part_b
        line = (part_a & neighbor_any(part_b)) | (part_b & neighbor_any(part_a))
        proposed_has_line = False

    rng = derive_rng(session_seed, 0x51DE, ordinal)
    swap_colors = bool(rng.integers(0, 2))
    accept_left = bool(rng.integers(0, 2))
    col1, col2 = (COLOR_B, COLOR_A) if swap_colors else (COLOR_A, COLOR_B)

    r0, r1, c0, c1 = _crop_box(region, sec.geometry.shape)
    sl = (slice(r0, r1), slice(c0, c1))
    gray = sec.gray[sl]
    region_c, line_c = region[sl], line[sl]
    pa, pb = part_a[sl], part_b[sl]

    plain = _to_rgb(gray)

    outline_view = _to_rgb(gray)
    _paint(outline_view, _outline(region_c), col1)
    _paint(outline_view, line_c, col2)

    solid = _to_rgb(gray)
    _paint(solid, pa, col1, alpha=0.45)
    _paint(solid, pb, col2, alpha=0.45)
    _paint(solid, line_c, (col1 + col2) / 2, alpha=0.6)

    with_line = _to_rgb(gray)
    _paint(with_line, _outline(region_c), col1)
    _paint(with_line, line_c, col1)
    without_line = _to_rgb(gray)
    _paint(without_line, _outline(region_c), col1)

    # the proposed correction carries the line for merges, removes it for splits
    left_is_line = accept_left == proposed_has_line
    return RenderedCandidate(
        candidate_id=cid, kind=kind, score=cand.score,
        outline=_encode(outline_view), solid=_encode(solid),
        plain=_encode(plain),
        choice_with_line=_encode(with_line),
        choice_without_line=_encode(without_line),
        accept_side="left" if accept_left else "right",
        left_is_line=left_is_line)


# --- schemas ---------------------------------------------------------------------

class SessionCreateBody(BaseModel):
    dataset: str
    checkpoint: str
    p_t: float = 0.95
    seed: int
    time_limit: float | None = None


class SessionCreated(BaseModel):
    id: str


class Progress(BaseModel):
    seen: int
    total: int
    accepted: int


class Views(BaseModel):
    outline: str
    solid: str
    plain: str


class NextCandidate(BaseModel):
    done: bool
    candidate_id: str | None = None
    type: str | None = None
    score: float | None = None
    views: Views | None = None
    choices: dict[str, str] | None = None     # left/right panel PNGs
    accept_side: str | None = None
    progress: Progress


class DecisionBody(BaseModel):
    candidate_id: str
    decision: str


class DecisionAck(BaseModel):
    progress: Progress
    done: bool


class SessionStats(BaseModel):
    events: list[dict]
    accepted: int
    vi_trail: list[float] | None = None


# --- the app ---------------------------------------------------------------------

@dataclass
class _LiveSession:
    session: CorrectionSession
    seed: int
    created: float
    time_limit: float | None
    lock: threading.Lock
    render_cache: dict[str, RenderedCandidate]

    def expired(self) -> bool:
        return self.time_limit is not None \
            and time.monotonic() - self.created > self.time_limit


def candidate_id_of(cand: SplitCandidate | MergeCandidate) -> str:
    if isinstance(cand, MergeCandidate):
        return f"merge:{cand.section_index}:{cand.segment_id}"
    return f"split:{cand.section_index}:{cand.a}:{cand.b}"


def create_app(session_factory=None) -> FastAPI:
    """Build the service; session_factory can inject preloaded sessions in tests."""
    app = FastAPI(title="segproof session service")
    sessions: dict[str, _LiveSession] = {}
    app.state.sessions = sessions

    def _get(session_id: str) -> _LiveSession:
        live = sessions.get(session_id)
        if live is None:
            raise SessionNotFound(f"unknown session {session_id!r}")
        return live

    @app.exception_handler(EngineError)
    async def _engine_error(request, exc: EngineError):
        status = 404 if isinstance(exc, SessionNotFound) else 409
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__,
                                     "detail": str(exc)})

    def _progress(live: _LiveSession) -> Progress:
        s = live.session
        pending = len(s._pending_merges()) + len(s._pending_splits()) \
            if s.phase == "merge" else len(s._pending_splits())
        return Progress(seen=len(s.events), total=len(s.events) + pending,
                        accepted=sum(1 for e in s.events if e.decision == "accept"))

    @app.get("/")
    def root():
        return {"service": "segproof", "sessions": len(sessions)}

    @app.post("/api/sessions", response_model=SessionCreated)
    def create_session(body: SessionCreateBody):
        if session_factory is not None:
            corr = session_factory(body)
        else:
            dataset = load_dataset(body.dataset)
            weights = load_checkpoint(body.checkpoint)
            cfg = EngineConfig(patch_size=weights.arch.input_hw, p_t=body.p_t,
                               rng_seed=body.seed)
            rankings = build_rankings(dataset, weights, cfg, master_seed=body.seed)
            corr = CorrectionSession(dataset, rankings, weights, cfg,
                                     merge_queue_threshold=body.p_t)
        if corr.current() is None:
            raise NoCandidates("dataset yields no candidates to review")
        sid = uuid.uuid4().hex[:12]
        sessions[sid] = _LiveSession(session=corr, seed=body.seed,
                                     created=time.monotonic(),
                                     time_limit=body.time_limit,
                                     lock=threading.Lock(), render_cache={})
        return SessionCreated(id=sid)

    @app.get("/api/sessions/{session_id}/next", response_model=NextCandidate)
    def next_candidate(session_id: str):
        live = _get(session_id)
        with live.lock:
            cand = live.session.current()
            if cand is None or live.expired():
                return NextCandidate(done=True, progress=_progress(live))
            cid = candidate_id_of(cand)
            rendered = live.render_cache.get(cid)
            if rendered is None:
                rendered = render_candidate(live.session, cand, live.seed,
                                            len(live.session.events))
                live.render_cache = {cid: rendered}
            left, right = (rendered.choice_with_line, rendered.choice_without_line) \
                if rendered.left_is_line \
                else (rendered.choice_without_line, rendered.choice_with_line)
            return NextCandidate(
                done=False, candidate_id=cid, type=rendered.kind,
                score=rendered.score,
                views=Views(outline=rendered.outline, solid=rendered.solid,
                            plain=rendered.plain),
                choices={"left": left, "right": right},
                accept_side=rendered.accept_side,
                progress=_progress(live))

    @app.post("/api/sessions/{session_id}/decision", response_model=DecisionAck)
    def post_decision(session_id: str, body: DecisionBody):
        live = _get(session_id)
        with live.lock:
            cand = live.session.current()
            if cand is None:
                raise StaleCursor("session is already done")
            cid = candidate_id_of(cand)
            if body.candidate_id != cid:
                raise StaleCursor(
                    f"decision for {body.candidate_id!r} but cursor is {cid!r}")
            live.session.decide(body.decision)
            live.render_cache = {}
            done = live.session.current() is None or live.expired()
            return DecisionAck(progress=_progress(live), done=done)

    @app.get("/api/sessions/{session_id}/stats", response_model=SessionStats)
    def stats(session_id: str):
        live = _get(session_id)
        with live.lock:
            events = [e.to_json() for e in live.session.events]
            trail = None
            if live.session.track_vi:
                trail = [e.vi_after for e in live.session.events]
            return SessionStats(
                events=events,
                accepted=sum(1 for e in live.session.events
                             if e.decision == "accept"),
                vi_trail=trail)

    return app


app = create_app()
