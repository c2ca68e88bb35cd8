"""Drives the TypeScript client against a live backend (secondary check).

Needs node and the built frontend (`npm install && npm run build` in
frontend/); skipped when either is missing.
"""

import json
import shutil
import socket
import subprocess
import threading
import time
from pathlib import Path

import pytest

from segproof import cnn
from segproof.core import EngineConfig, load_dataset, save_labels
from segproof.correct import CorrectionSession, build_rankings
from segproof.service import candidate_id_of, create_app
from conftest import make_dataset

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"
DRIVER = FRONTEND / "dist" / "e2e" / "drive.js"


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.mark.e2e
def test_ui_flow_against_live_backend(tmp_path, trained_tiny):
    node = shutil.which("node")
    if node is None:
        pytest.skip("node not available")
    if not DRIVER.exists():
        pytest.skip("frontend not built (run npm install && npm run build)")

    ds = make_dataset(n_sections=2, n_cells=7, size=140, seed=31,
                      splits=3, merges=1, corrupt_seed=17)
    manifest = save_labels(ds, tmp_path / "data")
    ckpt = tmp_path / "weights.ckpt"
    cnn.save_checkpoint(trained_tiny, ckpt)

    import uvicorn

    port = free_port()
    config = uvicorn.Config(create_app(), host="127.0.0.1", port=port,
                            log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 15
    while not server.started:
        if time.time() > deadline:
            pytest.fail("backend did not start")
        time.sleep(0.05)

    try:
        seed, n_choices = 5, 5
        proc = subprocess.run(
            [node, str(DRIVER), f"http://127.0.0.1:{port}", str(manifest),
             str(ckpt), str(seed), str(n_choices)],
            capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stderr
        report = json.loads(proc.stdout)

        # exactly five decision posts, client- and server-side
        assert len(report["posted"]) == n_choices
        assert report["server_events"] == n_choices

        # candidate ordering equals the interactive corrector's visit order
        local_ds = load_dataset(manifest)
        cfg = EngineConfig(patch_size=trained_tiny.arch.input_hw, p_t=0.5,
                           rng_seed=seed)
        rankings = build_rankings(local_ds, trained_tiny, cfg, master_seed=seed)
        session = CorrectionSession(local_ds, rankings, trained_tiny, cfg,
                                    merge_queue_threshold=0.5)
        expected = []
        for post in report["posted"]:
            cand = session.current()
            expected.append(candidate_id_of(cand))
            session.decide(post["decision"])
        assert report["presented"] == expected

        # the rendered markup never labels panels as current/proposed
        assert len(report["html"]) == n_choices
        for html in report["html"]:
            lowered = html.lower()
            assert "current" not in lowered
            assert "proposed" not in lowered
        print(f"[ACCEPTANCE] ui-flow (secondary): PASS ({n_choices} choices, "
              f"order matched, panels unlabeled)")
    finally:
        server.should_exit = True
        thread.join(timeout=10)
