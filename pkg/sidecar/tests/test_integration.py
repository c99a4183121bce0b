"""Integration with the primary pipeline: live sidecar up, and fallback down.

Requires the waferfa package (the primary) to be installed; the primary's
own suite never imports this package.
"""

from __future__ import annotations

import socket
import threading
import time

import numpy as np
import pytest

uvicorn = pytest.importorskip("uvicorn")
waferfa_pipeline = pytest.importorskip("waferfa.pipeline")

from fa_sidecar.app import create_app  # noqa: E402
from waferfa import synth  # noqa: E402
from waferfa.narrative import SidecarNarrative  # noqa: E402
from waferfa.pipeline import Registry, SidecarEmbedder, new_state, run_pipeline  # noqa: E402
from waferfa.vindex import VectorIndex  # noqa: E402


@pytest.fixture(scope="module")
def live_sidecar():
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    config = uvicorn.Config(create_app("echo"), log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    import httpx

    url = f"http://127.0.0.1:{port}"
    while time.monotonic() < deadline:
        try:
            if httpx.get(f"{url}/health", timeout=1.0).status_code == 200:
                break
        except httpx.HTTPError:
            time.sleep(0.1)
    else:
        raise RuntimeError("sidecar did not come up")
    yield url
    server.should_exit = True
    thread.join(timeout=5)


def demo_state(seed=11):
    return new_state(
        wafer_map=synth.render("scratch", seed),
        equipment_id="EQ-INSP-01",
        lot_id="LOT-2024-070",
        wafer_id="W01",
        timestamp=7200.0,
    )


@pytest.fixture(scope="module")
def tiny_model():
    from waferfa import mlp
    from waferfa.features import extract_features

    features, labels = [], []
    for class_index, defect_class in enumerate(synth.CLASSES):
        for k in range(10):
            seed = synth.sample_seed(31, defect_class, k)
            features.append(extract_features(synth.render(defect_class, seed)))
            labels.append(class_index)
    model, _ = mlp.train(
        np.asarray(features), np.asarray(labels), mlp.TrainConfig(epochs=15, seed=2)
    )
    return model


def test_pipeline_uses_sidecar_embedding_dim(live_sidecar, tiny_model):
    index = VectorIndex()
    registry = Registry(
        model=tiny_model,
        embedder=SidecarEmbedder(live_sidecar),
        narrative=SidecarNarrative(live_sidecar),
        index=index,
    )
    out = run_pipeline(demo_state(), registry)
    # embedding dimension switches to the sidecar's 64
    assert out["embedding"].shape == (64,)
    assert not any("embedding backend failed" in e["message"] for e in out["errors"])

    # the upserted case round-trips with self-similarity 1
    case_id = out["report"]["report_id"]
    stored = index.get(case_id)
    assert stored is not None and stored.embedding.shape == (64,)
    top, similarity = index.query_top_k(out["embedding"], 1)[0]
    assert top.case_id == case_id
    assert abs(similarity - 1.0) <= 1e-9


def test_sidecar_narrative_backend_contract(live_sidecar):
    backend = SidecarNarrative(live_sidecar)
    text = backend.narrate(
        "defect_description",
        {"defect_class": "scratch", "spatial_stats": {"defect_density": 0.012}},
    )
    assert "scratch" in text and len(text) > 40


def test_pipeline_narrates_through_sidecar(live_sidecar, tiny_model):
    registry = Registry(
        model=tiny_model,
        embedder=SidecarEmbedder(live_sidecar),
        narrative=SidecarNarrative(live_sidecar),
    )
    out = run_pipeline(demo_state(), registry)
    # the sidecar voice ("Inspection shows ...") differs from the built-in
    # template ("Wafer map inspection shows ..."), proving the route taken
    assert out["defect_description"].startswith("Inspection shows")
    assert not any("narrative backend failed" in e["message"] for e in out["errors"])


def test_pipeline_falls_back_when_sidecar_down():
    registry = Registry(
        embedder=SidecarEmbedder("http://127.0.0.1:9", timeout=0.2),
        narrative=SidecarNarrative("http://127.0.0.1:9", timeout=0.2),
    )
    out = run_pipeline(demo_state(), registry)
    assert "report" in out
    assert any("embedding backend failed" in e["message"] for e in out["errors"])
    # built-in feature fallback keeps the run alive
    assert out["embedding"].shape == (56,)
