"""HTTP service tests: inspection endpoint, validation, metrics exposition."""

from __future__ import annotations

import json
import re

import pytest
from fastapi.testclient import TestClient

from waferfa import synth
from waferfa.metrics import MetricsCollector, latency_report
from waferfa.pipeline import NODE_NAMES, Registry
from waferfa.service import create_app
from waferfa.vindex import VectorIndex


@pytest.fixture()
def service(trained_model, tmp_path):
    registry = Registry(
        model=trained_model,
        index=VectorIndex(),
        report_dir=tmp_path / "reports",
        metrics=MetricsCollector(),
    )
    app = create_app(registry)
    return TestClient(app), registry, tmp_path


def _write_map(tmp_path, defect_class="scratch", seed=5):
    path = tmp_path / f"{defect_class}.png"
    synth.render(defect_class, seed).save_png(path)
    return str(path)


def _request(tmp_path, **overrides):
    body = {
        "map_path": _write_map(tmp_path),
        "equipment_id": "EQ-INSP-01",
        "lot_id": "LOT-2024-052",
        "wafer_id": "W07",
        "timestamp": 7200.0,
    }
    body.update(overrides)
    return body


def test_valid_request_returns_report(service):
    client, registry, tmp_path = service
    response = client.post("/inspections", json=_request(tmp_path))
    assert response.status_code == 200
    payload = response.json()
    assert payload["report_id"]
    report = payload["report"]
    assert report["classification"]["defect_class"] == "scratch"
    assert report["severity"]["level"] in ("CRITICAL", "MAJOR", "MINOR", "NONE")
    # the validated report persists and is fetchable
    fetched = client.get(f"/reports/{payload['report_id']}")
    assert fetched.status_code == 200
    assert fetched.json()["report_id"] == payload["report_id"]


def test_missing_field_is_400_with_field_path(service):
    client, _, tmp_path = service
    body = _request(tmp_path)
    del body["equipment_id"]
    response = client.post("/inspections", json=body)
    assert response.status_code == 400
    fields = [d["field"] for d in response.json()["detail"]]
    assert "equipment_id" in fields


def test_empty_id_is_400(service):
    client, _, tmp_path = service
    response = client.post("/inspections", json=_request(tmp_path, equipment_id=""))
    assert response.status_code == 400
    assert any("equipment_id" in d["field"] for d in response.json()["detail"])


def test_bad_timestamp_is_400(service):
    client, _, tmp_path = service
    response = client.post("/inspections", json=_request(tmp_path, timestamp="yesterday-ish"))
    assert response.status_code == 400
    assert any("timestamp" in d["field"] for d in response.json()["detail"])


def test_iso_timestamp_accepted(service):
    client, _, tmp_path = service
    response = client.post("/inspections", json=_request(tmp_path, timestamp="2024-05-01T12:00:00"))
    assert response.status_code == 200


def test_missing_map_file_is_404(service):
    client, _, tmp_path = service
    response = client.post("/inspections", json=_request(tmp_path, map_path="/no/such/map.png"))
    assert response.status_code == 404


def test_unreadable_map_contents_partial_200(service, tmp_path):
    client, _, base = service
    bad = tmp_path / "garbage.png"
    bad.write_bytes(b"not a png at all")
    response = client.post("/inspections", json=_request(base, map_path=str(bad)))
    assert response.status_code == 200
    report = response.json()["report"]
    assert report["errors"]
    assert report["errors"][0]["node"] == "defect_describer"
    assert report["classification"]["defect_class"] == "UNAVAILABLE"


def test_unknown_report_404(service):
    client, _, _ = service
    assert client.get("/reports/nope").status_code == 404


# --- metrics ------------------------------------------------------------------------

EXPOSITION_LINE = re.compile(
    r"^(?:# (?:HELP|TYPE) [a-zA-Z_:][a-zA-Z0-9_:]* .*"
    r"|[a-zA-Z_:][a-zA-Z0-9_:]*(?:\{[a-zA-Z_][a-zA-Z0-9_]*=\"[^\"]*\"(?:,[a-zA-Z_][a-zA-Z0-9_]*=\"[^\"]*\")*\})? [0-9eE+.\-]+)$"
)


def test_metrics_after_one_run(service):
    client, _, tmp_path = service
    assert client.post("/inspections", json=_request(tmp_path)).status_code == 200
    text = client.get("/metrics").text
    for node in NODE_NAMES:
        assert f'fa_node_duration_seconds_count{{node="{node}"}} 1' in text
    assert "fa_pipeline_duration_seconds_count 1" in text


def test_metrics_text_parses_under_exposition_grammar(service):
    client, _, tmp_path = service
    client.post("/inspections", json=_request(tmp_path))
    text = client.get("/metrics").text
    assert text.endswith("\n")
    histogram_counts = {}
    for line in text.rstrip("\n").split("\n"):
        assert EXPOSITION_LINE.match(line), f"bad exposition line: {line!r}"
        if "_bucket" in line and 'le="+Inf"' not in line:
            name = line.split("{")[0]
            histogram_counts.setdefault(name, []).append(float(line.rsplit(" ", 1)[1]))
    # bucket counts are cumulative, hence non-decreasing
    for name, counts in histogram_counts.items():
        assert counts == sorted(counts), name


def test_concurrent_requests_independent(service):
    from concurrent.futures import ThreadPoolExecutor

    client, _, tmp_path = service
    bodies = [
        _request(tmp_path, lot_id=f"LOT-2024-{i:03d}", map_path=_write_map(tmp_path, seed=100 + i))
        for i in range(6)
    ]
    with ThreadPoolExecutor(max_workers=3) as pool:
        responses = list(pool.map(lambda b: client.post("/inspections", json=b), bodies))
    ids = [r.json()["report_id"] for r in responses]
    assert all(r.status_code == 200 for r in responses)
    assert len(set(ids)) == len(ids)
    for r in responses:
        assert r.json()["report"]["classification"]["defect_class"] == "scratch"


def test_latency_report_shape(trained_model):
    from waferfa.pipeline import new_state, run_pipeline

    metrics = MetricsCollector()
    registry = Registry(model=trained_model, metrics=metrics)
    for i in range(3):
        state = new_state(
            wafer_map=synth.render("ring_pattern", 40 + i),
            equipment_id="EQ-ETCH-07",
            lot_id=f"L{i}",
            wafer_id="W1",
            timestamp=float(i),
        )
        run_pipeline(state, registry)
    text = latency_report(metrics, node_order=NODE_NAMES)
    lines = text.split("\n")
    assert "Median (s)" in lines[0] and "Fraction" in lines[0]
    for node in NODE_NAMES:
        assert any(line.startswith(node) for line in lines[1:]), node
    assert lines[-1].startswith("Total")
    fractions = [float(line.split()[-1].rstrip("%")) for line in lines[1:-1]]
    assert sum(fractions) == pytest.approx(100.0, abs=0.5)


def test_inline_map_accepted(service):
    import base64
    import io

    client, _, _ = service
    buffer = io.BytesIO()
    wmap = synth.render("near_full_wafer", 9)
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".png") as tmp:
        wmap.save_png(tmp.name)
        encoded = base64.b64encode(open(tmp.name, "rb").read()).decode()
    body = {
        "map_png_base64": encoded,
        "equipment_id": "EQ-WET-08",
        "lot_id": "LOT-2024-002",
        "wafer_id": "W02",
        "timestamp": 50.0,
    }
    response = client.post("/inspections", json=body)
    assert response.status_code == 200
    assert response.json()["report"]["classification"]["defect_class"] == "near_full_wafer"


def test_neither_map_field_is_400(service):
    client, _, _ = service
    body = {
        "equipment_id": "EQ-X",
        "lot_id": "L",
        "wafer_id": "W",
        "timestamp": 1.0,
    }
    response = client.post("/inspections", json=body)
    assert response.status_code == 400
    assert any("map_path" in d["field"] for d in response.json()["detail"])
