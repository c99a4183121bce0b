"""Acceptance gate: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL line
per criterion. Criteria and tolerances are fixed here, not calibrated
elsewhere: codec round-trip over 10k items in under 10 s plus a 50-message
byte-exact corpus; the full HSMS transition table plus a live loopback;
dataset presets 318 and 930 (790/140) with per-sample geometry bounds and
severity proportions within 2% over 10k draws; gradient check under 1e-4
and validation accuracy/macro-F1 of at least 0.85 in 50 epochs under 5
minutes; retrieval equal to a brute-force oracle over 1000 trials with
self-similarity within 1e-9 and scale-invariant ranking; the degradation
matrix, the published case rows (1, 4, 5), the four ablation conditions,
sub-second reports; self-improving retrieval; and a parseable metrics
endpoint carrying all five node histograms.
"""

from __future__ import annotations

import contextlib
import json
import math
import random
import re
import struct
import threading
import time
from collections import Counter

import numpy as np
import pytest

from waferfa import hsms, mlp, pipeline, synth
from waferfa.equipsim import (
    EquipmentServer,
    bundled_scenario_path,
    ingest_scenario,
    load_scenario,
    message_to_event,
)
from waferfa.features import extract_features
from waferfa.metrics import MetricsCollector
from waferfa.secs2 import SecsItem, decode_item, encode_item
from waferfa.telemetry import EventReport, TelemetryLog
from waferfa.vindex import DefectCase, VectorIndex


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {name}: FAIL")
        raise
    print(f"\nACCEPTANCE {name}: PASS")


# --- shared expensive fixtures --------------------------------------------------------

@pytest.fixture(scope="module")
def full_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept-ds")
    manifest = synth.write_dataset(
        synth.PRESET_FULL_9CLASS, out, seed=20260810, val_counts=synth.VAL_COUNTS_FULL_9CLASS
    )
    return out, manifest


@pytest.fixture(scope="module")
def trained_full_model(full_dataset):
    out, _ = full_dataset
    X, y, split = mlp.load_dataset_features(out)
    started = time.monotonic()
    model, curve = mlp.train(X[split["train"]], y[split["train"]], mlp.TrainConfig(seed=7))
    elapsed = time.monotonic() - started
    return model, curve, X, y, split, elapsed


# --- criterion 1: SECS-II codec --------------------------------------------------------

_GEN_SCALARS = [
    lambda r: SecsItem.ascii("".join(chr(r.randrange(32, 127)) for _ in range(r.randrange(0, 12)))),
    lambda r: SecsItem.binary(bytes(r.randrange(256) for _ in range(r.randrange(0, 12)))),
    lambda r: SecsItem.boolean(*(r.random() < 0.5 for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.u1(*(r.randrange(2**8) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.u2(*(r.randrange(2**16) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.u4(*(r.randrange(2**32) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.u8(*(r.randrange(2**64) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.i1(*(r.randrange(-128, 128) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.i2(*(r.randrange(-(2**15), 2**15) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.i4(*(r.randrange(-(2**31), 2**31) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.i8(*(r.randrange(-(2**63), 2**63) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.f4(*(r.uniform(-1e5, 1e5) for _ in range(r.randrange(0, 6)))),
    lambda r: SecsItem.f8(*(r.uniform(-1e9, 1e9) for _ in range(r.randrange(0, 6)))),
]


def _random_item(r: random.Random, depth=0):
    if depth < 4 and r.random() < 0.3:
        return SecsItem.list(*(_random_item(r, depth + 1) for _ in range(r.randrange(0, 5))))
    return r.choice(_GEN_SCALARS)(r)


_ORACLE = {
    "L": 0x00, "B": 0x20, "BOOLEAN": 0x24, "A": 0x40,
    "I8": 0x60, "I1": 0x64, "I2": 0x68, "I4": 0x70,
    "F8": 0x80, "F4": 0x90, "U8": 0xA0, "U1": 0xA4, "U2": 0xA8, "U4": 0xB0,
}
_ORACLE_PACK = {"I1": ">b", "I2": ">h", "I4": ">i", "I8": ">q",
                "U1": ">B", "U2": ">H", "U4": ">I", "U8": ">Q", "F4": ">f", "F8": ">d"}


def _oracle_encode(item: SecsItem) -> bytes:
    code = _ORACLE[item.fmt]
    if item.fmt == "L":
        payload = b"".join(_oracle_encode(c) for c in item.value)
        n = len(item.value)
    elif item.fmt == "A":
        payload = item.value.encode("latin-1")
        n = len(payload)
    elif item.fmt == "B":
        payload = bytes(item.value)
        n = len(payload)
    elif item.fmt == "BOOLEAN":
        payload = bytes(0xFF if v else 0x00 for v in item.value)
        n = len(payload)
    else:
        payload = b"".join(struct.pack(_ORACLE_PACK[item.fmt], v) for v in item.value)
        n = len(payload)
    packed = struct.pack(">L", n)
    if n >= 2**16:
        return bytes([code | 3]) + packed[1:] + payload
    if n >= 2**8:
        return bytes([code | 2]) + packed[2:] + payload
    return bytes([code | 1]) + packed[3:] + payload


def test_acceptance_secs2_codec():
    with criterion("SECS-II codec round-trip + reference corpus (<10 s)"):
        started = time.monotonic()
        r = random.Random(0xACCE97)
        for _ in range(10_000):
            item = _random_item(r)
            blob = encode_item(item)
            decoded, consumed = decode_item(blob)
            assert decoded == item and consumed == len(blob)
        # frozen corpus: 50+ messages including S5F1 alarm and S6F11 bodies
        corpus = [
            SecsItem.list(
                SecsItem.binary(b"\x80"), SecsItem.u4(4101),
                SecsItem.ascii("CHUCK VACUUM PRESSURE LOW"),
            ),
            SecsItem.list(
                SecsItem.u4(0), SecsItem.u4(101),
                SecsItem.list(SecsItem.list(SecsItem.u4(11), SecsItem.list(SecsItem.f8(-82.0)))),
            ),
        ]
        corpus.extend(_random_item(random.Random(1729)) for _ in range(48))
        assert len(corpus) >= 50
        for item in corpus:
            assert encode_item(item) == _oracle_encode(item)
        assert time.monotonic() - started < 10.0


# --- criterion 2: HSMS conformance ---------------------------------------------------------

def test_acceptance_hsms_conformance():
    with criterion("HSMS transition table + loopback (Select, 4x S6F11, Linktest<T6)"):
        # table: every (phase, event) pair matches the documented machine
        from tests.test_hsms import EVENTS, PHASES, TRANSITION_TABLE, mk_state

        for (phase_key, role_key, event_key), (want_phase, want_kinds) in TRANSITION_TABLE.items():
            role = hsms.Role.ACTIVE if role_key == "active" else hsms.Role.PASSIVE
            state = mk_state(role=role, phase=PHASES[phase_key])
            new, actions = hsms.connection_step(state, EVENTS[event_key], now=0.0)
            assert new.phase is PHASES[want_phase]
            assert tuple(type(a).__name__ for a in actions) == want_kinds

        # loopback at 50x wall-clock: 10 s of simulated 2-second ticks
        scenario = load_scenario(bundled_scenario_path("case5_litho_clean"))
        server = EquipmentServer(scenario, port=0, seed=2, speed=50.0, max_ticks=6).start()
        received = []
        got_four = threading.Event()

        def on_message(msg, system_bytes):
            received.append(msg)
            if sum(1 for m in received if (m.stream, m.function) == (6, 11)) >= 4:
                got_four.set()

        host = None
        try:
            host = hsms.connect_active("127.0.0.1", server.port, on_message=on_message, timeout=10.0)
            assert host.phase is hsms.Phase.SELECTED
            assert got_four.wait(8.0)
            assert sum(1 for m in received if (m.stream, m.function) == (6, 11)) >= 4
            host.send_linktest()
            deadline = time.monotonic() + host._state.timers.t6
            while time.monotonic() < deadline and host._state.pending:
                time.sleep(0.01)
            assert not host._state.pending
        finally:
            if host is not None:
                host.close()
            server.stop()


# --- criterion 3: dataset ----------------------------------------------------------------------

def test_acceptance_dataset(full_dataset, tmp_path):
    with criterion("dataset presets, per-sample geometry, severity proportions"):
        paper = synth.write_dataset(
            synth.PRESET_PAPER_SYNTHETIC, tmp_path / "paper", seed=1,
            val_counts=synth.VAL_COUNTS_PAPER_SYNTHETIC,
        )
        assert paper["total"] == 318
        stats = synth.dataset_stats(tmp_path / "paper")
        assert stats["per_class"] == {
            "scratch": 112, "particle_contamination": 106, "edge_crack": 100,
        }
        assert len(list((tmp_path / "paper" / "images").rglob("*.png"))) == 318

        out, manifest = full_dataset
        assert manifest["total"] == 930
        assert len(manifest["split"]["train"]) == 790
        assert len(manifest["split"]["val"]) == 140

        for sample in manifest["samples"]:
            wmap, info = synth.render_info(sample["defect_class"], sample["seed"])
            cls = sample["defect_class"]
            if cls == "scratch":
                assert synth.band_concentration(wmap) >= 0.95, sample["sample_id"]
            elif cls == "edge_crack":
                assert synth.min_fail_radius(wmap) >= 0.85, sample["sample_id"]
            elif cls == "no_defect":
                assert wmap.fail_fraction < 0.02, sample["sample_id"]
            elif cls == "center_cluster":
                assert synth.center_concentration(wmap, 0.25) >= 0.9, sample["sample_id"]
            elif cls == "ring_pattern":
                assert synth.annulus_concentration(wmap, info["r1"], info["r2"]) >= 0.9
            elif cls == "near_full_wafer":
                assert wmap.fail_fraction >= 0.6, sample["sample_id"]

        n = 10_000
        for cls, table in synth.SEVERITY_TABLE.items():
            counts = Counter(synth.assign_severity(cls, None, s) for s in range(n))
            for severity, p in table:
                assert abs(counts[severity] / n - p) <= 0.02, (cls, severity)


# --- criterion 4: classifier ---------------------------------------------------------------------

def test_acceptance_classifier(trained_full_model):
    with criterion("gradient check <1e-4; val acc & macro F1 >= 0.85 in 50 epochs (<5 min)"):
        worst = 0.0
        for trial in range(100):
            model = mlp.init_model(5000 + trial, in_dim=7, hidden_dim=5,
                                   class_names=tuple(f"c{i}" for i in range(4)))
            rng = np.random.default_rng(trial)
            for _ in range(100):
                x = rng.normal(0, 1, size=(3, 7))
                y = rng.integers(0, 4, size=3)
                if mlp.min_hidden_preactivation(model, x) > 1e-2:
                    break
            worst = max(worst, mlp.gradient_check(model, x, y, h=1e-4))
        assert worst < 1e-4, f"gradient check max relative error {worst}"

        model, curve, X, y, split, elapsed = trained_full_model
        assert elapsed < 300.0, f"training took {elapsed:.1f}s"
        assert len(curve) == 50
        report = mlp.evaluate(model, X[split["val"]], y[split["val"]])
        assert report.total == 140
        assert report.accuracy >= 0.85, f"val accuracy {report.accuracy:.3f}"
        assert report.macro_f1 >= 0.85, f"macro F1 {report.macro_f1:.3f}"


# --- criterion 5: retrieval -----------------------------------------------------------------------

def _oracle_top_k(cases, query, k):
    def cos(u, v):
        dot = sum(a * b for a, b in zip(u, v))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
        return 0.0 if nu == 0.0 or nv == 0.0 else dot / (nu * nv)

    ranked = sorted(
        ((c, cos(list(query), list(c.embedding))) for c in cases),
        key=lambda pair: (-pair[1], pair[0].case_id),
    )
    return ranked[:k]


def test_acceptance_retrieval():
    with criterion("retrieval: brute-force oracle x1000, self-sim 1e-9, scale invariance"):
        rng = np.random.default_rng(0x5EED)
        trials = 0
        index = None
        cases = []
        for trial in range(1000):
            if trial % 20 == 0:
                index = VectorIndex()
                cases = []
                for i in range(int(rng.integers(1, 50))):
                    case = DefectCase(
                        case_id=f"c{trial}-{i:03d}",
                        embedding=rng.normal(size=16),
                        defect_class="scratch",
                        severity="MINOR",
                        root_cause_narrative="x",
                        equipment_id="EQ",
                        timestamp=0.0,
                    )
                    index.upsert(case)
                    cases.append(case)
            query = rng.normal(size=16)
            got = index.query_top_k(query, 5)
            want = _oracle_top_k(cases, query, 5)
            assert [c.case_id for c, _ in got] == [c.case_id for c, _ in want]
            for (_, s1), (_, s2) in zip(got, want):
                assert abs(s1 - s2) < 1e-12
            trials += 1
        assert trials == 1000

        for case in cases[:10]:
            top, sim = index.query_top_k(case.embedding, 1)[0]
            assert top.case_id == case.case_id and abs(sim - 1.0) <= 1e-9
        query = rng.normal(size=16)
        base_ids = [c.case_id for c, _ in index.query_top_k(query, 5)]
        for scale in (1e-6, 0.5, 3e4):
            assert [c.case_id for c, _ in index.query_top_k(scale * query, 5)] == base_ids


# --- criterion 6: pipeline ---------------------------------------------------------------------------

def _registry_for(model, scenario_name=None, index=None, **kwargs):
    telemetry = None
    if scenario_name is not None:
        telemetry = TelemetryLog(None)
        ingest_scenario(telemetry, load_scenario(bundled_scenario_path(scenario_name)), 3600, seed=0)
    return pipeline.Registry(model=model, index=index, telemetry=telemetry, **kwargs)


def _state_for(defect_class, seed, equipment, ts=7200.0):
    return pipeline.new_state(
        wafer_map=synth.render(defect_class, seed),
        equipment_id=equipment,
        lot_id="LOT-2024-052",
        wafer_id="W07",
        timestamp=ts,
    )


def _history_index(model):
    from waferfa.knowledge import KnowledgeBase

    knowledge = KnowledgeBase.load_default()
    index = VectorIndex()
    for defect_class in synth.CLASSES:
        mechanism = knowledge.top_prior_mechanism(defect_class)
        index.upsert(
            DefectCase(
                case_id=f"hist-{defect_class}",
                embedding=extract_features(synth.render(defect_class, synth.sample_seed(888, defect_class, 0))),
                defect_class=defect_class,
                severity="MAJOR",
                root_cause_narrative=f"{knowledge.label(mechanism)}: historical precedent.",
                equipment_id=synth.EQUIPMENT_BY_CLASS[defect_class],
                timestamp=1000.0,
            )
        )
    return index


def test_acceptance_pipeline(trained_full_model):
    model = trained_full_model[0]
    with criterion("pipeline: degradation matrix, case rows 1/4/5, ablations, <1 s"):
        # fault-injection matrix: report always present, errors populated
        faults = [
            pipeline.new_state(map_path="/no/map.png", equipment_id="E", lot_id="L",
                               wafer_id="W", timestamp=0.0),
            _state_for("scratch", 11, "EQ-INSP-01"),  # empty telemetry + empty index
        ]
        registries = [
            pipeline.Registry(model=model),
            pipeline.Registry(model=model, index=None, telemetry=None),
        ]
        registries.append(
            pipeline.Registry(
                model=model,
                embedder=pipeline.SidecarEmbedder("http://127.0.0.1:1", timeout=0.2),
            )
        )
        faults.append(_state_for("scratch", 12, "EQ-INSP-01"))
        for state, registry in zip(faults, registries):
            out = pipeline.run_pipeline(state, registry)
            assert "report" in out
            assert out["errors"], "fault run must record errors"
            assert out["report"]["errors"] == out["errors"]

        # case 1: scratch + chuck anomaly cited
        registry = _registry_for(model, "case1_chuck_pressure", index=_history_index(model))
        out = pipeline.run_pipeline(_state_for("scratch", 101, "EQ-INSP-01"), registry)
        top = out["hypotheses"][0]
        assert top.mechanism == "mechanical_contact_chuck"
        details = " ".join(e.detail for e in top.evidence if e.kind == "telemetry")
        assert "CHUCK" in details or "chuck_vacuum_pressure" in details

        # case 4: blade wear recommendation includes feed-rate -10%
        registry = _registry_for(model, "case4_dicing_blade", index=_history_index(model))
        out = pipeline.run_pipeline(_state_for("edge_crack", 55, "EQ-DICE-12"), registry)
        assert out["recommendations"]["dicing_feed_rate"] == "-10%"

        # case 5: clean pass, severity NONE, no-action recommendation
        registry = _registry_for(model, "case5_litho_clean", index=_history_index(model))
        out = pipeline.run_pipeline(_state_for("no_defect", 21, "EQ-LITHO-02"), registry)
        assert out["severity"] == "NONE"
        assert out["recommendations"] == {"action": pipeline.SEVERITY_NONE_ACTION}

        # four ablation conditions: evidence sets match enabled modalities
        registry = _registry_for(model, "case1_chuck_pressure", index=_history_index(model))
        expected = {
            "full": {"telemetry", "retrieval", "class_prior"},
            "no_retrieval": {"telemetry", "class_prior"},
            "no_telemetry": {"retrieval", "class_prior"},
            "baseline": {"class_prior"},
        }
        for condition, (no_tlm, no_ret) in pipeline.ABLATION_CONDITIONS.items():
            out = pipeline.run_pipeline(
                _state_for("scratch", 101, "EQ-INSP-01"), registry,
                disable_telemetry=no_tlm, disable_retrieval=no_ret,
            )
            kinds = {e.kind for h in out["hypotheses"] for e in h.evidence}
            assert kinds == expected[condition], condition

        # end-to-end latency with the template backend
        state = _state_for("scratch", 102, "EQ-INSP-01")
        pipeline.run_pipeline(state, registry)  # warm caches
        started = time.perf_counter()
        out = pipeline.run_pipeline(state, registry)
        assert time.perf_counter() - started < 1.0
        assert set(out["node_latencies"]) == set(pipeline.NODE_NAMES)


# --- criterion 7: self-improvement ------------------------------------------------------------------------

def test_acceptance_self_improvement(trained_full_model):
    model = trained_full_model[0]
    with criterion("self-improvement: run N+1 retrieves case N"):
        index = VectorIndex()
        registry = pipeline.Registry(model=model, index=index)
        first = pipeline.run_pipeline(_state_for("ring_pattern", 400, "EQ-ETCH-07"), registry)
        first_id = first["report"]["report_id"]

        second_state = pipeline.new_state(
            wafer_map=synth.render("ring_pattern", 401),
            equipment_id="EQ-ETCH-07",
            lot_id="LOT-2024-099",
            wafer_id="W09",
            timestamp=7300.0,
        )
        second = pipeline.run_pipeline(second_state, registry)
        retrieved = [c["case_id"] for c in second.get("retrieved_cases", [])]
        assert first_id in retrieved


# --- criterion 8: metrics endpoint ---------------------------------------------------------------------------

def test_acceptance_metrics_endpoint(trained_full_model, tmp_path):
    model = trained_full_model[0]
    with criterion("metrics endpoint: exposition parseable, 5 node histograms"):
        from fastapi.testclient import TestClient

        from waferfa.service import create_app

        registry = pipeline.Registry(model=model, metrics=MetricsCollector(), report_dir=tmp_path)
        client = TestClient(create_app(registry))
        map_path = tmp_path / "m.png"
        synth.render("scratch", 77).save_png(map_path)
        response = client.post(
            "/inspections",
            json={
                "map_path": str(map_path),
                "equipment_id": "EQ-INSP-01",
                "lot_id": "LOT-2024-001",
                "wafer_id": "W01",
                "timestamp": 100.0,
            },
        )
        assert response.status_code == 200
        text = client.get("/metrics").text
        line_re = re.compile(
            r"^(?:# (?:HELP|TYPE) [a-zA-Z_:][a-zA-Z0-9_:]* .*"
            r"|[a-zA-Z_:][a-zA-Z0-9_:]*(?:\{[a-zA-Z_][a-zA-Z0-9_]*=\"[^\"]*\""
            r"(?:,[a-zA-Z_][a-zA-Z0-9_]*=\"[^\"]*\")*\})? [0-9eE+.\-]+)$"
        )
        for line in text.rstrip("\n").split("\n"):
            assert line_re.match(line), line
        for node in pipeline.NODE_NAMES:
            assert f'fa_node_duration_seconds_count{{node="{node}"}} 1' in text
        assert "fa_pipeline_duration_seconds_count 1" in text
