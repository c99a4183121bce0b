"""Equipment simulator tests: scenarios, deterministic ticks, HSMS loopback."""

from __future__ import annotations

import socket
import threading
import time

import numpy as np
import pytest

from waferfa import equipsim, hsms
from waferfa.equipsim import (
    BUNDLED_SCENARIOS,
    CEID_PV_REPORT,
    EquipmentScenario,
    EquipmentServer,
    PvChannel,
    PvStepAt,
    SchemaError,
    bundled_scenario_path,
    event_to_message,
    ingest_scenario,
    load_scenario,
    load_scenario_dict,
    message_to_event,
    pv_value,
    tick,
)
from waferfa.secs2 import SecsMessage, render_sml
from waferfa.telemetry import AlarmEvent, EventReport, StateTransition, TelemetryLog


def test_minimal_scenario_defaults():
    scenario = load_scenario_dict({"equipment_id": "EQ-X"})
    assert scenario.equipment_id == "EQ-X"
    assert scenario.base_state == "Idle"
    assert scenario.tick_interval == 2.0
    assert scenario.pv_channels == ()
    assert scenario.scheduled_events == ()


def test_schema_error_carries_field_path():
    with pytest.raises(SchemaError, match="equipment_id"):
        load_scenario_dict({})
    with pytest.raises(SchemaError, match=r"pv_channels\[0\]\.name"):
        load_scenario_dict({"equipment_id": "E", "pv_channels": [{"unit": "C"}]})
    with pytest.raises(SchemaError, match=r"scheduled_events\[0\]\.channel"):
        load_scenario_dict(
            {
                "equipment_id": "E",
                "scheduled_events": [{"at_tick": 1, "kind": "pv_step", "channel": "ghost", "delta": 1.0}],
            }
        )


def test_case1_scenario_has_chuck_step_45min_before_inspection():
    scenario = load_scenario(bundled_scenario_path("case1_chuck_pressure"))
    assert scenario.equipment_id == "EQ-INSP-01"
    steps = [e for e in scenario.scheduled_events if isinstance(e, PvStepAt) and e.delta > 0]
    assert steps and steps[0].channel == "chuck_vacuum_pressure"
    step_time = scenario.start_time + steps[0].at_tick * scenario.tick_interval
    assert scenario.inspection_time - step_time == pytest.approx(45 * 60)


def test_case4_scenario_blade_lifetime_reaches_94():
    scenario = load_scenario(bundled_scenario_path("case4_dicing_blade"))
    channel = scenario.channel("blade_lifetime_pct")
    inspection_tick = int((scenario.inspection_time - scenario.start_time) / scenario.tick_interval)
    value = pv_value(scenario, channel, inspection_tick, seed=0)
    assert value == pytest.approx(94.0, abs=0.1)


def test_all_bundled_scenarios_load():
    for name in BUNDLED_SCENARIOS:
        scenario = load_scenario(bundled_scenario_path(name))
        assert scenario.tick_interval == 2.0
        assert scenario.inspection_time == 7200.0


ZERO_NOISE = EquipmentScenario(
    equipment_id="EQ-Z",
    pv_channels=(
        PvChannel("alpha", nominal=10.0),
        PvChannel("beta", nominal=-3.0),
    ),
)


def test_tick_zero_noise_nominal():
    events = tick(ZERO_NOISE, 0, seed=4)
    assert len(events) == 1
    report = events[0]
    assert isinstance(report, EventReport)
    assert report.ceid == CEID_PV_REPORT
    assert report.pv_values == (("alpha", 10.0), ("beta", -3.0))


def test_scheduled_alarm_fires_exactly_once():
    scenario = load_scenario_dict(
        {
            "equipment_id": "EQ-A",
            "pv_channels": [{"name": "x"}],
            "scheduled_events": [{"at_tick": 3, "kind": "alarm", "alarm_id": 9, "text": "T"}],
        }
    )
    for i in range(6):
        alarms = [e for e in tick(scenario, i, 0) if isinstance(e, AlarmEvent)]
        assert len(alarms) == (1 if i == 3 else 0)


def test_state_transition_event():
    scenario = load_scenario_dict(
        {
            "equipment_id": "EQ-A",
            "base_state": "Idle",
            "scheduled_events": [{"at_tick": 2, "kind": "state_transition", "to_state": "Processing"}],
        }
    )
    events = tick(scenario, 2, 0)
    assert events == [StateTransition(4.0, "EQ-A", "Idle", "Processing")]


def test_tick_deterministic():
    scenario = load_scenario(bundled_scenario_path("case1_chuck_pressure"))
    for i in (0, 100, 2250):
        assert tick(scenario, i, seed=5) == tick(scenario, i, seed=5)
    assert tick(scenario, 7, seed=5) != tick(scenario, 7, seed=6)


def test_drift_accumulates_to_analytic_expectation():
    sigma = 0.5
    drift = 0.01
    scenario = EquipmentScenario(
        equipment_id="EQ-D",
        pv_channels=(PvChannel("d", nominal=100.0, noise_stddev=sigma, drift_per_tick=drift),),
    )
    channel = scenario.pv_channels[0]
    n = 1000
    values = np.array([pv_value(scenario, channel, i, seed=3) for i in range(1, n + 1)])
    detrended = values - drift * np.arange(1, n + 1)
    assert abs(detrended.mean() - 100.0) < 3 * sigma / np.sqrt(n)
    assert abs(values[-1] - (100.0 + n * drift)) < 4 * sigma


# --- SECS conversions -----------------------------------------------------------

def test_alarm_message_round_trip():
    alarm = AlarmEvent(12.0, "EQ-A", 4101, True, "CHUCK VACUUM PRESSURE LOW")
    msg = event_to_message(alarm)
    assert (msg.stream, msg.function) == (5, 1)
    back = message_to_event(msg, "EQ-A", 12.0)
    assert back == alarm
    cleared = AlarmEvent(13.0, "EQ-A", 4101, False, "CHUCK VACUUM PRESSURE LOW")
    assert message_to_event(event_to_message(cleared), "EQ-A", 13.0) == cleared


def test_event_report_round_trip():
    report = EventReport(4.0, "EQ-B", CEID_PV_REPORT, (("alpha", 10.5), ("beta", -2.25)))
    msg = event_to_message(report, dataid=7)
    assert (msg.stream, msg.function) == (6, 11)
    back = message_to_event(msg, "EQ-B", 4.0, channel_names=("alpha", "beta"))
    assert back == report


def test_state_transition_round_trip():
    transition = StateTransition(8.0, "EQ-C", "Processing", "Alarmed")
    back = message_to_event(event_to_message(transition), "EQ-C", 8.0)
    assert back == transition


def test_s6f11_sml_golden():
    report = EventReport(0.0, "EQ-B", CEID_PV_REPORT, (("alpha", 712.5),))
    text = render_sml(event_to_message(report, dataid=0))
    assert "S6F11" in text
    assert "<U4 [1] 101>" in text
    assert "<F8 [1] 712.5>" in text


def test_emitted_byte_sequence_deterministic():
    scenario = load_scenario(bundled_scenario_path("case3_etch_rf"))

    def emit(seed):
        blobs = []
        counter = 0
        for i in range(40):
            for event in tick(scenario, i, seed):
                msg = event_to_message(event, dataid=counter)
                counter += 1
                blobs.append(hsms.encode_frame(hsms.data_frame(1, msg, counter)))
        return b"".join(blobs)

    assert emit(9) == emit(9)
    assert emit(9) != emit(10)


def test_ingest_scenario_populates_store():
    store = TelemetryLog(None)
    scenario = load_scenario(bundled_scenario_path("case4_dicing_blade"))
    n = ingest_scenario(store, scenario, ticks=3600, seed=1)
    assert n == len(store)
    anomalies = store.detect_anomalies("EQ-DICE-12", "blade_lifetime_pct", 0.0, 7200.0)
    assert any(a.kind == "Drift" for a in anomalies)
    window = store.query_window("EQ-DICE-12", 6990.0, 7010.0)
    assert window  # PV reports flow every 2 s


# --- HSMS loopback -----------------------------------------------------------------

def test_serve_loopback_select_telemetry_linktest():
    """Host connects, completes Select, sees >= 4 S6F11 in 10 simulated
    seconds of 2-second ticks, and Linktest is answered within T6."""
    scenario = load_scenario(bundled_scenario_path("case5_litho_clean"))
    server = EquipmentServer(scenario, port=0, seed=2, speed=50.0, max_ticks=8).start()
    received: list[SecsMessage] = []
    got_four = threading.Event()

    def on_message(msg, system_bytes):
        received.append(msg)
        if sum(1 for m in received if (m.stream, m.function) == (6, 11)) >= 4:
            got_four.set()

    host = None
    try:
        host = hsms.connect_active("127.0.0.1", server.port, on_message=on_message, timeout=10.0)
        # 5 ticks of simulated 10 s arrive within 10s/50x + margin of wall clock
        assert got_four.wait(8.0), f"only {len(received)} messages arrived"
        s6f11 = [m for m in received if (m.stream, m.function) == (6, 11)]
        assert len(s6f11) >= 4
        decoded = message_to_event(s6f11[0], scenario.equipment_id, 0.0, scenario.channel_names())
        assert isinstance(decoded, EventReport)

        host.send_linktest()
        deadline = time.monotonic() + host._state.timers.t6
        while time.monotonic() < deadline and host._state.pending:
            time.sleep(0.01)
        assert not host._state.pending, "linktest not answered within T6"
        assert not host.errors
    finally:
        if host is not None:
            host.close()
        server.stop()


def test_serve_answers_s1f13_stub():
    scenario = load_scenario(bundled_scenario_path("case5_litho_clean"))
    server = EquipmentServer(scenario, port=0, seed=2, speed=50.0, max_ticks=0).start()
    replies = []
    got = threading.Event()

    def on_message(msg, system_bytes):
        if (msg.stream, msg.function) == (1, 14):
            replies.append(msg)
            got.set()

    host = None
    try:
        host = hsms.connect_active("127.0.0.1", server.port, on_message=on_message, timeout=10.0)
        host.send(SecsMessage(1, 13, wait_bit=True))
        assert got.wait(5.0)
        assert replies[0].body.value[0].value == b"\x00"  # COMMACK accepted
    finally:
        if host is not None:
            host.close()
        server.stop()
