"""Scriptable SECS/GEM equipment simulator.

A scenario (YAML: key/value plus lists, schema below) defines the equipment
id, its process-variable channels, and a schedule of state transitions,
alarms, and PV steps. `tick()` deterministically produces the telemetry for
one tick index; `EquipmentServer` serves the stream over HSMS (passive mode,
answering Select and Linktest) as S6F11 collection-event reports and S5F1
alarm reports.

Scenario schema::

    equipment_id: str                 # required
    base_state: Idle|Processing|Alarmed   (default Idle)
    tick_interval: float seconds > 0      (default 2.0)
    start_time: float epoch seconds       (default 0.0)
    inspection_time: float | null         (used by pipeline scenarios)
    pv_channels:                      # list
      - name: str                     # required
        unit: str        (default "")
        nominal: float   (default 0.0)
        noise_stddev: float (default 0.0)
        drift_per_tick: float (default 0.0)
    scheduled_events:                 # list, sorted by at_tick on load
      - at_tick: int                  # required
        kind: state_transition | alarm | pv_step
        # state_transition: to_state
        # alarm: alarm_id, text, set (default true)
        # pv_step: channel, delta

Message layouts (repo-defined, GEM-conventional, frozen by golden tests):
S6F11 body = L[ U4 DATAID, U4 CEID, L[ L[ U4 RPTID, L[ F8 values... ] ] ] ]
with CEID 101 for the periodic PV report (values in pv_channels order) and
CEID 9000+state_code for state transitions (values [from_code, to_code]);
S5F1 body = L[ B ALCD, U4 ALID, A ALTX ] with ALCD bit 7 = alarm set.

PV noise is Gaussian per channel, seeded per (seed, channel, tick), so any
tick can be regenerated independently and the emitted byte sequence is a
pure function of (scenario, seed).
"""

from __future__ import annotations

import logging
import socket
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import hsms
from .secs2 import SecsItem, SecsMessage
from .telemetry import AlarmEvent, EventReport, StateTransition, TelemetryEvent, TelemetryLog

log = logging.getLogger(__name__)

CEID_PV_REPORT = 101
CEID_STATE_BASE = 9000
RPTID_PV = 11
ALCD_SET = 0x80

EQUIPMENT_STATES = ("Idle", "Processing", "Alarmed")
_STATE_CODE = {name: i for i, name in enumerate(EQUIPMENT_STATES)}


class SchemaError(Exception):
    """Scenario document violates the schema; message carries the field path."""


class SimulatorError(Exception):
    pass


@dataclass(frozen=True)
class PvChannel:
    name: str
    unit: str = ""
    nominal: float = 0.0
    noise_stddev: float = 0.0
    drift_per_tick: float = 0.0


@dataclass(frozen=True)
class StateTransitionAt:
    at_tick: int
    to_state: str


@dataclass(frozen=True)
class AlarmAt:
    at_tick: int
    alarm_id: int
    text: str
    set: bool = True


@dataclass(frozen=True)
class PvStepAt:
    at_tick: int
    channel: str
    delta: float


ScheduledEvent = StateTransitionAt | AlarmAt | PvStepAt


@dataclass(frozen=True)
class EquipmentScenario:
    equipment_id: str
    base_state: str = "Idle"
    tick_interval: float = 2.0
    start_time: float = 0.0
    inspection_time: float | None = None
    pv_channels: tuple[PvChannel, ...] = ()
    scheduled_events: tuple[ScheduledEvent, ...] = ()

    def channel(self, name: str) -> PvChannel | None:
        for ch in self.pv_channels:
            if ch.name == name:
                return ch
        return None

    def channel_names(self) -> tuple[str, ...]:
        return tuple(ch.name for ch in self.pv_channels)


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise SchemaError(f"{path}.{key}: required field missing")
    return mapping[key]


def _typed(value, types, path: str):
    if not isinstance(value, types):
        names = "/".join(t.__name__ for t in (types if isinstance(types, tuple) else (types,)))
        raise SchemaError(f"{path}: expected {names}, got {type(value).__name__}")
    return value


def load_scenario_dict(doc: dict, path: str = "scenario") -> EquipmentScenario:
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: document must be a mapping")
    equipment_id = _typed(_require(doc, "equipment_id", path), str, f"{path}.equipment_id")
    base_state = _typed(doc.get("base_state", "Idle"), str, f"{path}.base_state")
    if base_state not in EQUIPMENT_STATES:
        raise SchemaError(f"{path}.base_state: {base_state!r} not one of {EQUIPMENT_STATES}")
    tick_interval = float(_typed(doc.get("tick_interval", 2.0), (int, float), f"{path}.tick_interval"))
    if tick_interval <= 0:
        raise SchemaError(f"{path}.tick_interval: must be > 0")
    start_time = float(_typed(doc.get("start_time", 0.0), (int, float), f"{path}.start_time"))
    inspection_time = doc.get("inspection_time")
    if inspection_time is not None:
        inspection_time = float(_typed(inspection_time, (int, float), f"{path}.inspection_time"))

    channels = []
    seen = set()
    for i, entry in enumerate(_typed(doc.get("pv_channels", []), list, f"{path}.pv_channels")):
        p = f"{path}.pv_channels[{i}]"
        entry = _typed(entry, dict, p)
        name = _typed(_require(entry, "name", p), str, f"{p}.name")
        if name in seen:
            raise SchemaError(f"{p}.name: duplicate channel {name!r}")
        seen.add(name)
        channels.append(
            PvChannel(
                name=name,
                unit=_typed(entry.get("unit", ""), str, f"{p}.unit"),
                nominal=float(_typed(entry.get("nominal", 0.0), (int, float), f"{p}.nominal")),
                noise_stddev=float(_typed(entry.get("noise_stddev", 0.0), (int, float), f"{p}.noise_stddev")),
                drift_per_tick=float(_typed(entry.get("drift_per_tick", 0.0), (int, float), f"{p}.drift_per_tick")),
            )
        )

    events: list[ScheduledEvent] = []
    for i, entry in enumerate(_typed(doc.get("scheduled_events", []), list, f"{path}.scheduled_events")):
        p = f"{path}.scheduled_events[{i}]"
        entry = _typed(entry, dict, p)
        at_tick = _typed(_require(entry, "at_tick", p), int, f"{p}.at_tick")
        if at_tick < 0:
            raise SchemaError(f"{p}.at_tick: must be >= 0")
        kind = _typed(_require(entry, "kind", p), str, f"{p}.kind")
        if kind == "state_transition":
            to_state = _typed(_require(entry, "to_state", p), str, f"{p}.to_state")
            if to_state not in EQUIPMENT_STATES:
                raise SchemaError(f"{p}.to_state: {to_state!r} not one of {EQUIPMENT_STATES}")
            events.append(StateTransitionAt(at_tick, to_state))
        elif kind == "alarm":
            events.append(
                AlarmAt(
                    at_tick,
                    alarm_id=_typed(_require(entry, "alarm_id", p), int, f"{p}.alarm_id"),
                    text=_typed(_require(entry, "text", p), str, f"{p}.text"),
                    set=bool(entry.get("set", True)),
                )
            )
        elif kind == "pv_step":
            channel = _typed(_require(entry, "channel", p), str, f"{p}.channel")
            if channel not in seen:
                raise SchemaError(f"{p}.channel: {channel!r} is not a declared pv channel")
            events.append(PvStepAt(at_tick, channel, float(_typed(_require(entry, "delta", p), (int, float), f"{p}.delta"))))
        else:
            raise SchemaError(f"{p}.kind: {kind!r} not one of state_transition/alarm/pv_step")

    events.sort(key=lambda e: e.at_tick)
    return EquipmentScenario(
        equipment_id=equipment_id,
        base_state=base_state,
        tick_interval=tick_interval,
        start_time=start_time,
        inspection_time=inspection_time,
        pv_channels=tuple(channels),
        scheduled_events=tuple(events),
    )


def load_scenario(path: str | Path) -> EquipmentScenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"{path}: not parseable YAML: {exc}") from exc
    return load_scenario_dict(doc, path=str(path))


def bundled_scenario_path(name: str) -> Path:
    from importlib import resources

    return Path(str(resources.files("waferfa.data").joinpath("scenarios").joinpath(f"{name}.yaml")))


BUNDLED_SCENARIOS = (
    "case1_chuck_pressure",
    "case2_cvd_temperature",
    "case3_etch_rf",
    "case4_dicing_blade",
    "case5_litho_clean",
)


# --- deterministic signal model ------------------------------------------------

def state_at(scenario: EquipmentScenario, tick_index: int) -> str:
    state = scenario.base_state
    for event in scenario.scheduled_events:
        if isinstance(event, StateTransitionAt) and event.at_tick <= tick_index:
            state = event.to_state
    return state


def pv_value(scenario: EquipmentScenario, channel: PvChannel, tick_index: int, seed: int) -> float:
    value = channel.nominal + channel.drift_per_tick * tick_index
    for event in scenario.scheduled_events:
        if isinstance(event, PvStepAt) and event.channel == channel.name and event.at_tick <= tick_index:
            value += event.delta
    if channel.noise_stddev > 0.0:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, zlib.crc32(channel.name.encode()), tick_index])
        )
        value += rng.normal(0.0, channel.noise_stddev)
    return float(value)


def tick(scenario: EquipmentScenario, tick_index: int, seed: int = 0) -> list[TelemetryEvent]:
    """Telemetry for one tick: scheduled transitions/alarms, then the PV report."""
    if tick_index < 0:
        raise SimulatorError(f"tick_index {tick_index} must be >= 0")
    ts = scenario.start_time + tick_index * scenario.tick_interval
    out: list[TelemetryEvent] = []
    for event in scenario.scheduled_events:
        if event.at_tick != tick_index:
            continue
        if isinstance(event, StateTransitionAt):
            out.append(
                StateTransition(
                    ts,
                    scenario.equipment_id,
                    from_state=state_at(scenario, tick_index - 1) if tick_index else scenario.base_state,
                    to_state=event.to_state,
                )
            )
        elif isinstance(event, AlarmAt):
            out.append(AlarmEvent(ts, scenario.equipment_id, event.alarm_id, event.set, event.text))
    if scenario.pv_channels:
        values = tuple(
            (ch.name, pv_value(scenario, ch, tick_index, seed)) for ch in scenario.pv_channels
        )
        out.append(EventReport(ts, scenario.equipment_id, CEID_PV_REPORT, values))
    return out


def ingest_scenario(store: TelemetryLog, scenario: EquipmentScenario, ticks: int, seed: int = 0) -> int:
    """Replay a scenario straight into a telemetry store (no network)."""
    count = 0
    for i in range(ticks):
        for event in tick(scenario, i, seed):
            store.append(event)
            count += 1
    return count


# --- SECS-II conversions ----------------------------------------------------------

def event_to_message(event: TelemetryEvent, dataid: int = 0) -> SecsMessage:
    if isinstance(event, AlarmEvent):
        body = SecsItem.list(
            SecsItem.binary(bytes([ALCD_SET if event.is_set else 0x00])),
            SecsItem.u4(event.alarm_id),
            SecsItem.ascii(event.text),
        )
        return SecsMessage(5, 1, body=body)
    if isinstance(event, EventReport):
        values = SecsItem.list(*(SecsItem.f8(v) for _, v in event.pv_values))
        body = SecsItem.list(
            SecsItem.u4(dataid),
            SecsItem.u4(event.ceid),
            SecsItem.list(SecsItem.list(SecsItem.u4(RPTID_PV), values)),
        )
        return SecsMessage(6, 11, body=body)
    if isinstance(event, StateTransition):
        ceid = CEID_STATE_BASE + _STATE_CODE[event.to_state]
        values = SecsItem.list(
            SecsItem.f8(float(_STATE_CODE[event.from_state])),
            SecsItem.f8(float(_STATE_CODE[event.to_state])),
        )
        body = SecsItem.list(
            SecsItem.u4(dataid),
            SecsItem.u4(ceid),
            SecsItem.list(SecsItem.list(SecsItem.u4(RPTID_PV), values)),
        )
        return SecsMessage(6, 11, body=body)
    raise SimulatorError(f"cannot convert {type(event).__name__}")


def message_to_event(
    msg: SecsMessage,
    equipment_id: str,
    timestamp: float,
    channel_names: tuple[str, ...] = (),
) -> TelemetryEvent:
    """Inverse of event_to_message.

    The S6F11 body carries values positionally, so the caller supplies the
    channel-name order (from the scenario or the host's report definition);
    the transport does not carry timestamps, so the caller stamps them.
    """
    if msg.body is None:
        raise SimulatorError("message has no body")
    if (msg.stream, msg.function) == (5, 1):
        alcd, alid, altx = msg.body.value
        return AlarmEvent(
            timestamp,
            equipment_id,
            alarm_id=alid.value[0],
            is_set=bool(alcd.value[0] & ALCD_SET),
            text=altx.value,
        )
    if (msg.stream, msg.function) == (6, 11):
        _, ceid_item, reports = msg.body.value
        ceid = ceid_item.value[0]
        values = [v.value[0] for v in reports.value[0].value[1].value]
        if ceid >= CEID_STATE_BASE:
            from_code, to_code = (int(v) for v in values)
            return StateTransition(
                timestamp, equipment_id, EQUIPMENT_STATES[from_code], EQUIPMENT_STATES[to_code]
            )
        if len(channel_names) != len(values):
            raise SimulatorError(
                f"report has {len(values)} values but {len(channel_names)} channel names supplied"
            )
        return EventReport(timestamp, equipment_id, ceid, tuple(zip(channel_names, values)))
    raise SimulatorError(f"S{msg.stream}F{msg.function} is not a telemetry message")


# --- server --------------------------------------------------------------------

class EquipmentServer:
    """Passive HSMS equipment: accepts one host at a time, streams telemetry.

    speed scales wall-clock pacing only (tick timestamps stay 2 s apart in
    scenario time); max_ticks stops emission while keeping the link up for
    Linktest until stop() is called. If a store is given, every emitted
    event is also appended there.
    """

    def __init__(
        self,
        scenario: EquipmentScenario,
        host: str = "127.0.0.1",
        port: int = 0,
        seed: int = 0,
        speed: float = 1.0,
        max_ticks: int | None = None,
        store: TelemetryLog | None = None,
        timers: hsms.Timers = hsms.Timers(),
    ) -> None:
        self.scenario = scenario
        self.seed = seed
        self.speed = speed
        self.max_ticks = max_ticks
        self.store = store
        self.timers = timers
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self.port = self._listener.getsockname()[1]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._endpoint: hsms.HsmsEndpoint | None = None
        self.emitted = 0

    def start(self) -> "EquipmentServer":
        self._thread = threading.Thread(target=self._accept_loop, name="equipsim-accept", daemon=True)
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            log.info("host connected from %s", peer)
            try:
                self._serve_connection(conn)
            except Exception:
                log.exception("connection handler failed; re-listening")

    def _on_message(self, msg: SecsMessage, system_bytes: int) -> None:
        # establish-communications stub: acknowledge S1F13 with COMMACK 0
        if (msg.stream, msg.function) == (1, 13) and self._endpoint is not None:
            body = SecsItem.list(SecsItem.binary(b"\x00"), SecsItem.list(SecsItem.ascii("waferfa-sim"), SecsItem.ascii("0.1")))
            self._endpoint.reply(SecsMessage(1, 14, body=body), system_bytes)

    def _serve_connection(self, conn: socket.socket) -> None:
        endpoint = hsms.HsmsEndpoint(
            conn, hsms.Role.PASSIVE, timers=self.timers, on_message=self._on_message, name="equipsim"
        )
        self._endpoint = endpoint
        if not endpoint.wait_for_phase(hsms.Phase.SELECTED, self.timers.t7 + 1.0):
            endpoint.close()
            return
        tick_index = 0
        next_deadline = time.monotonic()
        while not self._stop.is_set() and endpoint.phase is hsms.Phase.SELECTED:
            if self.max_ticks is not None and tick_index >= self.max_ticks:
                time.sleep(0.05)  # stay up for linktest until stopped
                continue
            for event in tick(self.scenario, tick_index, self.seed):
                if self.store is not None:
                    self.store.append(event)
                endpoint.send(event_to_message(event, dataid=self.emitted))
                self.emitted += 1
            tick_index += 1
            next_deadline += self.scenario.tick_interval / self.speed
            while not self._stop.is_set():
                remaining = next_deadline - time.monotonic()
                if remaining <= 0:
                    break
                time.sleep(min(remaining, 0.05))
        endpoint.close()
        self._endpoint = None

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._endpoint is not None:
            self._endpoint.close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
