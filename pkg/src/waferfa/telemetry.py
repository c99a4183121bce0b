"""Time-indexed telemetry persistence with windowed queries and drift checks.

Event types (alarm, collection-event report, equipment state transition) are
defined here because this module owns their durable form; the equipment
simulator produces them and converts them to and from SECS-II bodies.

Storage layout (version 1): one binary file per equipment per day under the
store root, named ``<equipment_id>/<day>.bin`` where day is
``floor(timestamp / 86400)``. Each file starts with the 6-byte header
``WFTL`` + u16 version, followed by length-prefixed records::

    u32 record_length, then:
      u8  kind            1=alarm 2=event_report 3=state_transition
      f64 timestamp
      u16 len + utf-8 equipment_id
      alarm:            u32 alarm_id, u8 set_flag, u16 len + utf-8 text
      event_report:     u32 ceid, u16 n, then per value: u16 len + utf-8 name, f64 value
      state_transition: u16 len + utf-8 from_state, u16 len + utf-8 to_state

All integers and floats are big-endian. Appends are flushed per record; the
in-memory index is rebuilt by replaying the files on open, so reopening a
store reproduces the exact pre-shutdown query results.
"""

from __future__ import annotations

import logging
import math
import struct
import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

MAGIC = b"WFTL"
FORMAT_VERSION = 1
SECONDS_PER_DAY = 86400
MIN_SAMPLES_FOR_STATS = 8
_Z_CAP = 1e9  # keeps anomaly records JSON-serializable when residuals vanish


class TelemetryError(Exception):
    pass


class CorruptLogError(TelemetryError):
    pass


@dataclass(frozen=True)
class AlarmEvent:
    timestamp: float
    equipment_id: str
    alarm_id: int
    is_set: bool
    text: str


@dataclass(frozen=True)
class EventReport:
    timestamp: float
    equipment_id: str
    ceid: int
    pv_values: tuple[tuple[str, float], ...]  # ordered (channel, value)

    def value(self, channel: str) -> float | None:
        for name, val in self.pv_values:
            if name == channel:
                return val
        return None


@dataclass(frozen=True)
class StateTransition:
    timestamp: float
    equipment_id: str
    from_state: str
    to_state: str


TelemetryEvent = AlarmEvent | EventReport | StateTransition


class AnomalyKind:
    STEP = "Step"
    DRIFT = "Drift"
    OUT_OF_BAND = "OutOfBand"


@dataclass(frozen=True)
class PvAnomaly:
    equipment_id: str
    channel: str
    window: tuple[float, float]
    kind: str
    magnitude: float  # in channel units
    z_score: float

    def to_dict(self) -> dict:
        return {
            "equipment_id": self.equipment_id,
            "channel": self.channel,
            "window": list(self.window),
            "kind": self.kind,
            "magnitude": self.magnitude,
            "z_score": self.z_score,
        }


# --- record codec -----------------------------------------------------------

def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


def _unpack_str(data: bytes, pos: int) -> tuple[str, int]:
    (n,) = struct.unpack_from(">H", data, pos)
    return data[pos + 2 : pos + 2 + n].decode("utf-8"), pos + 2 + n


def encode_record(event: TelemetryEvent) -> bytes:
    if isinstance(event, AlarmEvent):
        body = (
            struct.pack(">Bd", 1, event.timestamp)
            + _pack_str(event.equipment_id)
            + struct.pack(">IB", event.alarm_id, 1 if event.is_set else 0)
            + _pack_str(event.text)
        )
    elif isinstance(event, EventReport):
        body = (
            struct.pack(">Bd", 2, event.timestamp)
            + _pack_str(event.equipment_id)
            + struct.pack(">IH", event.ceid, len(event.pv_values))
        )
        for name, value in event.pv_values:
            body += _pack_str(name) + struct.pack(">d", value)
    elif isinstance(event, StateTransition):
        body = (
            struct.pack(">Bd", 3, event.timestamp)
            + _pack_str(event.equipment_id)
            + _pack_str(event.from_state)
            + _pack_str(event.to_state)
        )
    else:
        raise TelemetryError(f"unknown event type {type(event).__name__}")
    return struct.pack(">I", len(body)) + body


def decode_record(body: bytes) -> TelemetryEvent:
    kind, timestamp = struct.unpack_from(">Bd", body, 0)
    equipment_id, pos = _unpack_str(body, 9)
    if kind == 1:
        alarm_id, set_flag = struct.unpack_from(">IB", body, pos)
        text, _ = _unpack_str(body, pos + 5)
        return AlarmEvent(timestamp, equipment_id, alarm_id, bool(set_flag), text)
    if kind == 2:
        ceid, n = struct.unpack_from(">IH", body, pos)
        pos += 6
        values = []
        for _ in range(n):
            name, pos = _unpack_str(body, pos)
            (value,) = struct.unpack_from(">d", body, pos)
            pos += 8
            values.append((name, value))
        return EventReport(timestamp, equipment_id, ceid, tuple(values))
    if kind == 3:
        from_state, pos = _unpack_str(body, pos)
        to_state, _ = _unpack_str(body, pos)
        return StateTransition(timestamp, equipment_id, from_state, to_state)
    raise CorruptLogError(f"unknown record kind {kind}")


# --- store --------------------------------------------------------------------

class TelemetryLog:
    """Append-only event store with a per-equipment time index.

    Single writer, many readers: appends and queries are serialized by one
    lock, and queries copy their result slice so callers see a consistent
    snapshot.
    """

    def __init__(self, root: str | Path | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self._lock = threading.RLock()
        # equipment_id -> parallel lists (timestamps sorted with insertion-order ties)
        self._times: dict[str, list[tuple[float, int]]] = {}
        self._events: dict[str, list[TelemetryEvent]] = {}
        self._seq = 0
        self._files: dict[Path, object] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._replay()

    def _replay(self) -> None:
        for path in sorted(self.root.glob("*/*.bin")):
            with open(path, "rb") as fh:
                header = fh.read(6)
                if len(header) < 6 or header[:4] != MAGIC:
                    raise CorruptLogError(f"{path}: bad magic")
                version = int.from_bytes(header[4:6], "big")
                if version != FORMAT_VERSION:
                    raise CorruptLogError(f"{path}: unsupported version {version}")
                while True:
                    prefix = fh.read(4)
                    if not prefix:
                        break
                    if len(prefix) < 4:
                        raise CorruptLogError(f"{path}: truncated record length")
                    (length,) = struct.unpack(">I", prefix)
                    body = fh.read(length)
                    if len(body) < length:
                        raise CorruptLogError(f"{path}: truncated record body")
                    self._index(decode_record(body))

    def _index(self, event: TelemetryEvent) -> None:
        times = self._times.setdefault(event.equipment_id, [])
        events = self._events.setdefault(event.equipment_id, [])
        key = (event.timestamp, self._seq)
        pos = bisect_right(times, key)
        times.insert(pos, key)
        events.insert(pos, event)
        self._seq += 1

    def _file_for(self, event: TelemetryEvent):
        day = int(event.timestamp // SECONDS_PER_DAY)
        path = self.root / event.equipment_id / f"{day}.bin"
        fh = self._files.get(path)
        if fh is None:
            path.parent.mkdir(parents=True, exist_ok=True)
            fresh = not path.exists()
            fh = open(path, "ab")
            if fresh:
                fh.write(MAGIC + FORMAT_VERSION.to_bytes(2, "big"))
            self._files[path] = fh
        return fh

    def append(self, event: TelemetryEvent) -> None:
        if event.timestamp < 0:
            raise TelemetryError(f"timestamp {event.timestamp} must be >= 0")
        with self._lock:
            if self.root is not None:
                fh = self._file_for(event)
                fh.write(encode_record(event))
                fh.flush()
            self._index(event)

    def extend(self, events) -> None:
        for event in events:
            self.append(event)

    def close(self) -> None:
        with self._lock:
            for fh in self._files.values():
                fh.close()
            self._files.clear()

    def __len__(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._events.values())

    def equipment_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._events)

    def query_window(self, equipment_id: str, start: float, end: float) -> list[TelemetryEvent]:
        """Events for one equipment with start <= timestamp <= end, sorted by time."""
        if start > end:
            raise TelemetryError(f"window start {start} after end {end}")
        with self._lock:
            times = self._times.get(equipment_id, [])
            events = self._events.get(equipment_id, [])
            lo = bisect_left(times, (start, -1))
            hi = bisect_right(times, (end, self._seq + 1))
            return events[lo:hi]

    def channel_series(
        self, equipment_id: str, channel: str, start: float, end: float
    ) -> list[tuple[float, float]]:
        series = []
        for event in self.query_window(equipment_id, start, end):
            if isinstance(event, EventReport):
                value = event.value(channel)
                if value is not None:
                    series.append((event.timestamp, value))
        return series

    def channels(self, equipment_id: str, start: float, end: float) -> list[str]:
        names = set()
        for event in self.query_window(equipment_id, start, end):
            if isinstance(event, EventReport):
                names.update(name for name, _ in event.pv_values)
        return sorted(names)

    def detect_anomalies(
        self,
        equipment_id: str,
        channel: str,
        start: float,
        end: float,
        threshold_z: float = 3.0,
    ) -> list[PvAnomaly]:
        """Flag level excursions and drift in one channel over a window.

        Point rule: |value - window mean| / window stddev > threshold_z. A
        run of flagged samples that reaches the window's final sample (and is
        at least 3 long) is reported as one Step; other runs are OutOfBand.
        Drift rule: |OLS slope| * span > threshold_z * residual stddev.
        Returns [] when fewer than MIN_SAMPLES_FOR_STATS samples exist or the
        window has zero variance.
        """
        series = self.channel_series(equipment_id, channel, start, end)
        if len(series) < MIN_SAMPLES_FOR_STATS:
            log.debug(
                "anomaly check skipped for %s/%s: %d samples < %d",
                equipment_id, channel, len(series), MIN_SAMPLES_FOR_STATS,
            )
            return []
        times = [t for t, _ in series]
        values = [v for _, v in series]
        n = len(values)
        mean = sum(values) / n
        var = sum((v - mean) ** 2 for v in values) / (n - 1)
        std = math.sqrt(var)
        if std == 0.0:
            return []

        anomalies: list[PvAnomaly] = []

        # point excursions grouped into runs
        flagged = [abs(v - mean) / std > threshold_z for v in values]
        i = 0
        while i < n:
            if not flagged[i]:
                i += 1
                continue
            j = i
            while j + 1 < n and flagged[j + 1]:
                j += 1
            run_values = values[i : j + 1]
            peak = max(run_values, key=lambda v: abs(v - mean))
            kind = AnomalyKind.STEP if (j == n - 1 and j - i + 1 >= 3) else AnomalyKind.OUT_OF_BAND
            anomalies.append(
                PvAnomaly(
                    equipment_id=equipment_id,
                    channel=channel,
                    window=(times[i], times[j]),
                    kind=kind,
                    magnitude=peak - mean,
                    z_score=min(abs(peak - mean) / std, _Z_CAP),
                )
            )
            i = j + 1

        # drift via ordinary least squares
        t_mean = sum(times) / n
        st2 = sum((t - t_mean) ** 2 for t in times)
        if st2 > 0:
            slope = sum((t - t_mean) * (v - mean) for t, v in series) / st2
            residuals = [v - (mean + slope * (t - t_mean)) for t, v in series]
            resid_std = math.sqrt(sum(r * r for r in residuals) / (n - 1))
            span = times[-1] - times[0]
            swing = abs(slope) * span
            if swing > threshold_z * resid_std and swing > 0:
                anomalies.append(
                    PvAnomaly(
                        equipment_id=equipment_id,
                        channel=channel,
                        window=(times[0], times[-1]),
                        kind=AnomalyKind.DRIFT,
                        magnitude=slope * span,
                        z_score=min(swing / resid_std, _Z_CAP) if resid_std > 0 else _Z_CAP,
                    )
                )
        return anomalies
