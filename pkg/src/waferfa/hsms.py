"""HSMS (high-speed message services) framing and connection state machine.

Frames ride a reliable byte stream as a 4-byte big-endian length prefix
followed by a 10-byte header (session id, two header bytes, p-type, s-type,
system bytes) and the SECS-II body. Control messages (Select/Deselect/
Linktest/Separate/Reject) carry an empty body.

The connection logic is a pure function `connection_step(state, event, now)`
returning the next state plus a list of side-effect actions; the threaded
`HsmsEndpoint` wrapper owns the socket, serializes step calls, and executes
the actions. Documented transition table:

phase                 event                        -> phase', actions
NotConnected          TcpConnected (passive)       -> ConnectedNotSelected, StartTimer(T7)
NotConnected          TcpConnected (active)        -> ConnectedNotSelected, SendFrame(Select.req), StartTimer(T6:select:n)
NotConnected          SendRequest/SendLinktest     -> unchanged, RaiseError
NotConnected          FrameReceived                -> unchanged, RaiseError
NotConnected          TimerExpired(T5)             -> unchanged, [] (reconnect gate open)
ConnectedNotSelected  FrameReceived(Select.req)    -> Selected, SendFrame(Select.rsp 0), CancelTimer(T7)
ConnectedNotSelected  FrameReceived(Select.rsp 0)  -> Selected, CancelTimer(T6:select:n)   [matching pending]
ConnectedNotSelected  FrameReceived(Select.rsp !0) -> NotConnected, RaiseError, CloseConnection
ConnectedNotSelected  FrameReceived(Data)          -> unchanged, SendFrame(Reject reason 4)
ConnectedNotSelected  FrameReceived(Linktest.req)  -> unchanged, SendFrame(Linktest.rsp)
ConnectedNotSelected  TimerExpired(T7)             -> NotConnected, CloseConnection, RaiseError
ConnectedNotSelected  TimerExpired(T6:select:n)    -> NotConnected, CloseConnection, RaiseError
Selected              FrameReceived(Data)          -> unchanged, DeliverMessage (+CancelTimer(T3:n) on reply match)
Selected              FrameReceived(Select.req)    -> unchanged, SendFrame(Select.rsp 1)
Selected              FrameReceived(Linktest.req)  -> unchanged, SendFrame(Linktest.rsp)
Selected              FrameReceived(Linktest.rsp)  -> unchanged, CancelTimer(T6:linktest:n) [matching pending]
Selected              FrameReceived(Deselect.req)  -> ConnectedNotSelected, SendFrame(Deselect.rsp 0), StartTimer(T7)
Selected              SendRequest(msg)             -> unchanged, SendFrame(Data) (+StartTimer(T3:n) when wait bit)
Selected              SendReply(msg, n)            -> unchanged, SendFrame(Data echoing n)
not Selected          SendReply                    -> unchanged, RaiseError
Selected              TimerExpired(T3:n)           -> unchanged, RaiseError (transaction dropped)
Selected              TimerExpired(T6:linktest:n)  -> NotConnected, CloseConnection, RaiseError
any connected         FrameReceived(Separate.req)  -> NotConnected, CloseConnection
any connected         FrameReceived(p_type != 0)   -> unchanged, SendFrame(Reject reason 2)
any connected         FrameReceived(unknown s_type)-> unchanged, SendFrame(Reject reason 1)
any connected         SendLinktest                 -> unchanged, SendFrame(Linktest.req), StartTimer(T6:linktest:n)
any connected         Disconnect                   -> NotConnected, CancelTimer(*) (+StartTimer(T5) when active)

Active endpoints start T5 whenever the connection drops; its expiry carries
no actions and merely marks that a reconnect attempt is permitted.
"""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

from . import secs2
from .secs2 import SecsMessage

log = logging.getLogger(__name__)

HEADER_BYTES = 10
DEFAULT_MAX_FRAME = 16 * 1024 * 1024
SELECT_SESSION_ID = 0xFFFF
DEFAULT_SESSION_ID = 0x0001
DEFAULT_PORT = 5000


class SType(IntEnum):
    DATA = 0
    SELECT_REQ = 1
    SELECT_RSP = 2
    DESELECT_REQ = 3
    DESELECT_RSP = 4
    LINKTEST_REQ = 5
    LINKTEST_RSP = 6
    REJECT_REQ = 7
    SEPARATE_REQ = 9


class RejectReason(IntEnum):
    S_TYPE_NOT_SUPPORTED = 1
    P_TYPE_NOT_SUPPORTED = 2
    TRANSACTION_NOT_OPEN = 3
    NOT_SELECTED = 4


class HsmsError(Exception):
    pass


class InvalidSTypeError(HsmsError):
    pass


class NonEmptyControlBodyError(HsmsError):
    pass


class FrameTooLargeError(HsmsError):
    pass


class MalformedFrameError(HsmsError):
    pass


@dataclass(frozen=True)
class HsmsFrame:
    """One HSMS frame; length is derived (10 header bytes + body)."""

    session_id: int
    header_byte2: int
    header_byte3: int
    s_type: int
    system_bytes: int
    body: bytes = b""
    p_type: int = 0

    @property
    def length(self) -> int:
        return HEADER_BYTES + len(self.body)

    @property
    def is_data(self) -> bool:
        return self.s_type == SType.DATA


def encode_frame(frame: HsmsFrame) -> bytes:
    if frame.s_type not in set(SType):
        raise InvalidSTypeError(f"s_type {frame.s_type} is not a defined HSMS message type")
    if frame.s_type != SType.DATA and frame.body:
        raise NonEmptyControlBodyError(f"control message s_type={frame.s_type} must have empty body")
    header = (
        frame.session_id.to_bytes(2, "big")
        + bytes([frame.header_byte2 & 0xFF, frame.header_byte3 & 0xFF, frame.p_type & 0xFF, frame.s_type & 0xFF])
        + frame.system_bytes.to_bytes(4, "big")
    )
    return frame.length.to_bytes(4, "big") + header + frame.body


def decode_frame(buffer: bytes | bytearray, max_frame: int = DEFAULT_MAX_FRAME) -> tuple[HsmsFrame, int] | None:
    """Incrementally decode one frame from the head of buffer.

    Returns (frame, bytes consumed) or None when more bytes are needed.
    Unknown s_type values decode successfully; rejecting them is the state
    machine's job, not the parser's.
    """
    if len(buffer) < 4:
        return None
    length = int.from_bytes(buffer[:4], "big")
    if length > max_frame:
        raise FrameTooLargeError(f"frame length {length} exceeds limit {max_frame}")
    if length < HEADER_BYTES:
        raise MalformedFrameError(f"frame length {length} below 10-byte header")
    if len(buffer) < 4 + length:
        return None
    header = bytes(buffer[4 : 4 + HEADER_BYTES])
    body = bytes(buffer[4 + HEADER_BYTES : 4 + length])
    frame = HsmsFrame(
        session_id=int.from_bytes(header[0:2], "big"),
        header_byte2=header[2],
        header_byte3=header[3],
        p_type=header[4],
        s_type=header[5],
        system_bytes=int.from_bytes(header[6:10], "big"),
        body=body,
    )
    return frame, 4 + length


# --- frame constructors ---------------------------------------------------

def select_req(system_bytes: int, session_id: int = SELECT_SESSION_ID) -> HsmsFrame:
    return HsmsFrame(session_id, 0, 0, SType.SELECT_REQ, system_bytes)


def select_rsp(status: int, system_bytes: int, session_id: int = SELECT_SESSION_ID) -> HsmsFrame:
    return HsmsFrame(session_id, 0, status, SType.SELECT_RSP, system_bytes)


def deselect_rsp(status: int, system_bytes: int, session_id: int) -> HsmsFrame:
    return HsmsFrame(session_id, 0, status, SType.DESELECT_RSP, system_bytes)


def linktest_req(system_bytes: int) -> HsmsFrame:
    return HsmsFrame(SELECT_SESSION_ID, 0, 0, SType.LINKTEST_REQ, system_bytes)


def linktest_rsp(system_bytes: int) -> HsmsFrame:
    return HsmsFrame(SELECT_SESSION_ID, 0, 0, SType.LINKTEST_RSP, system_bytes)


def separate_req(system_bytes: int) -> HsmsFrame:
    return HsmsFrame(SELECT_SESSION_ID, 0, 0, SType.SEPARATE_REQ, system_bytes)


def reject_req(reason: int, ref_frame: HsmsFrame) -> HsmsFrame:
    # header byte 2 echoes the offending s-type per E37
    return HsmsFrame(ref_frame.session_id, ref_frame.s_type, reason, SType.REJECT_REQ, ref_frame.system_bytes)


def data_frame(session_id: int, msg: SecsMessage, system_bytes: int) -> HsmsFrame:
    hb2 = msg.stream | (0x80 if msg.wait_bit else 0)
    return HsmsFrame(session_id, hb2, msg.function, SType.DATA, system_bytes, body=secs2.encode_body(msg))


def frame_to_message(frame: HsmsFrame) -> SecsMessage:
    if not frame.is_data:
        raise HsmsError("control frames carry no SECS-II message")
    return SecsMessage(
        stream=frame.header_byte2 & 0x7F,
        function=frame.header_byte3,
        wait_bit=bool(frame.header_byte2 & 0x80),
        body=secs2.decode_body(frame.body),
        raw=True,
    )


# --- connection state machine ----------------------------------------------

class Phase(Enum):
    NOT_CONNECTED = "NotConnected"
    CONNECTED_NOT_SELECTED = "ConnectedNotSelected"
    SELECTED = "Selected"


class Role(Enum):
    ACTIVE = "active"  # host: connects and initiates Select
    PASSIVE = "passive"  # equipment: listens and answers Select


@dataclass(frozen=True)
class Timers:
    t3: float = 45.0  # reply timeout
    t5: float = 10.0  # connect separation
    t6: float = 5.0  # control transaction
    t7: float = 10.0  # not-selected timeout
    t8: float = 5.0  # inter-byte (enforced by the I/O layer)


@dataclass(frozen=True)
class ConnectionState:
    role: Role
    phase: Phase = Phase.NOT_CONNECTED
    timers: Timers = Timers()
    session_id: int = DEFAULT_SESSION_ID
    # open transactions awaiting a reply: (system_bytes, kind, deadline)
    # kind is "select" / "linktest" (T6) or "data" (T3)
    pending: tuple[tuple[int, str, float], ...] = ()
    next_system_bytes: int = 1


def _timer_name(kind: str, system_bytes: int) -> str:
    return f"T3:{system_bytes}" if kind == "data" else f"T6:{kind}:{system_bytes}"


def _pending_kind(state: ConnectionState, system_bytes: int, kind: str) -> bool:
    return any(sb == system_bytes and k == kind for sb, k, _ in state.pending)


# events
@dataclass(frozen=True)
class TcpConnected:
    pass


@dataclass(frozen=True)
class FrameReceived:
    frame: HsmsFrame


@dataclass(frozen=True)
class TimerExpired:
    name: str


@dataclass(frozen=True)
class SendRequest:
    msg: SecsMessage


@dataclass(frozen=True)
class SendLinktest:
    pass


@dataclass(frozen=True)
class SendReply:
    """Send a reply data message echoing the request's system bytes."""

    msg: SecsMessage
    system_bytes: int


@dataclass(frozen=True)
class Disconnect:
    pass


Event = TcpConnected | FrameReceived | TimerExpired | SendRequest | SendReply | SendLinktest | Disconnect


# actions
@dataclass(frozen=True)
class SendFrame:
    frame: HsmsFrame


@dataclass(frozen=True)
class DeliverMessage:
    msg: SecsMessage
    system_bytes: int


@dataclass(frozen=True)
class CloseConnection:
    pass


@dataclass(frozen=True)
class StartTimer:
    name: str
    seconds: float


@dataclass(frozen=True)
class CancelTimer:
    name: str


@dataclass(frozen=True)
class RaiseError:
    message: str


Action = SendFrame | DeliverMessage | CloseConnection | StartTimer | CancelTimer | RaiseError


def _without_pending(state: ConnectionState, system_bytes: int, kind: str) -> ConnectionState:
    kept = tuple(p for p in state.pending if not (p[0] == system_bytes and p[1] == kind))
    return replace(state, pending=kept)


def _drop_link(state: ConnectionState, actions: list[Action]) -> ConnectionState:
    for sys_bytes, kind, _ in state.pending:
        actions.append(CancelTimer(_timer_name(kind, sys_bytes)))
    if state.phase is Phase.CONNECTED_NOT_SELECTED:
        actions.append(CancelTimer("T7"))
    if state.role is Role.ACTIVE:
        actions.append(StartTimer("T5", state.timers.t5))
    return replace(state, phase=Phase.NOT_CONNECTED, pending=())


def _step_frame(state: ConnectionState, frame: HsmsFrame, now: float) -> tuple[ConnectionState, list[Action]]:
    if frame.p_type != 0:
        return state, [SendFrame(reject_req(RejectReason.P_TYPE_NOT_SUPPORTED, frame))]
    if frame.s_type not in set(SType):
        return state, [SendFrame(reject_req(RejectReason.S_TYPE_NOT_SUPPORTED, frame))]
    s_type = SType(frame.s_type)

    if s_type == SType.SEPARATE_REQ:
        actions: list[Action] = []
        state = _drop_link(state, actions)
        actions.append(CloseConnection())
        return state, actions

    if s_type == SType.LINKTEST_REQ:
        return state, [SendFrame(linktest_rsp(frame.system_bytes))]

    if s_type == SType.LINKTEST_RSP:
        if _pending_kind(state, frame.system_bytes, "linktest"):
            new = _without_pending(state, frame.system_bytes, "linktest")
            return new, [CancelTimer(_timer_name("linktest", frame.system_bytes))]
        return state, [RaiseError(f"unexpected Linktest.rsp system_bytes={frame.system_bytes}")]

    if state.phase is Phase.CONNECTED_NOT_SELECTED:
        if s_type == SType.SELECT_REQ:
            # simultaneous select: our own pending attempt becomes moot
            actions = [SendFrame(select_rsp(0, frame.system_bytes)), CancelTimer("T7")]
            new = state
            for sys_bytes, kind, _ in state.pending:
                if kind == "select":
                    actions.append(CancelTimer(_timer_name(kind, sys_bytes)))
                    new = _without_pending(new, sys_bytes, kind)
            new = replace(new, phase=Phase.SELECTED)
            return new, actions
        if s_type == SType.SELECT_RSP:
            if not _pending_kind(state, frame.system_bytes, "select"):
                return state, [RaiseError(f"unexpected Select.rsp system_bytes={frame.system_bytes}")]
            state = _without_pending(state, frame.system_bytes, "select")
            if frame.header_byte3 == 0:
                new = replace(state, phase=Phase.SELECTED)
                return new, [CancelTimer(_timer_name("select", frame.system_bytes))]
            actions = [
                CancelTimer(_timer_name("select", frame.system_bytes)),
                RaiseError(f"select rejected with status {frame.header_byte3}"),
            ]
            state = _drop_link(state, actions)
            actions.append(CloseConnection())
            return state, actions
        if s_type == SType.DATA:
            return state, [SendFrame(reject_req(RejectReason.NOT_SELECTED, frame))]
        if s_type == SType.DESELECT_REQ:
            return state, [
                SendFrame(deselect_rsp(1, frame.system_bytes, frame.session_id)),
                RaiseError("Deselect.req while not selected"),
            ]
        return state, [RaiseError(f"{s_type.name} not expected while not selected")]

    if state.phase is Phase.SELECTED:
        if s_type == SType.DATA:
            try:
                msg = frame_to_message(frame)
            except secs2.SecsCodecError as exc:
                return state, [RaiseError(f"undecodable data message body: {exc}")]
            actions = [DeliverMessage(msg, frame.system_bytes)]
            if not msg.is_primary and _pending_kind(state, frame.system_bytes, "data"):
                state = _without_pending(state, frame.system_bytes, "data")
                actions.append(CancelTimer(_timer_name("data", frame.system_bytes)))
            return state, actions
        if s_type == SType.SELECT_REQ:
            return state, [SendFrame(select_rsp(1, frame.system_bytes))]
        if s_type == SType.DESELECT_REQ:
            new = replace(state, phase=Phase.CONNECTED_NOT_SELECTED)
            return new, [
                SendFrame(deselect_rsp(0, frame.system_bytes, frame.session_id)),
                StartTimer("T7", state.timers.t7),
            ]
        if s_type == SType.REJECT_REQ:
            return state, [RaiseError(f"peer rejected s_type={frame.header_byte2} reason={frame.header_byte3}")]
        return state, [RaiseError(f"{s_type.name} not expected while selected")]

    return state, [RaiseError(f"frame received while {state.phase.value}")]


def _step_timer(state: ConnectionState, name: str) -> tuple[ConnectionState, list[Action]]:
    if name == "T5":
        return state, []
    if name == "T7" and state.phase is Phase.CONNECTED_NOT_SELECTED:
        actions: list[Action] = [RaiseError("T7 not-selected timeout")]
        state = _drop_link(state, actions)
        actions.append(CloseConnection())
        return state, actions
    if name.startswith("T3:"):
        sys_bytes = int(name.split(":", 1)[1])
        if _pending_kind(state, sys_bytes, "data"):
            new = _without_pending(state, sys_bytes, "data")
            return new, [RaiseError(f"T3 reply timeout for transaction {sys_bytes}")]
        return state, []
    if name.startswith("T6:"):
        _, kind, sys_text = name.split(":", 2)
        sys_bytes = int(sys_text)
        if _pending_kind(state, sys_bytes, kind):
            # control transaction failure is a communication failure
            actions = [RaiseError(f"T6 control transaction timeout ({name})")]
            state = _without_pending(state, sys_bytes, kind)
            state = _drop_link(state, actions)
            actions.append(CloseConnection())
            return state, actions
        return state, []
    return state, [RaiseError(f"unexpected timer {name} in {state.phase.value}")]


def connection_step(state: ConnectionState, event: Event, now: float = 0.0) -> tuple[ConnectionState, list[Action]]:
    """Pure transition: identical (state, event, now) gives identical output.

    Illegal events yield a RaiseError action with the state unchanged; the
    function itself never raises on legal inputs.
    """
    if isinstance(event, TcpConnected):
        if state.phase is not Phase.NOT_CONNECTED:
            return state, [RaiseError(f"TcpConnected while {state.phase.value}")]
        new = replace(state, phase=Phase.CONNECTED_NOT_SELECTED)
        if state.role is Role.PASSIVE:
            return new, [StartTimer("T7", state.timers.t7)]
        sys_bytes = new.next_system_bytes
        new = replace(
            new,
            next_system_bytes=sys_bytes + 1,
            pending=new.pending + ((sys_bytes, "select", now + state.timers.t6),),
        )
        return new, [
            SendFrame(select_req(sys_bytes)),
            StartTimer(_timer_name("select", sys_bytes), state.timers.t6),
        ]

    if isinstance(event, Disconnect):
        if state.phase is Phase.NOT_CONNECTED:
            return state, []
        actions: list[Action] = []
        state = _drop_link(state, actions)
        actions.append(CloseConnection())
        return state, actions

    if isinstance(event, SendRequest):
        if state.phase is not Phase.SELECTED:
            return state, [RaiseError(f"cannot send data message while {state.phase.value}")]
        sys_bytes = state.next_system_bytes
        new = replace(state, next_system_bytes=sys_bytes + 1)
        actions = [SendFrame(data_frame(state.session_id, event.msg, sys_bytes))]
        if event.msg.wait_bit:
            new = replace(new, pending=new.pending + ((sys_bytes, "data", now + state.timers.t3),))
            actions.append(StartTimer(_timer_name("data", sys_bytes), state.timers.t3))
        return new, actions

    if isinstance(event, SendReply):
        if state.phase is not Phase.SELECTED:
            return state, [RaiseError(f"cannot send reply while {state.phase.value}")]
        return state, [SendFrame(data_frame(state.session_id, event.msg, event.system_bytes))]

    if isinstance(event, SendLinktest):
        if state.phase is Phase.NOT_CONNECTED:
            return state, [RaiseError("cannot linktest while NotConnected")]
        sys_bytes = state.next_system_bytes
        new = replace(
            state,
            next_system_bytes=sys_bytes + 1,
            pending=state.pending + ((sys_bytes, "linktest", now + state.timers.t6),),
        )
        return new, [
            SendFrame(linktest_req(sys_bytes)),
            StartTimer(_timer_name("linktest", sys_bytes), state.timers.t6),
        ]

    if isinstance(event, TimerExpired):
        return _step_timer(state, event.name)

    if isinstance(event, FrameReceived):
        if state.phase is Phase.NOT_CONNECTED:
            return state, [RaiseError("frame received while NotConnected")]
        return _step_frame(state, event.frame, now)

    return state, [RaiseError(f"unknown event {event!r}")]


# --- threaded endpoint ------------------------------------------------------

class HsmsEndpoint:
    """Socket wrapper that serializes connection_step calls and runs actions.

    on_message(msg, system_bytes) is invoked for every delivered data
    message; on_error(text) for every RaiseError. Both run on the reader or
    timer thread, so keep them quick.
    """

    def __init__(
        self,
        sock: socket.socket,
        role: Role,
        *,
        timers: Timers = Timers(),
        session_id: int = DEFAULT_SESSION_ID,
        on_message=None,
        on_error=None,
        name: str = "hsms",
    ) -> None:
        self._sock = sock
        self._state = ConnectionState(role=role, timers=timers, session_id=session_id)
        self._lock = threading.RLock()
        self._phase_changed = threading.Condition(self._lock)
        self._timers: dict[str, threading.Timer] = {}
        self._on_message = on_message
        self._on_error = on_error
        self._name = name
        self._closed = False
        self.errors: list[str] = []
        self._reader = threading.Thread(target=self._read_loop, name=f"{name}-reader", daemon=True)
        self.step(TcpConnected())
        self._reader.start()

    @property
    def phase(self) -> Phase:
        with self._lock:
            return self._state.phase

    def wait_for_phase(self, phase: Phase, timeout: float = 10.0) -> bool:
        with self._phase_changed:
            return self._phase_changed.wait_for(lambda: self._state.phase is phase, timeout)

    def send(self, msg: SecsMessage) -> None:
        self.step(SendRequest(msg))

    def reply(self, msg: SecsMessage, system_bytes: int) -> None:
        self.step(SendReply(msg, system_bytes))

    def send_linktest(self) -> None:
        self.step(SendLinktest())

    def close(self) -> None:
        self.step(Disconnect())

    def step(self, event: Event) -> None:
        import time

        with self._lock:
            if self._closed and not isinstance(event, Disconnect):
                return
            self._state, actions = connection_step(self._state, event, now=time.monotonic())
            for action in actions:
                self._run_action(action)
            self._phase_changed.notify_all()

    def _run_action(self, action: Action) -> None:
        if isinstance(action, SendFrame):
            try:
                self._sock.sendall(encode_frame(action.frame))
            except OSError as exc:
                self._record_error(f"send failed: {exc}")
        elif isinstance(action, DeliverMessage):
            if self._on_message is not None:
                self._on_message(action.msg, action.system_bytes)
        elif isinstance(action, StartTimer):
            timer = threading.Timer(action.seconds, self._timer_fired, args=(action.name,))
            timer.daemon = True
            self._timers[action.name] = timer
            timer.start()
        elif isinstance(action, CancelTimer):
            timer = self._timers.pop(action.name, None)
            if timer is not None:
                timer.cancel()
        elif isinstance(action, CloseConnection):
            self._closed = True
            for timer in self._timers.values():
                timer.cancel()
            self._timers.clear()
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()
        elif isinstance(action, RaiseError):
            self._record_error(action.message)

    def _record_error(self, message: str) -> None:
        log.warning("%s: %s", self._name, message)
        self.errors.append(message)
        if self._on_error is not None:
            self._on_error(message)

    def _timer_fired(self, name: str) -> None:
        with self._lock:
            self._timers.pop(name, None)
        self.step(TimerExpired(name))

    def _read_loop(self) -> None:
        buffer = bytearray()
        t8 = self._state.timers.t8
        self._sock.settimeout(0.2)
        idle = 0.0
        while not self._closed:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                idle += 0.2
                if buffer and idle >= t8:
                    self._record_error("T8 inter-byte timeout with partial frame")
                    self.step(Disconnect())
                    return
                continue
            except OSError:
                break
            if not chunk:
                break
            idle = 0.0
            buffer.extend(chunk)
            while True:
                try:
                    decoded = decode_frame(buffer)
                except HsmsError as exc:
                    self._record_error(f"framing error: {exc}")
                    self.step(Disconnect())
                    return
                if decoded is None:
                    break
                frame, consumed = decoded
                del buffer[:consumed]
                self.step(FrameReceived(frame))
        if not self._closed:
            self.step(Disconnect())


def connect_active(
    host: str,
    port: int,
    *,
    timers: Timers = Timers(),
    session_id: int = DEFAULT_SESSION_ID,
    on_message=None,
    on_error=None,
    timeout: float = 10.0,
    name: str = "host",
) -> HsmsEndpoint:
    """Dial the equipment, complete the Select handshake, return the endpoint."""
    sock = socket.create_connection((host, port), timeout=timeout)
    endpoint = HsmsEndpoint(
        sock, Role.ACTIVE, timers=timers, session_id=session_id,
        on_message=on_message, on_error=on_error, name=name,
    )
    if not endpoint.wait_for_phase(Phase.SELECTED, timeout):
        endpoint.close()
        raise HsmsError(f"select handshake did not complete within {timeout}s")
    return endpoint
