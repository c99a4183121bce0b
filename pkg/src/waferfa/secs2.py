"""SECS-II message item codec.

Encodes and decodes the tree-structured item values that make up equipment
message bodies, plus the stream/function message envelope and a canonical
single-form SML text rendering used for logs and golden tests.

Wire format per item: one format byte (6-bit format code, 2-bit count of
length bytes), 1-3 big-endian length bytes, then the payload. For lists the
length field counts child items; for everything else it counts payload bytes.
The encoder always emits the minimal number of length bytes.

SML grammar produced by render_sml (repo-defined, frozen by golden tests):
header line ``SxFy`` plus `` W`` when the wait bit is set; the body, if any,
follows one item per line, ``<FMT [count] values>`` with two-space indent per
list nesting level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAX_ITEM_BYTES = 1 << 24  # 3 length bytes
DEFAULT_MAX_DEPTH = 32

# format name -> (format code, element width in bytes, struct code)
_FORMATS: dict[str, tuple[int, int, str | None]] = {
    "L": (0x00, 0, None),
    "B": (0x20, 1, None),
    "BOOLEAN": (0x24, 1, None),
    "A": (0x40, 1, None),
    "I8": (0x60, 8, "q"),
    "I1": (0x64, 1, "b"),
    "I2": (0x68, 2, "h"),
    "I4": (0x70, 4, "i"),
    "F8": (0x80, 8, "d"),
    "F4": (0x90, 4, "f"),
    "U8": (0xA0, 8, "Q"),
    "U1": (0xA4, 1, "B"),
    "U2": (0xA8, 2, "H"),
    "U4": (0xB0, 4, "I"),
}
_CODE_TO_FORMAT = {code: name for name, (code, _, _) in _FORMATS.items()}
_SIGNED_FORMATS = {"I1", "I2", "I4", "I8"}
_UNSIGNED_FORMATS = {"U1", "U2", "U4", "U8"}
_FLOAT_FORMATS = {"F4", "F8"}
NUMERIC_FORMATS = _SIGNED_FORMATS | _UNSIGNED_FORMATS | _FLOAT_FORMATS


class SecsCodecError(Exception):
    """Base class for codec failures."""


class EncodeError(SecsCodecError):
    pass


class OversizeItemError(EncodeError):
    """Payload needs more than 3 length bytes."""


class HeterogeneousNumericError(EncodeError):
    """A numeric element does not fit the item's declared element width."""


class DecodeError(SecsCodecError):
    pass


class TruncatedError(DecodeError):
    """Declared length exceeds the available bytes."""


class UnknownFormatCodeError(DecodeError):
    pass


class DepthExceededError(DecodeError):
    pass


class MalformedPayloadError(DecodeError):
    """Payload length is not a multiple of the element width."""


class InvalidMessageError(SecsCodecError):
    pass


def _check_int(value: object, fmt: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise HeterogeneousNumericError(f"{fmt} element must be int, got {type(value).__name__}")
    width = _FORMATS[fmt][1]
    if fmt in _SIGNED_FORMATS:
        lo, hi = -(1 << (8 * width - 1)), (1 << (8 * width - 1)) - 1
    else:
        lo, hi = 0, (1 << (8 * width)) - 1
    if not lo <= value <= hi:
        raise HeterogeneousNumericError(f"{value} out of range for {fmt} [{lo}, {hi}]")
    return value


@dataclass(frozen=True)
class SecsItem:
    """One SECS-II item: a format tag plus its value.

    value is a tuple of SecsItem for "L", str for "A", bytes for "B",
    a tuple of bool for "BOOLEAN", and a tuple of int/float for the numeric
    formats. Use the factory classmethods; they validate and normalize.
    """

    fmt: str
    value: tuple | bytes | str

    @classmethod
    def list(cls, *children: "SecsItem") -> "SecsItem":
        for child in children:
            if not isinstance(child, SecsItem):
                raise TypeError(f"list child must be SecsItem, got {type(child).__name__}")
        return cls("L", tuple(children))

    @classmethod
    def ascii(cls, text: str) -> "SecsItem":
        text.encode("latin-1")  # raw single-byte text; fails fast on wider chars
        return cls("A", text)

    @classmethod
    def binary(cls, data: bytes | bytearray) -> "SecsItem":
        return cls("B", bytes(data))

    @classmethod
    def boolean(cls, *flags: bool) -> "SecsItem":
        return cls("BOOLEAN", tuple(bool(f) for f in flags))

    @classmethod
    def _integer(cls, fmt: str, values: tuple) -> "SecsItem":
        return cls(fmt, tuple(_check_int(v, fmt) for v in values))

    @classmethod
    def i1(cls, *values: int) -> "SecsItem":
        return cls._integer("I1", values)

    @classmethod
    def i2(cls, *values: int) -> "SecsItem":
        return cls._integer("I2", values)

    @classmethod
    def i4(cls, *values: int) -> "SecsItem":
        return cls._integer("I4", values)

    @classmethod
    def i8(cls, *values: int) -> "SecsItem":
        return cls._integer("I8", values)

    @classmethod
    def u1(cls, *values: int) -> "SecsItem":
        return cls._integer("U1", values)

    @classmethod
    def u2(cls, *values: int) -> "SecsItem":
        return cls._integer("U2", values)

    @classmethod
    def u4(cls, *values: int) -> "SecsItem":
        return cls._integer("U4", values)

    @classmethod
    def u8(cls, *values: int) -> "SecsItem":
        return cls._integer("U8", values)

    @classmethod
    def f4(cls, *values: float) -> "SecsItem":
        # quantize to IEEE single precision so encode/decode round-trips exactly
        quantized = tuple(struct.unpack(">f", struct.pack(">f", float(v)))[0] for v in values)
        return cls("F4", quantized)

    @classmethod
    def f8(cls, *values: float) -> "SecsItem":
        return cls("F8", tuple(float(v) for v in values))

    def __len__(self) -> int:
        return len(self.value)


@dataclass(frozen=True)
class SecsMessage:
    """Stream/function envelope around an optional SECS-II body.

    The wait bit may only be set on primary messages (odd function); pass
    raw=True to skip that check when reconstructing arbitrary wire traffic.
    """

    stream: int
    function: int
    wait_bit: bool = False
    body: SecsItem | None = None
    raw: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.stream <= 127:
            raise InvalidMessageError(f"stream {self.stream} outside 0-127")
        if not 0 <= self.function <= 255:
            raise InvalidMessageError(f"function {self.function} outside 0-255")
        if self.wait_bit and self.function % 2 == 0 and not self.raw:
            raise InvalidMessageError(
                f"S{self.stream}F{self.function}: wait bit requires a primary (odd-function) message"
            )

    @property
    def is_primary(self) -> bool:
        return self.function % 2 == 1


def _length_prefix(format_code: int, length: int) -> bytes:
    if length < 0x100:
        return bytes([format_code | 0x01, length])
    if length < 0x10000:
        return bytes([format_code | 0x02]) + length.to_bytes(2, "big")
    if length < MAX_ITEM_BYTES:
        return bytes([format_code | 0x03]) + length.to_bytes(3, "big")
    raise OversizeItemError(f"length {length} needs more than 3 length bytes")


def encode_item(item: SecsItem) -> bytes:
    """Encode one item (recursively for lists) to its wire bytes."""
    code, width, struct_code = _FORMATS[item.fmt]
    if item.fmt == "L":
        payload = b"".join(encode_item(child) for child in item.value)
        return _length_prefix(code, len(item.value)) + payload
    if item.fmt == "A":
        payload = item.value.encode("latin-1")
    elif item.fmt == "B":
        payload = bytes(item.value)
    elif item.fmt == "BOOLEAN":
        payload = bytes(0xFF if flag else 0x00 for flag in item.value)
    elif item.fmt in _FLOAT_FORMATS:
        payload = struct.pack(f">{len(item.value)}{struct_code}", *item.value)
    else:
        values = [_check_int(v, item.fmt) for v in item.value]
        payload = struct.pack(f">{len(values)}{struct_code}", *values)
    if len(payload) >= MAX_ITEM_BYTES:
        raise OversizeItemError(f"{item.fmt} payload of {len(payload)} bytes exceeds 3-length-byte limit")
    return _length_prefix(code, len(payload)) + payload


def decode_item(data: bytes, max_depth: int = DEFAULT_MAX_DEPTH) -> tuple[SecsItem, int]:
    """Decode one item from the start of data.

    Returns the item and the number of bytes consumed; trailing bytes are
    left for the caller. Raises a DecodeError subclass on malformed input.
    """
    if not data:
        raise TruncatedError("empty input")
    item, consumed = _decode_at(memoryview(data), 0, 0, max_depth)
    return item, consumed


def _decode_at(data: memoryview, pos: int, depth: int, max_depth: int) -> tuple[SecsItem, int]:
    if pos >= len(data):
        raise TruncatedError(f"item expected at offset {pos}, input ends")
    fmt_byte = data[pos]
    fmt = _CODE_TO_FORMAT.get(fmt_byte & 0xFC)
    n_length_bytes = fmt_byte & 0x03
    if fmt is None or n_length_bytes == 0:
        raise UnknownFormatCodeError(f"format byte 0x{fmt_byte:02X} at offset {pos}")
    if pos + 1 + n_length_bytes > len(data):
        raise TruncatedError(f"length bytes missing at offset {pos}")
    length = int.from_bytes(data[pos + 1 : pos + 1 + n_length_bytes], "big")
    cursor = pos + 1 + n_length_bytes

    if fmt == "L":
        if depth + 1 > max_depth:
            raise DepthExceededError(f"list nesting exceeds {max_depth}")
        children = []
        for _ in range(length):
            child, consumed = _decode_at(data, cursor, depth + 1, max_depth)
            children.append(child)
            cursor += consumed
        return SecsItem("L", tuple(children)), cursor - pos

    if cursor + length > len(data):
        raise TruncatedError(f"payload of {length} bytes at offset {cursor} exceeds input")
    payload = bytes(data[cursor : cursor + length])
    if fmt == "A":
        item = SecsItem("A", payload.decode("latin-1"))
    elif fmt == "B":
        item = SecsItem("B", payload)
    elif fmt == "BOOLEAN":
        item = SecsItem("BOOLEAN", tuple(b != 0 for b in payload))
    else:
        _, width, struct_code = _FORMATS[fmt]
        if length % width:
            raise MalformedPayloadError(f"{fmt} payload of {length} bytes is not a multiple of {width}")
        values = struct.unpack(f">{length // width}{struct_code}", payload)
        item = SecsItem(fmt, tuple(values))
    return item, cursor + length - pos


def encode_body(msg: SecsMessage) -> bytes:
    return b"" if msg.body is None else encode_item(msg.body)


def decode_body(data: bytes, max_depth: int = DEFAULT_MAX_DEPTH) -> SecsItem | None:
    """Decode a full message body; the body must span the whole input."""
    if not data:
        return None
    item, consumed = decode_item(data, max_depth)
    if consumed != len(data):
        raise MalformedPayloadError(f"body has {len(data) - consumed} trailing bytes")
    return item


def _render_scalar(item: SecsItem) -> str:
    if item.fmt == "A":
        return f'<A [{len(item.value)}] "{item.value}">'
    if item.fmt == "B":
        values = " ".join(f"0x{b:02X}" for b in item.value)
        return f"<B [{len(item.value)}]{' ' + values if values else ''}>"
    if item.fmt == "BOOLEAN":
        values = " ".join("TRUE" if f else "FALSE" for f in item.value)
        return f"<BOOLEAN [{len(item.value)}]{' ' + values if values else ''}>"
    values = " ".join(repr(v) if isinstance(v, float) else str(v) for v in item.value)
    return f"<{item.fmt} [{len(item.value)}]{' ' + values if values else ''}>"


def _render_item(item: SecsItem, indent: int, lines: list[str]) -> None:
    pad = "  " * indent
    if item.fmt == "L":
        lines.append(f"{pad}<L [{len(item.value)}]")
        for child in item.value:
            _render_item(child, indent + 1, lines)
        lines.append(f"{pad}>")
    else:
        lines.append(pad + _render_scalar(item))


def render_sml(msg: SecsMessage) -> str:
    """Render the canonical single-form SML text for a message."""
    header = f"S{msg.stream}F{msg.function}" + (" W" if msg.wait_bit else "")
    if msg.body is None:
        return header
    lines = [header]
    _render_item(msg.body, 0, lines)
    return "\n".join(lines)
