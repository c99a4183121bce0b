"""Walk through the SECS-II item codec: build, encode, decode, render.

Run: python3 demos/01_secs2_codec.py
"""

from waferfa.secs2 import SecsItem, SecsMessage, decode_item, encode_item, render_sml

# An S5F1 alarm report body: alarm code byte, alarm id, alarm text.
alarm_body = SecsItem.list(
    SecsItem.binary(b"\x80"),
    SecsItem.u4(4101),
    SecsItem.ascii("CHUCK VACUUM PRESSURE LOW"),
)

wire = encode_item(alarm_body)
print(f"encoded {len(wire)} bytes: {wire.hex(' ')}")

decoded, consumed = decode_item(wire)
print(f"decoded == original: {decoded == alarm_body}, consumed {consumed} bytes")

msg = SecsMessage(5, 1, body=alarm_body)
print("\ncanonical SML rendering:")
print(render_sml(msg))

# Length bytes are always minimal: a 300-char text needs 2 of them.
long_text = encode_item(SecsItem.ascii("x" * 300))
print(f"\n300-byte ASCII item header: {long_text[:3].hex(' ')} (format byte | 2 length bytes)")
