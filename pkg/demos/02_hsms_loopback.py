"""Host <-> equipment HSMS loopback: Select handshake, telemetry, Linktest.

Starts the bundled clean-pass scenario as a simulated equipment on an
ephemeral port, connects as host, and watches a few collection-event
reports arrive.

Run: python3 demos/02_hsms_loopback.py
"""

import time

from waferfa import hsms
from waferfa.equipsim import EquipmentServer, bundled_scenario_path, load_scenario, message_to_event
from waferfa.secs2 import render_sml

scenario = load_scenario(bundled_scenario_path("case5_litho_clean"))
server = EquipmentServer(scenario, port=0, seed=1, speed=20.0, max_ticks=5).start()
print(f"equipment {scenario.equipment_id} listening on port {server.port}")

received = []
host = hsms.connect_active(
    "127.0.0.1", server.port, on_message=lambda msg, sb: received.append(msg)
)
print(f"host phase after handshake: {host.phase.value}")

time.sleep(1.0)  # 5 simulated ticks at 20x speed
reports = [m for m in received if (m.stream, m.function) == (6, 11)]
print(f"received {len(reports)} S6F11 event reports; first one:")
print(render_sml(reports[0]))

event = message_to_event(reports[0], scenario.equipment_id, 0.0, scenario.channel_names())
print(f"\ndecoded back to a telemetry event: {event}")

host.send_linktest()
time.sleep(0.2)
print(f"linktest answered: {not host._state.pending}")

host.close()
server.stop()
