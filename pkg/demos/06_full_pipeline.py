"""End-to-end failure analysis of the chuck-pressure case.

Trains a quick classifier, replays the bundled chuck-pressure scenario into
the telemetry store, seeds one historical case, then runs the five-node
pipeline on a scratch wafer map and prints the report highlights.

Run: python3 demos/06_full_pipeline.py
"""

import numpy as np

from waferfa import mlp, synth
from waferfa.equipsim import bundled_scenario_path, ingest_scenario, load_scenario
from waferfa.features import extract_features
from waferfa.knowledge import KnowledgeBase
from waferfa.pipeline import Registry, new_state, report_to_markdown, run_pipeline
from waferfa.telemetry import TelemetryLog
from waferfa.vindex import DefectCase, VectorIndex

print("training a quick classifier (30 samples/class)...")
features, labels = [], []
for class_index, defect_class in enumerate(synth.CLASSES):
    for k in range(30):
        seed = synth.sample_seed(777, defect_class, k)
        features.append(extract_features(synth.render(defect_class, seed)))
        labels.append(class_index)
model, _ = mlp.train(np.asarray(features), np.asarray(labels), mlp.TrainConfig(epochs=30, seed=5))

print("replaying the chuck-pressure scenario into the telemetry store...")
scenario = load_scenario(bundled_scenario_path("case1_chuck_pressure"))
telemetry = TelemetryLog(None)
ingest_scenario(telemetry, scenario, ticks=3600, seed=0)

knowledge = KnowledgeBase.load_default()
index = VectorIndex()
index.upsert(
    DefectCase(
        case_id="hist-scratch",
        embedding=extract_features(synth.render("scratch", seed=1)),
        defect_class="scratch",
        severity="MAJOR",
        root_cause_narrative=f"{knowledge.label('mechanical_contact_chuck')}: precedent.",
        equipment_id="EQ-INSP-01",
        timestamp=1000.0,
    )
)

registry = Registry(model=model, index=index, telemetry=telemetry)
state = new_state(
    wafer_map=synth.render("scratch", 101),
    equipment_id=scenario.equipment_id,
    lot_id="LOT-2024-052",
    wafer_id="W07",
    timestamp=scenario.inspection_time,
)
result = run_pipeline(state, registry)

report = result["report"]
print(f"\nclassification: {report['classification']['defect_class']} "
      f"({report['classification']['confidence']:.2f})")
print(f"severity: {report['severity']['level']} "
      f"(yield impact {report['severity']['yield_impact_pct']:.1f}%)")
print("\ntop hypothesis:")
top = report["hypotheses"][0]
print(f"  {top['label']}  (score {top['score']:.2f})")
for evidence in top["evidence"]:
    print(f"    [{evidence['kind']}] {evidence['detail']}")
print("\nrecommendations:")
for parameter, action in report["recommendations"].items():
    print(f"  {parameter}: {action}")
print(f"\nnode latencies: { {k: f'{v*1e3:.1f} ms' for k, v in result['node_latencies'].items()} }")
