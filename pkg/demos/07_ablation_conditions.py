"""Compare hypothesis evidence across the four input-modality conditions.

Same case analyzed four ways: full (telemetry + retrieval), telemetry only,
retrieval only, and description only. Shows how evidence kinds shrink as
modalities are disabled; no quality judging is applied.

Run: python3 demos/07_ablation_conditions.py
"""

import numpy as np

from waferfa import mlp, synth
from waferfa.equipsim import bundled_scenario_path, ingest_scenario, load_scenario
from waferfa.features import extract_features
from waferfa.knowledge import KnowledgeBase
from waferfa.pipeline import ABLATION_CONDITIONS, Registry, new_state, run_pipeline
from waferfa.telemetry import TelemetryLog
from waferfa.vindex import DefectCase, VectorIndex

features, labels = [], []
for class_index, defect_class in enumerate(synth.CLASSES):
    for k in range(20):
        seed = synth.sample_seed(777, defect_class, k)
        features.append(extract_features(synth.render(defect_class, seed)))
        labels.append(class_index)
model, _ = mlp.train(np.asarray(features), np.asarray(labels), mlp.TrainConfig(epochs=25, seed=5))

telemetry = TelemetryLog(None)
ingest_scenario(telemetry, load_scenario(bundled_scenario_path("case1_chuck_pressure")), 3600, 0)

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

for condition, (disable_telemetry, disable_retrieval) in ABLATION_CONDITIONS.items():
    state = new_state(
        wafer_map=synth.render("scratch", 101),
        equipment_id="EQ-INSP-01",
        lot_id="LOT-2024-052",
        wafer_id="W07",
        timestamp=7200.0,
    )
    result = run_pipeline(
        state, registry,
        disable_telemetry=disable_telemetry, disable_retrieval=disable_retrieval,
    )
    top = result["hypotheses"][0]
    kinds = sorted({e.kind for h in result["hypotheses"] for e in h.evidence})
    print(f"{condition:<14} top={top.label:<32} score={top.score:.2f} evidence kinds={kinds}")
