"""Historical-case retrieval: upsert defect cases, query by similarity.

Run: python3 demos/05_vector_retrieval.py
"""

import tempfile
from pathlib import Path

from waferfa import synth
from waferfa.features import extract_features
from waferfa.vindex import DefectCase, VectorIndex

with tempfile.TemporaryDirectory() as tmp:
    index = VectorIndex(Path(tmp) / "cases.vindex")

    # store one historical case per class
    for defect_class in synth.CLASSES:
        index.upsert(
            DefectCase(
                case_id=f"hist-{defect_class}",
                embedding=extract_features(synth.render(defect_class, seed=1)),
                defect_class=defect_class,
                severity="MAJOR",
                root_cause_narrative=f"precedent case for {defect_class}",
                equipment_id=synth.EQUIPMENT_BY_CLASS[defect_class],
                timestamp=0.0,
            )
        )
    print(f"index holds {len(index)} cases: {index.stats()['by_class']}")

    # a fresh scratch wafer should retrieve the scratch precedent first
    query = extract_features(synth.render("scratch", seed=42))
    print("\ntop-5 for an unseen scratch wafer:")
    for case, similarity in index.query_top_k(query, 5):
        print(f"  {similarity:6.3f}  {case.case_id}")

    # persistence: reopen from disk, same answers
    reopened = VectorIndex(Path(tmp) / "cases.vindex")
    same = [c.case_id for c, _ in reopened.query_top_k(query, 5)]
    print(f"\nreopened index agrees: {same[0]}")
