"""Shared fixtures: a quickly trained classifier and a seeded case index."""

from __future__ import annotations

import numpy as np
import pytest

from waferfa import mlp, synth
from waferfa.features import extract_features
from waferfa.knowledge import KnowledgeBase
from waferfa.synth import CLASSES
from waferfa.vindex import DefectCase, VectorIndex


@pytest.fixture(scope="session")
def trained_model():
    """Small but competent model: 30 samples per class, 30 epochs."""
    features, labels = [], []
    for class_index, defect_class in enumerate(CLASSES):
        for k in range(30):
            seed = synth.sample_seed(777, defect_class, k)
            features.append(extract_features(synth.render(defect_class, seed)))
            labels.append(class_index)
    model, _ = mlp.train(
        np.asarray(features),
        np.asarray(labels),
        mlp.TrainConfig(epochs=30, seed=5),
    )
    return model


@pytest.fixture()
def seeded_index():
    """One historical case per class, narrative naming its top mechanism."""
    knowledge = KnowledgeBase.load_default()
    index = VectorIndex()
    for defect_class in CLASSES:
        mechanism = knowledge.top_prior_mechanism(defect_class)
        seed = synth.sample_seed(888, defect_class, 0)
        index.upsert(
            DefectCase(
                case_id=f"hist-{defect_class}",
                embedding=extract_features(synth.render(defect_class, seed)),
                defect_class=defect_class,
                severity="MAJOR" if defect_class != "no_defect" else "NONE",
                root_cause_narrative=(
                    f"{knowledge.label(mechanism)}: historical precedent recorded for "
                    f"{defect_class} on this equipment family."
                ),
                equipment_id=synth.EQUIPMENT_BY_CLASS[defect_class],
                timestamp=1000.0,
            )
        )
    return index
