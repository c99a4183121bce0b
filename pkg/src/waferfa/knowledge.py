"""Mechanism knowledge base: class priors, telemetry links, recommendations.

Backed by two editable JSON data files shipped with the package
(data/correlation_table.json, data/recommendations.json); see those files
for the schema. Priors are normalized per class on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources


class KnowledgeError(Exception):
    pass


@dataclass(frozen=True)
class Mechanism:
    key: str
    label: str
    channels: tuple[str, ...]
    alarm_keywords: tuple[str, ...]
    summary: str


def _load_data_file(name: str) -> dict:
    with resources.files("waferfa.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


class KnowledgeBase:
    def __init__(self, correlation: dict, recommendations: dict) -> None:
        self.mechanisms: dict[str, Mechanism] = {}
        for key, spec in correlation["mechanisms"].items():
            self.mechanisms[key] = Mechanism(
                key=key,
                label=spec["label"],
                channels=tuple(spec.get("channels", ())),
                alarm_keywords=tuple(k.lower() for k in spec.get("alarm_keywords", ())),
                summary=spec["summary"],
            )
        self.class_priors: dict[str, dict[str, float]] = {}
        for defect_class, priors in correlation["class_priors"].items():
            unknown = set(priors) - set(self.mechanisms)
            if unknown:
                raise KnowledgeError(f"{defect_class} references unknown mechanisms {sorted(unknown)}")
            total = sum(priors.values())
            if total <= 0:
                raise KnowledgeError(f"{defect_class} has non-positive prior mass")
            self.class_priors[defect_class] = {k: v / total for k, v in priors.items()}
        self._recommendations = recommendations["by_class"]
        self._generic = [tuple(pair) for pair in recommendations["_generic"]]

    @classmethod
    def load_default(cls) -> "KnowledgeBase":
        return cls(_load_data_file("correlation_table.json"), _load_data_file("recommendations.json"))

    def priors_for(self, defect_class: str) -> dict[str, float]:
        return dict(self.class_priors.get(defect_class, {}))

    def label(self, mechanism_key: str) -> str:
        return self.mechanisms[mechanism_key].label

    def summary(self, mechanism_key: str) -> str:
        return self.mechanisms[mechanism_key].summary

    def top_prior_mechanism(self, defect_class: str) -> str | None:
        priors = self.class_priors.get(defect_class)
        if not priors:
            return None
        return max(priors.items(), key=lambda kv: (kv[1], kv[0]))[0]

    def mechanisms_for_channel(self, channel: str) -> list[str]:
        return sorted(key for key, m in self.mechanisms.items() if channel in m.channels)

    def mechanisms_for_alarm_text(self, text: str) -> list[str]:
        lowered = text.lower()
        return sorted(
            key
            for key, m in self.mechanisms.items()
            if any(keyword in lowered for keyword in m.alarm_keywords)
        )

    def mechanism_of_narrative(self, narrative: str, defect_class: str | None = None) -> str | None:
        """Recover the mechanism a stored case narrative refers to.

        Matches the mechanism label inside the narrative text (longest label
        first); falls back to the top prior mechanism of the case's class.
        """
        lowered = narrative.lower()
        for key in sorted(self.mechanisms, key=lambda k: -len(self.mechanisms[k].label)):
            if self.mechanisms[key].label.lower() in lowered:
                return key
        if defect_class is not None:
            return self.top_prior_mechanism(defect_class)
        return None

    def recommendations_for(self, defect_class: str | None, mechanism_key: str | None) -> list[tuple[str, str]]:
        by_class = self._recommendations.get(defect_class or "", None)
        if by_class is not None:
            entries = by_class.get(mechanism_key or "", None) or by_class.get("_default")
            if entries:
                return [tuple(pair) for pair in entries]
        return list(self._generic)
