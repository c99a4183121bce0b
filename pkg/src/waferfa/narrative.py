"""Deterministic narrative templates for descriptions, hypotheses, reports.

Every defect description follows the same four-part order: observed pattern,
spatial characteristics, probable mechanism, recommended action. The same
engine serves the dataset writer and the report pipeline, so generated
annotations and live reports share one voice.

A narrative backend is anything with ``narrate(section, context) -> str``;
this module provides the built-in template backend and an HTTP client
backend that forwards to an external sidecar exposing the same contract.
"""

from __future__ import annotations

from typing import Protocol

from .knowledge import KnowledgeBase

SECTION_DESCRIPTION = "defect_description"
SECTION_HYPOTHESIS = "hypothesis"

REQUIRED_FIELDS = {
    SECTION_DESCRIPTION: ("defect_class",),
    SECTION_HYPOTHESIS: ("mechanism_label", "mechanism_summary"),
}

_PATTERN_PHRASES = {
    "scratch": "thin linear band of failing die crossing the wafer, characteristic of a surface scratch",
    "particle_contamination": "scatter of failing die with spatially uneven intensity, characteristic of particle contamination",
    "edge_crack": "localized arc of failing die at the extreme wafer edge, characteristic of an edge crack",
    "center_cluster": "dense cluster of failing die concentrated at the wafer center",
    "local_cluster": "compact off-center cluster of failing die",
    "ring_pattern": "annular band of failing die at intermediate radius",
    "random_defects": "spatially uniform scatter of isolated failing die",
    "near_full_wafer": "wafer-wide failure covering most of the die population",
    "no_defect": "uniform yield map with no recognizable defect pattern",
}


class MissingContextError(ValueError):
    def __init__(self, section: str, fields: list[str]) -> None:
        self.section = section
        self.fields = fields
        super().__init__(f"section {section!r} missing context fields: {', '.join(fields)}")


class NarrativeBackend(Protocol):
    def narrate(self, section: str, context: dict) -> str: ...


def check_context(section: str, context: dict) -> None:
    required = REQUIRED_FIELDS.get(section)
    if required is None:
        raise MissingContextError(section, ["<unknown section>"])
    missing = [f for f in required if context.get(f) in (None, "")]
    if missing:
        raise MissingContextError(section, missing)


class TemplateNarrative:
    """Built-in deterministic template engine."""

    def __init__(self, knowledge: KnowledgeBase | None = None) -> None:
        self._knowledge = knowledge or KnowledgeBase.load_default()

    def narrate(self, section: str, context: dict) -> str:
        check_context(section, context)
        if section == SECTION_DESCRIPTION:
            return self._describe(context)
        return self._hypothesis(context)

    def _describe(self, context: dict) -> str:
        defect_class = context["defect_class"]
        stats = context.get("spatial_stats") or {}
        if hasattr(stats, "to_dict"):
            stats = stats.to_dict()
        confidence = context.get("confidence")

        pattern = _PATTERN_PHRASES.get(defect_class, f"defect pattern of class {defect_class}")
        observed = f"Wafer map inspection shows a {pattern}"
        if confidence is not None:
            observed += f" (classifier confidence {confidence:.2f})"
        observed += "."

        density = stats.get("defect_density")
        if defect_class == "no_defect":
            if density is not None:
                spatial = (
                    f"Good die fraction is {1.0 - density:.1%}; failing die are isolated and "
                    "show no spatial structure."
                )
            else:
                spatial = "Failing die are isolated and show no spatial structure."
        elif density is not None:
            spatial = f"Failing die cover {density:.1%} of the wafer"
            largest = stats.get("largest_component_fraction")
            if largest is not None:
                spatial += f", with {largest:.0%} of them in the largest connected cluster"
            extras = []
            if defect_class == "scratch" and stats.get("linearity") is not None:
                extras.append(f"aligned along a single axis (linearity {stats['linearity']:.2f})")
            if defect_class == "edge_crack" and stats.get("edge_band_density") is not None:
                extras.append(f"confined to the edge band ({stats['edge_band_density']:.1%} of edge die failing)")
            spatial += ("; " + "; ".join(extras) if extras else "") + "."
        else:
            spatial = "Spatial statistics are unavailable for this inspection."

        mechanism_key = context.get("mechanism") or self._knowledge.top_prior_mechanism(defect_class)
        if mechanism_key is not None:
            label = self._knowledge.label(mechanism_key)
            summary = self._knowledge.summary(mechanism_key)
            mechanism = f"The signature is most consistent with {label}: {summary}."
        else:
            mechanism = "No candidate physical mechanism is on record for this class."

        recs = self._knowledge.recommendations_for(defect_class, mechanism_key)
        parameter, action = recs[0]
        if parameter == "action":
            recommended = f"Recommended action: {action}."
        else:
            recommended = f"Recommended action: {parameter} -> {action}."

        return " ".join([observed, spatial, mechanism, recommended])

    def _hypothesis(self, context: dict) -> str:
        label = context["mechanism_label"]
        summary = context["mechanism_summary"]
        text = f"{label}: {summary}."
        evidence = context.get("evidence_summary")
        if evidence:
            text += f" Supporting evidence: {evidence}."
        return text


class SidecarNarrative:
    """Forwards narration to an external HTTP sidecar's /narrate endpoint.

    Raises on any transport or protocol failure; callers decide whether to
    fall back to the template backend.
    """

    def __init__(self, base_url: str, timeout: float = 5.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def narrate(self, section: str, context: dict) -> str:
        import httpx

        response = httpx.post(
            f"{self.base_url}/narrate",
            json={"section": section, "context": _jsonable(context)},
            timeout=self.timeout,
        )
        response.raise_for_status()
        payload = response.json()
        return payload["text"]


def _jsonable(context: dict) -> dict:
    out = {}
    for key, value in context.items():
        if hasattr(value, "to_dict"):
            out[key] = value.to_dict()
        else:
            out[key] = value
    return out
