"""Five-node failure-analysis pipeline over a shared typed state.

Nodes run in a fixed order (defect_describer, root_cause_analyzer,
severity_classifier, recipe_advisor, report_generator), each a function of
(state, registry) that returns a superset state: prior keys are never
removed or overwritten, the errors list only grows, and any node exception
is caught by the runner and recorded rather than aborting the run. Every
run therefore ends with a report in the state, however degraded.

State keys
  inputs:   wafer_map | map_path, modality, equipment_id, lot_id, wafer_id,
            timestamp, inspection_time
  computed: embedding, defect_class, confidence, class_distribution,
            spatial_stats, defect_description, telemetry_summary,
            retrieved_cases, retrieval_note, hypotheses, severity,
            yield_impact_pct, recommendations, report
  always:   errors (append-only), node_latencies

Hypothesis scoring: score(m) = w_t*T(m) + w_r*R(m) + w_p*P(m) with default
weights (0.5, 0.3, 0.2). T(m) is the best recency factor (linear decay over
the lookback window) of any alarm or PV anomaly linked to mechanism m; R(m)
is the mean cosine similarity of retrieved cases attributed to m; P(m) is
the class-conditional prior. The top 3 candidates are kept, each carrying
at least one evidence item.
"""

from __future__ import annotations

import io
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .features import extract_features, spatial_stats
from .knowledge import KnowledgeBase
from .metrics import MetricsCollector
from .mlp import MlpModel, predict
from .narrative import (
    SECTION_DESCRIPTION,
    SECTION_HYPOTHESIS,
    NarrativeBackend,
    TemplateNarrative,
)
from .telemetry import AlarmEvent, EventReport, PvAnomaly, StateTransition, TelemetryLog
from .vindex import DefectCase, VectorIndex
from .wafermap import WaferMap

FAState = dict[str, Any]

NODE_NAMES = (
    "defect_describer",
    "root_cause_analyzer",
    "severity_classifier",
    "recipe_advisor",
    "report_generator",
)

REPORT_FORMAT_VERSION = 1
DEFAULT_TELEMETRY_WINDOW = 7200.0  # 2 h lookback
TOP_K_CASES = 5
TOP_HYPOTHESES = 3
# evidence gathering scans ~3600 samples per channel, so the 3.0 detector
# default would flag pure noise almost surely; 4.5 keeps the family-wise
# false-positive rate per channel near 2% while real excursions score z >> 5
EVIDENCE_ANOMALY_THRESHOLD = 4.5

# condition name -> (disable_telemetry, disable_retrieval)
ABLATION_CONDITIONS = {
    "full": (False, False),
    "no_retrieval": (False, True),
    "no_telemetry": (True, False),
    "baseline": (True, True),
}

EVIDENCE_TELEMETRY = "telemetry"
EVIDENCE_RETRIEVAL = "retrieval"
EVIDENCE_CLASS_PRIOR = "class_prior"

SEVERITY_NONE_ACTION = "No corrective action required; continue standard monitoring"
GENERIC_MONITORING_ACTION = "monitor equipment and re-inspect next lot"


@dataclass(frozen=True)
class Evidence:
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


@dataclass(frozen=True)
class RootCauseHypothesis:
    mechanism: str
    label: str
    narrative: str
    score: float
    evidence: tuple[Evidence, ...]

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "label": self.label,
            "narrative": self.narrative,
            "score": self.score,
            "evidence": [e.to_dict() for e in self.evidence],
        }


@dataclass(frozen=True)
class HypothesisWeights:
    telemetry: float = 0.5
    retrieval: float = 0.3
    prior: float = 0.2


class EmbedBackend(Protocol):
    def embed(self, wmap: WaferMap) -> np.ndarray: ...


class BuiltinEmbedder:
    """The 56-dim feature vector doubles as the retrieval embedding."""

    name = "builtin-features"

    def embed(self, wmap: WaferMap) -> np.ndarray:
        return extract_features(wmap)


class SidecarEmbedder:
    """Posts the rendered PNG to an external sidecar's /embed endpoint."""

    def __init__(self, base_url: str, timeout: float = 5.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.name = f"sidecar:{self.base_url}"

    def embed(self, wmap: WaferMap) -> np.ndarray:
        import httpx

        buffer = io.BytesIO()
        from PIL import Image

        pixels = np.zeros_like(wmap.grid)
        pixels[wmap.grid == 1] = 128
        pixels[wmap.grid == 2] = 255
        Image.fromarray(pixels, mode="L").save(buffer, format="PNG")
        response = httpx.post(
            f"{self.base_url}/embed",
            content=buffer.getvalue(),
            headers={"content-type": "image/png"},
            timeout=self.timeout,
        )
        response.raise_for_status()
        payload = response.json()
        return np.asarray(payload["vector"], dtype=np.float64)


@dataclass
class Registry:
    """Shared read-only handles, initialized once before pipeline runs."""

    knowledge: KnowledgeBase = field(default_factory=KnowledgeBase.load_default)
    narrative: NarrativeBackend | None = None
    embedder: EmbedBackend = field(default_factory=BuiltinEmbedder)
    model: MlpModel | None = None
    index: VectorIndex | None = None
    telemetry: TelemetryLog | None = None
    report_dir: Path | None = None
    metrics: MetricsCollector | None = None
    weights: HypothesisWeights = HypothesisWeights()
    telemetry_window: float = DEFAULT_TELEMETRY_WINDOW

    def __post_init__(self) -> None:
        if self.narrative is None:
            self.narrative = TemplateNarrative(self.knowledge)
        self._fallback_narrative = TemplateNarrative(self.knowledge)


def new_state(
    *,
    wafer_map: WaferMap | None = None,
    map_path: str | Path | None = None,
    equipment_id: str,
    lot_id: str,
    wafer_id: str,
    timestamp: float,
    inspection_time: float | None = None,
    modality: str = "wafer_map",
) -> FAState:
    if wafer_map is None and map_path is None:
        raise ValueError("either wafer_map or map_path is required")
    state: FAState = {
        "modality": modality,
        "equipment_id": equipment_id,
        "lot_id": lot_id,
        "wafer_id": wafer_id,
        "timestamp": float(timestamp),
        "inspection_time": float(inspection_time if inspection_time is not None else timestamp),
        "errors": [],
        "node_latencies": {},
    }
    if wafer_map is not None:
        state["wafer_map"] = wafer_map
    if map_path is not None:
        state["map_path"] = str(map_path)
    return state


def _with_error(state: FAState, node: str, message: str) -> FAState:
    entry = {"node": node, "message": message, "timestamp": time.time()}
    return {**state, "errors": state.get("errors", []) + [entry]}


def _narrate(registry: Registry, state: FAState, node: str, section: str, context: dict) -> tuple[str, FAState]:
    try:
        return registry.narrative.narrate(section, context), state
    except Exception as exc:
        state = _with_error(state, node, f"narrative backend failed ({exc}); using template fallback")
        return registry._fallback_narrative.narrate(section, context), state


# --- node 1: defect describer -----------------------------------------------------

def defect_describer(state: FAState, registry: Registry) -> FAState:
    node = "defect_describer"
    wmap = state.get("wafer_map")
    if wmap is None:
        try:
            wmap = WaferMap.load_png(state["map_path"])
        except Exception as exc:
            return _with_error(state, node, f"unreadable image {state.get('map_path')!r}: {exc}")
    new = {**state, "wafer_map": wmap}

    try:
        embedding = registry.embedder.embed(wmap)
    except Exception as exc:
        new = _with_error(new, node, f"embedding backend failed ({exc}); using built-in features")
        embedding = extract_features(wmap)
    new["embedding"] = np.asarray(embedding, dtype=np.float64)

    stats = spatial_stats(wmap)
    new["spatial_stats"] = stats

    if registry.model is not None:
        defect_class, confidence, distribution = predict(registry.model, extract_features(wmap))
        new["defect_class"] = defect_class
        new["confidence"] = confidence
        new["class_distribution"] = {
            name: float(p) for name, p in zip(registry.model.class_names, distribution)
        }
    else:
        new = _with_error(new, node, "classifier model unavailable; no class assigned")

    context = {
        "defect_class": new.get("defect_class"),
        "spatial_stats": stats,
        "confidence": new.get("confidence"),
        "equipment_id": state.get("equipment_id"),
    }
    if new.get("defect_class"):
        description, new = _narrate(registry, new, node, SECTION_DESCRIPTION, context)
        new["defect_description"] = description
    return new


# --- node 2: root cause analyzer ----------------------------------------------------

def _recency(event_time: float, inspection_time: float, window: float) -> float:
    age = inspection_time - event_time
    return float(np.clip(1.0 - age / window, 0.0, 1.0))


def _telemetry_evidence(
    registry: Registry, state: FAState, window: float
) -> tuple[dict[str, tuple[float, list[str]]], dict, FAState, bool]:
    """Per-mechanism telemetry scores plus a serializable summary."""
    node = "root_cause_analyzer"
    inspection_time = state["inspection_time"]
    start = max(0.0, inspection_time - window)
    equipment_id = state["equipment_id"]
    store = registry.telemetry
    if store is None:
        return {}, {}, _with_error(state, node, "telemetry store unavailable"), False
    try:
        events = store.query_window(equipment_id, start, inspection_time)
        alarms = [e for e in events if isinstance(e, AlarmEvent)]
        transitions = [e for e in events if isinstance(e, StateTransition)]
        anomalies: list[PvAnomaly] = []
        for channel in store.channels(equipment_id, start, inspection_time):
            anomalies.extend(
                store.detect_anomalies(
                    equipment_id, channel, start, inspection_time,
                    threshold_z=EVIDENCE_ANOMALY_THRESHOLD,
                )
            )
    except Exception as exc:
        return {}, {}, _with_error(state, node, f"telemetry query failed: {exc}"), False

    scores: dict[str, tuple[float, list[str]]] = {}

    def bump(mechanism: str, recency: float, detail: str) -> None:
        current = scores.get(mechanism, (0.0, []))
        details = current[1] + [detail]
        scores[mechanism] = (max(current[0], recency), details)

    for alarm in alarms:
        if not alarm.is_set:
            continue
        recency = _recency(alarm.timestamp, inspection_time, window)
        age_min = (inspection_time - alarm.timestamp) / 60.0
        detail = (
            f"alarm {alarm.alarm_id} '{alarm.text}' logged {age_min:.0f} min before inspection"
        )
        for mechanism in registry.knowledge.mechanisms_for_alarm_text(alarm.text):
            bump(mechanism, recency, detail)
    for anomaly in anomalies:
        recency = _recency(anomaly.window[1], inspection_time, window)
        age_min = (inspection_time - anomaly.window[1]) / 60.0
        detail = (
            f"{anomaly.channel} {anomaly.kind} anomaly (z={anomaly.z_score:.1f}, "
            f"magnitude={anomaly.magnitude:+.3g}) ending {age_min:.0f} min before inspection"
        )
        for mechanism in registry.knowledge.mechanisms_for_channel(anomaly.channel):
            bump(mechanism, recency, detail)

    summary = {
        "window": [start, inspection_time],
        "event_count": len(events),
        "alarms": [
            {
                "timestamp": a.timestamp,
                "alarm_id": a.alarm_id,
                "set": a.is_set,
                "text": a.text,
            }
            for a in alarms
        ],
        "state_transitions": [
            {"timestamp": t.timestamp, "from": t.from_state, "to": t.to_state}
            for t in transitions
        ],
        "anomalies": [a.to_dict() for a in anomalies],
    }
    return scores, summary, state, True


def _retrieval_evidence(
    registry: Registry, state: FAState
) -> tuple[dict[str, tuple[float, list[str]]], list, str | None, FAState, bool]:
    node = "root_cause_analyzer"
    index = registry.index
    if index is None:
        return {}, [], None, _with_error(state, node, "vector index unavailable"), False
    embedding = state.get("embedding")
    if embedding is None:
        return {}, [], None, _with_error(state, node, "no embedding available for retrieval"), False
    try:
        results = index.query_top_k(embedding, TOP_K_CASES)
    except Exception as exc:
        return {}, [], None, _with_error(state, node, f"retrieval failed: {exc}"), False
    note = None
    if len(results) < TOP_K_CASES:
        note = f"index holds {len(results)} case(s); fewer than the requested {TOP_K_CASES}"
    per_mechanism: dict[str, list[tuple[float, str]]] = {}
    for case, similarity in results:
        mechanism = registry.knowledge.mechanism_of_narrative(
            case.root_cause_narrative, case.defect_class
        )
        if mechanism is None:
            continue
        detail = f"case {case.case_id} (class {case.defect_class}, similarity {similarity:.3f})"
        per_mechanism.setdefault(mechanism, []).append((similarity, detail))
    scores = {
        mechanism: (float(np.mean([s for s, _ in items])), [d for _, d in items])
        for mechanism, items in per_mechanism.items()
    }
    return scores, results, note, state, True


def root_cause_analyzer(
    state: FAState,
    registry: Registry,
    *,
    window: float | None = None,
    disable_telemetry: bool = False,
    disable_retrieval: bool = False,
) -> FAState:
    node = "root_cause_analyzer"
    window = window if window is not None else registry.telemetry_window
    new = dict(state)
    weights = registry.weights

    defect_class = new.get("defect_class")
    if not defect_class:
        new = _with_error(new, node, "no defect class available; emitting Unknown hypothesis")
        unknown = RootCauseHypothesis(
            mechanism="unknown",
            label="unknown mechanism",
            narrative="Classification unavailable; no mechanism can be ranked with confidence.",
            score=0.1,
            evidence=(Evidence(EVIDENCE_CLASS_PRIOR, "classification unavailable"),),
        )
        new["hypotheses"] = [unknown]
        return new

    telemetry_scores: dict[str, tuple[float, list[str]]] = {}
    if not disable_telemetry:
        telemetry_scores, summary, new, available = _telemetry_evidence(registry, new, window)
        if available:
            new["telemetry_summary"] = summary

    retrieval_scores: dict[str, tuple[float, list[str]]] = {}
    if not disable_retrieval:
        retrieval_scores, results, note, new, available = _retrieval_evidence(registry, new)
        if available:
            new["retrieved_cases"] = [
                {
                    "case_id": case.case_id,
                    "defect_class": case.defect_class,
                    "severity": case.severity,
                    "equipment_id": case.equipment_id,
                    "similarity": float(similarity),
                    "root_cause_narrative": case.root_cause_narrative,
                }
                for case, similarity in results
            ]
            if note:
                new["retrieval_note"] = note

    priors = registry.knowledge.priors_for(defect_class)
    candidates = sorted(set(priors) | set(telemetry_scores))
    hypotheses = []
    for mechanism in candidates:
        t_score, t_details = telemetry_scores.get(mechanism, (0.0, []))
        r_score, r_details = retrieval_scores.get(mechanism, (0.0, []))
        p_score = priors.get(mechanism, 0.0)
        score = weights.telemetry * t_score + weights.retrieval * r_score + weights.prior * p_score
        evidence = []
        evidence.extend(Evidence(EVIDENCE_TELEMETRY, d) for d in t_details)
        evidence.extend(Evidence(EVIDENCE_RETRIEVAL, d) for d in r_details)
        if p_score > 0.0:
            evidence.append(
                Evidence(EVIDENCE_CLASS_PRIOR, f"prior {p_score:.2f} for class {defect_class}")
            )
        if not evidence:
            continue
        label = registry.knowledge.label(mechanism)
        summary_text = registry.knowledge.summary(mechanism)
        evidence_summary = "; ".join(e.detail for e in evidence[:3])
        narrative, new = _narrate(
            registry,
            new,
            node,
            SECTION_HYPOTHESIS,
            {
                "mechanism_label": label,
                "mechanism_summary": summary_text,
                "evidence_summary": evidence_summary,
                "defect_class": defect_class,
            },
        )
        hypotheses.append(
            RootCauseHypothesis(
                mechanism=mechanism,
                label=label,
                narrative=narrative,
                score=float(min(score, 1.0)),
                evidence=tuple(evidence),
            )
        )
    hypotheses.sort(key=lambda h: (-h.score, h.mechanism))
    new["hypotheses"] = hypotheses[:TOP_HYPOTHESES]
    return new


# --- node 3: severity classifier -----------------------------------------------------

def severity_classifier(state: FAState, registry: Registry | None = None) -> FAState:
    node = "severity_classifier"
    stats = state.get("spatial_stats")
    if stats is None:
        new = _with_error(state, node, "spatial stats unavailable; severity Unknown")
        return {**new, "severity": "UNKNOWN"}
    density = stats.defect_density
    impact = 100.0 * density
    defect_class = state.get("defect_class")
    if defect_class == "no_defect" and impact < 2.0:
        severity = "NONE"
    elif impact > 25.0:
        severity = "CRITICAL"
    elif impact >= 5.0:  # 5.0 and 25.0 both land in MAJOR
        severity = "MAJOR"
    else:
        severity = "MINOR"
    return {**state, "severity": severity, "yield_impact_pct": float(impact)}


# --- node 4: recipe advisor ------------------------------------------------------------

def recipe_advisor(state: FAState, registry: Registry) -> FAState:
    node = "recipe_advisor"
    new = dict(state)
    if new.get("severity") == "NONE":
        new["recommendations"] = {"action": SEVERITY_NONE_ACTION}
        return new
    hypotheses = new.get("hypotheses")
    if not hypotheses:
        new = _with_error(new, node, "no hypotheses available; emitting generic recommendation")
        new["recommendations"] = {"action": GENERIC_MONITORING_ACTION}
        return new
    top = hypotheses[0]
    entries = registry.knowledge.recommendations_for(new.get("defect_class"), top.mechanism)
    new["recommendations"] = {parameter: action for parameter, action in entries}
    return new


# --- node 5: report generator ------------------------------------------------------------

def _sanitize_id(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "-", text)


def report_id_for(state: FAState) -> str:
    return _sanitize_id(
        f"{state.get('equipment_id', 'unknown')}-{state.get('lot_id', 'unknown')}"
        f"-{state.get('wafer_id', 'unknown')}-{int(state.get('timestamp', 0))}"
    )


def _unavailable(value, formatter=lambda v: v):
    return "UNAVAILABLE" if value is None else formatter(value)


def build_report(state: FAState) -> dict:
    stats = state.get("spatial_stats")
    hypotheses = state.get("hypotheses")
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "report_id": report_id_for(state),
        "header": {
            "equipment_id": state.get("equipment_id", "UNAVAILABLE"),
            "lot_id": state.get("lot_id", "UNAVAILABLE"),
            "wafer_id": state.get("wafer_id", "UNAVAILABLE"),
            "timestamp": state.get("timestamp", 0.0),
            "inspection_time": state.get("inspection_time", 0.0),
            "modality": state.get("modality", "wafer_map"),
        },
        "classification": {
            "defect_class": _unavailable(state.get("defect_class")),
            "confidence": _unavailable(state.get("confidence")),
            "class_distribution": _unavailable(state.get("class_distribution")),
        },
        "description": _unavailable(state.get("defect_description")),
        "spatial_stats": _unavailable(stats, lambda s: s.to_dict()),
        "hypotheses": _unavailable(hypotheses, lambda hs: [h.to_dict() for h in hs]),
        "severity": {
            "level": _unavailable(state.get("severity")),
            "yield_impact_pct": _unavailable(state.get("yield_impact_pct")),
        },
        "recommendations": _unavailable(state.get("recommendations")),
        "telemetry": _unavailable(state.get("telemetry_summary")),
        "retrieval": {
            "requested": TOP_K_CASES,
            "cases": _unavailable(state.get("retrieved_cases")),
            "note": state.get("retrieval_note", ""),
        },
        "errors": list(state.get("errors", [])),
        "node_latencies": dict(state.get("node_latencies", {})),
    }
    return report


def _markdown_value(value, indent: int = 0) -> list[str]:
    pad = "  " * indent
    if isinstance(value, dict):
        lines = []
        for key, sub in value.items():
            if isinstance(sub, (dict, list)):
                lines.append(f"{pad}- **{key}**:")
                lines.extend(_markdown_value(sub, indent + 1))
            else:
                lines.append(f"{pad}- **{key}**: {sub}")
        return lines
    if isinstance(value, list):
        lines = []
        for item in value:
            if isinstance(item, (dict, list)):
                lines.extend(_markdown_value(item, indent + 1))
                lines.append("")
            else:
                lines.append(f"{pad}- {item}")
        return [line for line in lines if line != "" or True]
    return [f"{pad}{value}"]


_SECTION_ORDER = (
    "header",
    "classification",
    "description",
    "spatial_stats",
    "hypotheses",
    "severity",
    "recommendations",
    "telemetry",
    "retrieval",
    "errors",
    "node_latencies",
)


def report_to_markdown(report: dict) -> str:
    # section headers carry the literal JSON field names so the rendering
    # provably mirrors the JSON document
    lines = [f"# FA Report {report['report_id']}", ""]
    lines.append(f"- **format_version**: {report['format_version']}")
    lines.append(f"- **report_id**: {report['report_id']}")
    lines.append("")
    for key in _SECTION_ORDER:
        lines.append(f"## {key}")
        value = report.get(key)
        if key == "errors" and not value:
            lines.append("none")
        elif isinstance(value, (dict, list)):
            lines.extend(_markdown_value(value))
        else:
            lines.append(str(value))
        lines.append("")
    return "\n".join(lines)


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default)


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def report_generator(state: FAState, registry: Registry) -> FAState:
    node = "report_generator"
    new = dict(state)
    report = build_report(new)

    if registry.report_dir is not None:
        try:
            registry.report_dir.mkdir(parents=True, exist_ok=True)
            json_path = registry.report_dir / f"{report['report_id']}.json"
            md_path = registry.report_dir / f"{report['report_id']}.md"
            json_path.write_text(report_to_json(report), encoding="utf-8")
            md_path.write_text(report_to_markdown(report), encoding="utf-8")
            report["json_path"] = str(json_path)
            report["markdown_path"] = str(md_path)
        except OSError as exc:
            new = _with_error(new, node, f"report write failed: {exc}")
            report["errors"] = list(new["errors"])

    # self-improvement: the finished case joins the retrieval corpus
    if registry.index is not None and new.get("embedding") is not None and new.get("defect_class"):
        hypotheses = new.get("hypotheses") or []
        narrative = hypotheses[0].narrative if hypotheses else "no hypothesis recorded"
        case = DefectCase(
            case_id=report["report_id"],
            embedding=new["embedding"],
            defect_class=new["defect_class"],
            severity=new.get("severity", "UNKNOWN"),
            root_cause_narrative=narrative,
            equipment_id=new.get("equipment_id", ""),
            timestamp=new.get("timestamp", 0.0),
        )
        try:
            registry.index.upsert(case)
        except Exception as exc:
            new = _with_error(new, node, f"knowledge-base upsert failed: {exc}")
            report["errors"] = list(new["errors"])

    new["report"] = report
    return new


# --- runner ---------------------------------------------------------------------------

def run_pipeline(
    initial: FAState,
    registry: Registry,
    *,
    disable_telemetry: bool = False,
    disable_retrieval: bool = False,
) -> FAState:
    """Run all five nodes; never raises, always ends with a report."""
    state = dict(initial)
    state.setdefault("errors", [])
    state.setdefault("node_latencies", {})

    def run_root_cause(s: FAState, r: Registry) -> FAState:
        return root_cause_analyzer(
            s, r, disable_telemetry=disable_telemetry, disable_retrieval=disable_retrieval
        )

    nodes = (
        ("defect_describer", defect_describer),
        ("root_cause_analyzer", run_root_cause),
        ("severity_classifier", severity_classifier),
        ("recipe_advisor", recipe_advisor),
        ("report_generator", report_generator),
    )
    pipeline_start = time.perf_counter()
    for name, fn in nodes:
        started = time.perf_counter()
        try:
            state = fn(state, registry)
        except Exception as exc:  # graceful degradation: record and continue
            state = _with_error(state, name, f"node raised {type(exc).__name__}: {exc}")
        elapsed = time.perf_counter() - started
        state["node_latencies"] = {**state.get("node_latencies", {}), name: elapsed}
        if registry.metrics is not None:
            registry.metrics.observe_node(name, elapsed)
    if registry.metrics is not None:
        registry.metrics.observe_pipeline(time.perf_counter() - pipeline_start)
    if "report" not in state:
        state = dict(state)
        state["report"] = build_report(state)
    return state
