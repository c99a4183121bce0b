"""Application configuration: one YAML file plus WAFERFA_* env overrides.

Recognized keys (file and environment share names; env wins):
data_dir, model_path, index_path, telemetry_dir, report_dir, http_port,
hsms_port, weight_telemetry, weight_retrieval, weight_prior,
telemetry_window_seconds, sidecar_url. Paths default under data_dir.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .knowledge import KnowledgeBase
from .metrics import MetricsCollector
from .mlp import load_model
from .narrative import SidecarNarrative, TemplateNarrative
from .pipeline import BuiltinEmbedder, HypothesisWeights, Registry, SidecarEmbedder
from .telemetry import TelemetryLog
from .vindex import VectorIndex

ENV_PREFIX = "WAFERFA_"


class ConfigError(Exception):
    pass


@dataclass
class AppConfig:
    data_dir: Path = Path("waferfa-data")
    model_path: Path | None = None
    index_path: Path | None = None
    telemetry_dir: Path | None = None
    report_dir: Path | None = None
    http_port: int = 8000
    hsms_port: int = 5000
    weight_telemetry: float = 0.5
    weight_retrieval: float = 0.3
    weight_prior: float = 0.2
    telemetry_window_seconds: float = 7200.0
    sidecar_url: str | None = None

    def __post_init__(self) -> None:
        self.data_dir = Path(self.data_dir)
        if self.model_path is None:
            self.model_path = self.data_dir / "model.npz"
        if self.index_path is None:
            self.index_path = self.data_dir / "cases.vindex"
        if self.telemetry_dir is None:
            self.telemetry_dir = self.data_dir / "telemetry"
        if self.report_dir is None:
            self.report_dir = self.data_dir / "reports"
        self.model_path = Path(self.model_path)
        self.index_path = Path(self.index_path)
        self.telemetry_dir = Path(self.telemetry_dir)
        self.report_dir = Path(self.report_dir)


_FIELD_TYPES = {
    "data_dir": Path,
    "model_path": Path,
    "index_path": Path,
    "telemetry_dir": Path,
    "report_dir": Path,
    "http_port": int,
    "hsms_port": int,
    "weight_telemetry": float,
    "weight_retrieval": float,
    "weight_prior": float,
    "telemetry_window_seconds": float,
    "sidecar_url": str,
}


def load_config(path: str | Path | None = None, env: dict | None = None) -> AppConfig:
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        for key, value in doc.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            values[key] = value
    env = os.environ if env is None else env
    for key, caster in _FIELD_TYPES.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = env[env_key]
    kwargs = {}
    for key, raw in values.items():
        caster = _FIELD_TYPES[key]
        try:
            kwargs[key] = caster(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key}: cannot cast {raw!r}: {exc}") from exc
    return AppConfig(**kwargs)


def build_registry(config: AppConfig, metrics: MetricsCollector | None = None) -> Registry:
    """Assemble the shared resource registry from whatever stores exist."""
    knowledge = KnowledgeBase.load_default()
    model = load_model(config.model_path) if config.model_path.exists() else None
    index = VectorIndex(config.index_path)
    telemetry = TelemetryLog(config.telemetry_dir)
    if config.sidecar_url:
        embedder = SidecarEmbedder(config.sidecar_url)
        narrative = SidecarNarrative(config.sidecar_url)
    else:
        embedder = BuiltinEmbedder()
        narrative = TemplateNarrative(knowledge)
    return Registry(
        knowledge=knowledge,
        narrative=narrative,
        embedder=embedder,
        model=model,
        index=index,
        telemetry=telemetry,
        report_dir=config.report_dir,
        metrics=metrics if metrics is not None else MetricsCollector(),
        weights=HypothesisWeights(
            telemetry=config.weight_telemetry,
            retrieval=config.weight_retrieval,
            prior=config.weight_prior,
        ),
        telemetry_window=config.telemetry_window_seconds,
    )
