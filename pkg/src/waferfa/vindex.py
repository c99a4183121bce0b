"""Exact cosine-similarity k-NN store over historical defect cases.

Search is brute force on purpose: at desk scale (<= 1e5 cases) an exact scan
is fast, and every ranked result stays oracle-checkable. Zero-norm vectors
(query or stored) are defined to have similarity 0.0. Ties break by case_id
ascending. Queries across mismatched embedding dimensions also score 0.0,
so an index can survive an embedding-backend switch without corruption.

Persistence: a single append-only log file. Line 1 is a JSON header
{"format": "waferfa-vindex", "version": 1}; each subsequent line is one
upsert record carrying the full case with the embedding as a JSON array of
64-bit floats. Re-upserting a case_id appends a new record that shadows the
old one on replay; compact() rewrites the file with only live records.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_NAME = "waferfa-vindex"
FORMAT_VERSION = 1
DEFAULT_TOP_K = 5


class VectorIndexError(Exception):
    pass


@dataclass(frozen=True)
class DefectCase:
    case_id: str
    embedding: np.ndarray = field(compare=False)
    defect_class: str
    severity: str
    root_cause_narrative: str
    equipment_id: str
    timestamp: float

    def __post_init__(self) -> None:
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise VectorIndexError(f"embedding must be 1-D, got shape {emb.shape}")
        if not np.isfinite(emb).all():
            raise VectorIndexError(f"case {self.case_id}: embedding has non-finite values")
        object.__setattr__(self, "embedding", emb)

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "embedding": self.embedding.tolist(),
            "defect_class": self.defect_class,
            "severity": self.severity,
            "root_cause_narrative": self.root_cause_narrative,
            "equipment_id": self.equipment_id,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, record: dict) -> "DefectCase":
        return cls(
            case_id=record["case_id"],
            embedding=np.asarray(record["embedding"], dtype=np.float64),
            defect_class=record["defect_class"],
            severity=record["severity"],
            root_cause_narrative=record["root_cause_narrative"],
            equipment_id=record["equipment_id"],
            timestamp=float(record["timestamp"]),
        )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return 0.0
    norm = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b) / norm)


class VectorIndex:
    """Many readers, serialized writers; queries see a consistent snapshot."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._lock = threading.RLock()
        self._cases: dict[str, DefectCase] = {}
        if self.path is not None and self.path.exists():
            self._replay()
        elif self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION}) + "\n")

    def _replay(self) -> None:
        with open(self.path, "r", encoding="utf-8") as fh:
            header_line = fh.readline()
            try:
                header = json.loads(header_line)
            except json.JSONDecodeError as exc:
                raise VectorIndexError(f"{self.path}: bad header: {exc}") from exc
            if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
                raise VectorIndexError(f"{self.path}: unsupported header {header}")
            for line_no, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                try:
                    case = DefectCase.from_record(json.loads(line))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise VectorIndexError(f"{self.path}:{line_no}: bad record: {exc}") from exc
                self._cases[case.case_id] = case

    def __len__(self) -> int:
        with self._lock:
            return len(self._cases)

    def upsert(self, case: DefectCase) -> None:
        with self._lock:
            self._cases[case.case_id] = case
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(case.to_record()) + "\n")
                    fh.flush()

    def get(self, case_id: str) -> DefectCase | None:
        with self._lock:
            return self._cases.get(case_id)

    def cases(self) -> list[DefectCase]:
        with self._lock:
            return sorted(self._cases.values(), key=lambda c: c.case_id)

    def query_top_k(self, embedding: np.ndarray, k: int = DEFAULT_TOP_K) -> list[tuple[DefectCase, float]]:
        """Exactly min(k, size) cases by descending cosine similarity."""
        if k < 1:
            raise VectorIndexError(f"k must be >= 1, got {k}")
        query = np.asarray(embedding, dtype=np.float64)
        with self._lock:
            snapshot = list(self._cases.values())
        scored = [(case, cosine_similarity(query, case.embedding)) for case in snapshot]
        scored.sort(key=lambda pair: (-pair[1], pair[0].case_id))
        return scored[:k]

    def compact(self) -> None:
        if self.path is None:
            return
        with self._lock:
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION}) + "\n")
                for case in self.cases():
                    fh.write(json.dumps(case.to_record()) + "\n")
            tmp.replace(self.path)

    def stats(self) -> dict:
        with self._lock:
            by_class: dict[str, int] = {}
            by_equipment: dict[str, int] = {}
            dims: set[int] = set()
            for case in self._cases.values():
                by_class[case.defect_class] = by_class.get(case.defect_class, 0) + 1
                by_equipment[case.equipment_id] = by_equipment.get(case.equipment_id, 0) + 1
                dims.add(case.embedding.shape[0])
            return {
                "size": len(self._cases),
                "by_class": dict(sorted(by_class.items())),
                "by_equipment": dict(sorted(by_equipment.items())),
                "embedding_dims": sorted(dims),
            }
