"""Pluggable embedding and narration backends.

The default "echo" backend needs no model weights: it embeds an image as
the 64 block means of an 8x8 downsample (deterministic for identical
bytes) and narrates from compact text templates. Heavier backends (for
example a self-supervised ViT encoder) can register themselves in
EMBEDDERS/NARRATORS and be selected with SIDECAR_BACKEND.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

ECHO_DIM = 64

# sections and their required context fields; kept contract-compatible with
# the primary pipeline's template engine
REQUIRED_FIELDS = {
    "defect_description": ("defect_class",),
    "hypothesis": ("mechanism_label", "mechanism_summary"),
}


class UndecodableImageError(ValueError):
    pass


class MissingFieldsError(ValueError):
    def __init__(self, section: str, fields: list[str]):
        self.section = section
        self.fields = fields
        super().__init__(f"section {section!r} missing context fields: {', '.join(fields)}")


class EchoEmbedder:
    """Deterministic 64-dim embedding: 8x8 grid of mean gray levels."""

    model_name = "echo-v1"
    dim = ECHO_DIM

    def embed(self, image_bytes: bytes) -> np.ndarray:
        try:
            with Image.open(io.BytesIO(image_bytes)) as img:
                gray = img.convert("L").resize((8, 8), Image.BILINEAR)
        except (UnidentifiedImageError, OSError) as exc:
            raise UndecodableImageError(str(exc)) from exc
        vector = np.asarray(gray, dtype=np.float64).reshape(-1) / 255.0
        return vector


class EchoNarrator:
    """Template narration; repo-authored text, no model weights."""

    model_name = "echo-v1"

    def narrate(self, section: str, context: dict) -> str:
        required = REQUIRED_FIELDS.get(section)
        if required is None:
            raise MissingFieldsError(section, ["<unknown section>"])
        missing = [f for f in required if not context.get(f)]
        if missing:
            raise MissingFieldsError(section, missing)
        if section == "defect_description":
            defect_class = context["defect_class"]
            stats = context.get("spatial_stats") or {}
            density = stats.get("defect_density")
            parts = [
                f"Inspection shows a {defect_class.replace('_', ' ')} pattern on the wafer map."
            ]
            if density is not None:
                parts.append(f"Failing die cover {density:.1%} of the wafer surface.")
            confidence = context.get("confidence")
            if confidence is not None:
                parts.append(f"The classifier assigns this label with confidence {confidence:.2f}.")
            parts.append(
                "Review the matching equipment trace and historical precedents before disposition."
            )
            return " ".join(parts)
        label = context["mechanism_label"]
        summary = context["mechanism_summary"]
        text = f"{label}: {summary}."
        evidence = context.get("evidence_summary")
        if evidence:
            text += f" Evidence considered: {evidence}."
        return text


EMBEDDERS = {"echo": EchoEmbedder}
NARRATORS = {"echo": EchoNarrator}


def build_backends(name: str):
    """Returns (embedder, narrator); unknown names yield (None, None) so the
    service can answer 503 instead of failing to start."""
    embedder_cls = EMBEDDERS.get(name)
    narrator_cls = NARRATORS.get(name)
    if embedder_cls is None or narrator_cls is None:
        return None, None
    return embedder_cls(), narrator_cls()
