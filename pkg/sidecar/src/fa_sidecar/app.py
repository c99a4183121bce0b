"""Sidecar HTTP service.

POST /embed   — raw image bytes in, {"vector", "dim", "model_name"} out;
                415 for undecodable input, 503 when no model is loaded.
POST /narrate — {"section", "context"} in, {"section", "text", "model_name"}
                out; 400 when required context fields are missing.
GET  /health  — backend status.

Stateless; backend selection via the SIDECAR_BACKEND environment variable
(default "echo", which requires no weights). The OpenAPI document is served
at /openapi.json as generated from these schemas.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel, Field

from .backends import MissingFieldsError, UndecodableImageError, build_backends


class EmbedResponse(BaseModel):
    vector: list[float]
    dim: int
    model_name: str


class NarrateRequest(BaseModel):
    section: str = Field(min_length=1)
    context: dict = Field(default_factory=dict)


class NarrateResponse(BaseModel):
    section: str
    text: str
    model_name: str


def create_app(backend_name: str | None = None) -> FastAPI:
    name = backend_name or os.environ.get("SIDECAR_BACKEND", "echo")
    embedder, narrator = build_backends(name)
    app = FastAPI(title="fa-sidecar", version="0.1.0")

    @app.get("/health")
    def health():
        return {
            "backend": name,
            "loaded": embedder is not None,
            "embed_dim": getattr(embedder, "dim", None),
        }

    @app.post("/embed", response_model=EmbedResponse)
    async def embed(request: Request):
        if embedder is None:
            raise HTTPException(status_code=503, detail=f"backend {name!r} not loaded")
        payload = await request.body()
        if not payload:
            raise HTTPException(status_code=415, detail="empty request body")
        try:
            vector = embedder.embed(payload)
        except UndecodableImageError as exc:
            raise HTTPException(status_code=415, detail=f"undecodable image: {exc}") from exc
        return EmbedResponse(
            vector=[float(v) for v in vector],
            dim=len(vector),
            model_name=embedder.model_name,
        )

    @app.post("/narrate", response_model=NarrateResponse)
    def narrate(request: NarrateRequest):
        if narrator is None:
            raise HTTPException(status_code=503, detail=f"backend {name!r} not loaded")
        try:
            text = narrator.narrate(request.section, request.context)
        except MissingFieldsError as exc:
            raise HTTPException(
                status_code=400,
                detail={"section": exc.section, "missing_fields": exc.fields},
            ) from exc
        return NarrateResponse(section=request.section, text=text, model_name=narrator.model_name)

    return app


app = create_app()


def main() -> None:
    import uvicorn

    port = int(os.environ.get("SIDECAR_PORT", "8100"))
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
