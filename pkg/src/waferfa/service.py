"""HTTP front door: submit inspections, fetch reports, expose metrics.

POST /inspections runs the pipeline synchronously and returns the full
report; partial reports (with a populated errors array) still return 200.
Schema violations return 400 with field-path messages; a missing map file
returns 404. GET /metrics serves Prometheus text exposition with the five
per-node histograms; GET /reports/{id} returns a stored report.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field, field_validator

from .metrics import MetricsCollector
from .pipeline import Registry, new_state, report_to_json, run_pipeline


class InspectionRequest(BaseModel):
    map_path: str | None = None
    map_png_base64: str | None = None
    equipment_id: str = Field(min_length=1)
    lot_id: str = Field(min_length=1)
    wafer_id: str = Field(min_length=1)
    timestamp: float | str
    inspection_time: float | None = None
    modality: str = "wafer_map"
    disable_telemetry: bool = False
    disable_retrieval: bool = False

    @field_validator("map_path")
    @classmethod
    def _non_empty_path(cls, value):
        if value is not None and not value:
            raise ValueError("map_path must be non-empty when given")
        return value

    @field_validator("timestamp")
    @classmethod
    def _parse_timestamp(cls, value):
        if isinstance(value, (int, float)):
            return float(value)
        from datetime import datetime

        try:
            return datetime.fromisoformat(value).timestamp()
        except ValueError as exc:
            raise ValueError(f"timestamp not parseable as epoch seconds or ISO-8601: {value!r}") from exc

    @field_validator("modality")
    @classmethod
    def _check_modality(cls, value):
        if value not in ("wafer_map", "sem", "optical"):
            raise ValueError(f"modality must be wafer_map/sem/optical, got {value!r}")
        return value


def create_app(registry: Registry) -> FastAPI:
    app = FastAPI(title="waferfa failure-analysis service", version="0.1.0")
    metrics = registry.metrics if registry.metrics is not None else MetricsCollector()
    registry.metrics = metrics

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        details = [
            {
                "field": ".".join(str(part) for part in err["loc"] if part != "body"),
                "message": err["msg"],
            }
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": details})

    @app.post("/inspections")
    def submit_inspection(request: InspectionRequest):
        if request.map_path is None and request.map_png_base64 is None:
            return JSONResponse(
                status_code=400,
                content={"detail": [{"field": "map_path", "message": "one of map_path or map_png_base64 is required"}]},
            )
        wafer_map = None
        if request.map_png_base64 is not None:
            import base64

            from .wafermap import WaferMap, WaferMapError

            try:
                wafer_map = WaferMap.load_png_bytes(base64.b64decode(request.map_png_base64))
            except Exception as exc:
                return JSONResponse(
                    status_code=400,
                    content={"detail": [{"field": "map_png_base64", "message": f"not a decodable wafer map: {exc}"}]},
                )
        elif not Path(request.map_path).exists():
            raise HTTPException(status_code=404, detail=f"map file not found: {request.map_path}")
        state = new_state(
            wafer_map=wafer_map,
            map_path=request.map_path if wafer_map is None else None,
            equipment_id=request.equipment_id,
            lot_id=request.lot_id,
            wafer_id=request.wafer_id,
            timestamp=request.timestamp,
            inspection_time=request.inspection_time,
            modality=request.modality,
        )
        result = run_pipeline(
            state,
            registry,
            disable_telemetry=request.disable_telemetry,
            disable_retrieval=request.disable_retrieval,
        )
        report = result["report"]
        import json as _json

        return JSONResponse(
            status_code=200,
            content={"report_id": report["report_id"], "report": _json.loads(report_to_json(report))},
        )

    @app.get("/reports/{report_id}")
    def fetch_report(report_id: str):
        if registry.report_dir is None:
            raise HTTPException(status_code=404, detail="report storage not configured")
        path = registry.report_dir / f"{report_id}.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no report {report_id}")
        import json as _json

        return JSONResponse(status_code=200, content=_json.loads(path.read_text(encoding="utf-8")))

    @app.get("/metrics")
    def metrics_endpoint():
        return PlainTextResponse(metrics.render(), media_type="text/plain; version=0.0.4")

    return app


def serve(registry: Registry, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the service; port 0 binds an ephemeral port and prints it."""
    import socket

    import uvicorn

    app = create_app(registry)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    bound_port = sock.getsockname()[1]
    print(f"waferfa service listening on {host}:{bound_port}", flush=True)
    config = uvicorn.Config(app, log_level="warning")
    server = uvicorn.Server(config)
    server.run(sockets=[sock])
