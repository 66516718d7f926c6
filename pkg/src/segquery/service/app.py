"""HTTP surface: an oracle model endpoint plus parse/plan helpers.

Run with ``segquery serve --manifest m.json`` or
``uvicorn segquery.service.app:app`` with ``SEGQUERY_MANIFEST`` set.
"""
import os
from typing import Optional

from fastapi import FastAPI, HTTPException

from ..chunking import OracleEndpoint, TransportError, plan_chunks, reply_to_wire
from ..core import load_manifest
from ..parser import extract_query_names, parse_response
from .schemas import (ParseReportModel, ParseRequest, PlanRequest, PlanResponse,
                      SegmentQueryRequest, SegmentQueryResponse)


def create_app(manifest_path: Optional[str] = None, drop_prob: float = 0.0, seed: int = 0,
               shuffle: bool = False) -> FastAPI:
    manifest_path = manifest_path or os.environ.get("SEGQUERY_MANIFEST")
    if not manifest_path:
        raise RuntimeError("no manifest given (pass manifest_path or set SEGQUERY_MANIFEST)")
    manifest = load_manifest(manifest_path)
    oracle = OracleEndpoint(manifest, drop_prob=drop_prob, seed=seed, shuffle=shuffle)

    app = FastAPI(title="segquery")
    app.state.manifest = manifest
    app.state.oracle = oracle

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "images": len(manifest.records), "classes": len(manifest.table)}

    @app.post("/v1/segment-query", response_model=SegmentQueryResponse)
    def segment_query(req: SegmentQueryRequest):
        try:
            reply = oracle.submit(req.image_id, req.query)
        except TransportError as exc:
            status = 404 if "unknown image" in str(exc) else 422
            raise HTTPException(status_code=status, detail=str(exc))
        return reply_to_wire(reply)

    @app.post("/v1/parse", response_model=ParseReportModel)
    def parse(req: ParseRequest):
        names = extract_query_names(req.query)
        if names is None:
            raise HTTPException(status_code=422, detail="query does not match any template")
        return parse_response(req.response, names, manifest.table).to_dict()

    @app.post("/v1/plan", response_model=PlanResponse)
    def plan(req: PlanRequest):
        try:
            p = plan_chunks(req.ids, req.chunk)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"chunks": [list(c) for c in p.chunks], "chunk_size_spec": p.chunk_size_spec}

    return app


def __getattr__(name):
    # lazy module-level app for ``uvicorn segquery.service.app:app``
    if name == "app":
        return create_app(drop_prob=float(os.environ.get("SEGQUERY_ORACLE_DROP", "0")),
                          seed=int(os.environ.get("SEGQUERY_SEED", "0")))
    raise AttributeError(name)
