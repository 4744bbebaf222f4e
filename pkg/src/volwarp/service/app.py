"""Session-oriented HTTP service for interactive bottleneck manipulation.

A session holds one immutable aggregated bottleneck (encoded from the posed
images uploaded at creation).  Every decode request supplies a manipulation
script and a view pose; the service composes all flows into one, resamples the
base volume once, and decodes, so repeated identical requests return
byte-identical PNGs.  Sessions live in memory with LRU eviction.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from PIL import Image

from ..flows import RigidPose, compose_flows, rigid_flow, script_flow
from ..net import TbnModel, decode_image, decode_occupancy, encode, load_model
from ..recon import extract_mesh
from ..volume import FeatureVolume, VolumeError, aggregate, resample
from .schemas import (
    DecodeJsonResponse,
    DecodeRequest,
    HealthResponse,
    ModelsResponse,
    OccupancySummary,
    SessionCreateRequest,
    SessionCreatedResponse,
)

MAX_SESSIONS = 32


@dataclass
class Session:
    session_id: str
    model_name: str
    base: FeatureVolume                      # aggregated bottleneck, canonical frame
    background: np.ndarray | None = None
    current_script: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _decode_png(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"could not decode PNG payload: {exc}")
    return arr


def _encode_png(image: np.ndarray) -> bytes:
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="PNG")
    return buf.getvalue()


def create_app(model_dir: str | Path, max_sessions: int = MAX_SESSIONS) -> FastAPI:
    model_dir = Path(model_dir)
    app = FastAPI(title="volwarp manipulation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    models: dict[str, TbnModel] = {}
    sessions: OrderedDict[str, Session] = OrderedDict()
    registry_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def list_model_names() -> list[str]:
        return sorted(p.stem for p in model_dir.glob("*.vbm"))

    def get_model(name: str) -> TbnModel:
        with registry_lock:
            if name not in models:
                path = model_dir / f"{name}.vbm"
                if not path.exists():
                    raise HTTPException(status_code=404, detail=f"unknown model {name!r}")
                models[name] = load_model(path)
            return models[name]

    def get_session(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
            if session is None:
                raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
            sessions.move_to_end(session_id)
            return session

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        return HealthResponse(status="ok")

    @app.get("/models", response_model=ModelsResponse)
    def list_models():
        return ModelsResponse(models=list_model_names())

    @app.post("/session", response_model=SessionCreatedResponse)
    def create_session(request: SessionCreateRequest):
        model = get_model(request.model)
        dims = (model.arch.bottleneck_side,) * 3
        volumes = []
        for view in request.views:
            image = _decode_png(view.image_png_b64)
            s = model.arch.image_size
            if image.shape[:2] != (s, s):
                raise HTTPException(status_code=400, detail=f"images must be {s}x{s}")
            pose = RigidPose(view.pose.azimuth, view.pose.elevation, np.asarray(view.pose.translation))
            from ..flows import relative_flow

            flow = relative_flow(dims, pose, RigidPose())
            volumes.append(resample(encode(model, image), flow))
        background = None
        if request.background_png_b64 is not None:
            background = _decode_png(request.background_png_b64)
            s = model.arch.image_size
            if background.shape[:2] != (s, s):
                raise HTTPException(status_code=400, detail=f"background must be {s}x{s}")
        session = Session(
            session_id=uuid.uuid4().hex,
            model_name=request.model,
            base=aggregate(volumes),
            background=background,
        )
        with registry_lock:
            sessions[session.session_id] = session
            while len(sessions) > max_sessions:
                sessions.popitem(last=False)
        return SessionCreatedResponse(
            session_id=session.session_id, model=request.model, n_views=len(request.views)
        )

    def scripted_volume(session: Session, model: TbnModel, script: list[dict]) -> FeatureVolume:
        dims = (model.arch.bottleneck_side,) * 3
        try:
            flow = script_flow(dims, script)
        except VolumeError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return session.base if flow is None else resample(session.base, flow)

    @app.post("/session/{session_id}/decode")
    def decode(session_id: str, request: DecodeRequest):
        session = get_session(session_id)
        model = get_model(session.model_name)
        dims = (model.arch.bottleneck_side,) * 3
        script = [entry.model_dump() for entry in request.script]
        with session.lock:
            try:
                flow = script_flow(dims, script)
            except VolumeError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            pose = RigidPose(
                request.pose.azimuth, request.pose.elevation, np.asarray(request.pose.translation)
            )
            view_flow = rigid_flow(dims, pose)
            total = view_flow if flow is None else compose_flows(flow, view_flow)
            decoded = decode_image(model, resample(session.base, total))
            rgb, alpha = decoded[..., :3], decoded[..., 3:]
            if session.background is not None and request.composite:
                rgb = alpha * rgb + (1.0 - alpha) * session.background
            png = _encode_png(rgb)
            session.current_script = script
            if not request.include_occupancy:
                return Response(content=png, media_type="image/png")
            occ = decode_occupancy(model, scripted_volume(session, model, script))
            values = occ.data[..., 0]
            span = values.max() - values.min()
            normalized = (values - values.min()) / span if span > 0 else np.zeros_like(values)
            summary = OccupancySummary(
                dims=list(values.shape),
                max_value=float(values.max()),
                mean_value=float(values.mean()),
                occupied_fraction=float(np.mean(normalized > 0.5)),
            )
            return DecodeJsonResponse(
                image_png_b64=base64.b64encode(png).decode("ascii"), occupancy=summary
            )

    @app.get("/session/{session_id}/mesh")
    def mesh(session_id: str, threshold: float = Query(default=0.5)):
        session = get_session(session_id)
        model = get_model(session.model_name)
        if not 0.0 < threshold < 1.0:
            raise HTTPException(status_code=422, detail="threshold must lie in (0, 1)")
        with session.lock:
            occ = decode_occupancy(model, scripted_volume(session, model, session.current_script))
            verts, faces = extract_mesh(occ, threshold)
        lines = [f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}" for v in verts]
        lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in faces]
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""), media_type="text/plain")

    return app
