"""Request/response models for the manipulation service.

The flow-spec vocabulary inside ``script`` entries is exactly the JSON schema
used by :mod:`volwarp.flows`; entries are re-validated there so the service
and the CLI accept identical scripts.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class PoseModel(BaseModel):
    azimuth: float = 0.0
    elevation: float = 0.0
    translation: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])


class ViewUpload(BaseModel):
    image_png_b64: str
    pose: PoseModel = PoseModel()


class SessionCreateRequest(BaseModel):
    model: str
    views: list[ViewUpload] = Field(min_length=1)
    background_png_b64: str | None = None

    model_config = ConfigDict(protected_namespaces=())


class SessionCreatedResponse(BaseModel):
    session_id: str
    model: str
    n_views: int

    model_config = ConfigDict(protected_namespaces=())


class ScriptEntry(BaseModel):
    type: str

    model_config = ConfigDict(extra="allow")


class DecodeRequest(BaseModel):
    script: list[ScriptEntry] = Field(default_factory=list)
    pose: PoseModel = PoseModel()
    include_occupancy: bool = False
    composite: bool = True


class OccupancySummary(BaseModel):
    dims: list[int]
    max_value: float
    mean_value: float
    occupied_fraction: float


class DecodeJsonResponse(BaseModel):
    image_png_b64: str
    occupancy: OccupancySummary


class ModelsResponse(BaseModel):
    models: list[str]


class HealthResponse(BaseModel):
    status: str
