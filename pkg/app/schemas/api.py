from typing import Optional
from pydantic import BaseModel


class DetectRequest(BaseModel):
    image: str  # base64-encoded PNG
    score_threshold: Optional[float] = None


class HealthResponse(BaseModel):
    status: str = "ok"
    model_loaded: bool = False
    mode: Optional[str] = None
