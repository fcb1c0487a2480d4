import logging
from fastapi import APIRouter, Depends
from app.schemas.api import DetectRequest
from app.schemas.base import DataResponse
from app.schemas.detection import Detection
from app.services.inference_service import InferenceService, decode_png, get_inference_service

logger = logging.getLogger(__name__)
router = APIRouter()


@router.post("", response_model=DataResponse[list[Detection]], summary="Detect tiny objects")
def detect(
    request: DetectRequest,
    inference_service: InferenceService = Depends(get_inference_service),
):
    image = decode_png(request.image)
    detections = inference_service.detect(image)
    if request.score_threshold is not None:
        detections = [d for d in detections if d.score >= request.score_threshold]
    logger.info("detect: %d objects in %s image", len(detections), tuple(image.shape[-2:]))
    return DataResponse().success_response(data=detections)
