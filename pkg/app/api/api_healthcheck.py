from fastapi import APIRouter
from app.helpers.exception_handler import CustomException
from app.schemas.api import HealthResponse
from app.schemas.base import DataResponse
from app.services.inference_service import get_inference_service

router = APIRouter()


@router.get("", response_model=DataResponse[HealthResponse], summary="Service status")
def get():
    try:
        service = get_inference_service()
        health = HealthResponse(model_loaded=True, mode=service.model.mode.value)
    except CustomException:
        health = HealthResponse(model_loaded=False)
    return DataResponse().success_response(data=health)
