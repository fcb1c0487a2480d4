from fastapi import APIRouter
from app.api import api_detect, api_healthcheck

router = APIRouter()
router.include_router(api_healthcheck.router, tags=["health-check"], prefix="/health")
router.include_router(api_detect.router, tags=["detect"], prefix="/detect")
