import os
from typing import ClassVar
from dotenv import load_dotenv
from pydantic_settings import BaseSettings

BASE_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), "../../"))
load_dotenv(os.path.join(BASE_DIR, ".env"))


class Settings(BaseSettings):
    PROJECT_NAME: ClassVar[str] = os.getenv("PROJECT_NAME", "TINY RECON")
    API_PREFIX: ClassVar[str] = "/api"
    BACKEND_CORS_ORIGINS: ClassVar[list[str]] = ["*"]
    LOGGING_CONFIG_FILE: ClassVar[str] = os.path.join(BASE_DIR, "logging.ini")
    DEFAULT_RUN_CONFIG: ClassVar[str] = os.path.join(BASE_DIR, "configs", "default.json")
    DEVICE: str = os.getenv("DEVICE", "cpu")
    NUM_THREADS: int = int(os.getenv("NUM_THREADS", "1"))
    CHECKPOINT_PATH: str = os.getenv("CHECKPOINT_PATH", "")
    CHECKPOINT_VERSION: ClassVar[int] = 1


settings = Settings()
