import enum
from fastapi import Request
from fastapi.encoders import jsonable_encoder
from fastapi.responses import JSONResponse
from pydantic import ValidationError
from app.schemas.base import ResponseSchemaBase


class ExceptionType(enum.Enum):
    CONFIGURATION_ERROR = 400, "E100", "Invalid configuration"
    SHAPE_ERROR = 400, "E101", "Tensor shape violates the operation contract"
    INVALID_BOX = 400, "E102", "Degenerate or malformed box"
    PLACEMENT_ERROR = 422, "E103", "Could not place the requested objects"
    STORAGE_ERROR = 500, "E104", "Dataset or artifact storage failure"
    TRAINING_DIVERGED = 500, "E105", "Training produced a non-finite loss"
    CHECKPOINT_ERROR = 400, "E106", "Checkpoint cannot be used"
    DATASET_EMPTY = 400, "E107", "Dataset has no records"
    MODEL_UNAVAILABLE = 503, "E108", "No model is loaded"

    def __new__(cls, *args, **kwds):
        value = len(cls.__members__) + 1
        obj = object.__new__(cls)
        obj._value_ = value
        return obj

    def __init__(self, http_code, code, message):
        self.http_code = http_code
        self.code = code
        self.message = message


class CustomException(Exception):
    exception_type: ExceptionType = None
    http_code: int
    code: str
    message: str

    def __init__(self, message: str = None, http_code: int = None, code: str = None):
        default = self.exception_type
        self.http_code = http_code or (default.http_code if default else 500)
        self.code = code or (default.code if default else str(self.http_code))
        self.message = message or (default.message if default else "")
        super().__init__(self.message)


class ConfigurationError(CustomException):
    exception_type = ExceptionType.CONFIGURATION_ERROR


class ShapeError(CustomException):
    exception_type = ExceptionType.SHAPE_ERROR


class InvalidBoxError(CustomException):
    exception_type = ExceptionType.INVALID_BOX


class PlacementError(CustomException):
    exception_type = ExceptionType.PLACEMENT_ERROR


class StorageError(CustomException):
    exception_type = ExceptionType.STORAGE_ERROR


class TrainingDivergedError(CustomException):
    exception_type = ExceptionType.TRAINING_DIVERGED


class CheckpointError(CustomException):
    exception_type = ExceptionType.CHECKPOINT_ERROR


class DatasetEmptyError(CustomException):
    exception_type = ExceptionType.DATASET_EMPTY


class ModelUnavailableError(CustomException):
    exception_type = ExceptionType.MODEL_UNAVAILABLE


async def http_exception_handler(request: Request, exc: CustomException):
    return JSONResponse(
        status_code=exc.http_code,
        content=jsonable_encoder(
            ResponseSchemaBase().custom_response(exc.code, exc.message)
        ),
    )


async def validation_exception_handler(request, exc):
    return JSONResponse(
        status_code=400,
        content=jsonable_encoder(
            ResponseSchemaBase().custom_response("400", get_message_validation(exc))
        ),
    )


def get_message_validation(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(item) for item in error.get("loc", ())) or "<root>"
        parts.append(f"'{location}': {error.get('msg')}")
    return ", ".join(parts)


def as_configuration_error(exc: ValidationError) -> ConfigurationError:
    return ConfigurationError(get_message_validation(exc))
