from typing import Generic, Optional, TypeVar
from pydantic import BaseModel, ConfigDict

T = TypeVar("T")


class ResponseSchemaBase(BaseModel):
    code: str = ""
    message: str = ""

    def custom_response(self, code: str, message: str):
        self.code = code
        self.message = message
        return self


class DataResponse(ResponseSchemaBase, Generic[T]):
    data: Optional[T] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def success_response(self, data: T):
        self.code = "000"
        self.message = "Success"
        self.data = data
        return self


class StrictSchema(BaseModel):
    """Base for every file-backed schema: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")
