import math
from typing import Optional
from pydantic import BaseModel, Field, model_validator
from app.helpers.enum import BackgroundKind, ShapeKind
from app.schemas.base import StrictSchema


class SceneConfig(StrictSchema):
    image_size: tuple[int, int] = (128, 128)
    objects_per_image: tuple[int, int] = (1, 10)
    # sqrt-area range, half-open [lo, hi)
    object_size: tuple[float, float] = (2.0, 32.0)
    aspect_range: tuple[float, float] = (0.75, 4.0 / 3.0)
    background: BackgroundKind = BackgroundKind.NOISE
    contrast: float = Field(default=0.4, gt=0.0, le=1.0)
    classes: int = Field(default=1, ge=1)
    shapes: list[ShapeKind] = Field(
        default_factory=lambda: [ShapeKind.DISC, ShapeKind.RECTANGLE, ShapeKind.CROSS],
        min_length=1,
    )
    max_retries: int = Field(default=100, ge=1)
    allow_overlap: bool = True
    margin: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_ranges(self):
        height, width = self.image_size
        if height <= 0 or width <= 0:
            raise ValueError("image_size must be positive")
        lo, hi = self.objects_per_image
        if lo < 0 or hi < lo:
            raise ValueError("objects_per_image must satisfy 0 <= lo <= hi")
        size_lo, size_hi = self.object_size
        if size_lo < 2.0:
            raise ValueError("object_size minimum must be >= 2")
        if size_hi <= size_lo:
            raise ValueError("object_size must satisfy lo < hi")
        aspect_lo, aspect_hi = self.aspect_range
        if aspect_lo <= 0 or aspect_hi < aspect_lo:
            raise ValueError("aspect_range must satisfy 0 < lo <= hi")
        if self.max_extent() + 2 * self.margin >= min(height, width):
            raise ValueError("largest object does not fit inside the image")
        return self

    def max_extent(self) -> float:
        """Longest side an object can take given the size and aspect ranges."""
        widest = max(self.aspect_range[1], 1.0 / self.aspect_range[0])
        return self.object_size[1] * math.sqrt(widest)


class GroundTruthBox(BaseModel):
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0

    @model_validator(mode="after")
    def check_extent(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("box must satisfy x_max > x_min and y_max > y_min")
        return self

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def size(self) -> float:
        return math.sqrt(self.width * self.height)

    def to_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def inside(self, height: int, width: int) -> bool:
        return (
            self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height
        )


class SceneRecord(StrictSchema):
    """One manifest line."""

    image: str
    boxes: list[list[float]]
    classes: list[int]
    seed: Optional[int] = None
    overlapped: bool = False

    def ground_truth(self) -> list[GroundTruthBox]:
        return [
            GroundTruthBox(x_min=b[0], y_min=b[1], x_max=b[2], y_max=b[3], class_id=c)
            for b, c in zip(self.boxes, self.classes)
        ]
