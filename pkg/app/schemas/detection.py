from typing import Optional
from pydantic import BaseModel, Field, model_validator


class Detection(BaseModel):
    box: tuple[float, float, float, float]
    class_id: int = 0
    score: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def check_box(self):
        x_min, y_min, x_max, y_max = self.box
        if not (x_max > x_min and y_max > y_min):
            raise ValueError("detection box must have positive extent")
        return self


class DetectionRecord(BaseModel):
    """One line of a detections manifest."""

    image: str
    boxes: list[list[float]] = []
    scores: list[float] = []
    classes: list[int] = []

    @classmethod
    def from_detections(cls, image: str, detections: list[Detection]) -> "DetectionRecord":
        return cls(
            image=image,
            boxes=[list(d.box) for d in detections],
            scores=[d.score for d in detections],
            classes=[d.class_id for d in detections],
        )


class LossReport(BaseModel):
    cls_loss: float = Field(ge=0.0)
    box_loss: float = Field(ge=0.0)
    recon_loss: float = Field(ge=0.0)
    loss_weight: float = Field(default=1.0, ge=0.0)
    total: float

    @classmethod
    def compose(
        cls, cls_loss: float, box_loss: float, recon_loss: float, loss_weight: float
    ) -> "LossReport":
        return cls(
            cls_loss=cls_loss,
            box_loss=box_loss,
            recon_loss=recon_loss,
            loss_weight=loss_weight,
            total=cls_loss + box_loss + loss_weight * recon_loss,
        )


class StepRecord(BaseModel):
    """One line of the training metrics log."""

    kind: str = "step"
    step: int
    epoch: int
    losses: LossReport
    lr: float
    threshold: Optional[float] = None
