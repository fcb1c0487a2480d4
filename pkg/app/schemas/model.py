import re
from typing import Optional
from pydantic import Field, field_validator, model_validator
from app.helpers.enum import (
    ClsLossKind,
    DetectorMode,
    DgfeMode,
    DiffFlavor,
    NormKind,
    PyramidLevel,
    ResizeMode,
    ThresholdMode,
)
from app.schemas.base import StrictSchema

_FIXED_THRESHOLD = re.compile(r"^fixed:(?P<value>[0-9]*\.?[0-9]+(e-?[0-9]+)?)$")


class BackboneConfig(StrictSchema):
    channels: int = Field(default=64, gt=0)
    stage_depths: tuple[int, int, int, int] = (1, 1, 1, 1)
    norm: NormKind = NormKind.GROUP

    @field_validator("channels")
    @classmethod
    def check_channels(cls, value: int) -> int:
        if value % 4:
            raise ValueError("channels must be divisible by 4")
        return value

    @field_validator("stage_depths")
    @classmethod
    def check_depths(cls, value):
        if any(depth < 1 for depth in value):
            raise ValueError("every stage needs at least one block")
        return value


class ReconConfig(StrictSchema):
    source_level: PyramidLevel = PyramidLevel.P2
    loss_weight: float = Field(default=1.0, ge=0.0)
    detach_features: bool = False


class HighPassConfig(StrictSchema):
    cutoff: float = Field(default=0.1, ge=0.0, le=1.0)


class DiffMapConfig(HighPassConfig):
    flavor: DiffFlavor = DiffFlavor.PIXEL


class DgfeConfig(StrictSchema):
    mode: DgfeMode = DgfeMode.ATTENTION
    threshold: str = "learnable"
    init_threshold: float = Field(default=0.1, ge=0.0, le=1.0)
    temperature: float = Field(default=0.05, gt=0.0)
    resize: ResizeMode = ResizeMode.MAXPOOL
    reduction: int = Field(default=4, ge=1)
    stop_gradient: bool = False

    @field_validator("threshold")
    @classmethod
    def check_threshold(cls, value: str) -> str:
        if value in (ThresholdMode.LEARNABLE.value, ThresholdMode.NONE.value):
            return value
        match = _FIXED_THRESHOLD.match(value)
        if not match or not 0.0 <= float(match.group("value")) <= 1.0:
            raise ValueError("threshold must be 'learnable', 'none' or 'fixed:<value in [0,1]>'")
        return value

    @property
    def threshold_mode(self) -> ThresholdMode:
        if self.threshold.startswith("fixed:"):
            return ThresholdMode.FIXED
        return ThresholdMode(self.threshold)

    @property
    def threshold_value(self) -> float:
        if self.threshold_mode is ThresholdMode.FIXED:
            return float(self.threshold.split(":", 1)[1])
        return self.init_threshold


class AnchorConfig(StrictSchema):
    scales: list[float] = Field(default_factory=lambda: [2.0], min_length=1)
    ratios: list[float] = Field(default_factory=lambda: [1.0], min_length=1)

    @field_validator("scales", "ratios")
    @classmethod
    def check_positive(cls, value: list[float]) -> list[float]:
        if any(item <= 0 for item in value):
            raise ValueError("anchor scales and ratios must be positive")
        return value

    @property
    def num_anchors(self) -> int:
        return len(self.scales) * len(self.ratios)


class DetectorConfig(StrictSchema):
    mode: DetectorMode = DetectorMode.SRTOD
    num_classes: int = Field(default=1, ge=1)
    tower_depth: int = Field(default=4, ge=0)
    cls_loss: ClsLossKind = ClsLossKind.FOCAL
    focal_alpha: float = Field(default=0.25, ge=0.0, le=1.0)
    focal_gamma: float = Field(default=2.0, ge=0.0)
    prior_prob: float = Field(default=0.01, gt=0.0, lt=1.0)
    pos_iou: float = Field(default=0.5, gt=0.0, le=1.0)
    neg_iou: float = Field(default=0.4, ge=0.0, le=1.0)
    score_threshold: float = Field(default=0.05, ge=0.0, le=1.0)
    nms_iou: float = Field(default=0.5, gt=0.0, le=1.0)
    pre_nms_top_k: int = Field(default=1000, ge=1)
    max_detections: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def check_iou_band(self):
        if self.neg_iou > self.pos_iou:
            raise ValueError("neg_iou must not exceed pos_iou")
        return self


class ModelConfig(StrictSchema):
    """Everything needed to rebuild the network."""

    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    recon: ReconConfig = Field(default_factory=ReconConfig)
    diffmap: DiffMapConfig = Field(default_factory=DiffMapConfig)
    dgfe: DgfeConfig = Field(default_factory=DgfeConfig)
    anchors: AnchorConfig = Field(default_factory=AnchorConfig)
    detector: DetectorConfig = Field(default_factory=DetectorConfig)

    @model_validator(mode="after")
    def check_compatibility(self):
        channels = self.backbone.channels
        if channels % self.dgfe.reduction:
            raise ValueError("backbone.channels must be divisible by dgfe.reduction")
        if self.recon.source_level is PyramidLevel.P3 and channels % 8:
            raise ValueError("P3 reconstruction needs channels divisible by 8")
        return self

    def ablation_tag(self) -> dict[str, Optional[str]]:
        return {
            "mode": self.detector.mode.value,
            "dgfe": self.dgfe.mode.value,
            "threshold": self.dgfe.threshold,
            "resize": self.dgfe.resize.value,
            "flavor": self.diffmap.flavor.value,
            "source_level": self.recon.source_level.value,
        }
