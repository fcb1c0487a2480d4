from typing import Optional
from pydantic import BaseModel, Field


class PRCurve(BaseModel):
    iou_threshold: float
    recall: list[float]
    precision: list[float]


class APReport(BaseModel):
    ap: Optional[float] = None
    ap50: Optional[float] = None
    ap75: Optional[float] = None
    ap_vt: Optional[float] = None
    ap_t: Optional[float] = None
    ap_s: Optional[float] = None
    per_threshold: dict[str, Optional[float]] = Field(default_factory=dict)
    curves: dict[str, PRCurve] = Field(default_factory=dict)
    num_images: int = 0
    num_ground_truth: int = 0
    num_detections: int = 0

    def headline(self) -> dict[str, Optional[float]]:
        return {
            "AP": self.ap,
            "AP_0.5": self.ap50,
            "AP_0.75": self.ap75,
            "AP_vt": self.ap_vt,
            "AP_t": self.ap_t,
            "AP_s": self.ap_s,
        }

    def table(self) -> str:
        names = list(self.headline())
        header = " | ".join(f"{name:>7}" for name in names)
        row = " | ".join(
            f"{'-':>7}" if value is None else f"{100.0 * value:7.2f}"
            for value in self.headline().values()
        )
        return f"{header}\n{row}"
