import math
from typing import Sequence, Union
import torch
from app.helpers.enum import SizeBucket
from app.helpers.exception_handler import InvalidBoxError
from app.schemas.scene import GroundTruthBox

BoxLike = Union[GroundTruthBox, Sequence[float]]

# [lo, hi) in pixels of sqrt(area)
BUCKET_RANGES: dict[SizeBucket, tuple[float, float]] = {
    SizeBucket.VERY_TINY: (2.0, 8.0),
    SizeBucket.TINY: (8.0, 16.0),
    SizeBucket.SMALL: (16.0, 32.0),
    SizeBucket.OTHER: (32.0, math.inf),
}

_BBOX_CLIP = math.log(1000.0 / 16)


def as_coords(box: BoxLike) -> tuple[float, float, float, float]:
    if isinstance(box, GroundTruthBox):
        coords = (box.x_min, box.y_min, box.x_max, box.y_max)
    else:
        if len(box) != 4:
            raise InvalidBoxError(f"box needs 4 coordinates, got {len(box)}")
        coords = tuple(float(v) for v in box)
    if not all(math.isfinite(v) for v in coords):
        raise InvalidBoxError(f"box has non-finite coordinates: {coords}")
    if not (coords[2] > coords[0] and coords[3] > coords[1]):
        raise InvalidBoxError(f"degenerate box: {coords}")
    return coords


def box_size(box: BoxLike) -> float:
    x_min, y_min, x_max, y_max = as_coords(box)
    return math.sqrt((x_max - x_min) * (y_max - y_min))


def size_bucket(box: BoxLike) -> SizeBucket:
    size = box_size(box)
    for bucket, (lo, hi) in BUCKET_RANGES.items():
        if lo <= size < hi:
            return bucket
    # sub-2px boxes fold into the smallest bucket
    return SizeBucket.VERY_TINY


def iou(a: BoxLike, b: BoxLike) -> float:
    ax1, ay1, ax2, ay2 = as_coords(a)
    bx1, by1, bx2, by2 = as_coords(b)
    inter_w = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    inter_h = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = inter_w * inter_h
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def pairwise_iou(boxes_a: torch.Tensor, boxes_b: torch.Tensor) -> torch.Tensor:
    """(N, 4) x (M, 4) -> (N, M) IoU, 0 for disjoint pairs."""
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    top_left = torch.maximum(boxes_a[:, None, :2], boxes_b[None, :, :2])
    bottom_right = torch.minimum(boxes_a[:, None, 2:], boxes_b[None, :, 2:])
    wh = (bottom_right - top_left).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def encode_boxes(anchors: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Center/size deltas of targets relative to anchors, both (N, 4) xyxy."""
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tx = targets[:, 0] + 0.5 * tw
    ty = targets[:, 1] + 0.5 * th
    return torch.stack(
        [(tx - ax) / aw, (ty - ay) / ah, torch.log(tw / aw), torch.log(th / ah)], dim=1
    )


def decode_boxes(anchors: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    dx, dy, dw, dh = deltas.unbind(dim=1)
    cx = ax + dx * aw
    cy = ay + dy * ah
    w = aw * torch.exp(dw.clamp(max=_BBOX_CLIP))
    h = ah * torch.exp(dh.clamp(max=_BBOX_CLIP))
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=1)
