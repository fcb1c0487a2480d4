import math
from typing import NamedTuple
import torch
from app.helpers.boxes import encode_boxes, pairwise_iou
from app.schemas.model import AnchorConfig

NEGATIVE = -1
IGNORED = -2


class AssignResult(NamedTuple):
    matched_gt: torch.Tensor  # (A,) gt index, NEGATIVE or IGNORED
    labels: torch.Tensor  # (A,) class id for positives, -1 elsewhere
    box_targets: torch.Tensor  # (A, 4) deltas, zero for non-positives

    @property
    def positive(self) -> torch.Tensor:
        return self.matched_gt >= 0

    @property
    def negative(self) -> torch.Tensor:
        return self.matched_gt == NEGATIVE

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


class AnchorGenerator:
    """Square-ish anchors centered on every feature cell; base edge = scale x stride."""

    def __init__(self, cfg: AnchorConfig):
        self.scales = list(cfg.scales)
        self.ratios = list(cfg.ratios)

    @property
    def num_anchors(self) -> int:
        return len(self.scales) * len(self.ratios)

    def cell_anchors(self, stride: int) -> torch.Tensor:
        shapes = []
        for ratio in self.ratios:
            for scale in self.scales:
                edge = scale * stride
                w = edge / math.sqrt(ratio)
                h = edge * math.sqrt(ratio)
                shapes.append([-w / 2, -h / 2, w / 2, h / 2])
        return torch.tensor(shapes, dtype=torch.float32)

    def grid_anchors(self, size: tuple[int, int], stride: int) -> torch.Tensor:
        height, width = size
        ys = (torch.arange(height, dtype=torch.float32) + 0.5) * stride
        xs = (torch.arange(width, dtype=torch.float32) + 0.5) * stride
        cy, cx = torch.meshgrid(ys, xs, indexing="ij")
        centers = torch.stack([cx, cy, cx, cy], dim=-1).reshape(-1, 1, 4)
        # (H*W*A, 4), location-major to match the head's output layout
        return (centers + self.cell_anchors(stride)[None]).reshape(-1, 4)

    def __call__(self, sizes: list[tuple[int, int]], strides: list[int]) -> torch.Tensor:
        return torch.cat([self.grid_anchors(s, st) for s, st in zip(sizes, strides)], dim=0)


def assign_targets(
    anchors: torch.Tensor,
    gt_boxes: torch.Tensor,
    gt_labels: torch.Tensor,
    pos_iou: float = 0.5,
    neg_iou: float = 0.4,
) -> AssignResult:
    """Max-IoU assignment with every gt forced onto its best anchor (later gts win ties)."""
    num_anchors = anchors.shape[0]
    labels = torch.full((num_anchors,), -1, dtype=torch.long)
    box_targets = torch.zeros((num_anchors, 4), dtype=anchors.dtype)
    if gt_boxes.numel() == 0:
        matched = torch.full((num_anchors,), NEGATIVE, dtype=torch.long)
        return AssignResult(matched, labels, box_targets)

    overlaps = pairwise_iou(anchors, gt_boxes.to(anchors.dtype))
    max_iou, best_gt = overlaps.max(dim=1)
    matched = torch.full((num_anchors,), IGNORED, dtype=torch.long)
    matched[max_iou < neg_iou] = NEGATIVE
    positive = max_iou >= pos_iou
    matched[positive] = best_gt[positive]

    best_anchor = overlaps.argmax(dim=0)
    for gt_index, anchor_index in enumerate(best_anchor.tolist()):
        matched[anchor_index] = gt_index

    positive = matched >= 0
    gt_index = matched[positive]
    labels[positive] = gt_labels[gt_index].long()
    box_targets[positive] = encode_boxes(anchors[positive], gt_boxes[gt_index].to(anchors.dtype))
    return AssignResult(matched, labels, box_targets)
