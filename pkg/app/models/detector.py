import logging
import math
from typing import NamedTuple, Optional
import torch
import torch.nn.functional as F
from torch import nn
from torchvision.ops import batched_nms, sigmoid_focal_loss
from app.helpers.boxes import decode_boxes
from app.helpers.enum import ClsLossKind, DetectorMode
from app.helpers.exception_handler import ConfigurationError
from app.models.anchors import IGNORED, AnchorGenerator, assign_targets
from app.models.backbone import PYRAMID_STRIDES, BackboneFPN, FeaturePyramid, check_image
from app.models.dgfe import DGFE
from app.models.diffmap import DifferenceMap, difference_map
from app.models.recon_head import ReconstructionHead
from app.schemas.detection import Detection
from app.schemas.model import DetectorConfig, ModelConfig

logger = logging.getLogger(__name__)


class DetectorOutput(NamedTuple):
    cls_logits: torch.Tensor  # (N, A, K)
    box_deltas: torch.Tensor  # (N, A, 4)
    anchors: torch.Tensor  # (A, 4)
    pyramid: FeaturePyramid
    enhanced: Optional[torch.Tensor] = None
    reconstruction: Optional[torch.Tensor] = None
    difference: Optional[DifferenceMap] = None


class DetectionHead(nn.Module):
    """Shared conv tower over every level, then classification and box branches."""

    def __init__(
        self,
        channels: int,
        num_anchors: int,
        num_classes: int,
        tower_depth: int = 4,
        prior_prob: float = 0.01,
    ):
        super().__init__()
        self.num_anchors = num_anchors
        self.num_classes = num_classes
        layers = []
        for _ in range(tower_depth):
            layers += [nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU(inplace=True)]
        self.tower = nn.Sequential(*layers)
        self.cls_logits = nn.Conv2d(channels, num_anchors * num_classes, 3, padding=1)
        self.bbox_pred = nn.Conv2d(channels, num_anchors * 4, 3, padding=1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, std=0.01)
                nn.init.zeros_(m.bias)
        nn.init.constant_(self.cls_logits.bias, -math.log((1 - prior_prob) / prior_prob))

    def _flatten(self, x: torch.Tensor, width: int) -> torch.Tensor:
        n, _, h, w = x.shape
        return x.view(n, self.num_anchors, width, h, w).permute(0, 3, 4, 1, 2).reshape(n, -1, width)

    def forward(self, features: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        cls_out, box_out = [], []
        for feature in features:
            x = self.tower(feature)
            cls_out.append(self._flatten(self.cls_logits(x), self.num_classes))
            box_out.append(self._flatten(self.bbox_pred(x), 4))
        return torch.cat(cls_out, dim=1), torch.cat(box_out, dim=1)


class SRTODDetector(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.mode = cfg.detector.mode
        self.finest = cfg.recon.source_level.value.lower()
        channels = cfg.backbone.channels
        window = PYRAMID_STRIDES[self.finest]
        self.backbone = BackboneFPN(cfg.backbone)
        self.recon_head = ReconstructionHead(channels, cfg.recon.source_level)
        self.dgfe = DGFE(channels, cfg.dgfe, window)
        self.anchor_generator = AnchorGenerator(cfg.anchors)
        self.head = DetectionHead(
            channels,
            self.anchor_generator.num_anchors,
            cfg.detector.num_classes,
            cfg.detector.tower_depth,
            cfg.detector.prior_prob,
        )
        names = list(PYRAMID_STRIDES)
        self.strides = [PYRAMID_STRIDES[name] for name in names[names.index(self.finest):]]

    def anchors_for(self, features: list[torch.Tensor]) -> torch.Tensor:
        sizes = [tuple(f.shape[-2:]) for f in features]
        return self.anchor_generator(sizes, self.strides).to(features[0].device)

    def forward(self, images: torch.Tensor, mode: Optional[DetectorMode] = None) -> DetectorOutput:
        mode = mode or self.mode
        images = check_image(images)
        pyramid = self.backbone(images)
        levels = pyramid.levels_from(self.finest)
        reconstruction = difference = enhanced = None
        if mode is DetectorMode.SRTOD:
            source = levels[0].detach() if self.cfg.recon.detach_features else levels[0]
            reconstruction = self.recon_head(source)
            difference = difference_map(reconstruction, images, self.cfg.diffmap)
            enhanced = self.dgfe(levels[0], difference.data)
            levels[0] = enhanced
        cls_logits, box_deltas = self.head(levels)
        return DetectorOutput(
            cls_logits=cls_logits,
            box_deltas=box_deltas,
            anchors=self.anchors_for(levels).to(box_deltas.dtype),
            pyramid=pyramid,
            enhanced=enhanced,
            reconstruction=reconstruction,
            difference=difference,
        )

    @torch.no_grad()
    def predict(
        self, images: torch.Tensor, mode: Optional[DetectorMode] = None
    ) -> list[list[Detection]]:
        images = check_image(images)
        output = self(images, mode)
        height, width = images.shape[-2:]
        return [
            postprocess(
                output.cls_logits[i], output.box_deltas[i], output.anchors,
                (height, width), self.cfg.detector,
            )
            for i in range(images.shape[0])
        ]

    def clamp_(self) -> None:
        self.dgfe.clamp_()


def postprocess(
    cls_logits: torch.Tensor,
    box_deltas: torch.Tensor,
    anchors: torch.Tensor,
    image_size: tuple[int, int],
    cfg: DetectorConfig,
) -> list[Detection]:
    num_classes = cls_logits.shape[-1]
    scores = torch.sigmoid(cls_logits).flatten()
    candidates = torch.nonzero(scores > cfg.score_threshold).squeeze(1)
    if candidates.numel() > cfg.pre_nms_top_k:
        top = scores[candidates].topk(cfg.pre_nms_top_k).indices
        candidates = candidates[top]
    anchor_index = candidates // num_classes
    classes = candidates % num_classes
    scores = scores[candidates]
    boxes = decode_boxes(anchors[anchor_index], box_deltas[anchor_index])
    height, width = image_size
    boxes[:, 0::2] = boxes[:, 0::2].clamp(0, width)
    boxes[:, 1::2] = boxes[:, 1::2].clamp(0, height)
    valid = ((boxes[:, 2] - boxes[:, 0]) > 1e-3) & ((boxes[:, 3] - boxes[:, 1]) > 1e-3)
    boxes, scores, classes = boxes[valid], scores[valid], classes[valid]
    keep = batched_nms(boxes.float(), scores.float(), classes, cfg.nms_iou)[: cfg.max_detections]
    return [
        Detection(box=tuple(boxes[i].tolist()), class_id=int(classes[i]), score=float(scores[i]))
        for i in keep.tolist()
    ]


def detection_losses(
    output: DetectorOutput,
    targets: list[tuple[torch.Tensor, torch.Tensor]],
    cfg: DetectorConfig,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Classification and box losses summed over the batch, normalized by positives."""
    cls_total = output.cls_logits.new_zeros(())
    box_total = output.box_deltas.new_zeros(())
    num_positive = 0
    num_valid = 0
    for i, (gt_boxes, gt_labels) in enumerate(targets):
        if gt_labels.numel() and int(gt_labels.max()) >= cfg.num_classes:
            raise ConfigurationError(
                f"label {int(gt_labels.max())} out of range for num_classes={cfg.num_classes}"
            )
        assigned = assign_targets(output.anchors, gt_boxes, gt_labels, cfg.pos_iou, cfg.neg_iou)
        valid = assigned.matched_gt != IGNORED
        positive = assigned.positive
        logits = output.cls_logits[i][valid]
        onehot = torch.zeros_like(output.cls_logits[i])
        onehot[positive, assigned.labels[positive]] = 1.0
        onehot = onehot[valid]
        if cfg.cls_loss is ClsLossKind.FOCAL:
            cls_total = cls_total + sigmoid_focal_loss(
                logits, onehot, alpha=cfg.focal_alpha, gamma=cfg.focal_gamma, reduction="sum"
            )
        else:
            cls_total = cls_total + F.binary_cross_entropy_with_logits(
                logits, onehot, reduction="sum"
            )
        if positive.any():
            box_total = box_total + F.l1_loss(
                output.box_deltas[i][positive],
                assigned.box_targets[positive].to(output.box_deltas.dtype),
                reduction="sum",
            )
        num_positive += assigned.num_positive
        num_valid += int(valid.sum())
    cls_norm = max(1, num_positive) if cfg.cls_loss is ClsLossKind.FOCAL else max(1, num_valid)
    return cls_total / cls_norm, box_total / max(1, num_positive)
