import logging
from typing import NamedTuple, Optional
import numpy as np
import torch
from app.helpers.boxes import as_coords, size_bucket
from app.helpers.enum import SizeBucket
from app.helpers.exception_handler import ConfigurationError
from app.schemas.detection import DetectionRecord
from app.schemas.evaluation import APReport, PRCurve
from app.schemas.scene import SceneRecord

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
REPORTED_BUCKETS = {
    SizeBucket.VERY_TINY: "ap_vt",
    SizeBucket.TINY: "ap_t",
    SizeBucket.SMALL: "ap_s",
}


class MatchResult(NamedTuple):
    tp: np.ndarray  # bool (D,)
    ignored: np.ndarray  # bool (D,), matched to an ignored gt
    matched_gt: np.ndarray  # int (D,), -1 when unmatched


class _ImageEntry(NamedTuple):
    det_boxes: np.ndarray
    det_scores: np.ndarray
    gt_boxes: np.ndarray
    gt_ignore: np.ndarray


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    lt = np.maximum(boxes_a[:, None, :2], boxes_b[None, :, :2])
    rb = np.minimum(boxes_a[:, None, 2:], boxes_b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def match_detections(
    det_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    iou_thr: float,
    gt_ignore: Optional[np.ndarray] = None,
) -> MatchResult:
    """Greedy matching of score-sorted detections, one detection per gt.

    A detection takes the highest-IoU unmatched gt with IoU >= iou_thr, preferring
    gts that are not ignored; a detection that lands on an ignored gt is ignored.
    """
    num_det = len(det_boxes)
    tp = np.zeros(num_det, dtype=bool)
    ignored = np.zeros(num_det, dtype=bool)
    matched_gt = np.full(num_det, -1, dtype=np.int64)
    if num_det == 0 or len(gt_boxes) == 0:
        return MatchResult(tp, ignored, matched_gt)
    if gt_ignore is None:
        gt_ignore = np.zeros(len(gt_boxes), dtype=bool)
    ious = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    for d in range(num_det):
        for pool in (~gt_ignore, gt_ignore):
            candidates = np.where(pool & ~taken & (ious[d] >= iou_thr))[0]
            if candidates.size:
                g = candidates[np.argmax(ious[d, candidates])]
                taken[g] = True
                matched_gt[d] = g
                tp[d] = not gt_ignore[g]
                ignored[d] = gt_ignore[g]
                break
    return MatchResult(tp, ignored, matched_gt)


def interpolated_precision(tp: np.ndarray, scores: np.ndarray, num_gt: int) -> np.ndarray:
    """101-point interpolated precision for detections with TP flags (ignored ones removed)."""
    order = np.argsort(-scores, kind="mergesort")
    tp = tp[order].astype(np.float64)
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / num_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)
    for i in range(len(precision) - 1, 0, -1):
        precision[i - 1] = max(precision[i - 1], precision[i])
    sampled = np.zeros(len(RECALL_POINTS))
    indices = np.searchsorted(recall, RECALL_POINTS, side="left")
    for r, index in enumerate(indices):
        if index < len(precision):
            sampled[r] = precision[index]
    return sampled


def _accumulate(entries: list[_ImageEntry], iou_thr: float) -> Optional[np.ndarray]:
    num_gt = int(sum((~e.gt_ignore).sum() for e in entries))
    if num_gt == 0:
        return None
    scores, flags = [], []
    for entry in entries:
        order = np.argsort(-entry.det_scores, kind="mergesort")
        match = match_detections(entry.det_boxes[order], entry.gt_boxes, iou_thr, entry.gt_ignore)
        keep = ~match.ignored
        scores.append(entry.det_scores[order][keep])
        flags.append(match.tp[keep])
    return interpolated_precision(np.concatenate(flags), np.concatenate(scores), num_gt)


def _entries_by_class(
    detections: list[DetectionRecord],
    ground_truth: list[SceneRecord],
    bucket: Optional[SizeBucket],
) -> dict[int, list[_ImageEntry]]:
    by_image = {record.image: record for record in detections}
    unknown = set(by_image) - {record.image for record in ground_truth}
    if unknown:
        raise ConfigurationError(f"detections reference unknown images: {sorted(unknown)[:3]}")
    classes = sorted(
        {c for r in ground_truth for c in r.classes} | {c for r in detections for c in r.classes}
    )
    grouped: dict[int, list[_ImageEntry]] = {c: [] for c in classes}
    for gt in ground_truth:
        det = by_image.get(gt.image, DetectionRecord(image=gt.image))
        gt_boxes = np.asarray(gt.boxes, dtype=np.float64).reshape(-1, 4)
        gt_classes = np.asarray(gt.classes, dtype=np.int64)
        if bucket is None:
            outside = np.zeros(len(gt_boxes), dtype=bool)
        else:
            outside = np.array([size_bucket(b) is not bucket for b in gt.boxes], dtype=bool)
        det_boxes = np.asarray(det.boxes, dtype=np.float64).reshape(-1, 4)
        det_scores = np.asarray(det.scores, dtype=np.float64)
        det_classes = np.asarray(det.classes, dtype=np.int64)
        for c in classes:
            gt_mask = gt_classes == c
            det_mask = det_classes == c
            grouped[c].append(
                _ImageEntry(det_boxes[det_mask], det_scores[det_mask], gt_boxes[gt_mask], outside[gt_mask])
            )
    return grouped


def _mean_or_none(values: list[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def average_precision(
    detections: list[DetectionRecord],
    ground_truth: list[SceneRecord],
    iou_thr: float,
    bucket: Optional[SizeBucket] = None,
) -> tuple[Optional[float], Optional[np.ndarray]]:
    """Class-averaged AP at one IoU threshold, plus the class-averaged precision samples."""
    curves = []
    for entries in _entries_by_class(detections, ground_truth, bucket).values():
        sampled = _accumulate(entries, iou_thr)
        if sampled is not None:
            curves.append(sampled)
    if not curves:
        return None, None
    mean_curve = np.mean(curves, axis=0)
    return float(np.mean([c.mean() for c in curves])), mean_curve


def bucket_ap(
    detections: list[DetectionRecord],
    ground_truth: list[SceneRecord],
    bucket: Optional[SizeBucket] = None,
) -> tuple[Optional[float], dict[float, Optional[float]], dict[float, Optional[np.ndarray]]]:
    per_threshold, curves = {}, {}
    for thr in IOU_THRESHOLDS:
        per_threshold[float(thr)], curves[float(thr)] = average_precision(
            detections, ground_truth, float(thr), bucket
        )
    return _mean_or_none(list(per_threshold.values())), per_threshold, curves


def compute_ap(detections: list[DetectionRecord], ground_truth: list[SceneRecord]) -> APReport:
    for record in ground_truth:
        for box in record.boxes:
            as_coords(box)
    ap, per_threshold, curves = bucket_ap(detections, ground_truth)
    report = APReport(
        ap=ap,
        ap50=per_threshold[0.5],
        ap75=per_threshold[0.75],
        per_threshold={f"{thr:.2f}": value for thr, value in per_threshold.items()},
        num_images=len(ground_truth),
        num_ground_truth=sum(len(r.boxes) for r in ground_truth),
        num_detections=sum(len(r.boxes) for r in detections),
    )
    if curves[0.5] is not None:
        report.curves["all"] = PRCurve(
            iou_threshold=0.5, recall=RECALL_POINTS.tolist(), precision=curves[0.5].tolist()
        )
    for bucket, field in REPORTED_BUCKETS.items():
        value, _, bucket_curves = bucket_ap(detections, ground_truth, bucket)
        setattr(report, field, value)
        if bucket_curves[0.5] is not None:
            report.curves[bucket.value] = PRCurve(
                iou_threshold=0.5,
                recall=RECALL_POINTS.tolist(),
                precision=bucket_curves[0.5].tolist(),
            )
    logger.info("AP report over %d images: %s", report.num_images, report.headline())
    return report


def object_background_means(
    difference: torch.Tensor, boxes: list[list[float]]
) -> tuple[Optional[float], Optional[float]]:
    """Mean of a 1 x H x W difference map over pixels whose centers fall inside / outside boxes."""
    data = difference.detach().reshape(difference.shape[-2:]).cpu().double()
    height, width = data.shape
    ys = torch.arange(height, dtype=torch.float64)[:, None] + 0.5
    xs = torch.arange(width, dtype=torch.float64)[None, :] + 0.5
    inside = torch.zeros((height, width), dtype=torch.bool)
    for x_min, y_min, x_max, y_max in boxes:
        inside |= (xs >= x_min) & (xs < x_max) & (ys >= y_min) & (ys < y_max)
    obj = float(data[inside].mean()) if inside.any() else None
    bg = float(data[~inside].mean()) if (~inside).any() else None
    return obj, bg
