import numpy as np
import pytest
import torch
from app.helpers.boxes import iou
from app.helpers.exception_handler import ConfigurationError
from app.schemas.detection import DetectionRecord
from app.schemas.scene import SceneRecord
from app.services.evaluation_service import (
    IOU_THRESHOLDS,
    RECALL_POINTS,
    compute_ap,
    match_detections,
    object_background_means,
)


def scene(name, boxes, classes=None):
    return SceneRecord(image=name, boxes=boxes, classes=classes or [0] * len(boxes))


def dets(name, boxes, scores, classes=None):
    return DetectionRecord(image=name, boxes=boxes, scores=scores, classes=classes or [0] * len(boxes))


def oracle_flags(det_boxes, gt_boxes, thr):
    taken = [False] * len(gt_boxes)
    flags = []
    for d in det_boxes:
        best, best_iou = None, -1.0
        for g, gt in enumerate(gt_boxes):
            value = iou(d, gt)
            if not taken[g] and value >= thr and value > best_iou:
                best, best_iou = g, value
        if best is None:
            flags.append(False)
        else:
            taken[best] = True
            flags.append(True)
    return flags


def oracle_ap(detections, ground_truth, thr):
    num_gt = sum(len(r.boxes) for r in ground_truth)
    by_image = {r.image: r for r in detections}
    ranked = []
    for index, gt in enumerate(ground_truth):
        det = by_image[gt.image]
        order = sorted(range(len(det.scores)), key=lambda i: -det.scores[i])
        flags = oracle_flags([det.boxes[i] for i in order], gt.boxes, thr)
        ranked += [(det.scores[i], flag) for i, flag in zip(order, flags)]
    ranked.sort(key=lambda item: -item[0])
    recalls, precisions = [], []
    tp = 0
    for k, (_, flag) in enumerate(ranked, start=1):
        tp += flag
        recalls.append(tp / num_gt)
        precisions.append(tp / k)
    total = 0.0
    for r in RECALL_POINTS:
        candidates = [p for rec, p in zip(recalls, precisions) if rec >= r]
        total += max(candidates) if candidates else 0.0
    return total / len(RECALL_POINTS)


def random_box(rng, lo=3.0, hi=20.0):
    x, y = rng.uniform(0, 40, size=2)
    w, h = rng.uniform(lo, hi, size=2)
    return [float(x), float(y), float(x + w), float(y + h)]


def jitter(rng, box, scale=2.0):
    shifted = [v + float(rng.normal(0, scale)) for v in box]
    if shifted[2] <= shifted[0] + 0.5:
        shifted[2] = shifted[0] + 1.0
    if shifted[3] <= shifted[1] + 0.5:
        shifted[3] = shifted[1] + 1.0
    return shifted


def random_instance(rng):
    ground_truth, detections = [], []
    for index in range(int(rng.integers(1, 4))):
        gts = [random_box(rng) for _ in range(int(rng.integers(1, 4)))]
        boxes = [jitter(rng, gt) for gt in gts if rng.random() < 0.8]
        boxes += [random_box(rng) for _ in range(int(rng.integers(0, 3)))]
        ground_truth.append(scene(f"img{index}", gts))
        detections.append(dets(f"img{index}", boxes, [float(s) for s in rng.random(len(boxes))]))
    return detections, ground_truth


def test_single_detection_on_gt_is_tp():
    result = match_detections(np.array([[0, 0, 4, 4.0]]), np.array([[0, 0, 4, 4.0]]), 0.5)
    assert result.tp.tolist() == [True]


def test_two_detections_on_one_gt():
    det_boxes = np.array([[0, 0, 4, 4.0], [0, 0, 4, 4.2]])
    result = match_detections(det_boxes, np.array([[0, 0, 4, 4.0]]), 0.5)
    assert result.tp.tolist() == [True, False]
    assert result.matched_gt.tolist() == [0, -1]


def test_matching_prefers_gts_that_are_not_ignored():
    gts = np.array([[0, 0, 10, 10.0], [0, 0, 10, 9.0]])
    result = match_detections(np.array([[0, 0, 10, 10.0]]), gts, 0.5, np.array([True, False]))
    assert result.matched_gt.tolist() == [1]
    assert result.tp.tolist() == [True]


def test_match_against_loop_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        gts = [random_box(rng) for _ in range(int(rng.integers(1, 6)))]
        det_boxes = [jitter(rng, g, 3.0) for g in gts] + [random_box(rng) for _ in range(3)]
        for thr in (0.3, 0.5, 0.75):
            flags = match_detections(np.array(det_boxes), np.array(gts), thr).tp.tolist()
            assert flags == oracle_flags(det_boxes, gts, thr)


def test_perfect_detections_score_one():
    gts = [scene("a", [[0, 0, 5, 5], [20, 20, 30, 30]]), scene("b", [[10, 10, 30, 30]])]
    found = [dets(r.image, r.boxes, [1.0] * len(r.boxes)) for r in gts]
    report = compute_ap(found, gts)
    assert report.ap == report.ap50 == report.ap75 == 1.0
    assert report.ap_vt == 1.0 and report.ap_t == 1.0 and report.ap_s == 1.0


def test_no_detections_score_zero():
    gts = [scene("a", [[0, 0, 5, 5], [20, 20, 32, 32]])]
    report = compute_ap([], gts)
    assert report.ap == 0.0 and report.ap50 == 0.0 and report.ap_vt == 0.0 and report.ap_t == 0.0
    assert report.ap_s is None


def test_true_positive_ranked_above_false_positive():
    gts = [scene("a", [[10, 10, 20, 20]])]
    found = [dets("a", [[10, 10, 20, 20], [40, 40, 50, 50]], [0.9, 0.8])]
    assert compute_ap(found, gts).ap50 == 1.0


def test_false_positive_ranked_first_halves_precision():
    gts = [scene("a", [[10, 10, 14, 14]])]
    found = [dets("a", [[40, 40, 44, 44], [10, 10, 14, 14]], [0.9, 0.5])]
    report = compute_ap(found, gts)
    assert report.ap50 == pytest.approx(0.5)
    assert report.ap_vt == pytest.approx(0.5)


def test_empty_bucket_is_undefined():
    report = compute_ap([dets("a", [[0, 0, 4, 4]], [1.0])], [scene("a", [[0, 0, 4, 4]])])
    assert report.ap_vt == 1.0
    assert report.ap_t is None and report.ap_s is None
    assert report.table().splitlines()[1].split("|")[4].strip() == "-"
    assert "tiny" not in report.curves and "very_tiny" in report.curves


def test_out_of_bucket_matches_are_ignored():
    gts = [scene("a", [[0, 0, 4, 4], [20, 20, 40, 40]])]
    found = [dets("a", [[20, 20, 40, 40], [0, 0, 4, 4]], [0.9, 0.5])]
    report = compute_ap(found, gts)
    assert report.ap_vt == 1.0
    assert report.ap_s == 1.0


def test_ap_is_non_increasing_in_iou_threshold():
    gts = [scene("a", [[0, 0, 10, 10], [20, 20, 30, 30], [40, 0, 50, 10]])]
    found = [dets("a", [[0, 0, 10, 10], [21, 21, 31, 31], [42, 0, 52, 10]], [0.9, 0.8, 0.7])]
    values = list(compute_ap(found, gts).per_threshold.values())
    assert all(later <= earlier for earlier, later in zip(values, values[1:]))
    assert values[0] == 1.0 and values[-1] == pytest.approx(1.0 / 3.0, abs=1e-2)


def test_compute_ap_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        detections, ground_truth = random_instance(rng)
        report = compute_ap(detections, ground_truth)
        per_threshold = [oracle_ap(detections, ground_truth, float(t)) for t in IOU_THRESHOLDS]
        assert report.ap50 == pytest.approx(per_threshold[0], abs=1e-9)
        assert report.ap75 == pytest.approx(per_threshold[5], abs=1e-9)
        assert report.ap == pytest.approx(float(np.mean(per_threshold)), abs=1e-9)
        assert report.ap <= max(per_threshold) + 1e-12


def test_zero_score_false_positive_changes_nothing():
    rng = np.random.default_rng(5)
    for _ in range(20):
        detections, ground_truth = random_instance(rng)
        before = compute_ap(detections, ground_truth)
        first = detections[0]
        padded = [
            dets(first.image, first.boxes + [[90, 90, 95, 95]], first.scores + [0.0])
        ] + detections[1:]
        after = compute_ap(padded, ground_truth)
        assert after.ap == before.ap and after.ap50 == before.ap50


def test_multi_class_average():
    gts = [scene("a", [[0, 0, 10, 10], [20, 20, 30, 30]], [0, 1])]
    found = [dets("a", [[0, 0, 10, 10], [20, 20, 30, 30]], [0.9, 0.9], [0, 0])]
    assert compute_ap(found, gts).ap50 == pytest.approx(0.5)


def test_unknown_image_is_rejected():
    with pytest.raises(ConfigurationError):
        compute_ap([dets("x", [[0, 0, 4, 4]], [1.0])], [scene("a", [[0, 0, 4, 4]])])


def test_report_is_deterministic():
    rng = np.random.default_rng(2)
    detections, ground_truth = random_instance(rng)
    assert compute_ap(detections, ground_truth) == compute_ap(detections, ground_truth)


def test_object_background_means():
    d = torch.zeros(1, 8, 8)
    d[0, 2:4, 2:4] = 1.0
    obj, bg = object_background_means(d, [[2.0, 2.0, 4.0, 4.0]])
    assert obj == 1.0 and bg == 0.0
    obj, bg = object_background_means(d, [])
    assert obj is None and bg == pytest.approx(4 / 64)
