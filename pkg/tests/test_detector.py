import pytest
import torch
from app.helpers.boxes import iou
from app.helpers.enum import ClsLossKind, DetectorMode, DgfeMode, DiffFlavor, PyramidLevel
from app.helpers.exception_handler import ShapeError
from app.models.detector import SRTODDetector, detection_losses, postprocess
from app.schemas.model import ModelConfig


def small_model_config(**overrides) -> ModelConfig:
    data = {"backbone": {"channels": 16}, "detector": {"tower_depth": 1}}
    for section, values in overrides.items():
        data.setdefault(section, {}).update(values)
    return ModelConfig.model_validate(data)


def build(cfg: ModelConfig, seed: int = 0) -> SRTODDetector:
    torch.manual_seed(seed)
    return SRTODDetector(cfg).eval()


def test_srtod_forward_shapes():
    model = build(small_model_config())
    out = model(torch.rand(2, 3, 64, 64))
    # P2..P6 at 64x64 input: 16*16 + 8*8 + 4*4 + 2*2 + 1*1 anchors
    assert out.anchors.shape == (341, 4)
    assert out.cls_logits.shape == (2, 341, 1)
    assert out.box_deltas.shape == (2, 341, 4)
    assert out.reconstruction.shape == (2, 3, 64, 64)
    assert out.difference.data.shape == (2, 1, 64, 64)
    assert out.enhanced.shape == out.pyramid.p2.shape


def test_baseline_skips_reconstruction():
    out = build(small_model_config(detector={"mode": "baseline"}))(torch.rand(1, 3, 64, 64))
    assert out.reconstruction is None and out.difference is None and out.enhanced is None


def test_srtod_with_dgfe_off_equals_baseline():
    image = torch.rand(2, 3, 64, 64)
    baseline = build(small_model_config(detector={"mode": "baseline"}, dgfe={"mode": "off"}))
    plain = build(small_model_config(dgfe={"mode": "off"}))
    a, b = baseline(image), plain(image)
    assert torch.equal(a.cls_logits, b.cls_logits)
    assert torch.equal(a.box_deltas, b.box_deltas)
    assert b.reconstruction is not None


def test_mode_override_on_forward():
    model = build(small_model_config())
    assert model(torch.rand(1, 3, 64, 64), DetectorMode.BASELINE).reconstruction is None


def test_p3_source_level():
    model = build(small_model_config(recon={"source_level": "P3"}))
    out = model(torch.rand(1, 3, 64, 64))
    assert out.anchors.shape == (85, 4)
    assert out.reconstruction.shape == (1, 3, 64, 64)
    assert out.enhanced.shape == out.pyramid.p3.shape
    assert model.dgfe.filtration.window == 8


@pytest.mark.parametrize("mode", [DgfeMode.CONCAT, DgfeMode.MULTIPLY])
def test_dgfe_variants_run(mode):
    model = build(small_model_config(dgfe={"mode": mode.value}))
    out = model(torch.rand(1, 3, 64, 64))
    assert out.enhanced.shape == out.pyramid.p2.shape


def test_high_frequency_flavor_runs():
    model = build(small_model_config(diffmap={"flavor": DiffFlavor.HIGH_FREQUENCY.value}))
    out = model(torch.rand(1, 3, 64, 64))
    assert out.difference.flavor is DiffFlavor.HIGH_FREQUENCY


def test_predict_on_blank_image_is_valid():
    model = build(small_model_config(detector={"score_threshold": 0.0}))
    detections = model.predict(torch.zeros(3, 64, 64))[0]
    assert len(detections) <= model.cfg.detector.max_detections
    for detection in detections:
        assert 0.0 <= detection.score <= 1.0
        x_min, y_min, x_max, y_max = detection.box
        assert 0 <= x_min < x_max <= 64 and 0 <= y_min < y_max <= 64


def test_predict_rejects_bad_shape():
    with pytest.raises(ShapeError):
        build(small_model_config()).predict(torch.zeros(3, 60, 64))


def test_nms_leaves_no_overlapping_same_class_pair(generator):
    cfg = small_model_config(detector={"num_classes": 2, "score_threshold": 0.0, "nms_iou": 0.5})
    model = build(cfg)
    anchors = model.anchor_generator([(16, 16), (8, 8)], [4, 8])
    logits = torch.randn(anchors.shape[0], 2, generator=generator)
    deltas = torch.randn(anchors.shape[0], 4, generator=generator) * 0.3
    detections = postprocess(logits, deltas, anchors, (64, 64), cfg.detector)
    assert detections
    for i, a in enumerate(detections):
        for b in detections[i + 1:]:
            if a.class_id == b.class_id:
                assert iou(a.box, b.box) <= 0.5 + 1e-6
    scores = [d.score for d in detections]
    assert scores == sorted(scores, reverse=True)


@pytest.mark.parametrize("loss", list(ClsLossKind))
def test_detection_losses_are_finite(loss):
    model = build(small_model_config(detector={"cls_loss": loss.value}))
    out = model(torch.rand(2, 3, 64, 64))
    targets = [
        (torch.tensor([[10.0, 10.0, 18.0, 18.0]]), torch.tensor([0])),
        (torch.zeros(0, 4), torch.zeros(0, dtype=torch.long)),
    ]
    cls_loss, box_loss = detection_losses(out, targets, model.cfg.detector)
    assert torch.isfinite(cls_loss) and cls_loss > 0
    assert torch.isfinite(box_loss) and box_loss >= 0


def test_clamp_keeps_threshold_in_unit_interval():
    model = build(small_model_config())
    with torch.no_grad():
        model.dgfe.filtration.threshold.fill_(3.0)
    model.clamp_()
    assert model.dgfe.threshold == 1.0
