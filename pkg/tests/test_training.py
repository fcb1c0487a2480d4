import json
import pytest
import torch
from app.helpers.boxes import iou
from app.helpers.exception_handler import ConfigurationError, TrainingDivergedError
from app.repositories.checkpoint_repository import CheckpointRepository
from app.repositories.dataset_repository import DatasetRepository, SceneDataset, collate_scenes
from app.repositories.metrics_repository import MetricsRepository
from app.schemas.detection import DetectionRecord, LossReport
from app.schemas.scene import SceneConfig
from app.services.evaluation_service import compute_ap
from app.services.synthdata_service import generate_scene
from app.services.training_service import (
    TrainingService,
    build_model,
    build_optimizer,
    compute_losses,
    training_step,
)


def fixed_batch(dataset_dir, size=4):
    dataset = SceneDataset(DatasetRepository(dataset_dir))
    return collate_scenes([dataset[i] for i in range(size)]), dataset.records[:size]


def variant(config, **model_sections):
    data = config.model_dump(mode="json")
    for section, values in model_sections.items():
        data["model"][section].update(values)
    return type(config).model_validate(data)


def test_zero_weight_total_is_detection_only(tiny_config, tiny_dataset):
    (images, targets, _), _ = fixed_batch(tiny_dataset)
    model = build_model(tiny_config)
    report = training_step(model, build_optimizer(model, tiny_config), images, targets, 0.0)
    assert report.recon_loss > 0
    assert report.total == report.cls_loss + report.box_loss


def test_loss_report_composition():
    report = LossReport.compose(0.5, 0.25, 0.125, 1.0)
    assert report.total == 0.875
    assert LossReport.compose(0.5, 0.25, 0.125, 2.0).total == 1.0


def test_descent_on_fixed_batch(tiny_config, tiny_dataset):
    (images, targets, _), _ = fixed_batch(tiny_dataset)
    model = build_model(tiny_config)
    optimizer = build_optimizer(model, tiny_config)
    first = training_step(model, optimizer, images, targets, 1.0, 10.0)
    for step in range(1, 200):
        last = training_step(model, optimizer, images, targets, 1.0, 10.0, step)
    assert last.total < first.total


def test_training_is_deterministic(tiny_config, tiny_dataset):
    (images, targets, _), _ = fixed_batch(tiny_dataset)
    runs = []
    for _ in range(2):
        model = build_model(tiny_config)
        optimizer = build_optimizer(model, tiny_config)
        runs.append(
            [training_step(model, optimizer, images, targets, 1.0, 10.0, s) for s in range(10)]
        )
    assert runs[0] == runs[1]


def test_plain_srtod_with_zero_weight_trains_like_baseline(tiny_config, tiny_dataset):
    (images, targets, _), _ = fixed_batch(tiny_dataset)
    reports = {}
    for mode in ("baseline", "srtod"):
        config = variant(tiny_config, detector={"mode": mode}, dgfe={"mode": "off"})
        model = build_model(config)
        optimizer = build_optimizer(model, config)
        reports[mode] = [
            training_step(model, optimizer, images, targets, 0.0, 10.0, s) for s in range(5)
        ]
    for base, plain in zip(reports["baseline"], reports["srtod"]):
        assert plain.cls_loss == pytest.approx(base.cls_loss, rel=1e-6)
        assert plain.box_loss == pytest.approx(base.box_loss, rel=1e-6)


def test_non_finite_loss_aborts(tiny_config, tiny_dataset):
    (images, targets, _), _ = fixed_batch(tiny_dataset)
    images[0, 0, 0, 0] = float("nan")
    model = build_model(tiny_config)
    with pytest.raises(TrainingDivergedError, match="non-finite loss at step 3"):
        training_step(model, build_optimizer(model, tiny_config), images, targets, 1.0, step=3)


def test_threshold_is_clamped_after_step(tiny_config, tiny_dataset):
    (images, targets, _), _ = fixed_batch(tiny_dataset)
    model = build_model(tiny_config)
    with torch.no_grad():
        model.dgfe.filtration.threshold.fill_(1.5)
    training_step(model, build_optimizer(model, tiny_config), images, targets, 1.0)
    assert 0.0 <= model.dgfe.threshold <= 1.0


def test_fit_writes_one_metrics_line_per_step(tiny_config, tiny_dataset):
    result = TrainingService(tiny_config).fit(SceneDataset(DatasetRepository(tiny_dataset)))
    lines = [json.loads(line) for line in result.metrics.read_text().splitlines()]
    assert lines[0]["kind"] == "config"
    steps = [line for line in lines if line["kind"] == "step"]
    assert [line["step"] for line in steps] == [1, 2]
    assert all(0.0 <= line["threshold"] <= 1.0 for line in steps)
    assert result.checkpoint.is_file()
    assert CheckpointRepository().load(result.checkpoint).step == 2


def test_fit_is_deterministic(tiny_config, tiny_dataset, tmp_path):
    dataset = SceneDataset(DatasetRepository(tiny_dataset))
    logs = []
    for name in ("a", "b"):
        config = tiny_config.with_overrides(output_dir=str(tmp_path / name))
        result = TrainingService(config).fit(dataset)
        logs.append(result.metrics.read_text().splitlines()[1:])
    assert logs[0] == logs[1]


def test_resume_continues_step_counter(tiny_config, tiny_dataset):
    dataset = SceneDataset(DatasetRepository(tiny_dataset))
    first = TrainingService(tiny_config).fit(dataset)
    saved = CheckpointRepository().load(first.checkpoint)

    longer = tiny_config.model_copy(update={"train": tiny_config.train.model_copy(update={"epochs": 2})})
    second = TrainingService(longer).fit(dataset, resume=first.checkpoint)
    assert second.step == 4
    lines = [json.loads(line) for line in second.metrics.read_text().splitlines()]
    resume_header = [line for line in lines if line["kind"] == "resume"]
    assert resume_header and resume_header[0]["start_step"] == 2
    assert [line["step"] for line in lines if line["kind"] == "step"][-2:] == [3, 4]
    resumed = CheckpointRepository().load(second.checkpoint)
    assert resumed.epoch == 2
    changed = any(
        not torch.equal(saved.model_state[key], resumed.model_state[key])
        for key in saved.model_state
    )
    assert changed


@pytest.mark.slow
def test_overfit_recovers_training_objects(tiny_config, tiny_dataset):
    (images, targets, _), records = fixed_batch(tiny_dataset)
    model = build_model(tiny_config)
    optimizer = build_optimizer(model, tiny_config)
    for step in range(200):
        training_step(model, optimizer, images, targets, 1.0, 10.0, step)
    model.eval()
    detections = [
        DetectionRecord.from_detections(record.image, found)
        for record, found in zip(records, model.predict(images))
    ]
    assert compute_ap(detections, records).ap50 > 0.9


@pytest.mark.slow
def test_overfit_single_scene_recovers_every_object(tiny_config):
    scene_cfg = SceneConfig(
        image_size=(64, 64), objects_per_image=(5, 5), object_size=(6.0, 12.0),
        background="flat", contrast=0.6, allow_overlap=False,
    )
    image, boxes = generate_scene(scene_cfg, 11)
    images = image.unsqueeze(0)
    targets = [(
        torch.tensor([box.to_list() for box in boxes], dtype=torch.float32),
        torch.zeros(len(boxes), dtype=torch.long),
    )]
    model = build_model(tiny_config)
    optimizer = build_optimizer(model, tiny_config)
    for step in range(300):
        training_step(model, optimizer, images, targets, 1.0, 10.0, step)
    model.eval()
    found = model.predict(images)[0]
    assert len(boxes) == 5
    for box in boxes:
        assert any(d.score > 0.5 and iou(d.box, box.to_list()) >= 0.5 for d in found)


def test_labels_beyond_num_classes_are_a_configuration_error(tiny_config, tiny_dataset):
    (images, targets, _), _ = fixed_batch(tiny_dataset)
    gt_boxes, gt_labels = targets[0]
    targets[0] = (gt_boxes, torch.full_like(gt_labels, 2))
    with pytest.raises(ConfigurationError, match="num_classes=1"):
        compute_losses(build_model(tiny_config), images, targets)


def test_fresh_fit_replaces_an_existing_metrics_log(tiny_config, tiny_dataset):
    dataset = SceneDataset(DatasetRepository(tiny_dataset))
    TrainingService(tiny_config).fit(dataset)
    result = TrainingService(tiny_config).fit(dataset)
    lines = MetricsRepository(result.metrics).read()
    assert [line["kind"] for line in lines] == ["config", "step", "step"]
    assert [line["step"] for line in lines[1:]] == [1, 2]


ABLATION_AXES = [
    {},
    {"detector": {"mode": "baseline"}},
    {"dgfe": {"mode": "concat"}},
    {"dgfe": {"mode": "multiply"}},
    {"dgfe": {"mode": "off"}},
    {"dgfe": {"threshold": "none"}},
    {"dgfe": {"threshold": "fixed:0.3"}},
    {"diffmap": {"flavor": "high_frequency"}},
]


def test_ablation_runs_log_distinct_configurations(tiny_config, tiny_dataset, tmp_path):
    dataset = SceneDataset(DatasetRepository(tiny_dataset))
    tags = []
    for index, sections in enumerate(ABLATION_AXES):
        config = variant(tiny_config, **sections).with_overrides(output_dir=str(tmp_path / f"ablation_{index}"))
        result = TrainingService(config).fit(dataset)
        header = MetricsRepository(result.metrics).read()[0]
        assert header["kind"] == "config"
        tags.append(json.dumps(header["ablation"], sort_keys=True))
    assert len(set(tags)) == len(ABLATION_AXES)
