import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple, Union
import numpy as np
import torch
from pydantic import ValidationError
from app.helpers.enum import BackgroundKind, ShapeKind
from app.helpers.exception_handler import PlacementError, as_configuration_error
from app.repositories.dataset_repository import DatasetRepository, image_to_tensor
from app.schemas.scene import GroundTruthBox, SceneConfig, SceneRecord

logger = logging.getLogger(__name__)

SUPERSAMPLE = 4
_CROSS_BAR = 1.0 / 3.0


class RenderedScene(NamedTuple):
    pixels: np.ndarray  # H x W x 3 uint8
    boxes: list[GroundTruthBox]
    overlapped: bool


def validate_scene_config(cfg: SceneConfig) -> SceneConfig:
    try:
        return SceneConfig.model_validate(cfg.model_dump())
    except ValidationError as exc:
        raise as_configuration_error(exc)


def _background(rng: np.random.Generator, cfg: SceneConfig, ceiling: float) -> np.ndarray:
    height, width = cfg.image_size
    if cfg.background is BackgroundKind.FLAT:
        plane = np.full((height, width), rng.uniform(0.0, ceiling))
    elif cfg.background is BackgroundKind.GRADIENT:
        angle = rng.uniform(0.0, 2.0 * math.pi)
        ys, xs = np.mgrid[0:height, 0:width]
        ramp = math.cos(angle) * xs / width + math.sin(angle) * ys / height
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        lo, hi = np.sort(rng.uniform(0.0, ceiling, size=2))
        plane = lo + (hi - lo) * ramp
    elif cfg.background is BackgroundKind.NOISE:
        base = rng.uniform(0.1 * ceiling, 0.9 * ceiling)
        plane = base + rng.normal(0.0, 0.03 * ceiling, size=(height, width))
    else:
        ys, xs = np.mgrid[0:height, 0:width]
        plane = np.zeros((height, width))
        for _ in range(3):
            freq = rng.uniform(2.0, 12.0) * 2.0 * math.pi
            angle = rng.uniform(0.0, math.pi)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            plane += np.sin(freq * (math.cos(angle) * xs / width + math.sin(angle) * ys / height) + phase)
        plane = (plane - plane.min()) / max(np.ptp(plane), 1e-12) * ceiling
    plane = np.clip(plane, 0.0, ceiling)
    tint = rng.uniform(0.85, 1.0, size=3)
    return plane[:, :, None] * tint[None, None, :]


def _coverage(shape: ShapeKind, box: GroundTruthBox, x_lo: int, y_lo: int, w: int, h: int):
    xs = x_lo + (np.arange(w * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    ys = y_lo + (np.arange(h * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    u = (xs[None, :] - (box.x_min + box.x_max) / 2) / (box.width / 2)
    v = (ys[:, None] - (box.y_min + box.y_max) / 2) / (box.height / 2)
    if shape is ShapeKind.DISC:
        inside = u ** 2 + v ** 2 <= 1.0
    elif shape is ShapeKind.RECTANGLE:
        inside = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    else:
        inside = ((np.abs(u) <= 1.0) & (np.abs(v) <= _CROSS_BAR)) | (
            (np.abs(u) <= _CROSS_BAR) & (np.abs(v) <= 1.0)
        )
    return inside.reshape(h, SUPERSAMPLE, w, SUPERSAMPLE).mean(axis=(1, 3))


def _sample_box(rng: np.random.Generator, cfg: SceneConfig, shape: ShapeKind, class_id: int):
    height, width = cfg.image_size
    size_lo, size_hi = cfg.object_size
    for _ in range(cfg.max_retries):
        size = rng.uniform(size_lo, size_hi)
        aspect = rng.uniform(*cfg.aspect_range) if shape is ShapeKind.RECTANGLE else 1.0
        box_w, box_h = size * math.sqrt(aspect), size / math.sqrt(aspect)
        x_min = rng.uniform(cfg.margin, width - cfg.margin - box_w)
        y_min = rng.uniform(cfg.margin, height - cfg.margin - box_h)
        box = GroundTruthBox(
            x_min=x_min, y_min=y_min, x_max=x_min + box_w, y_max=y_min + box_h, class_id=class_id
        )
        if size_lo <= box.size < size_hi and box.inside(height, width):
            return box
    raise PlacementError(
        f"no box in the size range fits inside {width}x{height} after {cfg.max_retries} draws"
    )


def _overlaps(box: GroundTruthBox, placed: list[GroundTruthBox]) -> bool:
    for other in placed:
        if (
            box.x_min - 1 < other.x_max
            and other.x_min - 1 < box.x_max
            and box.y_min - 1 < other.y_max
            and other.y_min - 1 < box.y_max
        ):
            return True
    return False


def render_scene(cfg: SceneConfig, seed: int) -> RenderedScene:
    cfg = validate_scene_config(cfg)
    rng = np.random.default_rng(seed)
    height, width = cfg.image_size
    background = _background(rng, cfg, 1.0 - cfg.contrast)
    canvas = background.copy()
    count = int(rng.integers(cfg.objects_per_image[0], cfg.objects_per_image[1] + 1))
    placed: list[GroundTruthBox] = []
    overlapped = False
    for index in range(count):
        class_id = int(rng.integers(cfg.classes))
        if cfg.classes > 1:
            shape = cfg.shapes[class_id % len(cfg.shapes)]
        else:
            shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
        for _ in range(cfg.max_retries):
            box = _sample_box(rng, cfg, shape, class_id)
            if not _overlaps(box, placed):
                break
        else:
            if not cfg.allow_overlap:
                raise PlacementError(
                    f"object {index} of {count} could not be placed without overlap "
                    f"after {cfg.max_retries} retries (seed {seed})"
                )
            overlapped = True
            logger.warning("seed %d: object %d placed with overlap", seed, index)
        placed.append(box)

        x_lo, y_lo = int(math.floor(box.x_min)), int(math.floor(box.y_min))
        x_hi, y_hi = int(math.ceil(box.x_max)), int(math.ceil(box.y_max))
        cover = _coverage(shape, box, x_lo, y_lo, x_hi - x_lo, y_hi - y_lo)[:, :, None]
        local_max = background[y_lo:y_hi, x_lo:x_hi].max(axis=(0, 1))
        value = rng.uniform(np.minimum(local_max + cfg.contrast, 1.0), 1.0)
        patch = canvas[y_lo:y_hi, x_lo:x_hi]
        canvas[y_lo:y_hi, x_lo:x_hi] = patch * (1.0 - cover) + value[None, None, :] * cover

    if rng.random() < 0.5:
        canvas = 1.0 - canvas
    pixels = np.round(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)
    return RenderedScene(pixels=pixels, boxes=placed, overlapped=overlapped)


def generate_scene(cfg: SceneConfig, seed: int) -> tuple[torch.Tensor, list[GroundTruthBox]]:
    scene = render_scene(cfg, seed)
    return image_to_tensor(scene.pixels), scene.boxes


class SynthDataService:
    def __init__(self, workers: int = 1):
        self.workers = workers

    def generate_scene(self, cfg: SceneConfig, seed: int):
        return generate_scene(cfg, seed)

    def write_dataset(
        self, cfg: SceneConfig, count: int, seed: int, out_dir: Union[str, Path]
    ) -> Path:
        cfg = validate_scene_config(cfg)
        repository = DatasetRepository(out_dir)
        seeds = [seed + index for index in range(count)]
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                scenes = list(pool.map(lambda s: render_scene(cfg, s), seeds))
        else:
            scenes = [render_scene(cfg, s) for s in seeds]

        records = []
        for index, (scene_seed, scene) in enumerate(zip(seeds, scenes)):
            relative = repository.image_path(index)
            repository.save_image(relative, scene.pixels)
            records.append(
                SceneRecord(
                    image=relative,
                    boxes=[box.to_list() for box in scene.boxes],
                    classes=[box.class_id for box in scene.boxes],
                    seed=scene_seed,
                    overlapped=scene.overlapped,
                )
            )
        return repository.write_manifest(records)


def get_synthdata_service(workers: int = 1) -> SynthDataService:
    return SynthDataService(workers)
