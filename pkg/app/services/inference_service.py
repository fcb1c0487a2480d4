import base64
import binascii
import io
import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union
import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from app.core.config import settings
from app.core.run_config import RunConfig
from app.helpers.exception_handler import ModelUnavailableError, ShapeError
from app.models.detector import DetectorOutput, SRTODDetector
from app.repositories.checkpoint_repository import CheckpointRepository, warn_on_mismatch
from app.repositories.dataset_repository import DatasetRepository, image_to_tensor
from app.schemas.detection import Detection, DetectionRecord
from app.schemas.scene import SceneRecord

logger = logging.getLogger(__name__)


def decode_png(payload: str) -> torch.Tensor:
    """Base64-encoded image bytes -> 3 x H x W float tensor."""
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            array = np.asarray(img.convert("RGB"))
    except (binascii.Error, UnidentifiedImageError, OSError) as exc:
        raise ShapeError(f"cannot decode image payload: {exc}")
    return image_to_tensor(array)


class InferenceService:
    def __init__(self, model: SRTODDetector, config: RunConfig):
        self.model = model.eval()
        self.config = config

    @classmethod
    def from_checkpoint(
        cls, path: Union[str, Path], config: Optional[RunConfig] = None
    ) -> "InferenceService":
        checkpoint = CheckpointRepository().load(path)
        if config is not None:
            warn_on_mismatch(checkpoint, config)
        model = SRTODDetector(checkpoint.config.model)
        model.load_state_dict(checkpoint.model_state)
        logger.info("loaded %s model from %s (step %d)", model.mode.value, path, checkpoint.step)
        return cls(model.to(settings.DEVICE), checkpoint.config)

    @torch.no_grad()
    def forward(self, image: torch.Tensor) -> DetectorOutput:
        return self.model(image.to(settings.DEVICE))

    def detect(self, image: torch.Tensor) -> list[Detection]:
        return self.model.predict(image.to(settings.DEVICE))[0]

    def detect_dataset(
        self,
        repository: DatasetRepository,
        records: list[SceneRecord],
        batch_size: int = 8,
    ) -> list[DetectionRecord]:
        results = []
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            images = torch.stack([repository.load_image(r.image) for r in chunk])
            for record, detections in zip(chunk, self.model.predict(images.to(settings.DEVICE))):
                results.append(DetectionRecord.from_detections(record.image, detections))
        logger.info("ran detection on %d images", len(results))
        return results


@lru_cache
def get_inference_service() -> InferenceService:
    if not settings.CHECKPOINT_PATH or not Path(settings.CHECKPOINT_PATH).is_file():
        raise ModelUnavailableError(
            f"CHECKPOINT_PATH does not point to a checkpoint: {settings.CHECKPOINT_PATH!r}"
        )
    return InferenceService.from_checkpoint(settings.CHECKPOINT_PATH)
