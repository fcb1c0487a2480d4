import logging
from pathlib import Path
from typing import Optional, Union
import numpy as np
import torch
from PIL import Image, ImageDraw
from app.helpers.enum import DetectorMode
from app.models.diffmap import highfreq_diff, pixel_diff
from app.repositories.dataset_repository import read_png, image_to_tensor, tensor_to_image, write_png
from app.schemas.detection import Detection
from app.services.inference_service import InferenceService

logger = logging.getLogger(__name__)

SUFFIXES = (
    "original",
    "reconstruction",
    "pixel_diff",
    "highfreq_diff",
    "binary_overlay",
    "detections",
)


def heatmap(d: torch.Tensor) -> np.ndarray:
    """Scale a H x W map by its maximum into a grayscale RGB image."""
    data = d.detach().cpu().double().reshape(d.shape[-2:])
    peak = float(data.max())
    if peak > 0:
        data = data / peak
    gray = np.round(data.clamp(0, 1).numpy() * 255.0).astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=-1)


def overlay_mask(
    pixels: np.ndarray, mask: np.ndarray, color=(255, 0, 0), alpha: float = 0.5
) -> np.ndarray:
    out = pixels.astype(np.float64)
    out[mask] = (1 - alpha) * out[mask] + alpha * np.asarray(color, dtype=np.float64)
    return np.round(out).astype(np.uint8)


def draw_detections(
    pixels: np.ndarray, detections: list[Detection], color=(0, 255, 0)
) -> np.ndarray:
    img = Image.fromarray(pixels)
    draw = ImageDraw.Draw(img)
    for detection in detections:
        x_min, y_min, x_max, y_max = detection.box
        draw.rectangle([x_min, y_min, x_max, y_max], outline=color)
    return np.asarray(img)


class VisualizationService:
    def __init__(self, inference: InferenceService):
        self.inference = inference

    @torch.no_grad()
    def render(self, image: torch.Tensor) -> dict[str, np.ndarray]:
        model = self.inference.model
        cfg = self.inference.config.model
        batch = image.unsqueeze(0) if image.dim() == 3 else image
        output = self.inference.model(batch, DetectorMode.SRTOD)
        reconstruction = output.reconstruction
        pixel = pixel_diff(reconstruction, batch).data
        highfreq = highfreq_diff(reconstruction, batch, cfg.diffmap).data
        active = output.difference.data
        filtration = model.dgfe.filtration
        if filtration is not None:
            binary = filtration.binary(active)
        else:
            binary = (active > cfg.dgfe.threshold_value).to(active.dtype)
        detections = self.inference.detect(batch)
        original = tensor_to_image(batch[0])
        mask = binary[0, 0].cpu().numpy() > 0.5
        return {
            "original": original,
            "reconstruction": tensor_to_image(reconstruction[0]),
            "pixel_diff": heatmap(pixel[0]),
            "highfreq_diff": heatmap(highfreq[0]),
            "binary_overlay": overlay_mask(original, mask),
            "detections": draw_detections(original, detections),
        }

    def visualize(
        self, image_path: Union[str, Path], out_dir: Union[str, Path], stem: Optional[str] = None
    ) -> list[Path]:
        image_path = Path(image_path)
        stem = stem or image_path.stem
        panels = self.render(image_to_tensor(read_png(image_path)))
        written = [
            write_png(Path(out_dir) / f"{stem}_{suffix}.png", panels[suffix]) for suffix in SUFFIXES
        ]
        logger.info("wrote %d visualization files for %s to %s", len(written), image_path, out_dir)
        return written
