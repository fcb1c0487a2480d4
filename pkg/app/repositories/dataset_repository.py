import logging
from pathlib import Path
from typing import Iterable, Union
import numpy as np
import torch
from PIL import Image
from pydantic import ValidationError
from torch.utils.data import Dataset
from app.helpers.exception_handler import DatasetEmptyError, StorageError, get_message_validation
from app.schemas.scene import SceneRecord

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
IMAGE_DIR = "images"


def image_to_tensor(array: np.ndarray) -> torch.Tensor:
    """H x W x 3 uint8 -> 3 x H x W float32 in [0, 1]."""
    return torch.from_numpy(np.array(array, copy=True)).permute(2, 0, 1).float() / 255.0


def tensor_to_image(image: torch.Tensor) -> np.ndarray:
    array = image.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy()
    return np.round(array * 255.0).astype(np.uint8)


def read_png(path: Union[str, Path]) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except OSError as exc:
        raise StorageError(f"cannot read image {path}: {exc}")


def write_png(path: Union[str, Path], array: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(array).save(path, format="PNG")
    except OSError as exc:
        raise StorageError(f"cannot write image {path}: {exc}")
    return path


class DatasetRepository:
    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    @classmethod
    def open(cls, path: Union[str, Path]) -> "DatasetRepository":
        """Accept a dataset directory or the manifest file inside it."""
        path = Path(path)
        return cls(path.parent if path.suffix == ".jsonl" else path)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def image_path(self, index: int) -> str:
        return f"{IMAGE_DIR}/{index:06d}.png"

    def save_image(self, relative: str, array: np.ndarray) -> Path:
        return write_png(self.root / relative, array)

    def load_image(self, relative: str) -> torch.Tensor:
        return image_to_tensor(read_png(self.root / relative))

    def write_manifest(self, records: Iterable[SceneRecord]) -> Path:
        lines = [record.model_dump_json() + "\n" for record in records]
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            with open(self.manifest_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(lines)
        except OSError as exc:
            raise StorageError(f"cannot write manifest {self.manifest_path}: {exc}")
        logger.info("wrote %d records to %s", len(lines), self.manifest_path)
        return self.manifest_path

    def read_manifest(self) -> list[SceneRecord]:
        try:
            text = self.manifest_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot read manifest {self.manifest_path}: {exc}")
        records = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(SceneRecord.model_validate_json(line))
            except ValidationError as exc:
                raise StorageError(
                    f"{self.manifest_path}:{number}: {get_message_validation(exc)}"
                )
        return records

    def read_nonempty(self) -> list[SceneRecord]:
        records = self.read_manifest()
        if not records:
            raise DatasetEmptyError(f"dataset {self.root} has no records")
        return records


class SceneDataset(Dataset):
    def __init__(self, repository: DatasetRepository, records: list[SceneRecord] = None):
        self.repository = repository
        self.records = records if records is not None else repository.read_nonempty()

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int):
        record = self.records[index]
        image = self.repository.load_image(record.image)
        boxes = torch.tensor(record.boxes, dtype=torch.float32).reshape(-1, 4)
        labels = torch.tensor(record.classes, dtype=torch.long)
        return image, boxes, labels, record.image


def collate_scenes(batch):
    images = torch.stack([item[0] for item in batch])
    targets = [(item[1], item[2]) for item in batch]
    names = [item[3] for item in batch]
    return images, targets, names
