import hashlib
import json
import logging
from pathlib import Path
from typing import Optional, Union
from pydantic import Field, ValidationError, field_validator, model_validator
from app.helpers.exception_handler import ConfigurationError, StorageError, as_configuration_error
from app.schemas.base import StrictSchema
from app.schemas.model import ModelConfig
from app.schemas.scene import SceneConfig

logger = logging.getLogger(__name__)


class DatasetConfig(StrictSchema):
    root: str = "data"
    splits: dict[str, int] = Field(default_factory=lambda: {"train": 500, "val": 100})
    workers: int = Field(default=1, ge=1)

    @field_validator("splits")
    @classmethod
    def check_counts(cls, value: dict[str, int]) -> dict[str, int]:
        if any(count < 0 for count in value.values()):
            raise ValueError("split counts must be non-negative")
        return value

    def split_seed(self, seed: int, split: str) -> int:
        # splits never share per-image seeds
        return seed + list(self.splits).index(split) * 1_000_000


class OptimizerConfig(StrictSchema):
    lr: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    grad_clip: Optional[float] = Field(default=10.0, gt=0.0)


class TrainConfig(StrictSchema):
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=8, ge=1)
    checkpoint_every: int = Field(default=5, ge=1)


class RunConfig(StrictSchema):
    seed: int = 0
    output_dir: str = "runs/default"
    scene: SceneConfig = Field(default_factory=SceneConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def check_class_count(self):
        if self.scene.classes > self.model.detector.num_classes:
            raise ValueError(
                f"scene.classes ({self.scene.classes}) exceeds "
                f"model.detector.num_classes ({self.model.detector.num_classes})"
            )
        return self

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}")
        try:
            return cls.model_validate_json(text)
        except ValidationError as exc:
            raise as_configuration_error(exc)

    def dump(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write config {path}: {exc}")
        return path

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def model_hash(self) -> str:
        """Hash of the network section only; checkpoints are checked against it."""
        payload = json.dumps(self.model.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_overrides(
        self, seed: Optional[int] = None, output_dir: Optional[str] = None
    ) -> "RunConfig":
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if output_dir is not None:
            updates["output_dir"] = output_dir
        if updates:
            logger.debug("config overrides: %s", updates)
        return self.model_copy(update=updates)
