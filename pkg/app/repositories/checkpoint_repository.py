import hashlib
import pickle
import logging
from pathlib import Path
from typing import Any, Optional, Union
import torch
from pydantic import BaseModel, ConfigDict, ValidationError
from torch import nn
from app.core.config import settings
from app.core.run_config import RunConfig
from app.helpers.exception_handler import CheckpointError, StorageError, get_message_validation

logger = logging.getLogger(__name__)


class Checkpoint(BaseModel):
    version: int
    step: int
    epoch: int
    config: RunConfig
    config_hash: str
    model_state: dict[str, Any]
    optimizer_state: Optional[dict[str, Any]] = None
    digest: str = ""

    model_config = ConfigDict(arbitrary_types_allowed=True)


def _feed(hasher, obj) -> None:
    if isinstance(obj, torch.Tensor):
        tensor = obj.detach().cpu().contiguous()
        hasher.update(f"T{tensor.dtype}{tuple(tensor.shape)}".encode())
        hasher.update(tensor.numpy().tobytes())
    elif isinstance(obj, dict):
        for key in sorted(obj, key=str):
            hasher.update(f"K{key!r}".encode())
            _feed(hasher, obj[key])
    elif isinstance(obj, (list, tuple)):
        hasher.update(f"L{len(obj)}".encode())
        for item in obj:
            _feed(hasher, item)
    else:
        hasher.update(f"V{obj!r}".encode())


def content_digest(payload: dict) -> str:
    hasher = hashlib.sha256()
    _feed(hasher, {k: v for k, v in payload.items() if k != "digest"})
    return hasher.hexdigest()


class CheckpointRepository:
    def save(
        self,
        path: Union[str, Path],
        model: nn.Module,
        config: RunConfig,
        optimizer: Optional[torch.optim.Optimizer] = None,
        step: int = 0,
        epoch: int = 0,
    ) -> Path:
        payload = {
            "version": settings.CHECKPOINT_VERSION,
            "step": step,
            "epoch": epoch,
            "config": config.model_dump(mode="json"),
            "config_hash": config.model_hash(),
            "model_state": model.state_dict(),
            "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        }
        return self.write(path, payload)

    def write(self, path: Union[str, Path], payload: dict) -> Path:
        path = Path(path)
        payload = dict(payload)
        payload["digest"] = content_digest(payload)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            torch.save(payload, path)
        except OSError as exc:
            raise StorageError(f"cannot write checkpoint {path}: {exc}")
        logger.info("checkpoint saved to %s (step %d)", path, payload["step"])
        return path

    def load(self, path: Union[str, Path]) -> Checkpoint:
        path = Path(path)
        try:
            payload = torch.load(path, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
        if not isinstance(payload, dict):
            raise CheckpointError(f"checkpoint {path} is not a checkpoint payload")
        if payload.get("version") != settings.CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint {path} has version {payload.get('version')}, "
                f"expected {settings.CHECKPOINT_VERSION}"
            )
        if payload.get("digest") != content_digest(payload):
            raise CheckpointError(f"checkpoint {path} failed its content digest check")
        try:
            return Checkpoint.model_validate(payload)
        except ValidationError as exc:
            raise CheckpointError(f"checkpoint {path}: {get_message_validation(exc)}")

    def as_payload(self, checkpoint: Checkpoint) -> dict:
        return {
            "version": checkpoint.version,
            "step": checkpoint.step,
            "epoch": checkpoint.epoch,
            "config": checkpoint.config.model_dump(mode="json"),
            "config_hash": checkpoint.config_hash,
            "model_state": checkpoint.model_state,
            "optimizer_state": checkpoint.optimizer_state,
        }


def warn_on_mismatch(checkpoint: Checkpoint, config: RunConfig) -> bool:
    """Return True when the checkpoint was trained with a different network config."""
    if checkpoint.config_hash != config.model_hash():
        logger.warning(
            "checkpoint config hash %s does not match the run config hash %s",
            checkpoint.config_hash[:12],
            config.model_hash()[:12],
        )
        return True
    return False
