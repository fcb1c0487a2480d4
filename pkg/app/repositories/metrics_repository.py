import json
from pathlib import Path
from typing import Union
from app.core.run_config import RunConfig
from app.helpers.exception_handler import StorageError
from app.schemas.detection import StepRecord


class MetricsRepository:
    """JSON-lines log: a config header per run or resume, then one record per step."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def reset(self) -> None:
        """Start a fresh log; resumed runs keep appending to the old one."""
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot reset metrics log {self.path}: {exc}")

    def _append(self, line: str) -> None:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise StorageError(f"cannot append to metrics log {self.path}: {exc}")

    def write_header(self, config: RunConfig, start_step: int = 0) -> None:
        header = {
            "kind": "config" if start_step == 0 else "resume",
            "start_step": start_step,
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "ablation": config.model.ablation_tag(),
            "loss_weight": config.model.recon.loss_weight,
        }
        self._append(json.dumps(header, sort_keys=True))

    def append(self, record: StepRecord) -> None:
        self._append(record.model_dump_json())

    def read(self) -> list[dict]:
        try:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise StorageError(f"cannot read metrics log {self.path}: {exc}")
        return [json.loads(line) for line in lines if line.strip()]
