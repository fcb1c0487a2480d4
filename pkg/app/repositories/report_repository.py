import csv
import logging
from pathlib import Path
from typing import Iterable, Union
from app.helpers.exception_handler import StorageError
from app.schemas.detection import DetectionRecord
from app.schemas.evaluation import APReport

logger = logging.getLogger(__name__)


class ReportRepository:
    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def _write_text(self, name: str, text: str) -> Path:
        path = self.root / name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}")
        return path

    def save_report(self, report: APReport, name: str = "report.json") -> Path:
        path = self._write_text(name, report.model_dump_json(indent=2) + "\n")
        logger.info("report written to %s", path)
        return path

    def save_detections(
        self, records: Iterable[DetectionRecord], name: str = "detections.jsonl"
    ) -> Path:
        return self._write_text(name, "".join(r.model_dump_json() + "\n" for r in records))

    def save_pr_curves(self, report: APReport, name: str = "pr_curves.csv") -> Path:
        path = self.root / name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["bucket", "iou", "recall", "precision"])
                for bucket, curve in report.curves.items():
                    for recall, precision in zip(curve.recall, curve.precision):
                        writer.writerow([bucket, curve.iou_threshold, recall, precision])
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}")
        return path

    def read_detections(self, name: str = "detections.jsonl") -> list[DetectionRecord]:
        path = self.root / name
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}")
        return [DetectionRecord.model_validate_json(line) for line in lines if line.strip()]
