"""Baseline vs reconstruction-guided comparison over several seeds."""
import json
import logging
from pathlib import Path
from typing import Optional
import numpy as np
import torch
from pydantic import BaseModel, Field
from app.core.run_config import RunConfig
from app.helpers.enum import DetectorMode
from app.helpers.exception_handler import StorageError
from app.repositories.dataset_repository import DatasetRepository, SceneDataset
from app.schemas.scene import SceneRecord
from app.services.evaluation_service import compute_ap, object_background_means
from app.services.inference_service import InferenceService
from app.services.synthdata_service import SynthDataService
from app.services.training_service import TrainingService, build_model, mean_recon_loss

logger = logging.getLogger(__name__)


class ExperimentRow(BaseModel):
    mode: DetectorMode
    seed: int
    ap: Optional[float] = None
    ap50: Optional[float] = None
    ap_vt: Optional[float] = None
    recon_start: float
    recon_end: float
    contrast_rate: Optional[float] = None


class ExperimentSummary(BaseModel):
    rows: list[ExperimentRow] = Field(default_factory=list)

    def mean(self, mode: DetectorMode, field: str) -> Optional[float]:
        values = [getattr(r, field) for r in self.rows if r.mode is mode]
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    def table(self) -> str:
        fields = ("ap", "ap50", "ap_vt", "recon_start", "recon_end", "contrast_rate")
        lines = ["mode     | " + " | ".join(f"{name:>13}" for name in fields)]
        for mode in DetectorMode:
            cells = []
            for name in fields:
                value = self.mean(mode, name)
                cells.append(f"{'-':>13}" if value is None else f"{value:13.4f}")
            lines.append(f"{mode.value:<8} | " + " | ".join(cells))
        return "\n".join(lines)


@torch.no_grad()
def contrast_rate(
    inference: InferenceService, repository: DatasetRepository, records: list[SceneRecord]
) -> Optional[float]:
    """Share of images whose difference map is brighter on objects than on background."""
    hits, total = 0, 0
    for record in records:
        output = inference.forward(repository.load_image(record.image).unsqueeze(0))
        if output.difference is None:
            return None
        obj, bg = object_background_means(output.difference.data[0], record.boxes)
        if obj is None or bg is None:
            continue
        hits += int(obj > bg)
        total += 1
    return hits / total if total else None


class ExperimentService:
    def __init__(self, config: RunConfig, seeds: list[int]):
        self.config = config
        self.seeds = seeds
        self.root = Path(config.output_dir)

    def prepare_data(self) -> dict[str, DatasetRepository]:
        dataset = self.config.dataset
        synth = SynthDataService(dataset.workers)
        splits = {}
        for split in ("train", "val"):
            out_dir = self.root / "data" / split
            synth.write_dataset(
                self.config.scene, dataset.splits.get(split, 0),
                dataset.split_seed(self.config.seed, split), out_dir,
            )
            splits[split] = DatasetRepository(out_dir)
        return splits

    def variant(self, mode: DetectorMode, seed: int) -> RunConfig:
        data = self.config.model_dump(mode="json")
        data["seed"] = seed
        data["output_dir"] = str(self.root / mode.value / f"seed_{seed}")
        data["model"]["detector"]["mode"] = mode.value
        return RunConfig.model_validate(data)

    def run_one(
        self, mode: DetectorMode, seed: int, train: DatasetRepository, val: DatasetRepository
    ) -> ExperimentRow:
        config = self.variant(mode, seed)
        val_records = val.read_nonempty()
        val_dataset = SceneDataset(val, val_records)
        recon_start = mean_recon_loss(build_model(config), val_dataset)
        result = TrainingService(config).fit(SceneDataset(train))
        inference = InferenceService.from_checkpoint(result.checkpoint)
        report = compute_ap(inference.detect_dataset(val, val_records), val_records)
        row = ExperimentRow(
            mode=mode,
            seed=seed,
            ap=report.ap,
            ap50=report.ap50,
            ap_vt=report.ap_vt,
            recon_start=recon_start,
            recon_end=mean_recon_loss(inference.model, val_dataset),
            contrast_rate=contrast_rate(inference, val, val_records),
        )
        logger.info("experiment %s seed %d: %s", mode.value, seed, row.model_dump())
        return row

    def run(self) -> ExperimentSummary:
        splits = self.prepare_data()
        summary = ExperimentSummary()
        for seed in self.seeds:
            for mode in (DetectorMode.BASELINE, DetectorMode.SRTOD):
                summary.rows.append(self.run_one(mode, seed, splits["train"], splits["val"]))
        self.save(summary)
        return summary

    def save(self, summary: ExperimentSummary) -> Path:
        path = self.root / "experiment.json"
        payload = {
            "rows": summary.model_dump(mode="json")["rows"],
            "mean": {
                mode.value: {
                    name: summary.mean(mode, name)
                    for name in ("ap", "ap50", "ap_vt", "recon_start", "recon_end", "contrast_rate")
                }
                for mode in DetectorMode
            },
        }
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}")
        return path
