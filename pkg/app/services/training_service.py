import logging
from pathlib import Path
from typing import NamedTuple, Optional, Union
import torch
from torch.utils.data import DataLoader
from app.core.config import settings
from app.core.run_config import RunConfig
from app.helpers.enum import DetectorMode
from app.helpers.exception_handler import TrainingDivergedError
from app.models.detector import SRTODDetector, detection_losses
from app.models.recon_head import recon_loss
from app.repositories.checkpoint_repository import CheckpointRepository, warn_on_mismatch
from app.repositories.dataset_repository import SceneDataset, collate_scenes
from app.repositories.metrics_repository import MetricsRepository
from app.schemas.detection import LossReport, StepRecord

logger = logging.getLogger(__name__)

Targets = list[tuple[torch.Tensor, torch.Tensor]]

METRICS_NAME = "metrics.jsonl"
CHECKPOINT_NAME = "checkpoint.pt"
CONFIG_NAME = "config.json"


class TrainResult(NamedTuple):
    checkpoint: Path
    metrics: Path
    step: int
    last: Optional[LossReport]


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(settings.NUM_THREADS)


def build_model(config: RunConfig) -> SRTODDetector:
    seed_everything(config.seed)
    return SRTODDetector(config.model).to(settings.DEVICE)


def build_optimizer(model: SRTODDetector, config: RunConfig) -> torch.optim.SGD:
    opt = config.optimizer
    return torch.optim.SGD(
        model.parameters(), lr=opt.lr, momentum=opt.momentum, weight_decay=opt.weight_decay
    )


def compute_losses(
    model: SRTODDetector, images: torch.Tensor, targets: Targets
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    output = model(images)
    cls_loss, box_loss = detection_losses(output, targets, model.cfg.detector)
    if output.reconstruction is None:
        rec = cls_loss.new_zeros(())
    else:
        rec = recon_loss(output.reconstruction, images)
    return cls_loss, box_loss, rec


def training_step(
    model: SRTODDetector,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    targets: Targets,
    loss_weight: float,
    grad_clip: Optional[float] = None,
    step: int = 0,
) -> LossReport:
    """One SGD update; the returned report holds the losses measured before it."""
    model.train()
    cls_loss, box_loss, rec = compute_losses(model, images, targets)
    total = cls_loss + box_loss + loss_weight * rec
    if not torch.isfinite(total):
        raise TrainingDivergedError(
            f"non-finite loss at step {step}: cls={float(cls_loss)}, box={float(box_loss)}, "
            f"recon={float(rec)}, weight={loss_weight}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    model.clamp_()
    return LossReport.compose(
        float(cls_loss.detach()), float(box_loss.detach()), float(rec.detach()), loss_weight
    )


@torch.no_grad()
def mean_recon_loss(model: SRTODDetector, dataset: SceneDataset, batch_size: int = 8) -> float:
    """Average reconstruction MSE over a dataset, srtod path forced on."""
    model.eval()
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False, collate_fn=collate_scenes)
    total, count = 0.0, 0
    for images, _, _ in loader:
        output = model(images.to(settings.DEVICE), DetectorMode.SRTOD)
        total += float(recon_loss(output.reconstruction, images.to(settings.DEVICE))) * len(images)
        count += len(images)
    return total / max(1, count)


class TrainingService:
    def __init__(self, config: RunConfig, checkpoints: CheckpointRepository = None):
        self.config = config
        self.checkpoints = checkpoints or CheckpointRepository()
        self.output_dir = Path(config.output_dir)

    def _loader(self, dataset: SceneDataset, epoch: int) -> DataLoader:
        generator = torch.Generator().manual_seed(self.config.seed + epoch)
        return DataLoader(
            dataset,
            batch_size=self.config.train.batch_size,
            shuffle=True,
            num_workers=0,
            generator=generator,
            collate_fn=collate_scenes,
        )

    def fit(self, dataset: SceneDataset, resume: Union[str, Path, None] = None) -> TrainResult:
        config = self.config
        model = build_model(config)
        optimizer = build_optimizer(model, config)
        step, start_epoch = 0, 0
        if resume is not None:
            checkpoint = self.checkpoints.load(resume)
            warn_on_mismatch(checkpoint, config)
            model.load_state_dict(checkpoint.model_state)
            if checkpoint.optimizer_state is not None:
                optimizer.load_state_dict(checkpoint.optimizer_state)
            step, start_epoch = checkpoint.step, checkpoint.epoch
            logger.info("resuming from %s at step %d (epoch %d)", resume, step, start_epoch)

        config.dump(self.output_dir / CONFIG_NAME)
        metrics = MetricsRepository(self.output_dir / METRICS_NAME)
        if resume is None:
            metrics.reset()
        metrics.write_header(config, start_step=step)
        loss_weight = config.model.recon.loss_weight
        last = None
        for epoch in range(start_epoch, config.train.epochs):
            epoch_total = 0.0
            batches = 0
            for images, targets, _ in self._loader(dataset, epoch):
                images = images.to(settings.DEVICE)
                targets = [(b.to(settings.DEVICE), l.to(settings.DEVICE)) for b, l in targets]
                last = training_step(
                    model, optimizer, images, targets, loss_weight, config.optimizer.grad_clip, step
                )
                step += 1
                metrics.append(
                    StepRecord(
                        step=step,
                        epoch=epoch + 1,
                        losses=last,
                        lr=optimizer.param_groups[0]["lr"],
                        threshold=model.dgfe.threshold,
                    )
                )
                logger.debug("step %d: %s", step, last.model_dump())
                epoch_total += last.total
                batches += 1
            logger.info(
                "epoch %d/%d finished: mean loss %.4f over %d steps",
                epoch + 1, config.train.epochs, epoch_total / max(1, batches), batches,
            )
            if (epoch + 1) % config.train.checkpoint_every == 0 and epoch + 1 < config.train.epochs:
                self.checkpoints.save(
                    self.output_dir / "checkpoints" / f"epoch_{epoch + 1:03d}.pt",
                    model, config, optimizer, step, epoch + 1,
                )
        final = self.checkpoints.save(
            self.output_dir / CHECKPOINT_NAME, model, config, optimizer, step,
            max(start_epoch, config.train.epochs),
        )
        return TrainResult(final, metrics.path, step, last)


def get_training_service(config: RunConfig) -> TrainingService:
    return TrainingService(config)
