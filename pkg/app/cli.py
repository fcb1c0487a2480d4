import functools
import logging
import logging.config
import sys
from pathlib import Path
from typing import Optional
import click
import uvicorn
from app.core.config import settings
from app.core.run_config import RunConfig
from app.helpers.exception_handler import CustomException
from app.repositories.dataset_repository import DatasetRepository, SceneDataset
from app.repositories.report_repository import ReportRepository
from app.services.evaluation_service import compute_ap
from app.services.experiment_service import ExperimentService
from app.services.inference_service import InferenceService
from app.services.synthdata_service import get_synthdata_service
from app.services.training_service import get_training_service
from app.services.visualization_service import VisualizationService

logger = logging.getLogger(__name__)


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except CustomException as exc:
            click.echo(f"error {exc.code}: {exc.message}", err=True)
            sys.exit(1)

    return wrapper


def load_config(config: Optional[str], seed: Optional[int], out: Optional[str]) -> RunConfig:
    run_config = RunConfig.load(config) if config else RunConfig()
    return run_config.with_overrides(seed=seed, output_dir=out)


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), default=None,
    help="Run config (JSON). Built-in defaults when omitted.",
)
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed.")
out_option = click.option("--out", type=click.Path(file_okay=False), default=None)


@click.group()
def cli():
    """Tiny object detection with self-reconstruction guidance."""
    logging.config.fileConfig(settings.LOGGING_CONFIG_FILE, disable_existing_loggers=False)


@cli.command()
@config_option
@seed_option
@out_option
@click.option("--count", type=int, default=None, help="Images per split (overrides the config).")
@handle_errors
def gendata(config_path, seed, out, count):
    """Generate the synthetic train/val splits."""
    config = load_config(config_path, seed, None)
    root = Path(out or config.dataset.root)
    service = get_synthdata_service(config.dataset.workers)
    for split, split_count in config.dataset.splits.items():
        manifest = service.write_dataset(
            config.scene,
            split_count if count is None else count,
            config.dataset.split_seed(config.seed, split),
            root / split,
        )
        click.echo(str(manifest))


@cli.command()
@config_option
@seed_option
@out_option
@click.option("--data", type=click.Path(), default=None, help="Training split directory.")
@click.option("--resume", type=click.Path(dir_okay=False), default=None)
@handle_errors
def train(config_path, seed, out, data, resume):
    """Train a detector and write checkpoints plus a metrics log."""
    config = load_config(config_path, seed, out)
    repository = DatasetRepository.open(data or Path(config.dataset.root) / "train")
    result = get_training_service(config).fit(SceneDataset(repository), resume=resume)
    click.echo(str(result.checkpoint))


@cli.command(name="eval")
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True)
@config_option
@out_option
@click.option("--data", type=click.Path(), default=None, help="Evaluation split directory.")
@handle_errors
def evaluate(checkpoint, config_path, out, data):
    """Evaluate a checkpoint and print the AP table."""
    config = RunConfig.load(config_path) if config_path else None
    inference = InferenceService.from_checkpoint(checkpoint, config)
    run_config = config or inference.config
    repository = DatasetRepository.open(data or Path(run_config.dataset.root) / "val")
    records = repository.read_nonempty()
    detections = inference.detect_dataset(repository, records, run_config.train.batch_size)
    report = compute_ap(detections, records)
    reports = ReportRepository(out or Path(run_config.output_dir) / "eval")
    reports.save_detections(detections)
    reports.save_pr_curves(report)
    path = reports.save_report(report)
    click.echo(report.table())
    click.echo(str(path))


@cli.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True)
@click.option("--image", type=click.Path(dir_okay=False), required=True)
@out_option
@handle_errors
def visualize(checkpoint, image, out):
    """Write reconstruction, difference maps and overlays for one image."""
    service = VisualizationService(InferenceService.from_checkpoint(checkpoint))
    for path in service.visualize(image, out or "visualizations"):
        click.echo(str(path))


@cli.command()
@config_option
@seed_option
@out_option
@click.option("--seeds", type=int, multiple=True, default=(0, 1, 2), show_default=True)
@handle_errors
def experiment(config_path, seed, out, seeds):
    """Train baseline and srtod variants per seed and compare them."""
    config = load_config(config_path, seed, out)
    summary = ExperimentService(config, list(seeds)).run()
    click.echo(summary.table())


@cli.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--host", default="0.0.0.0", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(checkpoint, host, port):
    """Serve the detection API."""
    if checkpoint:
        settings.CHECKPOINT_PATH = checkpoint
    uvicorn.run("app.main:app", host=host, port=port)


if __name__ == "__main__":
    cli()
