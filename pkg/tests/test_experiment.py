import json
from pathlib import Path
import pytest
from app.core.config import settings
from app.core.run_config import RunConfig
from app.helpers.enum import DetectorMode
from app.services.experiment_service import ExperimentRow, ExperimentService, ExperimentSummary


def test_variant_only_changes_mode_seed_and_output(tiny_config):
    service = ExperimentService(tiny_config, [0])
    variant = service.variant(DetectorMode.BASELINE, 4)
    assert variant.seed == 4
    assert variant.model.detector.mode is DetectorMode.BASELINE
    assert variant.output_dir.endswith("seed_4")
    assert variant.model.dgfe == tiny_config.model.dgfe
    assert variant.scene == tiny_config.scene


def test_summary_means_skip_missing_values():
    summary = ExperimentSummary(
        rows=[
            ExperimentRow(mode=DetectorMode.SRTOD, seed=0, ap_vt=0.2, recon_start=1.0, recon_end=0.5),
            ExperimentRow(mode=DetectorMode.SRTOD, seed=1, ap_vt=None, recon_start=1.0, recon_end=0.3),
            ExperimentRow(mode=DetectorMode.BASELINE, seed=0, ap_vt=0.1, recon_start=1.0, recon_end=1.0),
        ]
    )
    assert summary.mean(DetectorMode.SRTOD, "ap_vt") == pytest.approx(0.2)
    assert summary.mean(DetectorMode.SRTOD, "recon_end") == pytest.approx(0.4)
    assert summary.mean(DetectorMode.BASELINE, "contrast_rate") is None
    assert "srtod" in summary.table()


def test_small_experiment_runs_both_modes(tiny_config):
    summary = ExperimentService(tiny_config, [0]).run()
    assert [row.mode for row in summary.rows] == [DetectorMode.BASELINE, DetectorMode.SRTOD]
    baseline, srtod = summary.rows
    assert baseline.contrast_rate is None
    assert srtod.contrast_rate is None or 0.0 <= srtod.contrast_rate <= 1.0
    saved = json.loads((Path(tiny_config.output_dir) / "experiment.json").read_text())
    assert len(saved["rows"]) == 2
    assert set(saved["mean"]) == {"baseline", "srtod"}


@pytest.mark.slow
def test_reconstruction_guidance_helps_very_tiny_objects(tmp_path):
    config = RunConfig.load(settings.DEFAULT_RUN_CONFIG).with_overrides(output_dir=str(tmp_path))
    summary = ExperimentService(config, [0, 1, 2]).run()
    assert summary.mean(DetectorMode.SRTOD, "ap_vt") >= summary.mean(DetectorMode.BASELINE, "ap_vt")
    assert summary.mean(DetectorMode.SRTOD, "recon_end") < summary.mean(DetectorMode.SRTOD, "recon_start")
    # difference map is brighter on objects than on background
    assert summary.mean(DetectorMode.SRTOD, "contrast_rate") >= 0.9
