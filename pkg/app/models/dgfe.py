"""Difference-map guided feature enhancement.

Filtration turns the image-resolution difference map into a feature-resolution
map F = resize(D > t) + 1 with a hard forward pass and a logistic surrogate
backward pass. Reweighting produces per-channel weights from average and max
pooled features through a shared two-layer perceptron. Attention mode applies
M = w * F to the finest pyramid level; concat and multiply are ablation variants.
"""
import logging
from typing import Optional
import torch
import torch.nn.functional as F
from torch import nn
from app.helpers.enum import DgfeMode, ResizeMode, ThresholdMode
from app.helpers.exception_handler import ConfigurationError, ShapeError
from app.schemas.model import DgfeConfig

logger = logging.getLogger(__name__)


def resize_map(x: torch.Tensor, window: int, mode: ResizeMode) -> torch.Tensor:
    if mode is ResizeMode.MAXPOOL:
        return F.max_pool2d(x, kernel_size=window, stride=window)
    size = (x.shape[-2] // window, x.shape[-1] // window)
    if mode is ResizeMode.NEAREST:
        return F.interpolate(x, size=size, mode="nearest")
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def soft_binarize(d: torch.Tensor, threshold: torch.Tensor, temperature: float) -> torch.Tensor:
    return torch.sigmoid((d - threshold) / temperature)


class ThresholdResize(torch.autograd.Function):
    """resize(D > t) forward; gradient of resize(sigmoid((D - t) / tau)) backward."""

    @staticmethod
    def forward(ctx, d, threshold, temperature, window, mode):
        ctx.save_for_backward(d, threshold)
        ctx.temperature = temperature
        ctx.window = window
        ctx.mode = mode
        return resize_map((d > threshold).to(d.dtype), window, mode)

    @staticmethod
    def backward(ctx, grad_output):
        d, threshold = ctx.saved_tensors
        need_d, need_t = ctx.needs_input_grad[:2]
        with torch.enable_grad():
            d_ = d.detach().requires_grad_(need_d)
            t_ = threshold.detach().requires_grad_(need_t)
            surrogate = resize_map(soft_binarize(d_, t_, ctx.temperature), ctx.window, ctx.mode)
            inputs = [x for x, need in ((d_, need_d), (t_, need_t)) if need]
            grads = list(torch.autograd.grad(surrogate, inputs, grad_output))
        grad_d = grads.pop(0) if need_d else None
        grad_t = grads.pop(0) if need_t else None
        return grad_d, grad_t, None, None, None


def filtration(
    d: torch.Tensor,
    threshold: Optional[torch.Tensor],
    feature_size: tuple[int, int],
    window: int = 4,
    temperature: float = 0.05,
    mode: ResizeMode = ResizeMode.MAXPOOL,
    offset: float = 1.0,
) -> torch.Tensor:
    """F = resize(D_b) + offset at feature resolution; threshold None resizes raw D."""
    expected = (feature_size[0] * window, feature_size[1] * window)
    if tuple(d.shape[-2:]) != expected:
        raise ShapeError(
            f"difference map {tuple(d.shape[-2:])} is not {window}x the feature size {feature_size}"
        )
    if threshold is None:
        return resize_map(d, window, mode) + offset
    return ThresholdResize.apply(d, threshold, temperature, window, mode) + offset


class Filtration(nn.Module):
    def __init__(self, cfg: DgfeConfig, window: int = 4, offset: float = 1.0):
        super().__init__()
        self.mode = cfg.threshold_mode
        self.temperature = cfg.temperature
        self.resize = cfg.resize
        self.window = window
        self.offset = offset
        self.stop_gradient = cfg.stop_gradient
        value = torch.tensor(cfg.threshold_value)
        if self.mode is ThresholdMode.LEARNABLE:
            self.threshold = nn.Parameter(value)
        else:
            self.register_buffer("threshold", value)

    def binary(self, d: torch.Tensor) -> torch.Tensor:
        """D_b at image resolution (raw D when thresholding is disabled)."""
        if self.mode is ThresholdMode.NONE:
            return d.detach()
        return (d > self.threshold).to(d.dtype).detach()

    def forward(self, d: torch.Tensor, feature_size: tuple[int, int]) -> torch.Tensor:
        if self.stop_gradient:
            d = d.detach()
        threshold = None if self.mode is ThresholdMode.NONE else self.threshold
        return filtration(
            d, threshold, feature_size, self.window, self.temperature, self.resize, self.offset
        )

    @torch.no_grad()
    def clamp_(self) -> None:
        self.threshold.clamp_(0.0, 1.0)


class Reweighting(nn.Module):
    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction:
            raise ConfigurationError(
                f"channels {channels} not divisible by reduction ratio {reduction}"
            )
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels // reduction),
            nn.ReLU(inplace=True),
            nn.Linear(channels // reduction, channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c = x.shape[:2]
        avg_out = self.mlp(x.mean(dim=(2, 3)))
        max_out = self.mlp(x.amax(dim=(2, 3)))
        return torch.sigmoid(avg_out + max_out).view(n, c, 1, 1)


def reweight(feature: torch.Tensor, module: Reweighting) -> torch.Tensor:
    return module(feature)


def enhance(
    feature: torch.Tensor,
    d: torch.Tensor,
    filtration_module: Filtration,
    reweighting: Reweighting,
) -> torch.Tensor:
    attention = reweighting(feature) * filtration_module(d, tuple(feature.shape[-2:]))
    return attention * feature


def enhance_concat(feature: torch.Tensor, binary: torch.Tensor, fuse: nn.Conv2d) -> torch.Tensor:
    """binary: resized D_b at feature resolution."""
    if binary.shape[-2:] != feature.shape[-2:]:
        raise ShapeError(f"map {tuple(binary.shape)} does not match feature {tuple(feature.shape)}")
    return fuse(torch.cat([feature, binary], dim=1))


def enhance_multiply(feature: torch.Tensor, binary: torch.Tensor) -> torch.Tensor:
    """binary: resized D_b at feature resolution, no +1 offset."""
    if binary.shape[-2:] != feature.shape[-2:]:
        raise ShapeError(f"map {tuple(binary.shape)} does not match feature {tuple(feature.shape)}")
    return binary * feature


class DGFE(nn.Module):
    def __init__(self, channels: int, cfg: DgfeConfig, window: int = 4):
        super().__init__()
        self.mode = cfg.mode
        self.filtration = None
        self.reweighting = None
        self.fuse = None
        if self.mode is DgfeMode.ATTENTION:
            self.filtration = Filtration(cfg, window, offset=1.0)
            self.reweighting = Reweighting(channels, cfg.reduction)
        elif self.mode is DgfeMode.CONCAT:
            self.filtration = Filtration(cfg, window, offset=0.0)
            self.fuse = nn.Conv2d(channels + 1, channels, 1)
        elif self.mode is DgfeMode.MULTIPLY:
            self.filtration = Filtration(cfg, window, offset=0.0)
        logger.debug("DGFE mode=%s threshold=%s window=%d", cfg.mode.value, cfg.threshold, window)

    @property
    def threshold(self) -> Optional[float]:
        if self.filtration is None or self.filtration.mode is ThresholdMode.NONE:
            return None
        return self.filtration.threshold.detach().item()

    def clamp_(self) -> None:
        if self.filtration is not None and self.filtration.mode is ThresholdMode.LEARNABLE:
            self.filtration.clamp_()

    def forward(self, feature: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
        if self.mode is DgfeMode.OFF:
            return feature
        if self.mode is DgfeMode.ATTENTION:
            return enhance(feature, d, self.filtration, self.reweighting)
        resized = self.filtration(d, tuple(feature.shape[-2:]))
        if self.mode is DgfeMode.CONCAT:
            return enhance_concat(feature, resized, self.fuse)
        return enhance_multiply(feature, resized)
