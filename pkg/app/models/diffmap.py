"""Difference maps between a reconstruction and the image it reconstructs.

The pixel flavor is the channel mean of absolute differences. The high-frequency
flavor applies the same reduction to both images after an ideal radial high-pass
filter in the centered Fourier domain.
"""
import math
import torch
from pydantic import BaseModel, ConfigDict
from torch.fft import fft2, fftshift, ifft2, ifftshift
from app.helpers.enum import DiffFlavor
from app.helpers.exception_handler import ShapeError
from app.schemas.model import DiffMapConfig, HighPassConfig

_SPATIAL = (-2, -1)


class DifferenceMap(BaseModel):
    data: torch.Tensor
    flavor: DiffFlavor
    source_shape: tuple[int, int]

    model_config = ConfigDict(arbitrary_types_allowed=True)


def _check_pair(reconstruction: torch.Tensor, original: torch.Tensor) -> None:
    if reconstruction.shape != original.shape:
        raise ShapeError(
            f"difference map inputs differ in shape: {tuple(reconstruction.shape)} "
            f"vs {tuple(original.shape)}"
        )
    if reconstruction.dim() < 3:
        raise ShapeError(f"expected (..., C, H, W) images, got {tuple(reconstruction.shape)}")


def radial_distance(height: int, width: int, device=None, dtype=torch.float64) -> torch.Tensor:
    """Distance of each centered spectrum bin from DC, normalized by the half-diagonal."""
    fy = torch.arange(height, device=device, dtype=dtype) - height // 2
    fx = torch.arange(width, device=device, dtype=dtype) - width // 2
    dist = torch.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    return dist / math.hypot(height / 2, width / 2)


def _filter(img: torch.Tensor, cutoff: float, keep_high: bool) -> torch.Tensor:
    height, width = img.shape[-2:]
    dist = radial_distance(height, width, device=img.device)
    mask = dist > cutoff if keep_high else dist <= cutoff
    spectrum = fftshift(fft2(img, dim=_SPATIAL), dim=_SPATIAL)
    spectrum = spectrum * mask.to(spectrum.real.dtype)
    return ifft2(ifftshift(spectrum, dim=_SPATIAL), dim=_SPATIAL).real


def highpass(img: torch.Tensor, cfg: HighPassConfig = HighPassConfig()) -> torch.Tensor:
    return _filter(img, cfg.cutoff, keep_high=True)


def lowpass(img: torch.Tensor, cfg: HighPassConfig = HighPassConfig()) -> torch.Tensor:
    return _filter(img, cfg.cutoff, keep_high=False)


def pixel_diff(reconstruction: torch.Tensor, original: torch.Tensor) -> DifferenceMap:
    _check_pair(reconstruction, original)
    data = (reconstruction - original).abs().mean(dim=-3, keepdim=True)
    return DifferenceMap(
        data=data, flavor=DiffFlavor.PIXEL, source_shape=tuple(original.shape[-2:])
    )


def highfreq_diff(
    reconstruction: torch.Tensor,
    original: torch.Tensor,
    cfg: HighPassConfig = HighPassConfig(),
) -> DifferenceMap:
    _check_pair(reconstruction, original)
    data = pixel_diff(highpass(reconstruction, cfg), highpass(original, cfg)).data
    return DifferenceMap(
        data=data, flavor=DiffFlavor.HIGH_FREQUENCY, source_shape=tuple(original.shape[-2:])
    )


def difference_map(
    reconstruction: torch.Tensor, original: torch.Tensor, cfg: DiffMapConfig
) -> DifferenceMap:
    if cfg.flavor is DiffFlavor.HIGH_FREQUENCY:
        return highfreq_diff(reconstruction, original, cfg)
    return pixel_diff(reconstruction, original)
