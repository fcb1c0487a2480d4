from typing import NamedTuple
import torch
import torch.nn.functional as F
from torch import nn
from app.helpers.enum import NormKind
from app.helpers.exception_handler import ConfigurationError, ShapeError
from app.schemas.model import BackboneConfig

PYRAMID_STRIDES = {"p2": 4, "p3": 8, "p4": 16, "p5": 32, "p6": 64}
INPUT_DIVISOR = 64


class FeaturePyramid(NamedTuple):
    p2: torch.Tensor
    p3: torch.Tensor
    p4: torch.Tensor
    p5: torch.Tensor
    p6: torch.Tensor

    def level(self, name: str) -> torch.Tensor:
        return getattr(self, name.lower())

    def levels_from(self, name: str) -> list[torch.Tensor]:
        """Levels from `name` (inclusive) to P6, finest first."""
        return list(self)[self._fields.index(name.lower()):]


def check_image(image: torch.Tensor) -> torch.Tensor:
    """Batch a 3 x H x W image and enforce the stride-64 contract."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected (N,) 3 x H x W image, got {tuple(image.shape)}")
    height, width = image.shape[-2:]
    if height % INPUT_DIVISOR or width % INPUT_DIVISOR:
        raise ShapeError(
            f"image dims {height}x{width} must be divisible by {INPUT_DIVISOR}"
        )
    return image


def make_norm(kind: NormKind, channels: int) -> nn.Module:
    if kind is NormKind.BATCH:
        return nn.BatchNorm2d(channels)
    return nn.GroupNorm(8 if channels % 8 == 0 else 4, channels)


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, norm: NormKind):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride, 1, bias=False)
        self.norm1 = make_norm(norm, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, 1, 1, bias=False)
        self.norm2 = make_norm(norm, out_channels)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride, bias=False),
                make_norm(norm, out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Backbone(nn.Module):
    """Stem at stride 2, then four stride-2 stages: C2..C5 at strides 4..32."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        channels = cfg.channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, channels, 3, 2, 1, bias=False),
            make_norm(cfg.norm, channels),
            nn.ReLU(inplace=True),
        )
        self.stages = nn.ModuleList()
        for depth in cfg.stage_depths:
            blocks = [ResidualBlock(channels, channels, 2, cfg.norm)]
            blocks += [ResidualBlock(channels, channels, 1, cfg.norm) for _ in range(depth - 1)]
            self.stages.append(nn.Sequential(*blocks))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = self.stem(x)
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features


class FeaturePyramidNetwork(nn.Module):
    def __init__(self, channels: int, num_inputs: int = 4):
        super().__init__()
        self.lateral = nn.ModuleList(nn.Conv2d(channels, channels, 1) for _ in range(num_inputs))
        self.output = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=1) for _ in range(num_inputs)
        )

    def forward(self, features: list[torch.Tensor]) -> FeaturePyramid:
        last = self.lateral[-1](features[-1])
        merged = [last]
        for lateral, feature in zip(reversed(self.lateral[:-1]), reversed(features[:-1])):
            last = lateral(feature) + F.interpolate(last, size=feature.shape[-2:], mode="nearest")
            merged.insert(0, last)
        outputs = [conv(x) for conv, x in zip(self.output, merged)]
        p6 = F.max_pool2d(outputs[-1], kernel_size=1, stride=2)
        return FeaturePyramid(*outputs, p6)


class BackboneFPN(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        if cfg.channels % 4:
            raise ConfigurationError("backbone channels must be divisible by 4")
        self.channels = cfg.channels
        self.body = Backbone(cfg)
        self.fpn = FeaturePyramidNetwork(cfg.channels, len(cfg.stage_depths))
        reset_parameters(self)

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        return self.fpn(self.body(check_image(image)))


def reset_parameters(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.GroupNorm)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def extract_pyramid(model: BackboneFPN, image: torch.Tensor) -> FeaturePyramid:
    return model(image)
