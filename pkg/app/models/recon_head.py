import torch
import torch.nn.functional as F
from torch import nn
from app.helpers.enum import PyramidLevel
from app.helpers.exception_handler import ConfigurationError, ShapeError

UP_BLOCKS = {PyramidLevel.P2: 2, PyramidLevel.P3: 3}


class UpBlock(nn.Module):
    """Transpose conv (x2) followed by two channel-preserving 3x3 convs, ReLU after each conv."""

    def __init__(self, in_channels: int):
        super().__init__()
        if in_channels % 2:
            raise ConfigurationError(f"up-block input channels must be even, got {in_channels}")
        out_channels = in_channels // 2
        self.tran_conv = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.conv1 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.conv2(F.relu(self.conv1(self.tran_conv(x)))))


class ReconstructionHead(nn.Module):
    def __init__(self, channels: int, source_level: PyramidLevel = PyramidLevel.P2):
        super().__init__()
        n_up = UP_BLOCKS[source_level]
        if channels % (2 ** n_up):
            raise ConfigurationError(
                f"{source_level.value} reconstruction needs channels divisible by {2 ** n_up}"
            )
        self.source_level = source_level
        self.blocks = nn.Sequential(*(UpBlock(channels // 2 ** i) for i in range(n_up)))
        self.conv = nn.Conv2d(channels // 2 ** n_up, 3, 3, padding=1)

    @property
    def scale(self) -> int:
        return 2 ** len(self.blocks)

    def forward(self, source: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(self.blocks(source)))


def up_block(block: UpBlock, x: torch.Tensor) -> torch.Tensor:
    return block(x)


def reconstruct(head: ReconstructionHead, source: torch.Tensor) -> torch.Tensor:
    return head(source)


def recon_loss(reconstruction: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    if reconstruction.shape != original.shape:
        raise ShapeError(
            f"reconstruction {tuple(reconstruction.shape)} does not match "
            f"image {tuple(original.shape)}"
        )
    return F.mse_loss(reconstruction, original)
