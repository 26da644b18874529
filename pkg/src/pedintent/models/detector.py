"""Single-shot grid detector with a feature tap at an intermediate block."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from pedintent.errors import ConfigError


@dataclass(frozen=True)
class ConvBlockSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    batchnorm: bool = True
    activation: str = "leaky"  # "leaky" (slope 0.1) or "linear"


@dataclass(frozen=True)
class DetectorConfig:
    blocks: tuple[ConvBlockSpec, ...]
    tap_layer: int  # 1-based index of the block whose output feeds the auxiliary head
    n_anchors: int
    n_classes: int = 4
    in_channels: int = 3

    @property
    def out_depth(self) -> int:
        return 1 + self.n_classes + 4

    @property
    def total_stride(self) -> int:
        return math.prod(b.stride for b in self.blocks)

    def stride_at(self, layer: int) -> int:
        return math.prod(b.stride for b in self.blocks[:layer])

    def channels_at(self, layer: int) -> int:
        return self.blocks[layer - 1].out_channels

    def validate(self, grid_stride: int | None = None) -> "DetectorConfig":
        if not 1 <= self.tap_layer < len(self.blocks):
            raise ConfigError("tap_layer", f"{self.tap_layer} not in [1, {len(self.blocks) - 1}]")
        if grid_stride is not None and self.total_stride != grid_stride:
            raise ConfigError("blocks", f"composed stride {self.total_stride} != grid stride {grid_stride}")
        for b in self.blocks:
            if b.kernel % 2 != 1:
                raise ConfigError("blocks", "kernels must be odd")
        return self

    def with_tap(self, layer: int) -> "DetectorConfig":
        return DetectorConfig(self.blocks, layer, self.n_anchors, self.n_classes, self.in_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        d["blocks"] = tuple(ConvBlockSpec(**b) for b in d["blocks"])
        return cls(**d)


class ConvBlock(nn.Module):
    def __init__(self, in_channels: int, spec: ConvBlockSpec):
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels, spec.out_channels, spec.kernel, spec.stride, spec.kernel // 2, bias=not spec.batchnorm
        )
        self.bn = nn.BatchNorm2d(spec.out_channels) if spec.batchnorm else None
        self.act = nn.LeakyReLU(0.1) if spec.activation == "leaky" else None

    def forward(self, x):
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        if self.act is not None:
            x = self.act(x)
        return x


class Detector(nn.Module):
    """Returns ``(tap, grid)``: the post-BN, post-activation output of block
    ``tap_layer`` and the raw prediction tensor shaped ``(B, H, W, A, 1+N_C+4)``."""

    def __init__(self, config: DetectorConfig):
        super().__init__()
        config.validate()
        self.config = config
        blocks = []
        c = config.in_channels
        for spec in config.blocks:
            blocks.append(ConvBlock(c, spec))
            c = spec.out_channels
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(c, config.n_anchors * config.out_depth, 1)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if images.dim() != 4 or images.shape[1] != self.config.in_channels:
            raise ConfigError("image", f"expected (B, {self.config.in_channels}, H, W), got {tuple(images.shape)}")
        s = self.config.total_stride
        if images.shape[2] % s or images.shape[3] % s:
            raise ConfigError("image", f"{tuple(images.shape[2:])} not divisible by stride {s}")
        tap = None
        x = images
        for n, block in enumerate(self.blocks, start=1):
            x = block(x)
            if n == self.config.tap_layer:
                tap = x
        return tap, self.to_grid(self.head(x))

    def forward_tap(self, images: torch.Tensor) -> torch.Tensor:
        x = images
        for block in self.blocks[: self.config.tap_layer]:
            x = block(x)
        return x

    def to_grid(self, head_out: torch.Tensor) -> torch.Tensor:
        b, _, h, w = head_out.shape
        grid = head_out.view(b, self.config.n_anchors, self.config.out_depth, h, w)
        return grid.permute(0, 3, 4, 1, 2)


def receptive_interval(config: DetectorConfig, layer: int, pixel: int) -> tuple[int, int]:
    """Output positions (inclusive range, one axis) of block ``layer`` that
    can see input position ``pixel``."""
    lo, hi = pixel, pixel
    for spec in config.blocks[:layer]:
        k, s, p = spec.kernel, spec.stride, spec.kernel // 2
        # output o reads inputs [o*s - p, o*s - p + k - 1]
        lo = math.ceil((lo - k + 1 + p) / s)
        hi = math.floor((hi + p) / s)
    return max(lo, 0), hi
