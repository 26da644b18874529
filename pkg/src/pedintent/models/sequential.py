"""Crop-then-classify baseline: one forward pass per pedestrian track."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from pedintent.models.convlstm import ConvLSTMCell
from pedintent.models.detector import ConvBlock, ConvBlockSpec


@dataclass(frozen=True)
class SequentialBaselineConfig:
    crop_size: tuple[int, int] = (64, 32)  # (h, w)
    encoder: tuple[ConvBlockSpec, ...] = (
        ConvBlockSpec(16, 3, 2),
        ConvBlockSpec(32, 3, 2),
        ConvBlockSpec(64, 3, 2),
        ConvBlockSpec(128, 3, 2),
    )
    hidden_channels: int = 64
    kernel: tuple[int, int] = (3, 3)
    seq_len: int = 8
    in_channels: int = 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop_size"] = list(self.crop_size)
        d["encoder"] = [asdict(b) for b in self.encoder]
        d["kernel"] = list(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SequentialBaselineConfig":
        d = dict(d)
        d["crop_size"] = tuple(d["crop_size"])
        d["encoder"] = tuple(ConvBlockSpec(**b) for b in d["encoder"])
        d["kernel"] = tuple(d["kernel"])
        return cls(**d)


class CropEncoder(nn.Module):
    def __init__(self, config: SequentialBaselineConfig):
        super().__init__()
        blocks, c = [], config.in_channels
        for spec in config.encoder:
            blocks.append(ConvBlock(c, spec))
            c = spec.out_channels
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = c

    def forward(self, x):
        return self.blocks(x)


class RecurrentHead(nn.Module):
    def __init__(self, in_channels: int, config: SequentialBaselineConfig):
        super().__init__()
        self.cell = ConvLSTMCell(in_channels, config.hidden_channels, config.kernel)
        self.fc = nn.Linear(config.hidden_channels, 1)

    def forward(self, feats):
        """``feats``: (B, t, C, h, w) -> (B,) logits."""
        state = None
        for step in range(feats.shape[1]):
            state = self.cell(feats[:, step], state)
        return self.fc(state[0].mean(dim=(2, 3))).squeeze(-1)


class SequentialBaseline(nn.Module):
    def __init__(self, config: SequentialBaselineConfig):
        super().__init__()
        self.config = config
        self.encoder = CropEncoder(config)
        self.recurrent = RecurrentHead(self.encoder.out_channels, config)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        """``crops``: (B, t, C, h, w) or a single track (t, C, h, w)."""
        single = crops.dim() == 4
        if single:
            crops = crops.unsqueeze(0)
        if crops.shape[1] == 0:
            raise ValueError("empty track: no crops to classify")
        b, t = crops.shape[:2]
        feats = self.encoder(crops.flatten(0, 1))
        logits = self.recurrent(feats.view(b, t, *feats.shape[1:]))
        return logits[0] if single else logits


def crop_box(frame: torch.Tensor, box, crop_size: tuple[int, int]) -> torch.Tensor:
    """Crop the (cx, cy, w, h) region of a (C, H, W) frame, resized to ``crop_size``."""
    _, H, W = frame.shape
    cx, cy, w, h = box
    x0 = min(max(int(math.floor(cx - w / 2)), 0), W - 1)
    y0 = min(max(int(math.floor(cy - h / 2)), 0), H - 1)
    x1 = max(min(int(math.ceil(cx + w / 2)), W), x0 + 1)
    y1 = max(min(int(math.ceil(cy + h / 2)), H), y0 + 1)
    patch = frame[:, y0:y1, x0:x1].unsqueeze(0)
    return F.interpolate(patch, size=crop_size, mode="bilinear", align_corners=False)[0]


def crop_sequence(frames: torch.Tensor, boxes, crop_size: tuple[int, int]) -> torch.Tensor:
    """Stack one crop per frame: (t, C, H, W) frames + t boxes -> (t, C, h, w)."""
    if len(boxes) == 0:
        raise ValueError("empty track: no boxes")
    return torch.stack([crop_box(f, b, crop_size) for f, b in zip(frames, boxes)])
